"""Minimal dense networks with hand-written backward passes.

Everything trains through explicit gradients (no autograd), so every layer
keeps its forward cache and exposes an exact ``backward``. Arrays are
row-batched: inputs are ``(N, d_in)``.
"""

import numpy as np

def sigmoid(z):
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


# forward map and derivative; the derivative sees both the pre-activation z
# and the output h, so it can reuse whichever is cheaper (and relu's boolean
# mask multiplies straight into float gradients without a cast)
_ACTIVATIONS = {
    "relu": (lambda z: np.maximum(z, 0.0), lambda z, h: z > 0.0),
    "tanh": (np.tanh, lambda z, h: 1.0 - h * h),
    "softplus": (lambda z: np.logaddexp(0.0, z), lambda z, h: sigmoid(z)),
    "identity": (lambda z: z, lambda z, h: None),
}


class DenseNet:
    """Fully connected net: hidden activations between layers, linear output.

    Parameters live in ``weights``/``biases`` lists (weights are
    ``(d_in, d_out)``); mutate them in place to train.
    """

    def __init__(self, layer_sizes, activation="relu", rng=None, dtype=np.float64):
        if len(layer_sizes) < 2:
            raise ValueError("need at least input and output sizes")
        if activation not in _ACTIVATIONS:
            raise ValueError(f"unknown activation {activation!r}")
        if rng is None:
            rng = np.random.default_rng(0)
        self.layer_sizes = list(layer_sizes)
        self.activation = activation
        self.dtype = dtype
        self.weights = []
        self.biases = []
        for d_in, d_out in zip(layer_sizes[:-1], layer_sizes[1:]):
            bound = np.sqrt(6.0 / (d_in + d_out))
            self.weights.append(rng.uniform(-bound, bound, size=(d_in, d_out)).astype(dtype))
            self.biases.append(np.zeros(d_out, dtype=dtype))

    @property
    def in_dim(self):
        return self.layer_sizes[0]

    @property
    def out_dim(self):
        return self.layer_sizes[-1]

    def forward(self, x, cache=None, static_tail=None):
        """Forward pass; pass a list as ``cache`` to record activations.

        ``static_tail`` is an optional 1D vector treated as trailing input
        columns shared by every row: the first layer computes
        ``x @ W[:v] + (static_tail @ W[v:] + b)`` instead of materializing
        the constant columns. Pass the same vector to ``backward``.
        """
        act, _ = _ACTIVATIONS[self.activation]
        h = np.asarray(x, dtype=self.dtype)
        if static_tail is not None:
            v = h.shape[1]
            if v + static_tail.shape[0] != self.in_dim:
                raise ValueError("static tail does not complete the input")
        if cache is not None:
            cache.append(h)
        n_layers = len(self.weights)
        for k in range(n_layers):
            if k == 0 and static_tail is not None:
                z = h @ self.weights[0][:v]
                z += static_tail @ self.weights[0][v:] + self.biases[0]
            else:
                z = h @ self.weights[k]
                z += self.biases[k]
            if k < n_layers - 1:
                h = act(z)
                if cache is not None:
                    cache.append(z)
                    cache.append(h)
            else:
                h = z
        return h

    def backward(self, cache, upstream, static_tail=None, dx_dims=None):
        """Gradients from a cached forward pass.

        Returns ``(weight_grads, bias_grads, dx)`` where dx is the gradient
        with respect to the network input. With ``static_tail`` (the vector
        given to forward) dx covers the variable columns only; ``dx_dims``
        further restricts dx to the first columns that are actually needed.
        """
        _, dact = _ACTIVATIONS[self.activation]
        n_layers = len(self.weights)
        w_grads = [None] * n_layers
        b_grads = [None] * n_layers
        delta = np.asarray(upstream, dtype=self.dtype)
        for k in range(n_layers - 1, -1, -1):
            h_in = cache[2 * k]
            b_grads[k] = delta.sum(axis=0)
            if k == 0 and static_tail is not None:
                v = h_in.shape[1]
                wg = np.empty_like(self.weights[0])
                wg[:v] = h_in.T @ delta
                wg[v:] = np.outer(static_tail, b_grads[0])
                w_grads[0] = wg
                w0 = self.weights[0][:v if dx_dims is None else dx_dims]
                return w_grads, b_grads, delta @ w0.T
            w_grads[k] = h_in.T @ delta
            if k == 0 and dx_dims is not None:
                return w_grads, b_grads, delta @ self.weights[0][:dx_dims].T
            delta = delta @ self.weights[k].T
            if k > 0:
                mult = dact(cache[2 * k - 1], cache[2 * k])
                if mult is not None:
                    delta *= mult
        return w_grads, b_grads, delta

    def parameters(self):
        """Flat list of (name, array) pairs, in a stable order."""
        out = []
        for k in range(len(self.weights)):
            out.append((f"w{k}", self.weights[k]))
            out.append((f"b{k}", self.biases[k]))
        return out


def sh_basis_deg4(d):
    """Real spherical-harmonic basis up to order 3 (16 components) of unit vectors.

    ``d`` is (N, 3); returns (N, 16). Standard hard-coded polynomial form.
    """
    d = np.asarray(d)
    x, y, z = d[..., 0], d[..., 1], d[..., 2]
    xx, yy, zz = x * x, y * y, z * z
    xy, yz, xz = x * y, y * z, x * z
    out = np.empty(d.shape[:-1] + (16,), dtype=d.dtype)
    out[..., 0] = 0.28209479177387814
    out[..., 1] = -0.4886025119029199 * y
    out[..., 2] = 0.4886025119029199 * z
    out[..., 3] = -0.4886025119029199 * x
    out[..., 4] = 1.0925484305920792 * xy
    out[..., 5] = -1.0925484305920792 * yz
    out[..., 6] = 0.31539156525252005 * (2.0 * zz - xx - yy)
    out[..., 7] = -1.0925484305920792 * xz
    out[..., 8] = 0.5462742152960396 * (xx - yy)
    out[..., 9] = -0.5900435899266435 * y * (3.0 * xx - yy)
    out[..., 10] = 2.890611442640554 * xy * z
    out[..., 11] = -0.4570457994644658 * y * (4.0 * zz - xx - yy)
    out[..., 12] = 0.3731763325901154 * z * (2.0 * zz - 3.0 * xx - 3.0 * yy)
    out[..., 13] = -0.4570457994644658 * x * (4.0 * zz - xx - yy)
    out[..., 14] = 1.445305721320277 * z * (xx - yy)
    out[..., 15] = -0.5900435899266435 * x * (xx - 3.0 * yy)
    return out
