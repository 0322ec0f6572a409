"""Audio-visual sync losses and lip/expression conditioning channels.

The conditioning that drives the radiance field is split hard: lip motion
comes from an audio-derived feature, upper-face expression from a handful
of blendshape coefficients, and each is gated by its own attention vector
restricted to a disjoint region. Disjointness is structural, so
cross-gradients between the two groups are exactly zero, not merely small.

Also hosts a tiny two-branch audio/visual encoder used to sanity-check the
sync loss end to end on synthetic paired data.
"""

import numpy as np

from .nn import DenseNet
from .optim import AdamW

EPS = 1e-7

# canonical blendshape channel order (alphabetical), 52 entries
BLENDSHAPE_NAMES = [
    "browDownLeft", "browDownRight", "browInnerUp",
    "browOuterUpLeft", "browOuterUpRight",
    "cheekPuff", "cheekSquintLeft", "cheekSquintRight",
    "eyeBlinkLeft", "eyeBlinkRight",
    "eyeLookDownLeft", "eyeLookDownRight", "eyeLookInLeft", "eyeLookInRight",
    "eyeLookOutLeft", "eyeLookOutRight", "eyeLookUpLeft", "eyeLookUpRight",
    "eyeSquintLeft", "eyeSquintRight", "eyeWideLeft", "eyeWideRight",
    "jawForward", "jawLeft", "jawOpen", "jawRight",
    "mouthClose", "mouthDimpleLeft", "mouthDimpleRight",
    "mouthFrownLeft", "mouthFrownRight", "mouthFunnel", "mouthLeft",
    "mouthLowerDownLeft", "mouthLowerDownRight",
    "mouthPressLeft", "mouthPressRight", "mouthPucker", "mouthRight",
    "mouthRollLower", "mouthRollUpper", "mouthShrugLower", "mouthShrugUpper",
    "mouthSmileLeft", "mouthSmileRight", "mouthStretchLeft", "mouthStretchRight",
    "mouthUpperUpLeft", "mouthUpperUpRight",
    "noseSneerLeft", "noseSneerRight",
    "tongueOut",
]

# brow and blink channels: upper-face motion that audio cannot explain
CORE_EXPRESSION_NAMES = [
    "browDownLeft", "browDownRight", "browInnerUp",
    "browOuterUpLeft", "browOuterUpRight",
    "eyeBlinkLeft", "eyeBlinkRight",
]


def core_expression_indices():
    return np.array([BLENDSHAPE_NAMES.index(n) for n in CORE_EXPRESSION_NAMES])


def select_core_expression(weights, indices=None):
    """Gather the brow/blink coefficients out of (..., 52) blendshape weights."""
    weights = np.asarray(weights)
    if weights.shape[-1] != len(BLENDSHAPE_NAMES):
        raise ValueError(f"expected {len(BLENDSHAPE_NAMES)} blendshape channels, "
                         f"got {weights.shape[-1]}")
    idx = core_expression_indices() if indices is None else np.asarray(indices)
    return weights[..., idx]


def cosine_sim(a, b, axis=-1):
    """Cosine similarity along ``axis``. Inputs are normalized first, so the
    value is invariant to positive rescaling of either argument. Zero-norm
    inputs are rejected."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    na = np.linalg.norm(a, axis=axis, keepdims=True)
    nb = np.linalg.norm(b, axis=axis, keepdims=True)
    if np.any(na == 0.0) or np.any(nb == 0.0):
        raise ValueError("cosine similarity of a zero vector")
    return ((a / na) * (b / nb)).sum(axis=axis)


def cosine_sim_grad(a, b, axis=-1):
    """d cos(a,b) / da and / db."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    na = np.linalg.norm(a, axis=axis, keepdims=True)
    nb = np.linalg.norm(b, axis=axis, keepdims=True)
    an, bn = a / na, b / nb
    c = (an * bn).sum(axis=axis, keepdims=True)
    return (bn - c * an) / na, (an - c * bn) / nb


def _clamped_prob(sim):
    return np.clip(np.maximum(sim, 0.0), EPS, 1.0 - EPS)


def sync_loss(sim, y):
    """Binary cross entropy on rectified-and-clamped similarity.

    ``y`` is 1 for a matched audio/face pair, 0 for a mismatch; the
    similarity becomes a probability via s = clamp(max(sim, 0), eps, 1-eps).
    Arrays reduce by mean.
    """
    s = _clamped_prob(np.asarray(sim, dtype=np.float64))
    y = np.asarray(y, dtype=np.float64)
    return float(np.mean(-(y * np.log(s) + (1.0 - y) * np.log(1.0 - s))))


def sync_loss_grad(sim, y):
    """dL/dsim; zero where the rectifier or clamp saturates."""
    sim = np.asarray(sim, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    s = _clamped_prob(sim)
    inside = (sim > EPS) & (sim < 1.0 - EPS)
    g = np.where(inside, -y / s + (1.0 - y) / (1.0 - s), 0.0)
    return g / sim.size


def recon_loss(x, y):
    """Mean absolute error."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape:
        raise ValueError(f"shape mismatch {x.shape} vs {y.shape}")
    return float(np.mean(np.abs(x - y)))


def recon_loss_grad(x, y):
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    return np.sign(x - y) / x.size


def _check_masks(v, m_lip, m_exp):
    v = np.asarray(v, dtype=np.float64)
    m_lip = np.asarray(m_lip, dtype=np.float64)
    m_exp = np.asarray(m_exp, dtype=np.float64)
    if not (v.shape == m_lip.shape == m_exp.shape):
        raise ValueError("attention vector and masks must share a shape")
    for m in (m_lip, m_exp):
        if np.any(m < 0) or np.any(m > 1):
            raise ValueError("masks must lie in [0, 1]")
    if np.any(m_lip * m_exp != 0):
        raise ValueError("lip and expression masks overlap")
    return v, m_lip, m_exp


def masked_attention(v, m_lip, m_exp):
    """Split one attention vector into disjoint lip/expression gates.

    Returns (V_lip, V_exp) = (v * m_lip, v * m_exp); their supports cannot
    overlap because the masks may not.
    """
    v, m_lip, m_exp = _check_masks(v, m_lip, m_exp)
    return v * m_lip, v * m_exp


def disentangle_features(f_lip, f_exp, v_lip, v_exp):
    """Gate each feature by its attention vector: (f_lip*V_lip, f_exp*V_exp).

    The lip output is identically independent of ``f_exp`` and vice versa;
    there is no mixing term, so the cross-Jacobians are exactly zero.
    """
    f_lip = np.asarray(f_lip, dtype=np.float64)
    f_exp = np.asarray(f_exp, dtype=np.float64)
    v_lip = np.asarray(v_lip, dtype=np.float64)
    v_exp = np.asarray(v_exp, dtype=np.float64)
    if f_lip.shape[-1] != v_lip.shape[-1] or f_exp.shape[-1] != v_exp.shape[-1]:
        raise ValueError("feature/attention widths disagree")
    return f_lip * v_lip, f_exp * v_exp


def make_toy_av_data(n_pairs=256, latent_dim=4, audio_dim=16, visual_dim=24,
                     noise=0.05, seed=0):
    """Paired audio/visual vectors driven by a shared latent."""
    rng = np.random.default_rng(seed)
    z = rng.standard_normal((n_pairs, latent_dim))
    wa = rng.standard_normal((latent_dim, audio_dim)) / np.sqrt(latent_dim)
    wv = rng.standard_normal((latent_dim, visual_dim)) / np.sqrt(latent_dim)
    audio = np.tanh(z @ wa) + noise * rng.standard_normal((n_pairs, audio_dim))
    visual = np.tanh(z @ wv) + noise * rng.standard_normal((n_pairs, visual_dim))
    return audio, visual


def pair_discrimination(audio_net, visual_net, audio, visual, threshold=0.5):
    """Accuracy of classifying matched vs mismatched pairs at a similarity
    threshold. Mismatches pair each audio row with the next visual row."""
    a = audio_net.forward(audio)
    v = visual_net.forward(visual)
    pos = cosine_sim(a, v)
    neg = cosine_sim(a, np.roll(v, 1, axis=0))
    return float(0.5 * (np.mean(pos > threshold) + np.mean(neg <= threshold)))


def train_toy_av_encoder(audio, visual, embed_dim=32, hidden=32, epochs=400,
                         lr=1e-2, recon_weight=1.0, seed=0):
    """Fit the two-branch encoder: sync BCE on matched (y=1) and rolled
    mismatched (y=0) pairs, plus an L1 reconstruction of the visual input
    from its own embedding through a linear decoder.

    Full-batch updates. Returns (audio_net, visual_net, history dict).
    """
    audio = np.asarray(audio, dtype=np.float64)
    visual = np.asarray(visual, dtype=np.float64)
    if audio.shape[0] < 2:
        raise ValueError("need both matched and mismatched pairs")
    rng = np.random.default_rng(seed)
    n, dv = visual.shape
    audio_net = DenseNet([audio.shape[1], hidden, embed_dim], activation="tanh", rng=rng)
    visual_net = DenseNet([visual.shape[1], hidden, embed_dim], activation="tanh", rng=rng)
    bound = np.sqrt(6.0 / (embed_dim + dv))
    dec_w = rng.uniform(-bound, bound, size=(embed_dim, dv))
    dec_b = np.zeros(dv)

    params = (audio_net.weights + audio_net.biases
              + visual_net.weights + visual_net.biases + [dec_w, dec_b])
    opt = AdamW([{"params": params, "lr": lr}])
    history = {"loss": [], "accuracy": []}

    for _ in range(epochs):
        ca, cv = [], []
        a = audio_net.forward(audio, cache=ca)
        v = visual_net.forward(visual, cache=cv)
        v_neg = np.roll(v, 1, axis=0)

        pos = cosine_sim(a, v)
        neg = cosine_sim(a, v_neg)
        recon = v @ dec_w + dec_b
        loss = (sync_loss(pos, 1.0) + sync_loss(neg, 0.0)
                + recon_weight * recon_loss(recon, visual))

        dpos = sync_loss_grad(pos, 1.0)
        dneg = sync_loss_grad(neg, 0.0)
        ga_p, gv_p = cosine_sim_grad(a, v)
        ga_n, gv_n = cosine_sim_grad(a, v_neg)
        da = dpos[:, None] * ga_p + dneg[:, None] * ga_n
        dv_emb = dpos[:, None] * gv_p + np.roll(dneg[:, None] * gv_n, -1, axis=0)

        drec = recon_weight * recon_loss_grad(recon, visual)
        g_dec_w = v.T @ drec
        g_dec_b = drec.sum(axis=0)
        dv_emb = dv_emb + drec @ dec_w.T

        aw, ab, _ = audio_net.backward(ca, da)
        vw, vb, _ = visual_net.backward(cv, dv_emb)
        opt.step([aw + ab + vw + vb + [g_dec_w, g_dec_b]])

        history["loss"].append(loss)
        history["accuracy"].append(
            pair_discrimination(audio_net, visual_net, audio, visual))
    return audio_net, visual_net, history
