"""Adam / AdamW on plain numpy arrays.

Parameters are registered in groups so different groups can use different
learning rates (hash tables train much hotter than MLP weights). Weight
decay is decoupled: applied directly to the parameter, never mixed into
the moment estimates.
"""

import numpy as np


class AdamW:
    def __init__(self, groups, betas=(0.9, 0.999), eps=1e-8):
        """``groups`` is a list of dicts: {"params": [arrays], "lr": float,
        "weight_decay": float (optional, default 0)}.

        Arrays are updated in place.
        """
        self.betas = betas
        self.eps = eps
        self.t = 0
        self.groups = []
        for g in groups:
            params = list(g["params"])
            self.groups.append(
                {
                    "params": params,
                    "lr": float(g["lr"]),
                    "weight_decay": float(g.get("weight_decay", 0.0)),
                    "m": [np.zeros_like(p) for p in params],
                    "v": [np.zeros_like(p) for p in params],
                }
            )

    def step(self, grads_per_group, lr_scale=1.0):
        """One update. ``grads_per_group[i][j]`` matches ``groups[i]["params"][j]``.

        ``lr_scale`` multiplies every group's lr for this step (schedules).
        """
        self.t += 1
        b1, b2 = self.betas
        bc1 = 1.0 - b1 ** self.t
        bc2 = 1.0 - b2 ** self.t
        for g, grads in zip(self.groups, grads_per_group):
            lr = g["lr"] * lr_scale
            wd = g["weight_decay"]
            for p, m, v, grad in zip(g["params"], g["m"], g["v"], grads):
                if grad is None:
                    continue
                m *= b1
                m += (1.0 - b1) * grad
                v *= b2
                v += (1.0 - b2) * grad * grad
                m_hat = m / bc1
                v_hat = v / bc2
                if wd != 0.0:
                    p -= lr * wd * p
                p -= lr * m_hat / (np.sqrt(v_hat) + self.eps)


def cosine_lr_scale(step, total_steps, floor=0.1):
    """Cosine decay from 1 to ``floor`` over ``total_steps``."""
    if total_steps <= 1:
        return 1.0
    u = min(max(step / (total_steps - 1), 0.0), 1.0)
    return floor + (1.0 - floor) * 0.5 * (1.0 + np.cos(np.pi * u))
