"""Flat key-value run configuration.

One YAML mapping per run; every tunable hyperparameter appears here with
its default. Loading merges the file over the defaults and rejects unknown
keys or wrong types with an error naming the offending key, so a config
plus a seed pins a run completely.
"""

import yaml

DEFAULTS = {
    # run
    "seed": 0,
    "threads": 1,
    # tri-plane hash field
    "n_levels": 14,
    "features_per_level": 1,
    "table_size": 16384,
    "base_resolution": 16,
    "growth": 1.3056,
    "hidden": 64,
    "lip_dim": 32,
    "exp_dim": 7,
    "activation": "relu",
    "sigma_clamp": 10000.0,
    "train_dtype": "float32",
    # renderer
    "train_samples": 64,
    "eval_samples": 128,
    "aabb_pad": 0.02,
    # trainer
    "coarse_iters": 5000,
    "fine_iters": 1000,
    "rays_per_iter": 1024,
    "patch_size": 32,
    "fine_weight": 0.1,
    "perc_scales": 3,
    "lr_hash": 0.01,
    "lr_other": 0.001,
    "weight_decay": 0.0,
    "adam_beta1": 0.9,
    "adam_beta2": 0.999,
    "adam_eps": 1.0e-8,
    "holdout_every": 10,
    "checkpoint_every": 0,
    "eval_every": 0,
    # head stabilizer
    "lm_iters": 50,
    "focal_candidates": 25,
    "focal_min": 0.5,
    "focal_max": 2.0,
    "ba1_iters": 2000,
    "ba2_iters": 2000,
    "ba1_lr": 0.01,
    "ba2_lr": 0.001,
    "ba_patience": 100,
    "ba_smooth": 100.0,
    # audio-visual toy encoder
    "av_embed_dim": 32,
    "av_hidden": 32,
    "av_epochs": 400,
    "av_lr": 0.01,
    "av_recon_weight": 1.0,
    # portrait compositor (sigma is scaled by image height / 512)
    "blur_base_sigma": 5.0,
    # synthetic scene
    "width": 64,
    "height": 64,
    "n_frames": 60,
    "fps": 25.0,
    "supersample": 2,
    "cam_distance": 2.3,
    "focal_scale": 1.2,
    "az_amplitude": 0.25,
    "el_amplitude": 0.12,
    "traj_noise_rot": 0.0,
    "traj_noise_trans": 0.0,
    "track_noise_px": 0.0,
    "track_noise_rot": 0.0,
    "track_noise_trans": 0.0,
    "background": [0.12, 0.15, 0.2],
}

_CHOICES = {
    "activation": ("relu", "tanh", "softplus"),
    "train_dtype": ("float32", "float64"),
}


def validate_config(overrides):
    """Merge ``overrides`` onto the defaults, type-checking every key."""
    cfg = dict(DEFAULTS)
    for key, value in (overrides or {}).items():
        if key not in DEFAULTS:
            raise ValueError(f"unknown config key: {key!r}")
        default = DEFAULTS[key]
        if isinstance(default, bool) or isinstance(value, bool):
            raise ValueError(f"config key {key!r}: booleans not accepted")
        if isinstance(default, str):
            if not isinstance(value, str):
                raise ValueError(f"config key {key!r} expects a string, "
                                 f"got {type(value).__name__}")
        elif isinstance(default, int):
            if not isinstance(value, int):
                raise ValueError(f"config key {key!r} expects an integer, "
                                 f"got {value!r}")
            value = int(value)
        elif isinstance(default, float):
            if not isinstance(value, (int, float)):
                raise ValueError(f"config key {key!r} expects a number, "
                                 f"got {value!r}")
            value = float(value)
        elif isinstance(default, list):
            if (not isinstance(value, (list, tuple))
                    or len(value) != len(default)
                    or not all(isinstance(v, (int, float)) for v in value)):
                raise ValueError(f"config key {key!r} expects a list of "
                                 f"{len(default)} numbers, got {value!r}")
            value = [float(v) for v in value]
        if key in _CHOICES and value not in _CHOICES[key]:
            raise ValueError(f"config key {key!r} must be one of "
                             f"{_CHOICES[key]}, got {value!r}")
        cfg[key] = value
    return cfg


def load_config(path=None):
    """Config dict from a YAML file (or pure defaults when path is None)."""
    if path is None:
        return dict(DEFAULTS)
    with open(path) as fh:
        data = yaml.safe_load(fh)
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ValueError(f"{path}: config must be a key-value mapping")
    try:
        return validate_config(data)
    except ValueError as exc:
        raise ValueError(f"{path}: {exc}") from None


def dump_config(cfg):
    """Stable YAML text for a config dict."""
    return yaml.safe_dump(cfg, sort_keys=True, default_flow_style=None)
