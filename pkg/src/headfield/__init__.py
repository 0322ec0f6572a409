"""Conditioned head radiance field toolkit.

A NumPy implementation of a talking-head scene model: a tri-plane hash
radiance field with audio/expression conditioning, an analytic volume
renderer with hand-derived gradients, landmark-based head pose
stabilization, face/torso compositing, and a synthetic scene generator
that supplies exact oracles for every stage.
"""

__version__ = "0.1.0"

from .hash_encoding import HashGrid2D, TriPlaneEncoder, hash_index
from .radiance_field import RadianceField
from .volume_renderer import (composite, composite_backward, make_rays,
                              render_frame, render_rays, sample_ts)
from .face_sync import (BLENDSHAPE_NAMES, CORE_EXPRESSION_NAMES, cosine_sim,
                        disentangle_features, masked_attention,
                        select_core_expression, sync_loss,
                        train_toy_av_encoder)
from .head_sync import (CameraIntrinsics, HeadPose, ba_stage1, ba_stage2,
                        focal_search, initial_pose_guess, landmark_error,
                        project, refine_pose, stabilize)
from .portrait_sync import blend_face, composite_portrait, fill_neck_gap
from .synth_scene import SynthScene, emit_tracks, generate_scene, reference_render
from .trainer import evaluate, fit_scene, train_step
from .metrics import lmd, pose_jitter, psnr
from .dataset import SceneData, export_scene, load_dataset
from .checkpoint import load_checkpoint, save_checkpoint
from .config import DEFAULTS, load_config, validate_config

__all__ = [
    "HashGrid2D", "TriPlaneEncoder", "hash_index", "RadianceField",
    "composite", "composite_backward", "make_rays", "render_frame",
    "render_rays", "sample_ts", "BLENDSHAPE_NAMES", "CORE_EXPRESSION_NAMES",
    "cosine_sim", "disentangle_features", "masked_attention",
    "select_core_expression", "sync_loss", "train_toy_av_encoder",
    "CameraIntrinsics", "HeadPose", "ba_stage1", "ba_stage2", "focal_search",
    "initial_pose_guess", "landmark_error", "project", "refine_pose",
    "stabilize", "blend_face", "composite_portrait", "fill_neck_gap",
    "SynthScene", "emit_tracks", "generate_scene", "reference_render",
    "evaluate", "fit_scene", "train_step", "lmd", "pose_jitter", "psnr",
    "SceneData", "export_scene", "load_dataset", "load_checkpoint",
    "save_checkpoint", "DEFAULTS", "load_config", "validate_config",
]
