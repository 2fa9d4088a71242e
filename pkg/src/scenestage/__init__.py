"""Staged image generation from user-built 3D room layouts.

A scene is assembled box by box: each stage renders the layout to depth,
denoises under that conditioning while re-using the previous stage's
latents and attention state, and yields an image that keeps everything
already placed.  Objects can later be moved in 3D with their appearance
carried along.  A deterministic toy denoiser makes the whole system
self-contained and testable; real diffusion backends plug in over a small
wire protocol.
"""

from .blobio import decode_f32_blob, encode_f32_blob
from .denoiser import AttentionMode, LatentCodec, ToyDenoiser, embed_prompt
from .diffusion import adain, blend_latents, ddim_invert_step, ddim_step, linear_schedule, warp_blend
from .evaluation import (
    LayoutSample,
    ObjectCatalog,
    SceneCatalog,
    run_benchmark,
    sample_layout,
)
from .geometry import (
    Box3D,
    Camera,
    Plane,
    SceneLayout,
    Vec3,
    check_in_bounds,
    default_camera,
    make_scene,
    scene_from_json,
    scene_to_json,
)
from .pipeline import (
    PipelineError,
    Session,
    SessionConfig,
    StagePrompt,
    StageRecord,
    compose_scene_prompt,
    load_session,
    replay_session,
    run_add_stage,
    run_stage0,
    run_translate_stage,
)
from .render import render_cartesian, render_depth, render_masks
from .service import BackendDescriptor, ExternalModel, backend_predict, create_app
from .translate import TranslationRequest

__version__ = "0.1.0"

__all__ = [
    "AttentionMode",
    "BackendDescriptor",
    "Box3D",
    "Camera",
    "ExternalModel",
    "LatentCodec",
    "LayoutSample",
    "ObjectCatalog",
    "PipelineError",
    "Plane",
    "SceneCatalog",
    "SceneLayout",
    "Session",
    "SessionConfig",
    "StagePrompt",
    "StageRecord",
    "ToyDenoiser",
    "TranslationRequest",
    "Vec3",
    "adain",
    "backend_predict",
    "blend_latents",
    "check_in_bounds",
    "compose_scene_prompt",
    "create_app",
    "ddim_invert_step",
    "ddim_step",
    "decode_f32_blob",
    "default_camera",
    "embed_prompt",
    "encode_f32_blob",
    "linear_schedule",
    "load_session",
    "make_scene",
    "render_cartesian",
    "render_depth",
    "render_masks",
    "replay_session",
    "run_add_stage",
    "run_benchmark",
    "run_stage0",
    "run_translate_stage",
    "sample_layout",
    "scene_from_json",
    "scene_to_json",
    "warp_blend",
]
