"""Multi-stage scene generation sessions.

A session starts from an empty room (Stage 0 paints the background from a
depth render of the walls), then grows by append-only stages: each "add"
stage drops one box into the layout and denoises a fresh latent whose
background is pinned, step by step, to the previous stage's trajectory,
while reference-augmented self-attention carries the prior stage's style
into the new object.  A "translate" stage moves an existing object by
segmenting it, warping it along a geometry-derived homography, inverting
the warped image, and re-denoising with the object region pinned to that
inversion.

Everything is deterministic given the session config: per-stage seeds are
derived by hashing (session seed, stage index), so a persisted session can
be replayed bit-exactly from its records.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .blobio import (
    decode_f32_blob,
    encode_f32_blob,
    image_to_png_bytes,
    png_bytes_to_image,
    to_uint8_image,
)
from .denoiser import (
    PROMPT_DIM,
    SELF_ATTN_LAYERS,
    AttentionMode,
    CrossAttnRecord,
    KVRecord,
    LatentCodec,
    ToyDenoiser,
    downsample_mask,
    embed_prompt,
    inverse_depth_grid,
)
from .diffusion import (
    adain,
    blend_latents,
    ddim_invert_step,
    ddim_step,
    linear_schedule,
    warp_blend,
)
from .geometry import (
    Box3D,
    SceneLayout,
    Vec3,
    apply_translation,
    check_in_bounds,
    scene_from_dict,
    scene_to_dict,
)
from .render import (
    BBox2D,
    EmptyMaskError,
    StageMasks,
    fit_bbox2d,
    render_cartesian,
    render_depth,
    render_masks,
)
from .translate import (
    FallbackSegmenter,
    SegmentationFailedError,
    TranslationRequest,
    accumulate_cross_attention,
    coarse_to_bbox,
    correspondence_from_maps,
    homography_from_pairs,
    refine_segmentation,
    warp_paste,
)

__all__ = [
    "PipelineError",
    "StageOrderError",
    "StagePrompt",
    "SessionConfig",
    "StageRecord",
    "Session",
    "run_stage0",
    "run_add_stage",
    "run_translate_stage",
    "compose_scene_prompt",
    "save_session_header",
    "save_stage",
    "load_session",
    "replay_session",
]

STAGE_KINDS = ("background", "add", "translate")
ATTENTION_KINDS = ("standard", "cross_frame", "extended", "dsa")
SEED_POLICIES = ("per_stage", "reuse")


class PipelineError(ValueError):
    pass


class StageOrderError(PipelineError):
    """A stage operation was requested out of sequence."""


@dataclass(frozen=True)
class StagePrompt:
    """Stage text plus the index of the word naming the introduced object
    (whitespace tokenization, matching the prompt embedder)."""

    text: str
    object_token_index: int = 0

    def __post_init__(self):
        words = self.text.split()
        if not words:
            raise PipelineError("prompt text must contain at least one word")
        if not 0 <= self.object_token_index < len(words):
            raise PipelineError(
                f"object token index {self.object_token_index} outside "
                f"0..{len(words) - 1}"
            )

    def to_dict(self) -> dict:
        return {"text": self.text, "object_token_index": self.object_token_index}

    @staticmethod
    def from_dict(d: dict) -> "StagePrompt":
        return StagePrompt(text=d["text"], object_token_index=int(d["object_token_index"]))


@dataclass(frozen=True)
class SessionConfig:
    timesteps: int = 20
    resolution: int = 256
    seed: int = 0
    seed_policy: str = "per_stage"
    attention: str = "dsa"
    blend_fraction: float = 0.8   # default translate-stage pin horizon / T
    cfg_scale: float = 1.0
    use_blend: bool = True
    use_adain: bool = True
    adain_once: bool = False
    cross_attn_window: float = 0.5  # fraction of final timesteps fed to segmentation
    eta: float = 0.0

    def __post_init__(self):
        if self.timesteps < 1:
            raise PipelineError("timesteps must be >= 1")
        # 8x8 image patches per latent cell, and attention grids at /4 and /8
        # of the latent, so the image side must be a multiple of 64.
        if self.resolution <= 0 or self.resolution % 64:
            raise PipelineError("resolution must be a positive multiple of 64")
        if self.seed_policy not in SEED_POLICIES:
            raise PipelineError(f"unknown seed policy {self.seed_policy!r}")
        if self.attention not in ATTENTION_KINDS:
            raise PipelineError(f"unknown attention mode {self.attention!r}")
        if not 0.0 <= self.blend_fraction <= 1.0:
            raise PipelineError("blend_fraction must lie in [0, 1]")
        if self.cfg_scale <= 0.0:
            raise PipelineError("cfg_scale must be positive")
        if not 0.0 < self.cross_attn_window <= 1.0:
            raise PipelineError("cross_attn_window must lie in (0, 1]")
        if not 0.0 <= self.eta <= 1.0:
            raise PipelineError("eta must lie in [0, 1]")

    def to_dict(self) -> dict:
        return {
            "timesteps": self.timesteps,
            "resolution": self.resolution,
            "seed": self.seed,
            "seed_policy": self.seed_policy,
            "attention": self.attention,
            "blend_fraction": self.blend_fraction,
            "cfg_scale": self.cfg_scale,
            "use_blend": self.use_blend,
            "use_adain": self.use_adain,
            "adain_once": self.adain_once,
            "cross_attn_window": self.cross_attn_window,
            "eta": self.eta,
        }

    @staticmethod
    def from_dict(d: dict) -> "SessionConfig":
        return SessionConfig(**d)


@dataclass
class StageRecord:
    index: int
    kind: str
    box: Box3D | None
    prompt: StagePrompt
    seed: int
    depth: np.ndarray                 # (H, W) float, full resolution
    masks: StageMasks                 # image-resolution fg/bg of this stage's box
    trajectory: list[np.ndarray]      # [x_T, ..., x_0], each (C, h, w)
    kv_cache: dict[tuple[str, int], KVRecord]
    cross_records: list[CrossAttnRecord]
    image: np.ndarray                 # (H, W, 3) uint8
    introduced_box_stage: dict[str, int]
    blend_fraction: float | None = None   # translate stages only
    translation: Vec3 | None = None       # translate stages: the applied move
    warped_seg: np.ndarray | None = None  # translate stages: the pasted mask

    def __post_init__(self):
        if self.kind not in STAGE_KINDS:
            raise PipelineError(f"unknown stage kind {self.kind!r}")
        if (self.kind == "background") != (self.index == 0):
            raise PipelineError("background stage if and only if index 0")
        if len(self.trajectory) < 2:
            raise PipelineError("trajectory must hold at least x_T and x_0")

    @property
    def timesteps(self) -> int:
        return len(self.trajectory) - 1

    def latent_at(self, t: int) -> np.ndarray:
        """Stored latent x_t, t in [0, T] (index 0 of the trajectory is x_T)."""
        if not 0 <= t <= self.timesteps:
            raise PipelineError(f"timestep {t} outside [0, {self.timesteps}]")
        return self.trajectory[self.timesteps - t]


def _stage_seed(session_seed: int, index: int, policy: str) -> int:
    if policy == "reuse":
        return session_seed
    digest = hashlib.sha256(f"{session_seed}:{index}".encode("ascii")).digest()
    return int.from_bytes(digest[:8], "little")


def _union_bbox(a: BBox2D, b: BBox2D) -> BBox2D:
    return BBox2D(
        min(a.x_min, b.x_min), min(a.y_min, b.y_min),
        max(a.x_max, b.x_max), max(a.y_max, b.y_max),
    )


class Session:
    """Single-writer container for one generation run.

    Stage operations must be called one at a time (callers serialize); reads
    of completed records are safe concurrently because records are never
    mutated after commit.
    """

    def __init__(
        self,
        scene: SceneLayout,
        config: SessionConfig | None = None,
        root: str | Path | None = None,
        model: ToyDenoiser | None = None,
        codec: LatentCodec | None = None,
        segmenter=None,
    ):
        config = config or SessionConfig()
        cam = scene.camera
        if (cam.width, cam.height) != (config.resolution, config.resolution):
            raise PipelineError(
                f"camera {cam.width}x{cam.height} does not match configured "
                f"resolution {config.resolution}"
            )
        self.initial_scene = scene
        self.scene = scene
        self.config = config
        self.stages: list[StageRecord] = []
        self.model = model if model is not None else ToyDenoiser(seed=0)
        self.codec = codec if codec is not None else LatentCodec(seed=0)
        self.segmenter = segmenter
        self.step_hook = None  # optional callable(done, total), called per denoise step
        self.schedule = linear_schedule(config.timesteps, eta=config.eta)
        self.root = Path(root) if root is not None else None
        if self.root is not None:
            save_session_header(self.root, self)

    # -- small accessors ------------------------------------------------------

    @property
    def latent_grid(self) -> tuple[int, int]:
        n = self.config.resolution // LatentCodec.PATCH
        return (n, n)

    def stage_seed(self, index: int) -> int:
        return _stage_seed(self.config.seed, index, self.config.seed_policy)

    def last_stage_with_box(self, box_id: str) -> StageRecord:
        for record in reversed(self.stages):
            if record.box is not None and record.box.id == box_id:
                return record
        raise PipelineError(f"no stage placed box {box_id!r}")

    # -- shared machinery -----------------------------------------------------

    def _conditioning(self, scene: SceneLayout) -> tuple[np.ndarray, np.ndarray]:
        depth = render_depth(scene).values
        return depth, inverse_depth_grid(depth, self.latent_grid)

    def _predict(self, x, t, tokens, cond, mode):
        eps, kvs, crosses = self.model.predict_eps(x, t, tokens, cond, mode)
        if self.config.cfg_scale != 1.0:
            null = np.zeros((1, PROMPT_DIM))
            eps_u, _, _ = self.model.predict_eps(x, t, null, cond, AttentionMode())
            eps = eps_u + self.config.cfg_scale * (eps - eps_u)
        return eps, kvs, crosses

    def _noise_draw(self, rng, t) -> np.ndarray | None:
        if self.schedule.sigma(t) == 0.0:
            return None
        c = self.model.LATENT_CHANNELS
        return rng.standard_normal((c,) + self.latent_grid)

    def _check_kv_cache(self, kv_cache: dict) -> None:
        # layers x T records, each K/V of N_layer x d floats: the cache size
        # is fully determined by the config, so anything else is a leak.
        T = self.config.timesteps
        grids = self.model.token_grids(*self.latent_grid)
        if len(kv_cache) != len(SELF_ATTN_LAYERS) * T:
            raise PipelineError(
                f"KV cache holds {len(kv_cache)} records, expected "
                f"{len(SELF_ATTN_LAYERS) * T}"
            )
        expected = sum(
            2 * grids[layer][0] * grids[layer][1] * self.model.mid * T
            for layer in SELF_ATTN_LAYERS
        )
        actual = sum(r.K.size + r.V.size for r in kv_cache.values())
        if actual != expected:
            raise PipelineError(f"KV cache stores {actual} floats, expected {expected}")

    def _commit(self, record: StageRecord) -> None:
        if record.index != len(self.stages):
            raise StageOrderError(
                f"stage index {record.index} does not extend {len(self.stages)} stages"
            )
        if record.timesteps != self.config.timesteps:
            raise PipelineError("trajectory length disagrees with configured timesteps")
        if record.image.shape != (self.config.resolution, self.config.resolution, 3):
            raise PipelineError("stage image does not match the camera resolution")
        self._check_kv_cache(record.kv_cache)
        self.stages.append(record)
        if self.root is not None:
            save_stage(self.root, record)

    def _mode_for_add(self, t: int, prev: StageRecord, fg_tokens) -> AttentionMode:
        kind = self.config.attention
        if kind == "standard":
            return AttentionMode()
        kv_prev = {layer: prev.kv_cache[(layer, t)] for layer in SELF_ATTN_LAYERS}
        if kind == "cross_frame":
            return AttentionMode(kind="cross_frame", kv_prev=kv_prev)
        if kind == "extended":
            refs = tuple(
                {layer: s.kv_cache[(layer, t)] for layer in SELF_ATTN_LAYERS}
                for s in self.stages
            )
            return AttentionMode(kind="extended", kv_list=refs)
        return AttentionMode(kind="dsa", kv_prev=kv_prev, fg_tokens=fg_tokens)


def _as_prompt(prompt: StagePrompt | str) -> StagePrompt:
    return prompt if isinstance(prompt, StagePrompt) else StagePrompt(text=prompt)


def run_stage0(session: Session, prompt: StagePrompt | str) -> StageRecord:
    """Generate the empty-room background from the wall/floor depth render."""
    prompt = _as_prompt(prompt)
    if session.stages:
        raise StageOrderError("the background stage must come first")
    scene0 = session.scene.without_boxes()
    depth, cond = session._conditioning(scene0)
    tokens = embed_prompt(prompt.text)
    seed = session.stage_seed(0)
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((session.model.LATENT_CHANNELS,) + session.latent_grid)

    trajectory = [x.copy()]
    kv_cache: dict[tuple[str, int], KVRecord] = {}
    crosses: list[CrossAttnRecord] = []
    for t in range(session.config.timesteps, 0, -1):
        eps, kvs, cr = session._predict(x, t, tokens, cond, AttentionMode())
        for r in kvs:
            kv_cache[(r.layer, r.t)] = r
        crosses.extend(cr)
        x = ddim_step(x, eps, t, session.schedule, session._noise_draw(rng, t))
        trajectory.append(x.copy())
        if session.step_hook is not None:
            session.step_hook(session.config.timesteps - t + 1, session.config.timesteps)

    res = session.config.resolution
    fg = np.zeros((res, res), dtype=np.uint8)
    record = StageRecord(
        index=0, kind="background", box=None, prompt=prompt, seed=seed,
        depth=depth, masks=StageMasks(fg=fg, bg=1 - fg), trajectory=trajectory,
        kv_cache=kv_cache, cross_records=crosses,
        image=to_uint8_image(session.codec.decode(x)), introduced_box_stage={},
    )
    session._commit(record)
    return record


def run_add_stage(session: Session, box: Box3D, prompt: StagePrompt | str) -> StageRecord:
    """Introduce one box: fresh noise, background pinned to the previous
    stage's trajectory after every step, prior-stage KV injected into
    self-attention, statistics re-matched channelwise."""
    prompt = _as_prompt(prompt)
    if not session.stages:
        raise StageOrderError("an add stage needs a prior background stage")
    if not check_in_bounds(session.scene, box):
        raise PipelineError(f"box {box.id!r} does not fit inside the room")
    scene_i = session.scene.with_box(box)
    index = len(session.stages)
    prev = session.stages[index - 1]
    cfg = session.config

    depth, cond = session._conditioning(scene_i)
    masks_img = render_masks(scene_i, box.id)
    fg_lat = downsample_mask(masks_img.fg, session.latent_grid)
    masks_lat = StageMasks(fg=fg_lat, bg=(1 - fg_lat).astype(np.uint8))
    fg_tokens = session.model.token_masks(masks_img.fg, session.latent_grid)
    tokens = embed_prompt(prompt.text)

    seed = session.stage_seed(index)
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((session.model.LATENT_CHANNELS,) + session.latent_grid)
    if cfg.use_blend:
        x = blend_latents(prev.latent_at(cfg.timesteps), x, masks_lat)

    trajectory = [x.copy()]
    kv_cache: dict[tuple[str, int], KVRecord] = {}
    crosses: list[CrossAttnRecord] = []
    for t in range(cfg.timesteps, 0, -1):
        mode = session._mode_for_add(t, prev, fg_tokens)
        eps, kvs, cr = session._predict(x, t, tokens, cond, mode)
        for r in kvs:
            kv_cache[(r.layer, r.t)] = r
        crosses.extend(cr)
        x = ddim_step(x, eps, t, session.schedule, session._noise_draw(rng, t))
        if cfg.use_adain and (not cfg.adain_once or t == 1):
            x = adain(x, prev.latent_at(t - 1))
        if cfg.use_blend:
            x = blend_latents(prev.latent_at(t - 1), x, masks_lat)
        trajectory.append(x.copy())
        if session.step_hook is not None:
            session.step_hook(cfg.timesteps - t + 1, cfg.timesteps)

    introduced = dict(prev.introduced_box_stage)
    introduced[box.id] = index
    record = StageRecord(
        index=index, kind="add", box=box, prompt=prompt, seed=seed,
        depth=depth, masks=masks_img, trajectory=trajectory,
        kv_cache=kv_cache, cross_records=crosses,
        image=to_uint8_image(session.codec.decode(x)),
        introduced_box_stage=introduced,
    )
    session.scene = scene_i
    session._commit(record)
    return record


def _segment_box(session: Session, box_id: str, source: StageRecord) -> np.ndarray:
    """Segmentation mask of the object in the latest image.

    The coarse localization comes from the accumulated cross-attention of
    the stage that last placed the object, restricted to the low-noise tail
    of its timesteps.  An external segmenter receives the attention-derived
    box prompt as-is.  The built-in geometric fallback widens the prompt to
    cover the rendered mask's own bbox first — the toy denoiser is untrained,
    so its attention maps localize too loosely to gate the geometry."""
    cfg = session.config
    image = session.stages[-1].image
    window = math.ceil(cfg.cross_attn_window * cfg.timesteps)
    records = [r for r in source.cross_records if r.t <= window]
    # cross-attention runs on the /8 token grid of the latent
    lh, lw = session.latent_grid
    grid = (lh // 8, lw // 8)
    coarse = accumulate_cross_attention(
        records, source.prompt.object_token_index, grid, image.shape[:2]
    )
    if session.segmenter is not None:
        bbox = coarse_to_bbox(coarse)
        return refine_segmentation(image, bbox, session.segmenter)
    try:
        fg = render_masks(session.scene, box_id).fg
        rendered_bbox = fit_bbox2d(fg)
    except EmptyMaskError as exc:
        raise SegmentationFailedError(f"box {box_id!r} is not visible") from exc
    try:
        bbox = _union_bbox(coarse_to_bbox(coarse), rendered_bbox)
    except SegmentationFailedError:
        bbox = rendered_bbox
    return refine_segmentation(image, bbox, FallbackSegmenter(fg))


def run_translate_stage(session: Session, request: TranslationRequest) -> StageRecord:
    """Move a previously added box in 3D and re-render the scene image
    consistently: segment, warp along the projective corner map, invert the
    warped image, and denoise with the object region pinned to that
    inversion for the first ceil(blend_fraction * T) steps."""
    if not session.stages:
        raise StageOrderError("a translate stage needs prior stages")
    prev = session.stages[-1]
    if request.box_id not in prev.introduced_box_stage:
        raise PipelineError(f"box {request.box_id!r} was never added to this session")
    box = session.scene.box(request.box_id)
    new_box = apply_translation(box, request.t)
    if not check_in_bounds(session.scene, new_box):
        raise PipelineError("translated box leaves the room")

    cfg = session.config
    index = len(session.stages)
    intro = prev.introduced_box_stage[request.box_id]
    base = session.stages[intro - 1]       # last image without this object
    source = session.last_stage_with_box(request.box_id)

    seg = _segment_box(session, request.box_id, source)
    camera = session.scene.camera
    c_map = render_cartesian(box, camera)
    c_hat = render_cartesian(new_box, camera)
    obj_bbox = fit_bbox2d((seg > 0.5).astype(np.uint8))
    pairs = correspondence_from_maps(c_map, c_hat, request.t, obj_bbox, camera)
    hom = homography_from_pairs(pairs)
    warped_img, warped_seg = warp_paste(prev.image, seg, hom, base.image)

    scene_i = session.scene.with_box_replaced(new_box)
    depth, cond = session._conditioning(scene_i)
    tokens = embed_prompt(source.prompt.text)

    # Exact algebraic inversion of the warped image's latent.
    x = session.codec.encode(warped_img.astype(np.float64))
    inv_traj = [x.copy()]                  # inv_traj[t] is the inversion at t
    for t in range(1, cfg.timesteps + 1):
        eps, _, _ = session._predict(x, t, tokens, cond, AttentionMode())
        x = ddim_invert_step(x, eps, t, session.schedule)
        inv_traj.append(x.copy())
        if session.step_hook is not None:
            session.step_hook(t, 2 * cfg.timesteps)

    seg_lat = downsample_mask((warped_seg > 0.5).astype(np.uint8), session.latent_grid)
    pin_steps = math.ceil(request.blend_fraction * cfg.timesteps)
    seed = session.stage_seed(index)
    rng = np.random.default_rng(seed)

    x = inv_traj[cfg.timesteps]
    if pin_steps > 0:
        x = warp_blend(inv_traj[cfg.timesteps], base.latent_at(cfg.timesteps), seg_lat)
    trajectory = [x.copy()]
    kv_cache: dict[tuple[str, int], KVRecord] = {}
    crosses: list[CrossAttnRecord] = []
    for t in range(cfg.timesteps, 0, -1):
        eps, kvs, cr = session._predict(x, t, tokens, cond, AttentionMode())
        for r in kvs:
            kv_cache[(r.layer, r.t)] = r
        crosses.extend(cr)
        x = ddim_step(x, eps, t, session.schedule, session._noise_draw(rng, t))
        if t - 1 > cfg.timesteps - pin_steps:
            x = warp_blend(inv_traj[t - 1], base.latent_at(t - 1), seg_lat)
        trajectory.append(x.copy())
        if session.step_hook is not None:
            session.step_hook(2 * cfg.timesteps - t + 1, 2 * cfg.timesteps)

    record = StageRecord(
        index=index, kind="translate", box=new_box, prompt=source.prompt,
        seed=seed, depth=depth, masks=render_masks(scene_i, request.box_id),
        trajectory=trajectory, kv_cache=kv_cache, cross_records=crosses,
        image=to_uint8_image(session.codec.decode(x)),
        introduced_box_stage=dict(prev.introduced_box_stage),
        blend_fraction=request.blend_fraction,
        translation=request.t,
        warped_seg=warped_seg,
    )
    session.scene = scene_i
    session._commit(record)
    return record


# ---------------------------------------------------------------------------
# Scene-level prompt composition


def compose_scene_prompt(p0: str, placements) -> str:
    """Benchmark prompt template: "<background> with <object> on the left and
    <object> on the right"; a vertical pair reads "with B on top of A"."""
    placements = list(placements)
    if not p0.strip():
        raise PipelineError("background prompt must be nonempty")
    if not 1 <= len(placements) <= 2:
        raise PipelineError("prompt template covers 1 or 2 objects")
    if len(placements) == 1:
        return f"{p0} with {placements[0][0]}"
    (first, side_a), (second, side_b) = placements
    if side_b == "above":
        return f"{p0} with {second} on top of {first}"
    if side_a == "above":
        return f"{p0} with {first} on top of {second}"
    if {side_a, side_b} == {"left", "right"}:
        return f"{p0} with {first} on the {side_a} and {second} on the {side_b}"
    raise PipelineError(f"unsupported placement pair {side_a!r}/{side_b!r}")


# ---------------------------------------------------------------------------
# Persistence: session/{config.json, scene.json, stages/<i>/...}.
# scene.json is the scene the session was created with; the current layout
# is reproduced by folding the stage records over it.


def save_session_header(root: str | Path, session: Session) -> None:
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    (root / "config.json").write_text(json.dumps(session.config.to_dict(), indent=2))
    (root / "scene.json").write_text(
        json.dumps(scene_to_dict(session.initial_scene), indent=2)
    )


def _grouped_cross(records: list[CrossAttnRecord]) -> dict[tuple[str, int], np.ndarray]:
    grouped: dict[tuple[str, int], dict[int, np.ndarray]] = {}
    for r in records:
        grouped.setdefault((r.layer, r.t), {})[r.token_index] = r.map
    return {
        key: np.stack([by_token[j] for j in sorted(by_token)])
        for key, by_token in grouped.items()
    }


def save_stage(root: str | Path, record: StageRecord) -> None:
    d = Path(root) / "stages" / str(record.index)
    (d / "latents").mkdir(parents=True, exist_ok=True)
    (d / "kv").mkdir(exist_ok=True)
    (d / "cross").mkdir(exist_ok=True)

    T = record.timesteps
    meta = {
        "index": record.index,
        "kind": record.kind,
        "seed": record.seed,
        "timesteps": T,
        "box": record.box.to_dict() if record.box is not None else None,
        "prompt": record.prompt.to_dict(),
        "introduced_box_stage": record.introduced_box_stage,
        "kv_layers": sorted({layer for layer, _ in record.kv_cache}),
        "blend_fraction": record.blend_fraction,
        "translation": record.translation.to_list() if record.translation else None,
    }
    (d / "record.json").write_text(json.dumps(meta, indent=2))
    (d / "depth.f32").write_bytes(encode_f32_blob(record.depth))
    if record.warped_seg is not None:
        (d / "seg_warped.f32").write_bytes(encode_f32_blob(record.warped_seg))
    fg = (record.masks.fg * 255).astype(np.uint8)
    (d / "mask_fg.png").write_bytes(image_to_png_bytes(np.stack([fg] * 3, axis=-1)))
    (d / "image.png").write_bytes(image_to_png_bytes(record.image))
    for k, lat in enumerate(record.trajectory):
        t = T - k
        (d / "latents" / f"x_{t:02d}.f32").write_bytes(
            encode_f32_blob(lat.transpose(1, 2, 0))
        )
    for (layer, t), kv in record.kv_cache.items():
        (d / "kv" / f"{layer}_t{t:02d}_k.f32").write_bytes(encode_f32_blob(kv.K))
        (d / "kv" / f"{layer}_t{t:02d}_v.f32").write_bytes(encode_f32_blob(kv.V))
    for (layer, t), maps in _grouped_cross(record.cross_records).items():
        (d / "cross" / f"{layer}_t{t:02d}.f32").write_bytes(encode_f32_blob(maps))


def _load_stage(d: Path) -> StageRecord:
    meta = json.loads((d / "record.json").read_text())
    T = int(meta["timesteps"])
    depth = decode_f32_blob((d / "depth.f32").read_bytes())[:, :, 0].astype(np.float64)
    fg = (png_bytes_to_image((d / "mask_fg.png").read_bytes())[:, :, 0] >= 128).astype(
        np.uint8
    )
    trajectory = [
        decode_f32_blob((d / "latents" / f"x_{t:02d}.f32").read_bytes())
        .astype(np.float64)
        .transpose(2, 0, 1)
        for t in range(T, -1, -1)
    ]
    kv_cache: dict[tuple[str, int], KVRecord] = {}
    for layer in meta["kv_layers"]:
        for t in range(1, T + 1):
            K = decode_f32_blob((d / "kv" / f"{layer}_t{t:02d}_k.f32").read_bytes())
            V = decode_f32_blob((d / "kv" / f"{layer}_t{t:02d}_v.f32").read_bytes())
            kv_cache[(layer, t)] = KVRecord(
                layer=layer, t=t,
                K=K[:, :, 0].astype(np.float64), V=V[:, :, 0].astype(np.float64),
            )
    crosses: list[CrossAttnRecord] = []
    for path in sorted((d / "cross").glob("*.f32")):
        layer, t_part = path.stem.rsplit("_t", 1)
        maps = decode_f32_blob(path.read_bytes())[:, :, 0].astype(np.float64)
        for j in range(maps.shape[0]):
            crosses.append(
                CrossAttnRecord(layer=layer, t=int(t_part), token_index=j, map=maps[j])
            )
    return StageRecord(
        index=int(meta["index"]),
        kind=meta["kind"],
        box=Box3D.from_dict(meta["box"]) if meta["box"] is not None else None,
        prompt=StagePrompt.from_dict(meta["prompt"]),
        seed=int(meta["seed"]),
        depth=depth,
        masks=StageMasks(fg=fg, bg=1 - fg),
        trajectory=trajectory,
        kv_cache=kv_cache,
        cross_records=crosses,
        image=png_bytes_to_image((d / "image.png").read_bytes()),
        introduced_box_stage={k: int(v) for k, v in meta["introduced_box_stage"].items()},
        blend_fraction=meta.get("blend_fraction"),
        translation=(
            Vec3(*meta["translation"]) if meta.get("translation") is not None else None
        ),
        warped_seg=(
            decode_f32_blob((d / "seg_warped.f32").read_bytes())[:, :, 0].astype(np.float64)
            if (d / "seg_warped.f32").exists()
            else None
        ),
    )


def load_session(
    root: str | Path,
    model: ToyDenoiser | None = None,
    codec: LatentCodec | None = None,
    segmenter=None,
) -> Session:
    """Rebuild a session from its directory; further stages may be appended."""
    root = Path(root)
    config = SessionConfig.from_dict(json.loads((root / "config.json").read_text()))
    scene = scene_from_dict(json.loads((root / "scene.json").read_text()))
    session = Session(scene, config, root=None, model=model, codec=codec,
                      segmenter=segmenter)
    session.root = root
    stage_dirs = sorted(
        (p for p in (root / "stages").iterdir() if p.is_dir()),
        key=lambda p: int(p.name),
    ) if (root / "stages").is_dir() else []
    for d in stage_dirs:
        record = _load_stage(d)
        if record.index != len(session.stages):
            raise PipelineError(f"stage directory {d.name} out of sequence")
        if record.box is not None:
            if record.kind == "add":
                session.scene = session.scene.with_box(record.box)
            else:
                session.scene = session.scene.with_box_replaced(record.box)
        session.stages.append(record)
    return session


def replay_session(
    root: str | Path,
    model: ToyDenoiser | None = None,
    codec: LatentCodec | None = None,
) -> Session:
    """Re-run every persisted stage from config + seeds alone (no stored
    latents), reproducing the original session bit-exactly."""
    stored = load_session(root, model=model, codec=codec)
    fresh = Session(stored.initial_scene, stored.config, root=None,
                    model=stored.model, codec=stored.codec)
    for record in stored.stages:
        if record.kind == "background":
            run_stage0(fresh, record.prompt)
        elif record.kind == "add":
            run_add_stage(fresh, record.box, record.prompt)
        else:
            if record.translation is None:
                raise PipelineError(
                    f"translate record {record.index} lacks its translation vector"
                )
            run_translate_stage(
                fresh,
                TranslationRequest(
                    box_id=record.box.id,
                    t=record.translation,
                    blend_fraction=record.blend_fraction
                    if record.blend_fraction is not None
                    else stored.config.blend_fraction,
                ),
            )
    return fresh
