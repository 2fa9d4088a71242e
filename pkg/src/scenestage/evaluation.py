"""Layout sampling and the metric harness.

Benchmarks draw two-object room layouts from a small furniture catalog,
generate them stage by stage, and score the result with detector-based
localization metrics plus an appearance-consistency probe around a
translation edit.  Detectors and image scorers are pluggable; the bundled
mock detector is a geometric oracle so the harness can run self-contained.
"""

from __future__ import annotations

import base64
import json
import math
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources

import jsonschema
import numpy as np
from PIL import Image

from .blobio import image_to_png_bytes
from .denoiser import ToyDenoiser
from .geometry import (
    Box3D,
    SceneLayout,
    Vec3,
    box_corners,
    check_in_bounds,
    default_camera,
    make_scene,
)
from .pipeline import (
    PipelineError,
    Session,
    SessionConfig,
    StagePrompt,
    run_add_stage,
    run_stage0,
    run_translate_stage,
)
from .render import (
    BBox2D,
    EmptyMaskError,
    RenderError,
    fit_bbox2d,
    project,
    render_masks,
)
from .translate import TranslationError, TranslationRequest

RELATIONS = ("left", "right", "above")
REPORT_VERSION = "1"


class EvalError(ValueError):
    pass


class SamplingError(EvalError):
    """Rejection sampling ran out of tries."""


class DetectionError(EvalError):
    pass


# ---------------------------------------------------------------------------
# Catalogs


@dataclass(frozen=True)
class CatalogObject:
    """One placeable object: display name, width : height ratio, and the
    camera-depth band it plausibly occupies."""

    name: str
    aspect_ratio: float
    depth_range: tuple[float, float]

    def __post_init__(self):
        if not self.name.strip():
            raise EvalError("object name must be non-empty")
        if self.aspect_ratio <= 0:
            raise EvalError("aspect ratio must be positive")
        lo, hi = self.depth_range
        if not 0 < lo <= hi:
            raise EvalError("depth range must satisfy 0 < lo <= hi")


@dataclass(frozen=True)
class ObjectCatalog:
    entries: tuple[CatalogObject, ...]

    def __post_init__(self):
        if not self.entries:
            raise EvalError("object catalog must not be empty")
        names = [e.name for e in self.entries]
        if len(names) != len(set(names)):
            raise EvalError("object names must be unique")

    @staticmethod
    def default() -> "ObjectCatalog":
        return _default_objects()


@dataclass(frozen=True)
class SceneCatalog:
    prompts: tuple[str, ...]

    def __post_init__(self):
        if not self.prompts:
            raise EvalError("scene catalog must not be empty")
        if len(self.prompts) != len(set(self.prompts)):
            raise EvalError("scene prompts must be unique")

    @staticmethod
    def default() -> "SceneCatalog":
        return _default_scenes()


def _read_data(name: str) -> dict:
    return json.loads(resources.files("scenestage").joinpath(f"data/{name}").read_text())


@lru_cache(maxsize=1)
def _default_objects() -> ObjectCatalog:
    raw = _read_data("objects.json")["objects"]
    entries = tuple(
        CatalogObject(
            name=str(o["name"]),
            aspect_ratio=float(o["aspect_ratio"]),
            depth_range=(float(o["depth_range"][0]), float(o["depth_range"][1])),
        )
        for o in raw
    )
    return ObjectCatalog(entries)


@lru_cache(maxsize=1)
def _default_scenes() -> SceneCatalog:
    return SceneCatalog(tuple(str(p) for p in _read_data("scenes.json")["prompts"]))


# ---------------------------------------------------------------------------
# Layout sampling


@dataclass(frozen=True)
class LayoutSample:
    """A sampled benchmark case: a scene prompt plus two placed objects and
    their intended spatial relation ('left'/'right' = where the second
    object sits, 'above' = second stacked on the first)."""

    seed: int
    scene_prompt: str
    labels: tuple[str, str]
    relation: str
    boxes: tuple[Box3D, Box3D]
    composed_prompt: str
    room_extents: tuple[float, float, float]
    resolution: int

    def scene(self) -> SceneLayout:
        """Empty room matching this layout's extents and camera."""
        return make_scene(
            self.room_extents, default_camera(self.resolution, self.resolution)
        )

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "scene_prompt": self.scene_prompt,
            "labels": list(self.labels),
            "relation": self.relation,
            "boxes": [b.to_dict() for b in self.boxes],
            "composed_prompt": self.composed_prompt,
            "room_extents": list(self.room_extents),
            "resolution": self.resolution,
        }

    @staticmethod
    def from_dict(d: dict) -> "LayoutSample":
        return LayoutSample(
            seed=int(d["seed"]),
            scene_prompt=str(d["scene_prompt"]),
            labels=(str(d["labels"][0]), str(d["labels"][1])),
            relation=str(d["relation"]),
            boxes=(Box3D.from_dict(d["boxes"][0]), Box3D.from_dict(d["boxes"][1])),
            composed_prompt=str(d["composed_prompt"]),
            room_extents=tuple(float(e) for e in d["room_extents"]),
            resolution=int(d["resolution"]),
        )


def object_phrase(name: str) -> str:
    article = "an" if name[0].lower() in "aeiou" else "a"
    return f"{article} {name}"


def _compose(p0: str, labels: tuple[str, str], relation: str) -> str:
    a, b = object_phrase(labels[0]), object_phrase(labels[1])
    if relation == "above":
        return f"{p0} with {b} on top of {a}"
    if relation == "left":
        return f"{p0} with {a} on the right and {b} on the left"
    return f"{p0} with {a} on the left and {b} on the right"


class _Reject(Exception):
    """Internal: current draw cannot satisfy the constraints; try again."""


def _sample_box(rng, obj: CatalogObject, box_id: str, room, x_edge_lo, x_edge_hi) -> Box3D:
    X, _, Z = room
    h = float(rng.uniform(0.5, min(1.4, 1.8 / obj.aspect_ratio)))
    w = obj.aspect_ratio * h
    d = float(min(w, h, 0.8))
    z_lo = max(obj.depth_range[0], 1.0 + d / 2)
    z_hi = min(obj.depth_range[1], Z - d / 2 - 0.05)
    if z_lo >= z_hi:
        raise _Reject
    # Keep box edges inside [x_edge_lo, x_edge_hi] and off the side walls.
    c_lo = max(x_edge_lo, -X / 2 + 0.05) + w / 2
    c_hi = min(x_edge_hi, X / 2 - 0.05) - w / 2
    if c_lo >= c_hi:
        raise _Reject
    return Box3D(
        id=box_id,
        center=Vec3(float(rng.uniform(c_lo, c_hi)), h / 2, float(rng.uniform(z_lo, z_hi))),
        size=(w, h, d),
    )


_STACK_GAP = 0.12  # vertical clearance so the projected boxes separate


def _stacked_box(rng, obj: CatalogObject, box_id: str, room, base: Box3D) -> Box3D:
    X, _, _ = room
    h = float(rng.uniform(0.3, min(0.8, 1.8 / obj.aspect_ratio)))
    w = obj.aspect_ratio * h
    d = float(min(w, h, 0.8))
    x = base.center.x + float(rng.uniform(-0.08, 0.08))
    if abs(x) + w / 2 > X / 2 - 0.05:
        raise _Reject
    y = base.center.y + base.size[1] / 2 + _STACK_GAP + h / 2
    return Box3D(id=box_id, center=Vec3(x, y, base.center.z), size=(w, h, d))


def _projected_bbox(camera, box: Box3D) -> tuple[float, float, float, float]:
    pts = [project(camera, c) for c in box_corners(box)]
    xs = [p[0] for p in pts]
    ys = [p[1] for p in pts]
    return (min(xs), min(ys), max(xs), max(ys))


def _rects_disjoint(a, b) -> bool:
    return a[2] < b[0] or b[2] < a[0] or a[3] < b[1] or b[3] < a[1]


def check_layout(layout: LayoutSample) -> bool:
    """Re-verify every sampling constraint from first principles."""
    if layout.relation not in RELATIONS:
        return False
    scene = layout.scene()
    if any(not check_in_bounds(scene, b) for b in layout.boxes):
        return False
    try:
        r1 = _projected_bbox(scene.camera, layout.boxes[0])
        r2 = _projected_bbox(scene.camera, layout.boxes[1])
        c1 = project(scene.camera, layout.boxes[0].center)
        c2 = project(scene.camera, layout.boxes[1].center)
    except RenderError:
        return False
    if not _rects_disjoint(r1, r2):
        return False
    # A placement with an empty rendered silhouette is undetectable by any
    # detector, so it is out of bounds for benchmark purposes even when the
    # box itself sits inside the room.
    staged = scene
    for b in layout.boxes:
        staged = staged.with_box(b)
    if any(not render_masks(staged, b.id).fg.any() for b in layout.boxes):
        return False
    if layout.relation == "left":
        return c2[0] < c1[0]
    if layout.relation == "right":
        return c2[0] > c1[0]
    return c2[1] < c1[1]  # above: image y grows downward


def sample_layout(
    seed: int,
    objects: ObjectCatalog | None = None,
    scenes: SceneCatalog | None = None,
    room_extents: tuple[float, float, float] = (4.0, 3.0, 6.0),
    resolution: int = 128,
    max_tries: int = 1000,
) -> LayoutSample:
    """Draw a valid two-object layout by rejection sampling.

    The scene prompt, object pair, and relation are fixed by the seed; only
    placements are redrawn on rejection, so accepted layouts stay
    deterministic per seed.  Accepted placements are in bounds, mutually
    non-occluding, relation-consistent, and leave both objects with a
    non-empty rendered silhouette in the camera frame.
    """
    objects = objects if objects is not None else ObjectCatalog.default()
    scenes = scenes if scenes is not None else SceneCatalog.default()
    rng = np.random.default_rng(seed)
    X = room_extents[0]
    p0 = scenes.prompts[int(rng.integers(len(scenes.prompts)))]
    relation = RELATIONS[int(rng.integers(len(RELATIONS)))]
    idx = rng.choice(len(objects.entries), size=2, replace=len(objects.entries) < 2)
    o1, o2 = objects.entries[int(idx[0])], objects.entries[int(idx[1])]

    for _ in range(max_tries):
        try:
            if relation == "above":
                b1 = _sample_box(rng, o1, "obj1", room_extents, -X / 2, X / 2)
                b2 = _stacked_box(rng, o2, "obj2", room_extents, b1)
            elif relation == "left":
                b1 = _sample_box(rng, o1, "obj1", room_extents, 0.1, X / 2)
                b2 = _sample_box(rng, o2, "obj2", room_extents, -X / 2, -0.1)
            else:
                b1 = _sample_box(rng, o1, "obj1", room_extents, -X / 2, -0.1)
                b2 = _sample_box(rng, o2, "obj2", room_extents, 0.1, X / 2)
        except _Reject:
            continue
        candidate = LayoutSample(
            seed=seed,
            scene_prompt=p0,
            labels=(o1.name, o2.name),
            relation=relation,
            boxes=(b1, b2),
            composed_prompt=_compose(p0, (o1.name, o2.name), relation),
            room_extents=tuple(float(e) for e in room_extents),
            resolution=resolution,
        )
        if check_layout(candidate):
            return candidate
    raise SamplingError(
        f"no valid layout for seed {seed} within {max_tries} tries"
    )


# ---------------------------------------------------------------------------
# Metrics


def miou(pred: BBox2D, target: BBox2D) -> float:
    """Intersection over union of two pixel boxes (bounds inclusive)."""
    ox = min(pred.x_max, target.x_max) - max(pred.x_min, target.x_min) + 1
    oy = min(pred.y_max, target.y_max) - max(pred.y_min, target.y_min) + 1
    inter = max(ox, 0) * max(oy, 0)
    area_p = (pred.x_max - pred.x_min + 1) * (pred.y_max - pred.y_min + 1)
    area_t = (target.x_max - target.x_min + 1) * (target.y_max - target.y_min + 1)
    return inter / (area_p + area_t - inter)


def layout_target_bboxes(layout: LayoutSample) -> list[BBox2D]:
    """Projected-corner bounds of each layout box, clipped to the image."""
    cam = default_camera(layout.resolution, layout.resolution)
    hi = layout.resolution - 1
    out = []
    for box in layout.boxes:
        r = _projected_bbox(cam, box)
        out.append(
            BBox2D(
                int(np.clip(math.floor(r[0]), 0, hi)),
                int(np.clip(math.floor(r[1]), 0, hi)),
                int(np.clip(math.ceil(r[2]), 0, hi)),
                int(np.clip(math.ceil(r[3]), 0, hi)),
            )
        )
    return out


@dataclass(frozen=True)
class Detection:
    label: str
    confidence: float
    bbox: BBox2D

    def __post_init__(self):
        if not 0.0 <= self.confidence <= 1.0:
            raise EvalError(f"confidence {self.confidence} outside [0, 1]")

    def to_dict(self) -> dict:
        return {
            "label": self.label,
            "confidence": self.confidence,
            "bbox": self.bbox.to_list(),
        }

    @staticmethod
    def from_dict(d: dict) -> "Detection":
        return Detection(
            label=str(d["label"]),
            confidence=float(d["confidence"]),
            bbox=BBox2D.from_list(d["bbox"]),
        )


def object_accuracy(detections, layout: LayoutSample) -> float:
    """Fraction of layout objects claimed by a same-label detection.

    Each detection and each object can match at most once; when several
    same-label pairings compete, higher bbox IoU against the projected
    target wins.  Confidence filtering is the caller's job.
    """
    targets = layout_target_bboxes(layout)
    pairs = []
    for ti, (target, label) in enumerate(zip(targets, layout.labels)):
        for di, det in enumerate(detections):
            if det.label == label:
                pairs.append((miou(det.bbox, target), di, ti))
    pairs.sort(key=lambda p: (-p[0], p[1], p[2]))
    used_d: set[int] = set()
    used_t: set[int] = set()
    hits = 0
    for _, di, ti in pairs:
        if di in used_d or ti in used_t:
            continue
        used_d.add(di)
        used_t.add(ti)
        hits += 1
    return hits / len(targets)


def psnr(a, b) -> float:
    """Peak signal-to-noise ratio for 8-bit images, capped at 99 dB."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise EvalError(f"shape mismatch {a.shape} vs {b.shape}")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return 99.0
    return float(min(10.0 * math.log10(255.0**2 / mse), 99.0))


def _luma(img: np.ndarray) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    if img.ndim == 3:
        return img[..., 0] * 0.299 + img[..., 1] * 0.587 + img[..., 2] * 0.114
    if img.ndim == 2:
        return img
    raise EvalError(f"expected a 2-d or 3-d image, got shape {img.shape}")


def ssim(a, b, window: int = 8) -> float:
    """Mean structural similarity over non-overlapping luma tiles."""
    ya, yb = _luma(a), _luma(b)
    if ya.shape != yb.shape:
        raise EvalError(f"shape mismatch {ya.shape} vs {yb.shape}")
    th, tw = ya.shape[0] // window, ya.shape[1] // window
    if th == 0 or tw == 0:
        raise EvalError(f"image smaller than the {window}px ssim window")
    ya = ya[: th * window, : tw * window].reshape(th, window, tw, window)
    yb = yb[: th * window, : tw * window].reshape(th, window, tw, window)
    axes = (1, 3)
    mu_a, mu_b = ya.mean(axis=axes), yb.mean(axis=axes)
    var_a, var_b = ya.var(axis=axes), yb.var(axis=axes)
    cov = (ya * yb).mean(axis=axes) - mu_a * mu_b
    c1 = (0.01 * 255.0) ** 2
    c2 = (0.03 * 255.0) ** 2
    score = ((2 * mu_a * mu_b + c1) * (2 * cov + c2)) / (
        (mu_a**2 + mu_b**2 + c1) * (var_a + var_b + c2)
    )
    return float(score.mean())


def _crop(img: np.ndarray, bbox: BBox2D) -> np.ndarray:
    h, w = img.shape[:2]
    if not (0 <= bbox.x_min and bbox.x_max < w and 0 <= bbox.y_min and bbox.y_max < h):
        raise EvalError("crop bbox exceeds image bounds")
    return img[bbox.y_min : bbox.y_max + 1, bbox.x_min : bbox.x_max + 1]


def _resize(img: np.ndarray, size: int) -> np.ndarray:
    arr = np.asarray(np.clip(img, 0, 255), dtype=np.uint8)
    out = Image.fromarray(arr).resize((size, size), Image.BILINEAR)
    return np.asarray(out, dtype=np.float64)


def consistency_eval(before, after, bbox_before: BBox2D, bbox_after: BBox2D,
                     scorer=None, size: int = 64) -> dict:
    """Compare the object's appearance before and after an edit.

    Both crops are resized to a common square so the scores measure
    appearance, not footprint.  A scorer with a ``score(a, b)`` method adds
    a ``clip_i2i`` entry; without one the metric is omitted.
    """
    ca = _resize(_crop(np.asarray(before), bbox_before), size)
    cb = _resize(_crop(np.asarray(after), bbox_after), size)
    out = {"ssim": ssim(ca, cb), "psnr": psnr(ca, cb)}
    if scorer is not None:
        out["clip_i2i"] = float(scorer.score(ca, cb))
    return out


# ---------------------------------------------------------------------------
# Detectors


class MockDetector:
    """Geometric oracle standing in for an open-vocabulary detector: reports
    each layout box via its rendered silhouette with full confidence."""

    def detect(self, image, scene: SceneLayout, layout: LayoutSample):
        out = []
        for box_id, label in zip(("obj1", "obj2"), layout.labels):
            try:
                bbox = fit_bbox2d(render_masks(scene, box_id).fg)
            except (KeyError, EmptyMaskError):
                continue
            out.append(Detection(label=label, confidence=1.0, bbox=bbox))
        return out


class HttpDetector:
    """Wire-protocol detector: POST {image: base64 PNG, labels} and get back
    {detections: [{label, confidence, bbox: [x0, y0, x1, y1]}]}.  Only the
    pixels and candidate labels cross the wire."""

    def __init__(self, url: str, timeout: float = 30.0, client=None):
        import httpx

        self.url = url
        self._client = client or httpx.Client(timeout=timeout)

    def detect(self, image, scene=None, layout=None):
        import httpx

        payload = {"image": base64.b64encode(image_to_png_bytes(image)).decode("ascii")}
        if layout is not None:
            payload["labels"] = list(layout.labels)
        try:
            resp = self._client.post(self.url, json=payload)
            resp.raise_for_status()
            raw = resp.json()["detections"]
            return [Detection.from_dict(d) for d in raw]
        except (httpx.HTTPError, KeyError, ValueError, TypeError) as exc:
            raise DetectionError(f"detector call failed: {exc}") from exc


# ---------------------------------------------------------------------------
# Benchmark


def _run_case(model, detector, scorer, layout: LayoutSample, seed: int,
              timesteps: int, confidence_threshold: float,
              include_consistency: bool) -> dict:
    scene = layout.scene()
    config = SessionConfig(timesteps=timesteps, resolution=layout.resolution, seed=seed)
    session = Session(scene, config, model=model)
    run_stage0(session, StagePrompt(layout.scene_prompt))
    for box, label in zip(layout.boxes, layout.labels):
        text = object_phrase(label)
        run_add_stage(session, box, StagePrompt(text, len(text.split()) - 1))
    image = session.stages[-1].image

    detections = [
        d
        for d in detector.detect(image, session.scene, layout)
        if d.confidence >= confidence_threshold
    ]
    ious = []
    for box_id, label in zip(("obj1", "obj2"), layout.labels):
        try:
            target = fit_bbox2d(render_masks(session.scene, box_id).fg)
        except EmptyMaskError:
            ious.append(0.0)
            continue
        best = max(
            (miou(d.bbox, target) for d in detections if d.label == label),
            default=0.0,
        )
        ious.append(best)

    case = {
        "layout_seed": layout.seed,
        "seed": seed,
        "relation": layout.relation,
        "labels": list(layout.labels),
        "miou": float(np.mean(ious)),
        "object_accuracy": object_accuracy(detections, layout),
        "n_detections": len(detections),
        "consistency": None,
    }
    if scorer is not None and hasattr(scorer, "score_text_image"):
        case["clip_t2i"] = float(scorer.score_text_image(layout.composed_prompt, image))
    if include_consistency:
        case["consistency"] = _consistency_case(session, scorer)
    return case


def _consistency_case(session: Session, scorer) -> dict | None:
    """Translate the first object sideways and score its crop against the
    pre-edit crop.  Edits that reject (bounds, segmentation) yield None
    rather than failing the whole case."""
    before = session.stages[-1].image
    step = 0.4 if session.scene.box("obj1").center.x <= 0 else -0.4
    try:
        bbox_before = fit_bbox2d(render_masks(session.scene, "obj1").fg)
        record = run_translate_stage(
            session, TranslationRequest("obj1", Vec3(step, 0.0, 0.0))
        )
        bbox_after = fit_bbox2d(record.masks.fg)
        i2i = scorer if (scorer is not None and hasattr(scorer, "score")) else None
        return consistency_eval(before, record.image, bbox_before, bbox_after, scorer=i2i)
    except (PipelineError, TranslationError, RenderError, EvalError):
        return None


def aggregate_cases(cases) -> dict:
    """Means over successful cases; insensitive to case order."""
    ok = [c for c in cases if "error" not in c]
    cons = [c["consistency"] for c in ok if c.get("consistency")]

    def mean(vals):
        return float(np.mean(vals)) if vals else None

    return {
        "n_cases": len(cases),
        "n_failed": len(cases) - len(ok),
        "miou": mean([c["miou"] for c in ok]),
        "object_accuracy": mean([c["object_accuracy"] for c in ok]),
        "consistency_ssim": mean([c["ssim"] for c in cons]),
        "consistency_psnr": mean([c["psnr"] for c in cons]),
    }


def run_benchmark(
    n_layouts: int,
    seeds_per_layout: int,
    backend="toy",
    detector="mock",
    *,
    resolution: int = 128,
    timesteps: int = 20,
    room_extents: tuple[float, float, float] = (4.0, 3.0, 6.0),
    confidence_threshold: float = 0.25,
    include_consistency: bool = True,
    scorer=None,
    objects: ObjectCatalog | None = None,
    scenes: SceneCatalog | None = None,
    layout_seed_base: int = 0,
) -> dict:
    """Sample layouts, generate each under several seeds, and score.

    ``backend`` is the bundled toy model ("toy") or any object with its
    ``predict_eps`` interface; ``detector`` is "mock" or any object with a
    ``detect`` method.  A failed case is recorded with its error message
    and excluded from the aggregate instead of aborting the run.
    """
    if n_layouts < 1 or seeds_per_layout < 1:
        raise EvalError("need at least one layout and one seed per layout")
    if isinstance(backend, str):
        if backend != "toy":
            raise EvalError(f"unknown backend {backend!r}; pass 'toy' or a model object")
        model = ToyDenoiser(seed=0)
    else:
        model = backend
    if isinstance(detector, str):
        if detector != "mock":
            raise EvalError(f"unknown detector {detector!r}; pass 'mock' or a detector object")
        det = MockDetector()
    else:
        det = detector

    cases = []
    for li in range(n_layouts):
        layout = sample_layout(
            layout_seed_base + li,
            objects=objects,
            scenes=scenes,
            room_extents=room_extents,
            resolution=resolution,
        )
        for s in range(seeds_per_layout):
            try:
                cases.append(
                    _run_case(
                        model, det, scorer, layout, s, timesteps,
                        confidence_threshold, include_consistency,
                    )
                )
            except Exception as exc:  # noqa: BLE001 - one bad case must not sink the run
                cases.append(
                    {
                        "layout_seed": layout.seed,
                        "seed": s,
                        "error": f"{type(exc).__name__}: {exc}",
                    }
                )

    report = {
        "version": REPORT_VERSION,
        "config": {
            "n_layouts": n_layouts,
            "seeds_per_layout": seeds_per_layout,
            "resolution": resolution,
            "timesteps": timesteps,
            "backend": backend if isinstance(backend, str) else type(backend).__name__,
            "detector": detector if isinstance(detector, str) else type(detector).__name__,
            "confidence_threshold": confidence_threshold,
            "include_consistency": include_consistency,
            "layout_seed_base": layout_seed_base,
        },
        "cases": cases,
        "aggregate": aggregate_cases(cases),
    }
    validate_report(report)
    return report


# ---------------------------------------------------------------------------
# Report schema


_NUMBER = {"type": "number"}
_UNIT = {"type": "number", "minimum": 0.0, "maximum": 1.0}
_OPT_NUMBER = {"type": ["number", "null"]}

_CONSISTENCY_SCHEMA = {
    "type": "object",
    "required": ["ssim", "psnr"],
    "properties": {"ssim": _NUMBER, "psnr": _NUMBER, "clip_i2i": _NUMBER},
    "additionalProperties": False,
}

_CASE_SCHEMA = {
    "type": "object",
    "required": [
        "layout_seed", "seed", "relation", "labels",
        "miou", "object_accuracy", "n_detections", "consistency",
    ],
    "properties": {
        "layout_seed": {"type": "integer"},
        "seed": {"type": "integer"},
        "relation": {"enum": list(RELATIONS)},
        "labels": {
            "type": "array",
            "items": {"type": "string"},
            "minItems": 2,
            "maxItems": 2,
        },
        "miou": _UNIT,
        "object_accuracy": _UNIT,
        "n_detections": {"type": "integer", "minimum": 0},
        "consistency": {"oneOf": [_CONSISTENCY_SCHEMA, {"type": "null"}]},
        "clip_t2i": _NUMBER,
    },
    "additionalProperties": False,
}

_FAILED_CASE_SCHEMA = {
    "type": "object",
    "required": ["layout_seed", "seed", "error"],
    "properties": {
        "layout_seed": {"type": "integer"},
        "seed": {"type": "integer"},
        "error": {"type": "string"},
    },
    "additionalProperties": False,
}

REPORT_SCHEMA = {
    "type": "object",
    "required": ["version", "config", "cases", "aggregate"],
    "properties": {
        "version": {"enum": [REPORT_VERSION]},
        "config": {
            "type": "object",
            "required": [
                "n_layouts", "seeds_per_layout", "resolution", "timesteps",
                "backend", "detector", "confidence_threshold",
                "include_consistency", "layout_seed_base",
            ],
            "properties": {
                "n_layouts": {"type": "integer", "minimum": 1},
                "seeds_per_layout": {"type": "integer", "minimum": 1},
                "resolution": {"type": "integer", "minimum": 64},
                "timesteps": {"type": "integer", "minimum": 1},
                "backend": {"type": "string"},
                "detector": {"type": "string"},
                "confidence_threshold": _UNIT,
                "include_consistency": {"type": "boolean"},
                "layout_seed_base": {"type": "integer"},
            },
            "additionalProperties": False,
        },
        "cases": {
            "type": "array",
            "items": {"oneOf": [_CASE_SCHEMA, _FAILED_CASE_SCHEMA]},
        },
        "aggregate": {
            "type": "object",
            "required": [
                "n_cases", "n_failed", "miou", "object_accuracy",
                "consistency_ssim", "consistency_psnr",
            ],
            "properties": {
                "n_cases": {"type": "integer", "minimum": 0},
                "n_failed": {"type": "integer", "minimum": 0},
                "miou": _OPT_NUMBER,
                "object_accuracy": _OPT_NUMBER,
                "consistency_ssim": _OPT_NUMBER,
                "consistency_psnr": _OPT_NUMBER,
            },
            "additionalProperties": False,
        },
    },
    "additionalProperties": False,
}


def validate_report(report: dict) -> None:
    """Raise jsonschema.ValidationError if the report is malformed."""
    jsonschema.validate(report, REPORT_SCHEMA)


def report_table(report: dict) -> str:
    """Small fixed-width text summary of a benchmark report."""
    cfg = report["config"]
    agg = report["aggregate"]

    def fmt(v):
        return "-" if v is None else f"{v:.3f}"

    return "\n".join(
        [
            f"layouts={cfg['n_layouts']} seeds={cfg['seeds_per_layout']} "
            f"res={cfg['resolution']} T={cfg['timesteps']} "
            f"backend={cfg['backend']} detector={cfg['detector']}",
            f"cases={agg['n_cases']} failed={agg['n_failed']}",
            f"miou={fmt(agg['miou'])} object_accuracy={fmt(agg['object_accuracy'])}",
            f"consistency ssim={fmt(agg['consistency_ssim'])} "
            f"psnr={fmt(agg['consistency_psnr'])}",
        ]
    )
