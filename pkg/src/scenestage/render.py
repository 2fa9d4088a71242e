"""Ray-traced conditioning signals: depth maps, world-coordinate maps, masks.

One ray per pixel, no shading.  Rays are parameterized by camera-space z, so
the ray parameter *is* the reported depth; depth is z-distance, not Euclidean
ray length.  Pixel ``(ix, iy)`` casts through the continuous image point
``(ix, iy)``.  A primitive list is traced front-to-back per pixel with the
first-listed primitive winning exact depth ties (planes are listed before
boxes, boxes in scene order).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import Box3D, Camera, Plane, SceneLayout, Vec3, rot_y

__all__ = [
    "DepthMap",
    "CartesianMap",
    "StageMasks",
    "BBox2D",
    "RenderError",
    "ProjectionError",
    "EmptyMaskError",
    "NO_HIT",
    "project",
    "render_scene",
    "render_depth",
    "render_cartesian",
    "render_masks",
    "fit_bbox2d",
]

NO_HIT = np.inf


class RenderError(ValueError):
    pass


class ProjectionError(RenderError):
    """Point at or behind the camera plane."""


class EmptyMaskError(RenderError):
    """No true pixel to fit a box around."""


@dataclass(frozen=True)
class DepthMap:
    width: int
    height: int
    values: np.ndarray  # (H, W) float64, meters; NO_HIT where the ray misses

    def __post_init__(self):
        assert self.values.shape == (self.height, self.width)


@dataclass(frozen=True)
class CartesianMap:
    width: int
    height: int
    coords: np.ndarray  # (H, W, 3) float64 world points; undefined where ~hit
    hit: np.ndarray     # (H, W) bool

    def __post_init__(self):
        assert self.coords.shape == (self.height, self.width, 3)
        assert self.hit.shape == (self.height, self.width)


@dataclass(frozen=True)
class StageMasks:
    fg: np.ndarray  # (H, W) uint8 in {0, 1}
    bg: np.ndarray  # exact complement of fg

    def __post_init__(self):
        if not np.array_equal(self.fg + self.bg, np.ones_like(self.fg)):
            raise RenderError("fg and bg must partition the image")


@dataclass(frozen=True)
class BBox2D:
    x_min: int
    y_min: int
    x_max: int
    y_max: int

    def __post_init__(self):
        if self.x_min > self.x_max or self.y_min > self.y_max:
            raise RenderError("bbox extremes out of order")

    def corners(self) -> list[tuple[float, float]]:
        """(x, y) corners, top-left first, clockwise in image coordinates."""
        return [
            (self.x_min, self.y_min),
            (self.x_max, self.y_min),
            (self.x_max, self.y_max),
            (self.x_min, self.y_max),
        ]

    def to_list(self) -> list[int]:
        return [self.x_min, self.y_min, self.x_max, self.y_max]

    @staticmethod
    def from_list(v) -> "BBox2D":
        return BBox2D(int(v[0]), int(v[1]), int(v[2]), int(v[3]))


def project(camera: Camera, point: Vec3) -> tuple[float, float, float]:
    """World point -> (px, py, depth); image y grows downward."""
    p_cam = camera.rotation().T @ (point - camera.position).as_array()
    z = p_cam[2]
    if z <= 0:
        raise ProjectionError(f"point has nonpositive camera depth {z}")
    cx, cy = camera.principal_point
    px = camera.focal_px * p_cam[0] / z + cx
    py = -camera.focal_px * p_cam[1] / z + cy
    return float(px), float(py), float(z)


def _ray_grid(camera: Camera) -> tuple[np.ndarray, np.ndarray]:
    """World-space ray origins (3,) and directions (H, W, 3) with z_cam = 1,
    so the ray parameter equals camera-space depth."""
    cx, cy = camera.principal_point
    gx, gy = np.meshgrid(
        np.arange(camera.width, dtype=np.float64),
        np.arange(camera.height, dtype=np.float64),
    )
    d_cam = np.stack(
        [(gx - cx) / camera.focal_px, -(gy - cy) / camera.focal_px, np.ones_like(gx)],
        axis=-1,
    )
    d_world = d_cam @ camera.rotation().T
    return camera.position.as_array(), d_world


def _hit_plane(plane: Plane, origin: np.ndarray, dirs: np.ndarray) -> np.ndarray:
    """Ray parameter per pixel, NO_HIT where the ray misses the rectangle."""
    n = plane.normal.as_array()
    a = plane.anchor.as_array()
    denom = dirs @ n
    with np.errstate(divide="ignore", invalid="ignore"):
        s = np.dot(a - origin, n) / denom
    hit = (denom != 0) & (s > 0)
    s_safe = np.where(hit, s, 0.0)
    pts = origin + s_safe[..., None] * dirs
    u, v = plane.basis()
    rel = pts - a
    hit &= np.abs(rel @ u) <= plane.extent[0]
    hit &= np.abs(rel @ v) <= plane.extent[1]
    return np.where(hit, s, NO_HIT)


def _hit_box(box: Box3D, origin: np.ndarray, dirs: np.ndarray) -> np.ndarray:
    """Slab method against the box in its local (yaw-removed) frame."""
    rot = rot_y(box.yaw)
    o_l = rot.T @ (origin - box.center.as_array())
    d_l = dirs @ rot  # row-vector form of R^T d
    half = box.half()
    with np.errstate(divide="ignore", invalid="ignore"):
        t1 = (-half - o_l) / d_l
        t2 = (half - o_l) / d_l
    t_near = np.minimum(t1, t2).max(axis=-1)
    t_far = np.maximum(t1, t2).min(axis=-1)
    s = np.where(t_near > 0, t_near, t_far)
    with np.errstate(invalid="ignore"):
        hit = (t_near <= t_far) & (s > 0)
    return np.where(hit, s, NO_HIT)


@dataclass(frozen=True)
class RenderResult:
    depth: DepthMap
    coords: CartesianMap
    instance: np.ndarray      # (H, W) int32: -1 miss, [0, P) plane, P+j box j
    n_planes: int

    def box_mask(self, box_index: int) -> np.ndarray:
        return (self.instance == self.n_planes + box_index).astype(np.uint8)


def render_scene(scene: SceneLayout, boxes: tuple[Box3D, ...] | None = None) -> RenderResult:
    """Nearest-hit trace of planes plus (by default) all scene boxes."""
    cam = scene.camera
    origin, dirs = _ray_grid(cam)
    if boxes is None:
        boxes = scene.boxes
    depth = np.full((cam.height, cam.width), NO_HIT)
    instance = np.full((cam.height, cam.width), -1, dtype=np.int32)
    prims = [(_hit_plane(p, origin, dirs)) for p in scene.planes]
    prims += [(_hit_box(b, origin, dirs)) for b in boxes]
    for idx, s in enumerate(prims):
        closer = s < depth
        depth = np.where(closer, s, depth)
        instance = np.where(closer, np.int32(idx), instance)
    hit = np.isfinite(depth)
    coords = origin + np.where(hit, depth, 0.0)[..., None] * dirs
    return RenderResult(
        depth=DepthMap(cam.width, cam.height, depth),
        coords=CartesianMap(cam.width, cam.height, coords, hit),
        instance=instance,
        n_planes=len(scene.planes),
    )


def render_depth(scene: SceneLayout) -> DepthMap:
    return render_scene(scene).depth


def render_cartesian(box: Box3D, camera: Camera) -> CartesianMap:
    """World hit points of rays against a single box (no planes).

    A box fully behind the camera simply yields an all-miss map.
    """
    origin, dirs = _ray_grid(camera)
    s = _hit_box(box, origin, dirs)
    hit = np.isfinite(s)
    coords = origin + np.where(hit, s, 0.0)[..., None] * dirs
    return CartesianMap(camera.width, camera.height, coords, hit)


def render_masks(scene: SceneLayout, box_id: str) -> StageMasks:
    """fg marks pixels where the named box is the nearest hit; bg is the rest."""
    ids = [b.id for b in scene.boxes]
    if box_id not in ids:
        raise KeyError(f"no box with id {box_id!r}")
    fg = render_scene(scene).box_mask(ids.index(box_id))
    return StageMasks(fg=fg, bg=(1 - fg).astype(np.uint8))


def fit_bbox2d(mask: np.ndarray) -> BBox2D:
    """Tight axis-aligned bounds of the true pixels of a binary mask."""
    ys, xs = np.nonzero(mask)
    if len(xs) == 0:
        raise EmptyMaskError("cannot fit a box to an empty mask")
    return BBox2D(int(xs.min()), int(ys.min()), int(xs.max()), int(ys.max()))
