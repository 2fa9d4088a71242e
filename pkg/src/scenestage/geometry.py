"""3D layout primitives: room cuboid, boundary planes, oriented boxes, camera.

Coordinate conventions, fixed for the whole engine:

* World frame: x right, y up, z forward.  A room with extents ``(X, Y, Z)``
  occupies ``x in [-X/2, X/2], y in [0, Y], z in [0, Z]``; the camera sits
  near the open ``z = 0`` face looking toward +z.
* Box yaw rotates about the world y axis; positive yaw turns +x toward +z.
  Boxes are upright cuboids (no pitch/roll).
* Image coordinates: x right, y down, origin at the top-left pixel.  Pixel
  ``(ix, iy)`` samples the continuous image point ``(ix, iy)`` exactly, so
  projecting a rendered hit point lands back on its pixel index.
* Angles in radians, distances in meters.

All types are immutable values; every operation returns a new object.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace

import numpy as np

__all__ = [
    "Vec3",
    "Camera",
    "Plane",
    "Box3D",
    "SceneLayout",
    "LayoutError",
    "make_scene",
    "default_camera",
    "box_corners",
    "apply_translation",
    "check_in_bounds",
    "rot_y",
    "scene_to_dict",
    "scene_from_dict",
    "scene_to_json",
    "scene_from_json",
]

TWO_PI = 2.0 * math.pi


class LayoutError(ValueError):
    """Raised when a scene element violates its construction invariants."""


def _require(cond: bool, msg: str) -> None:
    if not cond:
        raise LayoutError(msg)


@dataclass(frozen=True)
class Vec3:
    x: float = 0.0
    y: float = 0.0
    z: float = 0.0

    def __post_init__(self):
        _require(
            all(math.isfinite(v) for v in (self.x, self.y, self.z)),
            "vector components must be finite",
        )

    def __add__(self, other: "Vec3") -> "Vec3":
        return Vec3(self.x + other.x, self.y + other.y, self.z + other.z)

    def __sub__(self, other: "Vec3") -> "Vec3":
        return Vec3(self.x - other.x, self.y - other.y, self.z - other.z)

    def __neg__(self) -> "Vec3":
        return Vec3(-self.x, -self.y, -self.z)

    def scaled(self, s: float) -> "Vec3":
        return Vec3(self.x * s, self.y * s, self.z * s)

    def dot(self, other: "Vec3") -> float:
        return self.x * other.x + self.y * other.y + self.z * other.z

    def norm(self) -> float:
        return math.sqrt(self.dot(self))

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z], dtype=np.float64)

    @staticmethod
    def from_array(a) -> "Vec3":
        return Vec3(float(a[0]), float(a[1]), float(a[2]))

    def to_list(self) -> list[float]:
        return [self.x, self.y, self.z]


def rot_y(theta: float) -> np.ndarray:
    """Rotation about world y; positive theta turns +x toward +z."""
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[c, 0.0, -s], [0.0, 1.0, 0.0], [s, 0.0, c]], dtype=np.float64)


def _rot_x(theta: float) -> np.ndarray:
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]], dtype=np.float64)


@dataclass(frozen=True)
class Camera:
    """Pinhole camera.

    Positive pitch tilts the view upward; yaw reuses :func:`rot_y`, so a
    positive yaw pans the view toward -x.  ``principal_point`` is in pixel
    coordinates and must lie inside ``[0, width-1] x [0, height-1]``.
    """

    position: Vec3 = field(default_factory=Vec3)
    yaw: float = 0.0
    pitch: float = 0.0
    focal_px: float = 443.0
    principal_point: tuple[float, float] = (255.5, 255.5)
    width: int = 512
    height: int = 512

    def __post_init__(self):
        _require(self.focal_px > 0, "focal_px must be positive")
        _require(self.width >= 8 and self.height >= 8, "image must be at least 8x8")
        px, py = self.principal_point
        _require(
            0.0 <= px <= self.width - 1 and 0.0 <= py <= self.height - 1,
            "principal point must lie inside the image",
        )

    def rotation(self) -> np.ndarray:
        """Camera-to-world rotation; camera forward is +z at identity."""
        return rot_y(self.yaw) @ _rot_x(-self.pitch)

    def to_dict(self) -> dict:
        return {
            "position": self.position.to_list(),
            "yaw": self.yaw,
            "pitch": self.pitch,
            "focal_px": self.focal_px,
            "principal_point": list(self.principal_point),
            "width": self.width,
            "height": self.height,
        }

    @staticmethod
    def from_dict(d: dict) -> "Camera":
        return Camera(
            position=Vec3(*d["position"]),
            yaw=float(d["yaw"]),
            pitch=float(d["pitch"]),
            focal_px=float(d["focal_px"]),
            principal_point=(float(d["principal_point"][0]), float(d["principal_point"][1])),
            width=int(d["width"]),
            height=int(d["height"]),
        )


def default_camera(width: int = 512, height: int = 512) -> Camera:
    """Camera standing at the open room face, eye height, looking down +z."""
    return Camera(
        position=Vec3(0.0, 1.4, 0.0),
        yaw=0.0,
        pitch=0.0,
        focal_px=0.866 * width,
        principal_point=((width - 1) / 2.0, (height - 1) / 2.0),
        width=width,
        height=height,
    )


@dataclass(frozen=True)
class Plane:
    """Finite rectangle: anchor point, unit normal, (u, v) half-sizes.

    The in-plane basis is deterministic: for a horizontal plane (normal along
    y) u is world x and v is world z; otherwise u = normalize(up x normal)
    and v = normal x u.
    """

    anchor: Vec3
    normal: Vec3
    extent: tuple[float, float]

    def __post_init__(self):
        _require(abs(self.normal.norm() - 1.0) <= 1e-9, "plane normal must be unit length")
        _require(self.extent[0] > 0 and self.extent[1] > 0, "plane extents must be positive")

    def basis(self) -> tuple[np.ndarray, np.ndarray]:
        n = self.normal.as_array()
        if abs(n[1]) > 0.999:
            u = np.array([1.0, 0.0, 0.0])
            v = np.array([0.0, 0.0, 1.0])
        else:
            up = np.array([0.0, 1.0, 0.0])
            u = np.cross(up, n)
            u = u / np.linalg.norm(u)
            v = np.cross(n, u)
        return u, v

    def to_dict(self) -> dict:
        return {
            "anchor": self.anchor.to_list(),
            "normal": self.normal.to_list(),
            "extent": list(self.extent),
        }

    @staticmethod
    def from_dict(d: dict) -> "Plane":
        return Plane(
            anchor=Vec3(*d["anchor"]),
            normal=Vec3(*d["normal"]),
            extent=(float(d["extent"][0]), float(d["extent"][1])),
        )


def _wrap_angle(theta: float) -> float:
    """Wrap into [-pi, pi)."""
    wrapped = math.fmod(theta + math.pi, TWO_PI)
    if wrapped < 0:
        wrapped += TWO_PI
    return wrapped - math.pi


@dataclass(frozen=True)
class Box3D:
    id: str
    center: Vec3
    size: tuple[float, float, float]
    yaw: float = 0.0

    def __post_init__(self):
        _require(all(s > 0 for s in self.size), "box size components must be positive")
        object.__setattr__(self, "yaw", _wrap_angle(self.yaw))

    def half(self) -> np.ndarray:
        return np.array(self.size, dtype=np.float64) / 2.0

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "center": self.center.to_list(),
            "size": list(self.size),
            "yaw": self.yaw,
        }

    @staticmethod
    def from_dict(d: dict) -> "Box3D":
        return Box3D(
            id=str(d["id"]),
            center=Vec3(*d["center"]),
            size=(float(d["size"][0]), float(d["size"][1]), float(d["size"][2])),
            yaw=float(d["yaw"]),
        )


# Corner ordering: index bit 0 flips x, bit 1 flips y, bit 2 flips z, so the
# sequence starts (-,-,-), (+,-,-), (-,+,-), (+,+,-), (-,-,+), ...
_CORNER_SIGNS = np.array(
    [[(-1) ** (1 + ((i >> a) & 1)) for a in range(3)] for i in range(8)],
    dtype=np.float64,
)


def box_corners(box: Box3D) -> list[Vec3]:
    """The 8 world-space corners of a yaw-rotated box, in the fixed order above."""
    local = _CORNER_SIGNS * box.half()
    world = local @ rot_y(box.yaw).T + box.center.as_array()
    return [Vec3.from_array(row) for row in world]


def apply_translation(box: Box3D, t: Vec3) -> Box3D:
    """Translate a box; size, yaw, and id are untouched."""
    return replace(box, center=box.center + t)


@dataclass(frozen=True)
class SceneLayout:
    room_extents: tuple[float, float, float]
    planes: tuple[Plane, ...]
    boxes: tuple[Box3D, ...]
    camera: Camera

    def __post_init__(self):
        _require(all(e > 0 for e in self.room_extents), "room extents must be positive")
        ids = [b.id for b in self.boxes]
        _require(len(ids) == len(set(ids)), "box ids must be unique")
        for b in self.boxes:
            _require(
                self._inside(b.center),
                f"box {b.id!r} center lies outside the room",
            )

    def _inside(self, p: Vec3) -> bool:
        x, y, z = self.room_extents
        return (-x / 2 <= p.x <= x / 2) and (0 <= p.y <= y) and (0 <= p.z <= z)

    def box(self, box_id: str) -> Box3D:
        for b in self.boxes:
            if b.id == box_id:
                return b
        raise KeyError(f"no box with id {box_id!r}")

    def with_box(self, box: Box3D) -> "SceneLayout":
        return replace(self, boxes=self.boxes + (box,))

    def with_box_replaced(self, box: Box3D) -> "SceneLayout":
        self.box(box.id)  # raises if unknown
        return replace(
            self, boxes=tuple(box if b.id == box.id else b for b in self.boxes)
        )

    def without_boxes(self) -> "SceneLayout":
        return replace(self, boxes=())


def make_scene(
    room_extents: tuple[float, float, float],
    camera: Camera,
    include_ceiling: bool = True,
) -> SceneLayout:
    """An empty room: floor, back wall, two side walls, and (optionally) a ceiling.

    The z = 0 face stays open so the camera can look in.
    """
    _require(all(e > 0 for e in room_extents), "room extents must be positive")
    x, y, z = room_extents
    planes = [
        Plane(Vec3(0, 0, z / 2), Vec3(0, 1, 0), (x / 2, z / 2)),          # floor
        Plane(Vec3(0, y / 2, z), Vec3(0, 0, -1), (x / 2, y / 2)),         # back wall
        Plane(Vec3(-x / 2, y / 2, z / 2), Vec3(1, 0, 0), (z / 2, y / 2)),  # left wall
        Plane(Vec3(x / 2, y / 2, z / 2), Vec3(-1, 0, 0), (z / 2, y / 2)),  # right wall
    ]
    if include_ceiling:
        planes.append(Plane(Vec3(0, y, z / 2), Vec3(0, -1, 0), (x / 2, z / 2)))
    return SceneLayout(
        room_extents=tuple(float(e) for e in room_extents),
        planes=tuple(planes),
        boxes=(),
        camera=camera,
    )


def check_in_bounds(scene: SceneLayout, box: Box3D) -> bool:
    """True iff all 8 corners lie within the room.  Bounds are closed: a
    corner exactly on a wall counts as inside."""
    x, y, z = scene.room_extents
    for c in box_corners(box):
        if not (-x / 2 <= c.x <= x / 2 and 0 <= c.y <= y and 0 <= c.z <= z):
            return False
    return True


# ---------------------------------------------------------------------------
# Canonical scene JSON


def scene_to_dict(scene: SceneLayout) -> dict:
    return {
        "room": {"extents": list(scene.room_extents)},
        "camera": scene.camera.to_dict(),
        "planes": [p.to_dict() for p in scene.planes],
        "boxes": [b.to_dict() for b in scene.boxes],
    }


def scene_from_dict(d: dict) -> SceneLayout:
    try:
        extents = d["room"]["extents"]
        return SceneLayout(
            room_extents=(float(extents[0]), float(extents[1]), float(extents[2])),
            planes=tuple(Plane.from_dict(p) for p in d["planes"]),
            boxes=tuple(Box3D.from_dict(b) for b in d["boxes"]),
            camera=Camera.from_dict(d["camera"]),
        )
    except (KeyError, IndexError, TypeError) as exc:
        raise LayoutError(f"malformed scene JSON: {exc}") from exc


def scene_to_json(scene: SceneLayout, indent: int | None = None) -> str:
    return json.dumps(scene_to_dict(scene), indent=indent)


def scene_from_json(text: str) -> SceneLayout:
    try:
        payload = json.loads(text)
    except json.JSONDecodeError as exc:
        raise LayoutError(f"scene JSON does not parse: {exc}") from exc
    return scene_from_dict(payload)
