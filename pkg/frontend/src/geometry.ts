// Client-side mirror of the server's scene math: yaw wrapping, box corners,
// the closed-bounds room check, and the pinhole projection used to overlay
// wireframes on the camera view.  The arithmetic follows the server
// operation for operation so that a box the client accepts is never
// rejected by the server's own bounds check.

import type { BoxDto, CameraDto, Vec3Tuple } from "./types.js";

export const TWO_PI = 2 * Math.PI;

/** Wrap an angle into [-pi, pi). */
export function wrapYaw(theta: number): number {
  let wrapped = (theta + Math.PI) % TWO_PI;
  if (wrapped < 0) wrapped += TWO_PI;
  return wrapped - Math.PI;
}

// Corner ordering matches the server: index bit 0 flips x, bit 1 flips y,
// bit 2 flips z, so the sequence starts (-,-,-), (+,-,-), (-,+,-), ...
export function cornerSigns(i: number): Vec3Tuple {
  return [
    (i >> 0) & 1 ? 1 : -1,
    (i >> 1) & 1 ? 1 : -1,
    (i >> 2) & 1 ? 1 : -1,
  ];
}

/** The 8 world-space corners of a yaw-rotated box, in the fixed order. */
export function boxCorners(box: BoxDto): Vec3Tuple[] {
  const [cx, cy, cz] = box.center;
  const [sx, sy, sz] = box.size;
  const c = Math.cos(box.yaw);
  const s = Math.sin(box.yaw);
  const corners: Vec3Tuple[] = [];
  for (let i = 0; i < 8; i++) {
    const [gx, gy, gz] = cornerSigns(i);
    const lx = (gx * sx) / 2;
    const ly = (gy * sy) / 2;
    const lz = (gz * sz) / 2;
    corners.push([lx * c - lz * s + cx, ly + cy, lx * s + lz * c + cz]);
  }
  return corners;
}

/**
 * True iff all 8 corners lie within the room.  Bounds are closed: a corner
 * exactly on a wall counts as inside.  Room coordinates: x in [-X/2, X/2],
 * y in [0, Y], z in [0, Z].
 */
export function checkInBounds(roomExtents: Vec3Tuple, box: BoxDto): boolean {
  const [x, y, z] = roomExtents;
  for (const [wx, wy, wz] of boxCorners(box)) {
    if (!(-x / 2 <= wx && wx <= x / 2 && 0 <= wy && wy <= y && 0 <= wz && wz <= z)) {
      return false;
    }
  }
  return true;
}

/**
 * Clamp a box's center so every corner stays inside the room, keeping size
 * and yaw.  Returns the clamped center and whether clamping moved it; a box
 * too large for the room on some axis lands at that axis's midpoint.
 */
export function clampCenter(
  roomExtents: Vec3Tuple,
  box: BoxDto,
): { center: Vec3Tuple; clamped: boolean } {
  const zeroed = boxCorners({ ...box, center: [0, 0, 0] });
  const lo: Vec3Tuple = [Infinity, Infinity, Infinity];
  const hi: Vec3Tuple = [-Infinity, -Infinity, -Infinity];
  for (const corner of zeroed) {
    for (let a = 0; a < 3; a++) {
      lo[a] = Math.min(lo[a], corner[a]);
      hi[a] = Math.max(hi[a], corner[a]);
    }
  }
  const [x, y, z] = roomExtents;
  const axisLo: Vec3Tuple = [-x / 2, 0, 0];
  const axisHi: Vec3Tuple = [x / 2, y, z];
  const center: Vec3Tuple = [...box.center];
  let clamped = false;
  for (let a = 0; a < 3; a++) {
    const min = axisLo[a] - lo[a];
    const max = axisHi[a] - hi[a];
    const target = min > max ? (axisLo[a] + axisHi[a]) / 2 : Math.min(Math.max(center[a], min), max);
    if (target !== center[a]) {
      center[a] = target;
      clamped = true;
    }
  }
  return { center, clamped };
}

/** Scale a box's size about its center (the zoom-in / zoom-out actions). */
export function zoomBox(box: BoxDto, factor: number): BoxDto {
  return { ...box, size: box.size.map((s) => s * factor) as Vec3Tuple };
}

/** Translate a box; size, yaw, and id are untouched. */
export function translateBox(box: BoxDto, t: Vec3Tuple): BoxDto {
  return {
    ...box,
    center: [box.center[0] + t[0], box.center[1] + t[1], box.center[2] + t[2]],
  };
}

// -- pinhole projection -----------------------------------------------------

type Mat3 = [Vec3Tuple, Vec3Tuple, Vec3Tuple];

function rotY(theta: number): Mat3 {
  const c = Math.cos(theta);
  const s = Math.sin(theta);
  return [
    [c, 0, -s],
    [0, 1, 0],
    [s, 0, c],
  ];
}

function rotX(theta: number): Mat3 {
  const c = Math.cos(theta);
  const s = Math.sin(theta);
  return [
    [1, 0, 0],
    [0, c, -s],
    [0, s, c],
  ];
}

function matMul(a: Mat3, b: Mat3): Mat3 {
  const out: number[][] = [[0, 0, 0], [0, 0, 0], [0, 0, 0]];
  for (let i = 0; i < 3; i++) {
    for (let j = 0; j < 3; j++) {
      out[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j] + a[i][2] * b[2][j];
    }
  }
  return out as Mat3;
}

/** Camera-to-world rotation; camera forward is +z at identity. */
export function cameraRotation(camera: CameraDto): Mat3 {
  return matMul(rotY(camera.yaw), rotX(-camera.pitch));
}

export interface Projected {
  px: number;
  py: number;
  depth: number;
}

/**
 * World point -> pixel coordinates; image y grows downward.  Returns null
 * for points at or behind the camera plane instead of throwing, so callers
 * can drop edges cleanly while dragging.
 */
export function project(camera: CameraDto, point: Vec3Tuple): Projected | null {
  const r = cameraRotation(camera);
  const d: Vec3Tuple = [
    point[0] - camera.position[0],
    point[1] - camera.position[1],
    point[2] - camera.position[2],
  ];
  // R^T @ d
  const x = r[0][0] * d[0] + r[1][0] * d[1] + r[2][0] * d[2];
  const y = r[0][1] * d[0] + r[1][1] * d[1] + r[2][1] * d[2];
  const z = r[0][2] * d[0] + r[1][2] * d[1] + r[2][2] * d[2];
  if (z <= 0) return null;
  const [cx, cy] = camera.principal_point;
  return { px: (camera.focal_px * x) / z + cx, py: (-camera.focal_px * y) / z + cy, depth: z };
}

// -- top-down editor mapping ------------------------------------------------

/**
 * Maps world (x, z) to canvas pixels for the top-down viewport.  The camera
 * side of the room (z = 0) sits at the bottom of the canvas.
 */
export class TopDownMap {
  readonly scale: number;
  private readonly ox: number;
  private readonly oy: number;

  constructor(
    readonly roomExtents: Vec3Tuple,
    readonly canvasWidth: number,
    readonly canvasHeight: number,
    margin = 16,
  ) {
    const [x, , z] = roomExtents;
    this.scale = Math.min((canvasWidth - 2 * margin) / x, (canvasHeight - 2 * margin) / z);
    this.ox = canvasWidth / 2;
    this.oy = canvasHeight - margin;
  }

  toCanvas(wx: number, wz: number): [number, number] {
    return [this.ox + wx * this.scale, this.oy - wz * this.scale];
  }

  toWorld(px: number, py: number): [number, number] {
    return [(px - this.ox) / this.scale, (this.oy - py) / this.scale];
  }
}
