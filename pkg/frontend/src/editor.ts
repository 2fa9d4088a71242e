// Dual-viewport scene editor: an orthographic top-down canvas where boxes
// are placed and dragged, and a camera-view canvas overlaying wireframes on
// the latest render.  All pointer math lives in pure functions; canvas
// painting is kept to the draw* helpers.

import { boxCorners, clampCenter, project, TopDownMap, wrapYaw } from "./geometry.js";
import type { BoxDto, CameraDto, Vec3Tuple } from "./types.js";

export type DragHandle =
  | { kind: "move" }
  | { kind: "resize"; corner: 0 | 1 | 2 | 3 }
  | { kind: "rotate" };

export interface DragHit {
  boxId: string;
  handle: DragHandle;
}

const HANDLE_RADIUS_PX = 7;
const ROTATE_OFFSET_PX = 22;

/** Bottom-face rectangle of a box in world (x, z), in corner order
 * (-,-), (+,-), (+,+), (-,+) of the local footprint. */
export function footprint(box: BoxDto): [number, number][] {
  const [cx, , cz] = box.center;
  const hx = box.size[0] / 2;
  const hz = box.size[2] / 2;
  const c = Math.cos(box.yaw);
  const s = Math.sin(box.yaw);
  const local: [number, number][] = [
    [-hx, -hz],
    [hx, -hz],
    [hx, hz],
    [-hx, hz],
  ];
  return local.map(([lx, lz]) => [lx * c - lz * s + cx, lx * s + lz * c + cz]);
}

function rotateHandleWorld(box: BoxDto): [number, number] {
  // sits off the +x face of the footprint, in the box's own frame
  const r = box.size[0] / 2;
  return [
    box.center[0] + r * Math.cos(box.yaw),
    box.center[2] + r * Math.sin(box.yaw),
  ];
}

function inFootprint(box: BoxDto, wx: number, wz: number): boolean {
  // undo yaw, then an axis-aligned containment test
  const dx = wx - box.center[0];
  const dz = wz - box.center[2];
  const c = Math.cos(box.yaw);
  const s = Math.sin(box.yaw);
  const lx = dx * c + dz * s;
  const lz = -dx * s + dz * c;
  return Math.abs(lx) <= box.size[0] / 2 && Math.abs(lz) <= box.size[2] / 2;
}

/**
 * What a pointer press at canvas (px, py) grabs: a resize corner or the
 * rotate handle of the selected box first, else the topmost box footprint
 * (move).  Later boxes draw on top, so hit-testing walks the list backwards.
 */
export function hitTest(
  map: TopDownMap,
  boxes: BoxDto[],
  selectedBoxId: string | null,
  px: number,
  py: number,
): DragHit | null {
  const selected = boxes.find((b) => b.id === selectedBoxId);
  if (selected) {
    const corners = footprint(selected);
    for (let i = 0; i < 4; i++) {
      const [hx, hy] = map.toCanvas(corners[i][0], corners[i][1]);
      if (Math.hypot(px - hx, py - hy) <= HANDLE_RADIUS_PX) {
        return { boxId: selected.id, handle: { kind: "resize", corner: i as 0 | 1 | 2 | 3 } };
      }
    }
    const [rwx, rwz] = rotateHandleWorld(selected);
    const [rx, ry] = map.toCanvas(rwx, rwz);
    // the rotate knob is drawn ROTATE_OFFSET_PX beyond the +x face
    const [ccx, ccy] = map.toCanvas(selected.center[0], selected.center[2]);
    const len = Math.hypot(rx - ccx, ry - ccy) || 1;
    const kx = ccx + ((rx - ccx) / len) * (len + ROTATE_OFFSET_PX);
    const ky = ccy + ((ry - ccy) / len) * (len + ROTATE_OFFSET_PX);
    if (Math.hypot(px - kx, py - ky) <= HANDLE_RADIUS_PX) {
      return { boxId: selected.id, handle: { kind: "rotate" } };
    }
  }
  const [wx, wz] = map.toWorld(px, py);
  for (let i = boxes.length - 1; i >= 0; i--) {
    if (inFootprint(boxes[i], wx, wz)) {
      return { boxId: boxes[i].id, handle: { kind: "move" } };
    }
  }
  return null;
}

export interface DragResult {
  box: BoxDto;
  /** true when the pointer asked for a pose the room would not allow */
  clamped: boolean;
}

/**
 * Apply a drag to a box.  Moves clamp to the room (the handle stops at the
 * wall and the caller shows a warning); resizes keep the grabbed corner
 * under the pointer as far as bounds allow; rotation follows the pointer
 * bearing and wraps into [-pi, pi).
 */
export function applyDrag(
  roomExtents: Vec3Tuple,
  box: BoxDto,
  handle: DragHandle,
  worldX: number,
  worldZ: number,
): DragResult {
  if (handle.kind === "move") {
    const moved: BoxDto = { ...box, center: [worldX, box.center[1], worldZ] };
    const { center, clamped } = clampCenter(roomExtents, moved);
    return { box: { ...moved, center }, clamped };
  }
  if (handle.kind === "rotate") {
    const yaw = wrapYaw(
      Math.atan2(worldZ - box.center[2], worldX - box.center[0]),
    );
    const rotated: BoxDto = { ...box, yaw };
    const { center, clamped } = clampCenter(roomExtents, rotated);
    return { box: { ...rotated, center }, clamped };
  }
  // resize: hold the corner opposite the grabbed one fixed
  const corners = footprint(box);
  const opposite = corners[(handle.corner + 2) % 4];
  const c = Math.cos(box.yaw);
  const s = Math.sin(box.yaw);
  // pointer and fixed corner in the box's yaw frame
  const px = (worldX - opposite[0]) * c + (worldZ - opposite[1]) * s;
  const pz = -(worldX - opposite[0]) * s + (worldZ - opposite[1]) * c;
  const minSize = 0.05;
  const sx = Math.max(Math.abs(px), minSize);
  const sz = Math.max(Math.abs(pz), minSize);
  const resized: BoxDto = {
    ...box,
    size: [sx, box.size[1], sz],
    center: [
      opposite[0] + ((Math.sign(px) || 1) * (sx / 2)) * c - ((Math.sign(pz) || 1) * (sz / 2)) * s,
      box.center[1],
      opposite[1] + ((Math.sign(px) || 1) * (sx / 2)) * s + ((Math.sign(pz) || 1) * (sz / 2)) * c,
    ],
  };
  const { center, clamped } = clampCenter(roomExtents, resized);
  return { box: { ...resized, center }, clamped };
}

// -- wireframe drawing ------------------------------------------------------

// pairs of corner indices differing by one sign bit
const BOX_EDGES: [number, number][] = [
  [0, 1], [0, 2], [0, 4], [1, 3], [1, 5], [2, 3],
  [2, 6], [3, 7], [4, 5], [4, 6], [5, 7], [6, 7],
];

export function drawTopDown(
  ctx: CanvasRenderingContext2D,
  map: TopDownMap,
  roomExtents: Vec3Tuple,
  camera: CameraDto,
  boxes: BoxDto[],
  selectedBoxId: string | null,
  draft: BoxDto | null,
  draftValid: boolean,
): void {
  ctx.clearRect(0, 0, map.canvasWidth, map.canvasHeight);

  const [x, , z] = roomExtents;
  ctx.strokeStyle = "#667";
  ctx.lineWidth = 1.5;
  const [rx0, ry0] = map.toCanvas(-x / 2, 0);
  const [rx1, ry1] = map.toCanvas(x / 2, z);
  ctx.strokeRect(Math.min(rx0, rx1), Math.min(ry0, ry1), Math.abs(rx1 - rx0), Math.abs(ry1 - ry0));

  // camera marker with a field-of-view wedge
  const [ccx, ccy] = map.toCanvas(camera.position[0], camera.position[2]);
  const half = Math.atan2(camera.width / 2, camera.focal_px);
  ctx.strokeStyle = "#39f";
  ctx.beginPath();
  for (const side of [-1, 1]) {
    const angle = camera.yaw + side * half;
    // camera forward is +z; world angle measured from +x toward +z
    const [ex, ey] = map.toCanvas(
      camera.position[0] + Math.sin(angle) * z * 0.4,
      camera.position[2] + Math.cos(angle) * z * 0.4,
    );
    ctx.moveTo(ccx, ccy);
    ctx.lineTo(ex, ey);
  }
  ctx.stroke();

  const paint = (box: BoxDto, stroke: string, dashed: boolean) => {
    const corners = footprint(box);
    ctx.strokeStyle = stroke;
    ctx.setLineDash(dashed ? [5, 4] : []);
    ctx.beginPath();
    corners.forEach(([wx, wz], i) => {
      const [pxc, pyc] = map.toCanvas(wx, wz);
      if (i === 0) ctx.moveTo(pxc, pyc);
      else ctx.lineTo(pxc, pyc);
    });
    ctx.closePath();
    ctx.stroke();
    ctx.setLineDash([]);
  };

  for (const box of boxes) paint(box, box.id === selectedBoxId ? "#fa0" : "#9ab", false);
  if (draft) paint(draft, draftValid ? "#2c8" : "#e33", true);

  const selected = boxes.find((b) => b.id === selectedBoxId);
  if (selected) {
    ctx.fillStyle = "#fa0";
    for (const [wx, wz] of footprint(selected)) {
      const [pxc, pyc] = map.toCanvas(wx, wz);
      ctx.beginPath();
      ctx.arc(pxc, pyc, 4, 0, 2 * Math.PI);
      ctx.fill();
    }
  }
}

export function drawCameraOverlay(
  ctx: CanvasRenderingContext2D,
  camera: CameraDto,
  roomExtents: Vec3Tuple,
  boxes: BoxDto[],
  selectedBoxId: string | null,
  draft: BoxDto | null,
  draftValid: boolean,
  scaleX: number,
  scaleY: number,
): void {
  const strokeEdges = (corners: Vec3Tuple[], stroke: string, dashed: boolean) => {
    ctx.strokeStyle = stroke;
    ctx.setLineDash(dashed ? [5, 4] : []);
    ctx.beginPath();
    for (const [a, b] of BOX_EDGES) {
      const pa = project(camera, corners[a]);
      const pb = project(camera, corners[b]);
      if (!pa || !pb) continue; // skip edges crossing the camera plane
      ctx.moveTo(pa.px * scaleX, pa.py * scaleY);
      ctx.lineTo(pb.px * scaleX, pb.py * scaleY);
    }
    ctx.stroke();
    ctx.setLineDash([]);
  };

  const [x, y, z] = roomExtents;
  const roomCorners: Vec3Tuple[] = [];
  for (let i = 0; i < 8; i++) {
    roomCorners.push([
      (i & 1 ? x : -x) / 2,
      i & 2 ? y : 0,
      i & 4 ? z : 0,
    ]);
  }
  strokeEdges(roomCorners, "rgba(120,130,160,0.6)", false);

  for (const box of boxes) {
    strokeEdges(
      boxCorners(box),
      box.id === selectedBoxId ? "rgba(255,170,0,0.95)" : "rgba(150,180,200,0.8)",
      false,
    );
  }
  if (draft) {
    strokeEdges(boxCorners(draft), draftValid ? "rgba(40,200,130,0.95)" : "rgba(230,50,50,0.95)", true);
  }
}
