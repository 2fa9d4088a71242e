// The studio's view model and its two construction paths: incrementally as
// the user works, and in one shot from a session fetch.  Both must agree --
// reloading the page on any session reproduces the identical view from
// server data alone, which the contract tests assert by deep equality.

import type {
  BoxDto,
  CameraDto,
  SceneDto,
  SessionConfigDto,
  SessionDetail,
  StageSummary,
  Vec3Tuple,
} from "./types.js";

export interface OrbitParams {
  yaw: number;
  pitch: number;
  distance: number;
}

export interface ViewState {
  sessionId: string;
  selectedBoxId: string | null; // must exist in the current scene
  orbit: OrbitParams;
  cursor: number; // stage timeline cursor, -1 before any stage, <= latest
}

export interface StageTile {
  index: number;
  kind: StageSummary["kind"];
  label: string;
  box: BoxDto | null;
  translation: Vec3Tuple | null;
  imageUrl: string;
  depthUrl: string;
  maskUrl: string;
}

export interface StudioView {
  state: ViewState;
  config: SessionConfigDto;
  roomExtents: Vec3Tuple;
  camera: CameraDto;
  boxes: BoxDto[]; // current scene, after every committed stage
  stages: StageTile[];
}

/** Deterministic starting orbit for a room: slightly above and to the left,
 * far enough back to frame the whole volume. */
export function defaultOrbit(roomExtents: Vec3Tuple): OrbitParams {
  return { yaw: -0.6, pitch: 0.5, distance: 1.5 * Math.max(...roomExtents) };
}

export function stageTile(summary: StageSummary): StageTile {
  return {
    index: summary.index,
    kind: summary.kind,
    label: `${summary.index}: ${summary.kind} — ${summary.prompt.text}`,
    box: summary.box,
    translation: summary.translation,
    imageUrl: summary.image_url,
    depthUrl: summary.depth_url,
    maskUrl: summary.mask_url,
  };
}

/** The view for a freshly created session, before any stage has run. */
export function initialView(
  sessionId: string,
  scene: SceneDto,
  config: SessionConfigDto,
): StudioView {
  return {
    state: {
      sessionId,
      selectedBoxId: null,
      orbit: defaultOrbit(scene.room.extents),
      cursor: -1,
    },
    config,
    roomExtents: scene.room.extents,
    camera: scene.camera,
    boxes: [...scene.boxes],
    stages: [],
  };
}

/** Fold one completed stage into the view: scene mutation, timeline tile,
 * cursor advance, and selection following the stage's box. */
export function applyStage(view: StudioView, summary: StageSummary): StudioView {
  let boxes = view.boxes;
  if (summary.box !== null) {
    const box = summary.box;
    boxes =
      summary.kind === "translate"
        ? boxes.map((b) => (b.id === box.id ? box : b))
        : [...boxes, box];
  }
  return {
    ...view,
    boxes,
    stages: [...view.stages, stageTile(summary)],
    state: {
      ...view.state,
      cursor: summary.index,
      selectedBoxId: summary.box !== null ? summary.box.id : view.state.selectedBoxId,
    },
  };
}

/** Rebuild the whole view from a session fetch alone. */
export function viewFromSession(detail: SessionDetail): StudioView {
  let view = initialView(detail.id, detail.initial_scene, detail.config);
  for (const summary of detail.stages) view = applyStage(view, summary);
  return view;
}

// -- guarded state updates --------------------------------------------------

export function selectBox(view: StudioView, boxId: string | null): StudioView {
  if (boxId !== null && !view.boxes.some((b) => b.id === boxId)) {
    throw new RangeError(`no box with id ${JSON.stringify(boxId)} in the scene`);
  }
  return { ...view, state: { ...view.state, selectedBoxId: boxId } };
}

export function setCursor(view: StudioView, cursor: number): StudioView {
  if (!(cursor >= -1 && cursor < view.stages.length)) {
    throw new RangeError(`cursor ${cursor} outside -1..${view.stages.length - 1}`);
  }
  return { ...view, state: { ...view.state, cursor } };
}

export function setOrbit(view: StudioView, orbit: OrbitParams): StudioView {
  return { ...view, state: { ...view.state, orbit } };
}

// -- pending edits ----------------------------------------------------------

export interface PendingEdit {
  box: { draft: BoxDto; dragging: boolean } | null;
  prompt: { text: string; objectTokenIndex: number };
  translation: { t: Vec3Tuple; blendFraction: number } | null;
}

export function emptyPendingEdit(): PendingEdit {
  return {
    box: null,
    prompt: { text: "", objectTokenIndex: 0 },
    translation: null,
  };
}
