// Studio entry point: binds the dual-viewport editor, the stage timeline,
// and the add/translate panels to the service.  All state mutations come
// from server responses; drafts only ever paint previews until a stage
// round-trips.

import { ApiError, isJobEnvelope, StudioApi } from "./api.js";
import { blobToGrayscale, decodeF32Blob } from "./blob.js";
import { applyDrag, drawCameraOverlay, drawTopDown, hitTest } from "./editor.js";
import type { DragHit } from "./editor.js";
import { checkInBounds, TopDownMap, translateBox, wrapYaw, zoomBox } from "./geometry.js";
import { JobStream } from "./sse.js";
import { ProgressIndicator, tileUrl } from "./timeline.js";
import type { RenderToggle } from "./timeline.js";
import type { BoxDto, SessionConfigDto, StageSummary, Vec3Tuple } from "./types.js";
import {
  addStagePayload,
  backgroundStagePayload,
  boxProblems,
  branchPlan,
  configProblems,
  createSessionPayload,
  defaultCamera,
  emptyRoomScene,
  promptProblems,
  translateStagePayload,
  translationProblems,
} from "./validate.js";
import {
  applyStage,
  initialView,
  selectBox,
  setCursor,
  viewFromSession,
} from "./viewstate.js";
import type { StudioView } from "./viewstate.js";

const $ = <T extends HTMLElement>(id: string): T => {
  const el = document.getElementById(id);
  if (!el) throw new Error(`missing element #${id}`);
  return el as T;
};

const api = new StudioApi("");

let view: StudioView | null = null;
let draft: BoxDto | null = null;
let drag: DragHit | null = null;
let translation: Vec3Tuple = [0, 0, 0];
let toggle: RenderToggle = "image";
let stageImage: HTMLImageElement | null = null;
let busy = false;

const status = (text: string, isError = false) => {
  const line = $("status");
  line.textContent = text;
  line.className = isError ? "status error" : "status";
};

// -- rendering --------------------------------------------------------------

function topDownMap(): TopDownMap | null {
  if (!view) return null;
  const canvas = $("topdown") as unknown as HTMLCanvasElement;
  return new TopDownMap(view.roomExtents, canvas.width, canvas.height);
}

function draftValid(): boolean {
  if (!view || !draft) return false;
  return boxProblems(
    { room: { extents: view.roomExtents }, camera: view.camera, planes: [], boxes: view.boxes },
    draft,
  ).length === 0;
}

function translatePreview(): { box: BoxDto; valid: boolean } | null {
  if (!view || !view.state.selectedBoxId) return null;
  if (translation.every((v) => v === 0)) return null;
  const box = view.boxes.find((b) => b.id === view!.state.selectedBoxId);
  if (!box) return null;
  const moved = translateBox(box, translation);
  return { box: moved, valid: checkInBounds(view.roomExtents, moved) };
}

function paint(): void {
  if (!view) return;
  const map = topDownMap();
  if (!map) return;
  const canvas = $("topdown") as unknown as HTMLCanvasElement;
  const ctx = canvas.getContext("2d");
  if (!ctx) return;

  const preview = translatePreview();
  const overlayDraft = draft ?? preview?.box ?? null;
  const overlayValid = draft ? draftValid() : preview?.valid ?? true;
  drawTopDown(
    ctx, map, view.roomExtents, view.camera, view.boxes,
    view.state.selectedBoxId, overlayDraft, overlayValid,
  );

  const camCanvas = $("camview") as unknown as HTMLCanvasElement;
  const camCtx = camCanvas.getContext("2d");
  if (!camCtx) return;
  camCtx.clearRect(0, 0, camCanvas.width, camCanvas.height);
  if (stageImage && stageImage.complete && stageImage.naturalWidth > 0) {
    camCtx.drawImage(stageImage, 0, 0, camCanvas.width, camCanvas.height);
  }
  drawCameraOverlay(
    camCtx, view.camera, view.roomExtents, view.boxes,
    view.state.selectedBoxId, overlayDraft, overlayValid,
    camCanvas.width / view.camera.width, camCanvas.height / view.camera.height,
  );
}

async function showStage(index: number): Promise<void> {
  if (!view || index < 0 || index >= view.stages.length) {
    stageImage = null;
    paint();
    return;
  }
  const tile = view.stages[index];
  if (toggle === "depth") {
    // depth travels as an f32 blob; normalize it for display
    const buffer = await api.fetchRender(view.state.sessionId, index, "depth");
    const blob = decodeF32Blob(buffer);
    const gray = blobToGrayscale(blob);
    const img = new ImageData(blob.width, blob.height);
    for (let i = 0; i < gray.length; i++) {
      img.data[i * 4] = img.data[i * 4 + 1] = img.data[i * 4 + 2] = gray[i];
      img.data[i * 4 + 3] = 255;
    }
    const off = document.createElement("canvas");
    off.width = blob.width;
    off.height = blob.height;
    off.getContext("2d")?.putImageData(img, 0, 0);
    stageImage = new Image();
    stageImage.src = off.toDataURL();
  } else {
    stageImage = new Image();
    stageImage.src = tileUrl(tile, toggle);
  }
  stageImage.onload = () => paint();
  paint();
}

function renderTimeline(): void {
  const strip = $("timeline");
  strip.replaceChildren();
  if (!view) return;
  view.stages.forEach((tile) => {
    const cell = document.createElement("button");
    cell.className = tile.index === view!.state.cursor ? "tile active" : "tile";
    const img = document.createElement("img");
    img.src = tile.imageUrl;
    img.alt = tile.label;
    const caption = document.createElement("span");
    caption.textContent = tile.label;
    cell.append(img, caption);
    cell.addEventListener("click", () => {
      view = setCursor(view!, tile.index);
      if (tile.box) view = selectBox(view, tile.box.id);
      renderAll();
    });
    strip.appendChild(cell);
  });
}

function renderBoxList(): void {
  const list = $("boxlist");
  list.replaceChildren();
  if (!view) return;
  for (const box of view.boxes) {
    const item = document.createElement("button");
    item.className = box.id === view.state.selectedBoxId ? "box active" : "box";
    item.textContent = box.id;
    item.addEventListener("click", () => {
      view = selectBox(view!, box.id);
      renderAll();
    });
    list.appendChild(item);
  }
}

function syncDraftInputs(): void {
  const hasDraft = draft !== null;
  ($("draft-fields") as HTMLFieldSetElement).disabled = !hasDraft;
  if (!draft) return;
  ($("draft-id") as HTMLInputElement).value = draft.id;
  (["x", "y", "z"] as const).forEach((axis, i) => {
    ($(`draft-c${axis}`) as HTMLInputElement).value = draft!.center[i].toFixed(2);
    ($(`draft-s${axis}`) as HTMLInputElement).value = draft!.size[i].toFixed(2);
  });
  ($("draft-yaw") as HTMLInputElement).value = draft.yaw.toFixed(2);
  const problems = view ? boxProblems(
    { room: { extents: view.roomExtents }, camera: view.camera, planes: [], boxes: view.boxes },
    draft,
  ) : [];
  $("draft-problems").textContent = problems.join("; ");
  ($("add-stage") as HTMLButtonElement).disabled = problems.length > 0 || busy;
}

function syncTranslatePanel(): void {
  const panel = $("translate-fields") as HTMLFieldSetElement;
  panel.disabled = !view?.state.selectedBoxId;
  (["x", "y", "z"] as const).forEach((axis, i) => {
    ($(`t-${axis}`) as HTMLInputElement).value = String(translation[i]);
  });
  const blend = Number(($("t-blend") as HTMLInputElement).value);
  $("t-blend-label").textContent = blend.toFixed(2);
  let problems: string[] = [];
  if (view && view.state.selectedBoxId) {
    problems = translationProblems(
      { room: { extents: view.roomExtents }, camera: view.camera, planes: [], boxes: view.boxes },
      { boxId: view.state.selectedBoxId, t: translation, blendFraction: blend },
    );
  }
  $("t-problems").textContent = problems.join("; ");
  ($("run-translate") as HTMLButtonElement).disabled =
    !view?.state.selectedBoxId || problems.length > 0 || busy;
}

function renderAll(): void {
  renderTimeline();
  renderBoxList();
  syncDraftInputs();
  syncTranslatePanel();
  void showStage(view?.state.cursor ?? -1);
  const hasView = view !== null;
  ($("run-background") as HTMLButtonElement).disabled =
    !hasView || busy || (view ? view.stages.length > 0 : false);
  ($("new-draft") as HTMLButtonElement).disabled = !hasView || busy;
}

// -- stage submission -------------------------------------------------------

function commitStage(summary: StageSummary): void {
  if (!view) return;
  view = applyStage(view, summary);
  draft = null;
  translation = [0, 0, 0];
  status(`stage ${summary.index} (${summary.kind}) done`);
  renderAll();
}

function runJob(eventsUrl: string): void {
  const bar = $("progress") as HTMLProgressElement;
  bar.hidden = false;
  bar.value = 0;
  const indicator = new ProgressIndicator();
  const stream = new JobStream(eventsUrl, {
    onProgress: (step, total) => {
      indicator.onProgress(step, total);
      bar.value = indicator.fraction;
    },
    onDone: (stage) => {
      indicator.onDone(stage);
      bar.hidden = true;
      busy = false;
      commitStage(stage);
    },
    onError: (error) => {
      indicator.onError(error);
      bar.hidden = true;
      busy = false;
      status(`${error.code}: ${error.message}`, true);
      renderAll();
    },
  });
  stream.connect();
}

async function submit(kind: "background" | "add" | "translate"): Promise<void> {
  if (!view || busy) return;
  const runAsync = ($("use-async") as HTMLInputElement).checked;
  const text = ($("prompt-text") as HTMLInputElement).value;
  const tokenIndex = Number(($("prompt-token") as HTMLInputElement).value) || 0;
  if (kind !== "translate") {
    const bad = promptProblems(text, tokenIndex);
    if (bad.length) {
      status(bad.join("; "), true);
      return;
    }
  }
  busy = true;
  renderAll();
  try {
    let outcome;
    if (kind === "background") {
      outcome = await api.addStage(
        view.state.sessionId,
        backgroundStagePayload({ text, objectTokenIndex: tokenIndex }, { async: runAsync }),
      );
    } else if (kind === "add") {
      if (!draft) return;
      outcome = await api.addStage(
        view.state.sessionId,
        addStagePayload(draft, { text, objectTokenIndex: tokenIndex }, { async: runAsync }),
      );
    } else {
      const blend = Number(($("t-blend") as HTMLInputElement).value);
      outcome = await api.translateStage(
        view.state.sessionId,
        translateStagePayload(
          { boxId: view.state.selectedBoxId!, t: translation, blendFraction: blend },
          { async: runAsync },
        ),
      );
    }
    if (isJobEnvelope(outcome)) {
      status("running…");
      runJob(outcome.events_url);
      return; // busy stays set until the stream terminates
    }
    busy = false;
    commitStage(outcome);
  } catch (exc) {
    busy = false;
    if (exc instanceof ApiError) status(`${exc.payload.code}: ${exc.payload.message}`, true);
    else status(String(exc), true);
    renderAll();
  }
}

// -- session lifecycle ------------------------------------------------------

async function createSession(): Promise<void> {
  const extents: Vec3Tuple = [
    Number(($("room-x") as HTMLInputElement).value),
    Number(($("room-y") as HTMLInputElement).value),
    Number(($("room-z") as HTMLInputElement).value),
  ];
  const resolution = Number(($("cfg-resolution") as HTMLInputElement).value);
  const config: Partial<SessionConfigDto> = {
    resolution,
    timesteps: Number(($("cfg-timesteps") as HTMLInputElement).value),
    seed: Number(($("cfg-seed") as HTMLInputElement).value),
    attention: ($("cfg-attention") as HTMLSelectElement).value,
  };
  const bad = configProblems(config);
  if (bad.length || !extents.every((e) => Number.isFinite(e) && e > 0)) {
    status(bad.concat(extents.every((e) => e > 0) ? [] : ["room extents must be positive"]).join("; "), true);
    return;
  }
  const scene = emptyRoomScene(extents, defaultCamera(resolution, resolution));
  try {
    const handle = await api.createSession(createSessionPayload(scene, config));
    view = initialView(handle.id, scene, handle.config);
    location.hash = `s=${handle.id}`;
    status(`session ${handle.id} created`);
    renderAll();
  } catch (exc) {
    status(exc instanceof ApiError ? exc.message : String(exc), true);
  }
}

async function loadFromHash(): Promise<boolean> {
  const match = /^#s=([0-9a-f]+)$/.exec(location.hash);
  if (!match) return false;
  try {
    view = viewFromSession(await api.getSession(match[1]));
    status(`session ${match[1]} restored`);
    renderAll();
    return true;
  } catch (exc) {
    status(exc instanceof ApiError ? exc.message : String(exc), true);
    return false;
  }
}

async function branch(upTo: number): Promise<void> {
  if (!view || busy) return;
  busy = true;
  status(`branching at stage ${upTo}…`);
  try {
    const detail = await api.getSession(view.state.sessionId);
    const plan = branchPlan(detail, upTo);
    const handle = await api.createSession(plan.create);
    let forked = initialView(handle.id, detail.initial_scene, handle.config);
    for (const step of plan.stages) {
      const outcome =
        step.kind === "add"
          ? await api.addStage(handle.id, step.body)
          : await api.translateStage(handle.id, step.body);
      if (isJobEnvelope(outcome)) throw new Error("branch replay must run synchronously");
      forked = applyStage(forked, outcome);
    }
    view = forked;
    location.hash = `s=${handle.id}`;
    status(`branched into session ${handle.id}`);
  } catch (exc) {
    status(exc instanceof ApiError ? exc.message : String(exc), true);
  } finally {
    busy = false;
    renderAll();
  }
}

// -- wiring -----------------------------------------------------------------

function bind(): void {
  $("create-session").addEventListener("click", () => void createSession());
  $("run-background").addEventListener("click", () => void submit("background"));
  $("add-stage").addEventListener("click", () => void submit("add"));
  $("run-translate").addEventListener("click", () => void submit("translate"));
  $("branch").addEventListener("click", () => {
    if (view && view.state.cursor >= 0) void branch(view.state.cursor);
  });

  $("new-draft").addEventListener("click", () => {
    if (!view) return;
    const [, y] = view.roomExtents;
    const n = view.boxes.length + 1;
    draft = {
      id: `box${n}`,
      center: [0, Math.min(0.5, y / 2), view.roomExtents[2] / 2],
      size: [1, 1, 1],
      yaw: 0,
    };
    renderAll();
  });

  $("draft-id").addEventListener("input", (ev) => {
    if (draft) draft = { ...draft, id: (ev.target as HTMLInputElement).value };
    syncDraftInputs();
    paint();
  });
  (["x", "y", "z"] as const).forEach((axis, i) => {
    $(`draft-c${axis}`).addEventListener("change", (ev) => {
      if (!draft) return;
      const center = [...draft.center] as Vec3Tuple;
      center[i] = Number((ev.target as HTMLInputElement).value);
      draft = { ...draft, center };
      renderAll();
    });
    $(`draft-s${axis}`).addEventListener("change", (ev) => {
      if (!draft) return;
      const size = [...draft.size] as Vec3Tuple;
      size[i] = Number((ev.target as HTMLInputElement).value);
      draft = { ...draft, size };
      renderAll();
    });
    $(`t-${axis}`).addEventListener("change", (ev) => {
      const t = [...translation] as Vec3Tuple;
      t[i] = Number((ev.target as HTMLInputElement).value);
      translation = t;
      renderAll();
    });
    for (const sign of [-1, 1]) {
      $(`t-${axis}${sign > 0 ? "plus" : "minus"}`).addEventListener("click", () => {
        const t = [...translation] as Vec3Tuple;
        t[i] = Number((t[i] + sign * 0.2).toFixed(3));
        translation = t;
        renderAll();
      });
    }
  });
  // the yaw slider wraps at +/-pi rather than clamping
  $("draft-yaw").addEventListener("input", (ev) => {
    if (!draft) return;
    draft = { ...draft, yaw: wrapYaw(Number((ev.target as HTMLInputElement).value)) };
    renderAll();
  });
  $("zoom-in").addEventListener("click", () => {
    if (draft) {
      draft = zoomBox(draft, 1.25);
      renderAll();
    }
  });
  $("zoom-out").addEventListener("click", () => {
    if (draft) {
      draft = zoomBox(draft, 0.8);
      renderAll();
    }
  });
  $("t-blend").addEventListener("input", () => syncTranslatePanel());

  for (const kind of ["image", "depth", "mask"] as const) {
    $(`toggle-${kind}`).addEventListener("click", () => {
      toggle = kind;
      renderAll();
    });
  }

  const canvas = $("topdown") as unknown as HTMLCanvasElement;
  canvas.addEventListener("pointerdown", (ev) => {
    if (!view) return;
    const map = topDownMap();
    if (!map) return;
    const rect = canvas.getBoundingClientRect();
    const px = ev.clientX - rect.left;
    const py = ev.clientY - rect.top;
    const boxes = draft ? [...view.boxes, draft] : view.boxes;
    const hit = hitTest(map, boxes, draft ? draft.id : view.state.selectedBoxId, px, py);
    if (!hit) return;
    if (draft && hit.boxId === draft.id) drag = hit;
    else {
      view = selectBox(view, hit.boxId);
      renderAll();
    }
    canvas.setPointerCapture(ev.pointerId);
  });
  canvas.addEventListener("pointermove", (ev) => {
    if (!view || !drag || !draft) return;
    const map = topDownMap();
    if (!map) return;
    const rect = canvas.getBoundingClientRect();
    const [wx, wz] = map.toWorld(ev.clientX - rect.left, ev.clientY - rect.top);
    const result = applyDrag(view.roomExtents, draft, drag.handle, wx, wz);
    draft = result.box;
    if (result.clamped) status("clamped to the room walls");
    renderAll();
  });
  canvas.addEventListener("pointerup", () => {
    drag = null;
  });

  window.addEventListener("hashchange", () => void loadFromHash());
}

async function start(): Promise<void> {
  bind();
  if (!(await loadFromHash())) {
    status("create a session to begin");
  }
  renderAll();
}

void start();
