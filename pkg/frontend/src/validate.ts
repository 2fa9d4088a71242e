// Draft validation and request-payload construction.  Every check here is a
// strict subset of what the server enforces, so a draft that passes is
// never rejected for schema or bounds reasons; the builders are the only
// place request JSON is assembled.

import { checkInBounds, translateBox, wrapYaw } from "./geometry.js";
import type {
  AddStageBody,
  BoxDto,
  CameraDto,
  CreateSessionBody,
  SceneDto,
  SessionConfigDto,
  SessionDetail,
  TranslateBody,
  Vec3Tuple,
} from "./types.js";

export const ATTENTION_KINDS = ["standard", "cross_frame", "extended", "dsa"] as const;
export const SEED_POLICIES = ["per_stage", "reuse"] as const;
export const DEFAULT_BLEND_FRACTION = 0.8;

export interface BoxDraft {
  id: string;
  center: Vec3Tuple;
  size: Vec3Tuple;
  yaw: number;
}

export interface TranslationDraft {
  boxId: string;
  t: Vec3Tuple;
  blendFraction: number;
}

const finite = (values: number[]) => values.every(Number.isFinite);

/** Problems that would make the server reject an added box; empty = submittable. */
export function boxProblems(scene: SceneDto, draft: BoxDraft): string[] {
  const problems: string[] = [];
  if (draft.id.trim() === "") problems.push("box id must not be empty");
  if (scene.boxes.some((b) => b.id === draft.id)) {
    problems.push(`box id ${JSON.stringify(draft.id)} already exists`);
  }
  if (!finite([...draft.center, ...draft.size, draft.yaw])) {
    problems.push("box fields must be finite numbers");
    return problems;
  }
  if (!draft.size.every((s) => s > 0)) {
    problems.push("box size components must be positive");
    return problems;
  }
  if (!checkInBounds(scene.room.extents, boxDto(draft))) {
    problems.push("box does not fit inside the room");
  }
  return problems;
}

export function promptProblems(text: string, objectTokenIndex: number): string[] {
  const words = text.split(/\s+/).filter((w) => w.length > 0);
  if (words.length === 0) return ["prompt text must contain at least one word"];
  if (!Number.isInteger(objectTokenIndex) || objectTokenIndex < 0 || objectTokenIndex >= words.length) {
    return [`object token index must lie in 0..${words.length - 1}`];
  }
  return [];
}

/** Problems that would make the server reject a translation request. */
export function translationProblems(scene: SceneDto, draft: TranslationDraft): string[] {
  const problems: string[] = [];
  const box = scene.boxes.find((b) => b.id === draft.boxId);
  if (!box) {
    problems.push(`no box with id ${JSON.stringify(draft.boxId)}`);
    return problems;
  }
  if (!finite([...draft.t, draft.blendFraction])) {
    problems.push("translation fields must be finite numbers");
    return problems;
  }
  if (draft.t.every((v) => v === 0)) problems.push("translation must be non-zero");
  if (!(0 <= draft.blendFraction && draft.blendFraction <= 1)) {
    problems.push("blend fraction must lie in [0, 1]");
  }
  if (!checkInBounds(scene.room.extents, translateBox(box, draft.t))) {
    problems.push("translated box leaves the room");
  }
  return problems;
}

export function configProblems(config: Partial<SessionConfigDto>): string[] {
  const problems: string[] = [];
  if (config.timesteps !== undefined && (!Number.isInteger(config.timesteps) || config.timesteps < 1)) {
    problems.push("timesteps must be an integer >= 1");
  }
  if (config.resolution !== undefined && (config.resolution <= 0 || config.resolution % 64 !== 0)) {
    problems.push("resolution must be a positive multiple of 64");
  }
  if (config.seed !== undefined && !Number.isInteger(config.seed)) {
    problems.push("seed must be an integer");
  }
  if (config.seed_policy !== undefined && !SEED_POLICIES.includes(config.seed_policy as never)) {
    problems.push("unknown seed policy");
  }
  if (config.attention !== undefined && !ATTENTION_KINDS.includes(config.attention as never)) {
    problems.push("unknown attention mode");
  }
  if (config.blend_fraction !== undefined && !(0 <= config.blend_fraction && config.blend_fraction <= 1)) {
    problems.push("blend_fraction must lie in [0, 1]");
  }
  if (config.cfg_scale !== undefined && !(config.cfg_scale > 0)) {
    problems.push("cfg_scale must be positive");
  }
  if (config.cross_attn_window !== undefined && !(0 < config.cross_attn_window && config.cross_attn_window <= 1)) {
    problems.push("cross_attn_window must lie in (0, 1]");
  }
  if (config.eta !== undefined && !(0 <= config.eta && config.eta <= 1)) {
    problems.push("eta must lie in [0, 1]");
  }
  return problems;
}

// -- payload builders -------------------------------------------------------

/** Scene-core box JSON exactly as the server serializes it. */
export function boxDto(draft: BoxDraft): BoxDto {
  return {
    id: draft.id,
    center: [...draft.center],
    size: [...draft.size],
    yaw: wrapYaw(draft.yaw),
  };
}

/** An empty room with floor, back wall, side walls, optional ceiling; the
 * z = 0 face stays open for the camera.  Mirrors the server's constructor
 * so a freshly created session round-trips to the identical scene JSON. */
export function emptyRoomScene(
  roomExtents: Vec3Tuple,
  camera: CameraDto,
  includeCeiling = true,
): SceneDto {
  const [x, y, z] = roomExtents;
  const planes: SceneDto["planes"] = [
    { anchor: [0, 0, z / 2], normal: [0, 1, 0], extent: [x / 2, z / 2] },
    { anchor: [0, y / 2, z], normal: [0, 0, -1], extent: [x / 2, y / 2] },
    { anchor: [-x / 2, y / 2, z / 2], normal: [1, 0, 0], extent: [z / 2, y / 2] },
    { anchor: [x / 2, y / 2, z / 2], normal: [-1, 0, 0], extent: [z / 2, y / 2] },
  ];
  if (includeCeiling) {
    planes.push({ anchor: [0, y, z / 2], normal: [0, -1, 0], extent: [x / 2, z / 2] });
  }
  return { room: { extents: [...roomExtents] }, camera, planes, boxes: [] };
}

/** Camera standing at the open room face, eye height, looking down +z. */
export function defaultCamera(width: number, height: number): CameraDto {
  return {
    position: [0, 1.4, 0],
    yaw: 0,
    pitch: 0,
    focal_px: 0.866 * width,
    principal_point: [(width - 1) / 2, (height - 1) / 2],
    width,
    height,
  };
}

export function createSessionPayload(
  scene: SceneDto,
  config?: Partial<SessionConfigDto>,
  operationKey?: string,
): CreateSessionBody {
  const body: CreateSessionBody = { scene };
  if (config !== undefined) body.config = config;
  if (operationKey !== undefined) body.operation_key = operationKey;
  return body;
}

export function backgroundStagePayload(
  prompt: { text: string; objectTokenIndex?: number },
  opts: { async?: boolean; operationKey?: string } = {},
): AddStageBody {
  const body: AddStageBody = {
    box: null,
    prompt: { text: prompt.text, object_token_index: prompt.objectTokenIndex ?? 0 },
  };
  if (opts.async !== undefined) body.async = opts.async;
  if (opts.operationKey !== undefined) body.operation_key = opts.operationKey;
  return body;
}

export function addStagePayload(
  draft: BoxDraft,
  prompt: { text: string; objectTokenIndex?: number },
  opts: { async?: boolean; operationKey?: string } = {},
): AddStageBody {
  const body: AddStageBody = {
    box: boxDto(draft),
    prompt: { text: prompt.text, object_token_index: prompt.objectTokenIndex ?? 0 },
  };
  if (opts.async !== undefined) body.async = opts.async;
  if (opts.operationKey !== undefined) body.operation_key = opts.operationKey;
  return body;
}

export function translateStagePayload(
  draft: TranslationDraft,
  opts: { async?: boolean; operationKey?: string } = {},
): TranslateBody {
  const body: TranslateBody = {
    box_id: draft.boxId,
    t: [...draft.t],
    blend_fraction: draft.blendFraction,
  };
  if (opts.async !== undefined) body.async = opts.async;
  if (opts.operationKey !== undefined) body.operation_key = opts.operationKey;
  return body;
}

// -- branching --------------------------------------------------------------

export interface BranchPlan {
  create: CreateSessionBody;
  stages: ({ kind: "add"; body: AddStageBody } | { kind: "translate"; body: TranslateBody })[];
}

/**
 * Fork a session at a stage: a plan that creates a fresh session from the
 * initial scene and replays every stage up to and including `upTo` through
 * the public stage endpoints.  Stage summaries carry everything needed.
 */
export function branchPlan(detail: SessionDetail, upTo: number): BranchPlan {
  if (!(0 <= upTo && upTo < detail.stages.length)) {
    throw new RangeError(`stage ${upTo} outside 0..${detail.stages.length - 1}`);
  }
  const stages: BranchPlan["stages"] = [];
  for (const stage of detail.stages.slice(0, upTo + 1)) {
    if (stage.kind === "translate") {
      if (stage.box === null || stage.translation === null) {
        throw new Error(`translate stage ${stage.index} lacks box or translation`);
      }
      stages.push({
        kind: "translate",
        body: {
          box_id: stage.box.id,
          t: [...stage.translation],
          blend_fraction: stage.blend_fraction ?? DEFAULT_BLEND_FRACTION,
        },
      });
    } else {
      stages.push({
        kind: "add",
        body: {
          box: stage.box,
          prompt: {
            text: stage.prompt.text,
            object_token_index: stage.prompt.object_token_index,
          },
        },
      });
    }
  }
  return { create: { scene: detail.initial_scene, config: detail.config }, stages };
}
