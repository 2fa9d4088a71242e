// Wire types for the staging service.  Field names and nesting mirror the
// server's JSON exactly; vectors travel as [x, y, z] triples.

export type Vec3Tuple = [number, number, number];

export interface CameraDto {
  position: Vec3Tuple;
  yaw: number;
  pitch: number;
  focal_px: number;
  principal_point: [number, number];
  width: number;
  height: number;
}

export interface PlaneDto {
  anchor: Vec3Tuple;
  normal: Vec3Tuple;
  extent: [number, number];
}

export interface BoxDto {
  id: string;
  center: Vec3Tuple;
  size: Vec3Tuple;
  yaw: number;
}

export interface SceneDto {
  room: { extents: Vec3Tuple };
  camera: CameraDto;
  planes: PlaneDto[];
  boxes: BoxDto[];
}

export interface SessionConfigDto {
  timesteps: number;
  resolution: number;
  seed: number;
  seed_policy: string;
  attention: string;
  blend_fraction: number;
  cfg_scale: number;
  use_blend: boolean;
  use_adain: boolean;
  adain_once: boolean;
  cross_attn_window: number;
  eta: number;
}

export interface PromptDto {
  text: string;
  object_token_index: number;
}

export interface StageSummary {
  index: number;
  kind: "background" | "add" | "translate";
  box: BoxDto | null;
  prompt: PromptDto;
  seed: number;
  blend_fraction: number | null;
  translation: Vec3Tuple | null;
  image_url: string;
  depth_url: string;
  mask_url: string;
}

export interface SessionHandle {
  id: string;
  created_at: number;
  config: SessionConfigDto;
  stage_count: number;
}

export interface SessionDetail extends SessionHandle {
  scene: SceneDto;
  initial_scene: SceneDto;
  stages: StageSummary[];
}

// -- request bodies ---------------------------------------------------------

export interface CreateSessionBody {
  scene: SceneDto;
  config?: Partial<SessionConfigDto>;
  operation_key?: string;
}

export interface AddStageBody {
  box?: BoxDto | null; // omitted or null -> the background stage
  prompt: { text: string; object_token_index?: number };
  operation_key?: string;
  async?: boolean;
}

export interface TranslateBody {
  box_id: string;
  t: Vec3Tuple;
  blend_fraction?: number;
  operation_key?: string;
  async?: boolean;
}

// -- jobs and streaming -----------------------------------------------------

export interface JobEnvelope {
  job_id: string;
  events_url: string;
}

export interface JobStatus {
  job_id: string;
  session_id: string;
  status: "queued" | "running" | "done" | "error";
  events: number;
  result: StageSummary | null;
  error: ErrorPayload | null;
}

export type JobEvent =
  | { type: "progress"; step: number; total: number }
  | ({ type: "done" } & StageSummary)
  | ({ type: "error" } & ErrorPayload);

export interface ErrorPayload {
  code: string;
  message: string;
  detail: { field: string; error: string }[] | null;
}

export interface BackendDescriptorDto {
  kind: "toy" | "external";
  endpoint: string | null;
  capabilities: {
    max_resolution: number;
    supports_kv_injection: boolean;
  };
}
