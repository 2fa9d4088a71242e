// Typed client for the staging service REST interface.  `fetch` is
// injectable so contract tests can replay recorded responses.

import type {
  AddStageBody,
  BackendDescriptorDto,
  CreateSessionBody,
  ErrorPayload,
  JobEnvelope,
  JobStatus,
  SessionDetail,
  SessionHandle,
  StageSummary,
  TranslateBody,
} from "./types.js";

export type FetchLike = (url: string, init?: {
  method?: string;
  headers?: Record<string, string>;
  body?: string;
}) => Promise<{
  ok: boolean;
  status: number;
  json(): Promise<unknown>;
  arrayBuffer(): Promise<ArrayBuffer>;
}>;

export class ApiError extends Error {
  constructor(
    readonly status: number,
    readonly payload: ErrorPayload,
  ) {
    super(`${payload.code}: ${payload.message}`);
  }
}

export type RenderKind = "image" | "mask_fg" | "depth" | "cartesian";

export class StudioApi {
  constructor(
    readonly baseUrl: string,
    private readonly fetchImpl: FetchLike = (url, init) => fetch(url, init),
  ) {}

  private async request<T>(method: string, path: string, body?: unknown): Promise<T> {
    const response = await this.fetchImpl(this.baseUrl + path, {
      method,
      headers: body !== undefined ? { "content-type": "application/json" } : undefined,
      body: body !== undefined ? JSON.stringify(body) : undefined,
    });
    if (!response.ok) {
      const payload = (await response.json()) as ErrorPayload;
      throw new ApiError(response.status, payload);
    }
    return (await response.json()) as T;
  }

  createSession(body: CreateSessionBody): Promise<SessionHandle> {
    return this.request("POST", "/sessions", body);
  }

  getSession(sessionId: string): Promise<SessionDetail> {
    return this.request("GET", `/sessions/${sessionId}`);
  }

  /** Runs a stage synchronously (StageSummary) or queues it (JobEnvelope). */
  addStage(sessionId: string, body: AddStageBody): Promise<StageSummary | JobEnvelope> {
    return this.request("POST", `/sessions/${sessionId}/stages:add`, body);
  }

  translateStage(
    sessionId: string,
    body: TranslateBody,
  ): Promise<StageSummary | JobEnvelope> {
    return this.request("POST", `/sessions/${sessionId}/stages:translate`, body);
  }

  jobStatus(jobId: string): Promise<JobStatus> {
    return this.request("GET", `/jobs/${jobId}`);
  }

  renderUrl(sessionId: string, stageIndex: number, kind: RenderKind): string {
    return `${this.baseUrl}/sessions/${sessionId}/stages/${stageIndex}/render/${kind}`;
  }

  async fetchRender(sessionId: string, stageIndex: number, kind: RenderKind): Promise<ArrayBuffer> {
    const response = await this.fetchImpl(this.renderUrl(sessionId, stageIndex, kind));
    if (!response.ok) {
      throw new ApiError(response.status, (await response.json()) as ErrorPayload);
    }
    return response.arrayBuffer();
  }

  backends(): Promise<{ backends: BackendDescriptorDto[] }> {
    return this.request("GET", "/backends");
  }

  health(): Promise<{ status: string; sessions: number }> {
    return this.request("GET", "/healthz");
  }
}

export function isJobEnvelope(value: StageSummary | JobEnvelope): value is JobEnvelope {
  return "job_id" in value;
}
