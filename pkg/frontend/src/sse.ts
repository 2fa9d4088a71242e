// Client for the job progress stream.  The server frames every event as
//
//   id: <index>\nevent: <type>\ndata: <json>\n\n
//
// with any number of "progress" events followed by exactly one terminal
// "done" or "error".  The EventSource construction is injectable so tests
// (and Node) can drive the stream from recorded fixtures.
//
// Guarantees to callers, independent of duplicate delivery or reconnects:
// progress callbacks are strictly monotone in step, and exactly one
// terminal callback ever fires.

import type { ErrorPayload, StageSummary } from "./types.js";

export interface SseMessage {
  data?: string;
  lastEventId?: string;
}

export interface SourceLike {
  addEventListener(type: string, listener: (ev: SseMessage) => void): void;
  close(): void;
}

export type SourceFactory = (url: string) => SourceLike;

export interface JobStreamHandlers {
  onProgress?: (step: number, total: number) => void;
  onDone?: (stage: StageSummary) => void;
  onError?: (error: ErrorPayload) => void;
}

const defaultFactory: SourceFactory = (url) =>
  new EventSource(url) as unknown as SourceLike;

export class JobStream {
  private source: SourceLike | null = null;
  private lastEventId = -1;
  private lastStep = -1;
  private terminal = false;
  private closed = false;
  private reconnectTimer: ReturnType<typeof setTimeout> | null = null;

  constructor(
    readonly url: string,
    private readonly handlers: JobStreamHandlers,
    private readonly factory: SourceFactory = defaultFactory,
    private readonly reconnectDelayMs = 500,
  ) {}

  /** True once a terminal event has been delivered. */
  get finished(): boolean {
    return this.terminal;
  }

  get lastProgressStep(): number {
    return this.lastStep;
  }

  connect(): void {
    if (this.terminal || this.closed) return;
    const sep = this.url.includes("?") ? "&" : "?";
    const url = this.lastEventId >= 0 ? `${this.url}${sep}start=${this.lastEventId + 1}` : this.url;
    const source = this.factory(url);
    this.source = source;
    source.addEventListener("progress", (ev) => this.onProgress(ev));
    source.addEventListener("done", (ev) => this.onTerminal(ev));
    source.addEventListener("error", (ev) => {
      // A data-carrying "error" is the job's terminal event; a bare one is
      // a transport failure and we resume past the last id we saw.
      if (ev.data !== undefined) this.onTerminal(ev);
      else this.scheduleReconnect();
    });
  }

  close(): void {
    this.closed = true;
    if (this.reconnectTimer !== null) clearTimeout(this.reconnectTimer);
    this.reconnectTimer = null;
    this.source?.close();
    this.source = null;
  }

  private track(ev: SseMessage): void {
    if (ev.lastEventId !== undefined && ev.lastEventId !== "") {
      const id = Number(ev.lastEventId);
      if (Number.isInteger(id)) this.lastEventId = Math.max(this.lastEventId, id);
    } else {
      this.lastEventId += 1;
    }
  }

  private onProgress(ev: SseMessage): void {
    if (this.terminal || ev.data === undefined) return;
    this.track(ev);
    let step: number;
    let total: number;
    try {
      const parsed = JSON.parse(ev.data);
      step = parsed.step;
      total = parsed.total;
    } catch {
      return;
    }
    if (!Number.isFinite(step) || !Number.isFinite(total) || total <= 0) return;
    if (step <= this.lastStep) return; // duplicate or stale after a resume
    this.lastStep = step;
    this.handlers.onProgress?.(step, total);
  }

  private onTerminal(ev: SseMessage): void {
    if (this.terminal || ev.data === undefined) return;
    this.track(ev);
    let parsed: { type: string } & Record<string, unknown>;
    try {
      parsed = JSON.parse(ev.data);
    } catch {
      return;
    }
    this.terminal = true;
    this.close();
    if (parsed.type === "done") {
      const { type, ...stage } = parsed;
      this.handlers.onDone?.(stage as unknown as StageSummary);
    } else {
      const { type, ...error } = parsed;
      this.handlers.onError?.(error as unknown as ErrorPayload);
    }
  }

  private scheduleReconnect(): void {
    if (this.terminal || this.closed || this.reconnectTimer !== null) return;
    this.source?.close();
    this.source = null;
    this.reconnectTimer = setTimeout(() => {
      this.reconnectTimer = null;
      this.connect();
    }, this.reconnectDelayMs);
  }
}
