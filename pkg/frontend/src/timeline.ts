// Stage-timeline logic: the live progress indicator driven by a job's SSE
// stream, and the image/depth/mask toggle for the inspected stage.  DOM
// rendering stays in main.ts; everything here is plain state.

import type { ErrorPayload, StageSummary } from "./types.js";
import type { StageTile } from "./viewstate.js";

/**
 * Reduces job-stream callbacks to a bar fraction that never moves
 * backwards and a terminal state that latches exactly once.  The stream
 * client already de-duplicates, but the bar guards independently so a
 * misbehaving source still renders sanely.
 */
export class ProgressIndicator {
  fraction = 0;
  running = true;
  result: StageSummary | null = null;
  error: ErrorPayload | null = null;
  terminalCount = 0; // observability for tests; must end at exactly 1

  onProgress(step: number, total: number): void {
    if (!this.running) return;
    const fraction = Math.min(Math.max(step / total, 0), 1);
    if (fraction > this.fraction) this.fraction = fraction;
  }

  onDone(stage: StageSummary): void {
    this.terminalCount += 1;
    if (!this.running) return;
    this.running = false;
    this.fraction = 1;
    this.result = stage;
  }

  onError(error: ErrorPayload): void {
    this.terminalCount += 1;
    if (!this.running) return;
    this.running = false;
    this.error = error;
  }
}

export type RenderToggle = "image" | "depth" | "mask";

export function tileUrl(tile: StageTile, toggle: RenderToggle): string {
  switch (toggle) {
    case "image":
      return tile.imageUrl;
    case "depth":
      return tile.depthUrl;
    case "mask":
      return tile.maskUrl;
  }
}
