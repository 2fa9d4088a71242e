// Shared test plumbing: fixture loading, a parser for the recorded SSE
// streams, and a scriptable EventSource stand-in for the stream client.

import { readFileSync } from "node:fs";
import { dirname, join } from "node:path";
import { fileURLToPath } from "node:url";

import type { SourceLike, SseMessage } from "../src/sse.js";

const here = dirname(fileURLToPath(import.meta.url));

export function fixturePath(name: string): string {
  return join(here, "fixtures", "recorded", name);
}

export function loadJson<T = any>(name: string): T {
  return JSON.parse(readFileSync(fixturePath(name), "utf-8"));
}

export function loadText(name: string): string {
  return readFileSync(fixturePath(name), "utf-8");
}

export interface RecordedSseEvent {
  id: string;
  event: string;
  data: string;
}

/** Parse the server's recorded wire framing: blocks of id/event/data lines
 * separated by blank lines. */
export function parseSse(text: string): RecordedSseEvent[] {
  const events: RecordedSseEvent[] = [];
  for (const block of text.split("\n\n")) {
    if (!block.trim()) continue;
    const fields: Record<string, string> = {};
    for (const line of block.split("\n")) {
      const colon = line.indexOf(":");
      if (colon < 0) continue;
      fields[line.slice(0, colon)] = line.slice(colon + 1).trimStart();
    }
    events.push({ id: fields.id ?? "", event: fields.event ?? "message", data: fields.data ?? "" });
  }
  return events;
}

type Listener = (ev: SseMessage) => void;

/**
 * An EventSource double the tests drive by hand.  `emit` dispatches a
 * recorded event to the matching listener; `fail` raises a bare transport
 * error (no data), which the client treats as a drop.
 */
export class FakeEventSource implements SourceLike {
  readonly listeners = new Map<string, Listener[]>();
  closed = false;

  constructor(readonly url: string) {}

  addEventListener(type: string, listener: Listener): void {
    const list = this.listeners.get(type) ?? [];
    list.push(listener);
    this.listeners.set(type, list);
  }

  close(): void {
    this.closed = true;
  }

  emit(event: RecordedSseEvent): void {
    for (const listener of this.listeners.get(event.event) ?? []) {
      listener({ data: event.data, lastEventId: event.id });
    }
  }

  fail(): void {
    for (const listener of this.listeners.get("error") ?? []) {
      listener({});
    }
  }
}

/** A factory that records every source it hands out, most recent last. */
export function fakeSourceFactory(): {
  factory: (url: string) => FakeEventSource;
  sources: FakeEventSource[];
} {
  const sources: FakeEventSource[] = [];
  return {
    factory: (url: string) => {
      const source = new FakeEventSource(url);
      sources.push(source);
      return source;
    },
    sources,
  };
}

/** Events at or past the `start` query parameter of a reconnect URL. */
export function eventsFrom(events: RecordedSseEvent[], url: string): RecordedSseEvent[] {
  const match = /[?&]start=(\d+)/.exec(url);
  const start = match ? Number(match[1]) : 0;
  return events.filter((e) => Number(e.id) >= start);
}
