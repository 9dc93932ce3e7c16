// Server communication: REST helpers plus a reconnecting /events
// subscription with exponential backoff and seq-gap resync.

import type { EventFrame, ServerState, SignalPreview } from './types.js';

export interface ApiError {
  status: number;
  detail: string;
}

async function asJson<T>(resp: Response): Promise<T> {
  if (!resp.ok) {
    let detail = resp.statusText;
    try {
      const body = await resp.json();
      if (body && typeof body.detail === 'string') detail = body.detail;
    } catch {
      // non-JSON error body; keep the status text
    }
    throw { status: resp.status, detail } as ApiError;
  }
  return resp.json() as Promise<T>;
}

export class Api {
  constructor(
    readonly base: string,
    private readonly fetchFn: typeof fetch = fetch,
  ) {}

  getState(): Promise<ServerState> {
    return this.fetchFn(`${this.base}/state`).then((r) => asJson<ServerState>(r));
  }

  getSignal(maxChannels = 16): Promise<SignalPreview> {
    return this.fetchFn(`${this.base}/signal?max_channels=${maxChannels}`).then(
      (r) => asJson<SignalPreview>(r),
    );
  }

  control(action: 'start' | 'continue' | 'reset'): Promise<ServerState> {
    return this.fetchFn(`${this.base}/control`, {
      method: 'POST',
      headers: { 'content-type': 'application/json' },
      body: JSON.stringify({ action }),
    }).then((r) => asJson<ServerState>(r));
  }

  simulateTrial(label: string): Promise<{ accepted: string }> {
    return this.fetchFn(`${this.base}/trial`, {
      method: 'POST',
      headers: { 'content-type': 'application/json' },
      body: JSON.stringify({ simulate_label: label }),
    }).then((r) => asJson<{ accepted: string }>(r));
  }
}

export interface SubscriptionHandlers {
  onFrame: (frame: EventFrame) => void;
  onOpen: () => void;
  onDown: () => void;
}

export interface EventSourceLike {
  onmessage: ((ev: { data: string }) => void) | null;
  onerror: ((ev: unknown) => void) | null;
  onopen: ((ev: unknown) => void) | null;
  close(): void;
}

export type EventSourceFactory = (url: string) => EventSourceLike;

const BACKOFF_START_MS = 500;
const BACKOFF_MAX_MS = 10_000;

export class EventSubscription {
  private source: EventSourceLike | null = null;
  private backoffMs = BACKOFF_START_MS;
  private timer: ReturnType<typeof setTimeout> | null = null;
  private closed = false;

  constructor(
    private readonly url: string,
    private readonly handlers: SubscriptionHandlers,
    private readonly makeSource: EventSourceFactory,
  ) {}

  start(): void {
    this.connect();
  }

  close(): void {
    this.closed = true;
    if (this.timer !== null) clearTimeout(this.timer);
    this.source?.close();
  }

  private connect(): void {
    if (this.closed) return;
    const src = this.makeSource(this.url);
    this.source = src;
    src.onopen = () => {
      this.backoffMs = BACKOFF_START_MS;
      this.handlers.onOpen();
    };
    src.onmessage = (ev) => {
      let frame: EventFrame;
      try {
        frame = JSON.parse(ev.data) as EventFrame;
      } catch {
        return; // keepalive comments never reach onmessage; ignore junk
      }
      this.handlers.onFrame(frame);
    };
    src.onerror = () => {
      src.close();
      if (this.closed) return;
      this.handlers.onDown();
      this.timer = setTimeout(() => this.connect(), this.backoffMs);
      this.backoffMs = Math.min(this.backoffMs * 2, BACKOFF_MAX_MS);
    };
  }
}
