import { afterEach, beforeEach, describe, expect, it, vi } from 'vitest';

import {
  Api,
  EventSubscription,
  type EventSourceLike,
} from '../src/client.js';
import type { EventFrame } from '../src/types.js';

class FakeSource implements EventSourceLike {
  onmessage: ((ev: { data: string }) => void) | null = null;
  onerror: ((ev: unknown) => void) | null = null;
  onopen: ((ev: unknown) => void) | null = null;
  closed = false;

  close(): void {
    this.closed = true;
  }

  open(): void {
    this.onopen?.({});
  }

  push(frame: unknown): void {
    this.onmessage?.({ data: JSON.stringify(frame) });
  }

  fail(): void {
    this.onerror?.({});
  }
}

describe('EventSubscription', () => {
  const sources: FakeSource[] = [];
  let frames: EventFrame[];
  let opens: number;
  let downs: number;
  let sub: EventSubscription;

  beforeEach(() => {
    vi.useFakeTimers();
    sources.length = 0;
    frames = [];
    opens = 0;
    downs = 0;
    sub = new EventSubscription(
      'http://x/events',
      {
        onFrame: (f) => frames.push(f),
        onOpen: () => { opens += 1; },
        onDown: () => { downs += 1; },
      },
      () => {
        const s = new FakeSource();
        sources.push(s);
        return s;
      },
    );
  });

  afterEach(() => {
    sub.close();
    vi.useRealTimers();
  });

  it('delivers parsed frames and swallows junk', () => {
    sub.start();
    sources[0].open();
    sources[0].push({ type: 'rejected', seq: 1, time: 0, error: 'x' });
    sources[0].onmessage?.({ data: 'not json' });
    expect(frames).toHaveLength(1);
    expect(frames[0].seq).toBe(1);
    expect(opens).toBe(1);
  });

  it('reconnects with doubling backoff and resets it on success', () => {
    sub.start();
    sources[0].open();
    sources[0].fail();
    expect(downs).toBe(1);
    expect(sources).toHaveLength(1);
    vi.advanceTimersByTime(499);
    expect(sources).toHaveLength(1);
    vi.advanceTimersByTime(1);
    expect(sources).toHaveLength(2);

    sources[1].fail();               // second failure: 1000 ms wait
    vi.advanceTimersByTime(999);
    expect(sources).toHaveLength(2);
    vi.advanceTimersByTime(1);
    expect(sources).toHaveLength(3);

    sources[2].open();               // success resets the backoff
    sources[2].fail();
    vi.advanceTimersByTime(500);
    expect(sources).toHaveLength(4);
  });

  it('caps the backoff at ten seconds', () => {
    sub.start();
    for (let i = 0; i < 12; i += 1) {
      sources[sources.length - 1].fail();
      vi.advanceTimersByTime(10_000);
    }
    const before = sources.length;
    sources[sources.length - 1].fail();
    vi.advanceTimersByTime(10_000);
    expect(sources.length).toBe(before + 1);
  });

  it('stops reconnecting once closed', () => {
    sub.start();
    sources[0].fail();
    sub.close();
    vi.advanceTimersByTime(60_000);
    expect(sources).toHaveLength(1);
    expect(sources[0].closed).toBe(true);
  });
});

describe('Api', () => {
  function fakeFetch(status: number, body: unknown): typeof fetch {
    return (async () =>
      new Response(JSON.stringify(body), {
        status,
        headers: { 'content-type': 'application/json' },
      })) as typeof fetch;
  }

  it('returns parsed JSON on success', async () => {
    const api = new Api('http://x', fakeFetch(200, { phase: 'Idle' }));
    const state = await api.getState();
    expect(state.phase).toBe('Idle');
  });

  it('throws status and detail on HTTP errors', async () => {
    const api = new Api('http://x', fakeFetch(409, { detail: 'bad phase' }));
    await expect(api.control('start')).rejects.toMatchObject({
      status: 409,
      detail: 'bad phase',
    });
  });

  it('posts the simulate label', async () => {
    let captured: RequestInit | undefined;
    const f: typeof fetch = (async (_url: unknown, init?: RequestInit) => {
      captured = init;
      return new Response(JSON.stringify({ accepted: '/tmp/a.f32' }), {
        status: 200,
      });
    }) as typeof fetch;
    const api = new Api('http://x', f);
    await api.simulateTrial('Venus');
    expect(JSON.parse(String(captured?.body))).toEqual({
      simulate_label: 'Venus',
    });
  });
});
