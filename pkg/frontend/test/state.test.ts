import { describe, expect, it } from 'vitest';

import { allowedControls, initialModel, reduce } from '../src/state.js';
import type {
  EventFrame,
  LatencyFrame,
  ServerState,
  TransitionFrame,
} from '../src/types.js';

function serverState(overrides: Partial<ServerState> = {}): ServerState {
  return {
    phase: 'Idle',
    current_topic: null,
    conversation: [],
    latency_log: [],
    error_reason: null,
    ...overrides,
  };
}

function transition(seq: number, state: ServerState): TransitionFrame {
  return { type: 'transition', seq, time: 0, event: 'x', state };
}

describe('reduce', () => {
  it('starts disconnected-ish and flips with connection actions', () => {
    expect(initialModel.connection).toBe('connecting');
    const live = reduce(initialModel, { kind: 'connected' });
    expect(live.connection).toBe('live');
    expect(reduce(live, { kind: 'disconnected' }).connection).toBe('offline');
  });

  it('applies transition frames in order', () => {
    let m = reduce(initialModel, {
      kind: 'frame',
      frame: transition(1, serverState({ phase: 'Recording' })),
    });
    m = reduce(m, {
      kind: 'frame',
      frame: transition(2, serverState({ phase: 'Decoding' })),
    });
    expect(m.server?.phase).toBe('Decoding');
    expect(m.lastSeq).toBe(2);
    expect(m.needsResync).toBe(false);
  });

  it('ignores duplicate or replayed frames', () => {
    let m = reduce(initialModel, {
      kind: 'frame',
      frame: transition(3, serverState({ phase: 'Recording' })),
    });
    const again = reduce(m, {
      kind: 'frame',
      frame: transition(3, serverState({ phase: 'Error' })),
    });
    expect(again).toBe(m);
  });

  it('flags a resync when the sequence has a hole', () => {
    let m = reduce(initialModel, {
      kind: 'frame',
      frame: transition(1, serverState({ phase: 'Recording' })),
    });
    m = reduce(m, {
      kind: 'frame',
      frame: transition(5, serverState({ phase: 'Displaying' })),
    });
    expect(m.needsResync).toBe(true);
    // the stale view stays until the snapshot lands
    expect(m.server?.phase).toBe('Recording');
    const snap = reduce(m, {
      kind: 'snapshot',
      state: serverState({ phase: 'Displaying' }),
      seq: m.lastSeq,
    });
    expect(snap.needsResync).toBe(false);
    expect(snap.server?.phase).toBe('Displaying');
  });

  it('appends latency frames to the log', () => {
    let m = reduce(initialModel, {
      kind: 'frame',
      frame: transition(1, serverState()),
    });
    const lat: LatencyFrame = {
      type: 'latency', seq: 2, time: 0,
      load_s: 0.01, preprocess_s: 0.02, decode_s: 0.03,
      dispatch_s: 0, total_s: 0.06,
    };
    m = reduce(m, { kind: 'frame', frame: lat });
    expect(m.server?.latency_log).toHaveLength(1);
    expect(m.server?.latency_log[0].total_s).toBeCloseTo(0.06);
  });

  it('surfaces rejected and low-confidence frames as notices', () => {
    let m = reduce(initialModel, {
      kind: 'frame',
      frame: { type: 'rejected', seq: 1, time: 0, error: 'nope' } as EventFrame,
    });
    expect(m.notice).toBe('nope');
    m = reduce(m, {
      kind: 'frame',
      frame: {
        type: 'low_confidence', seq: 2, time: 0, key: 'Venus', confidence: 0.4,
      } as EventFrame,
    });
    expect(m.notice).toContain('Venus');
    // the next transition clears the notice
    m = reduce(m, { kind: 'frame', frame: transition(3, serverState()) });
    expect(m.notice).toBeNull();
  });
});

describe('allowedControls', () => {
  function at(phase: ServerState['phase']) {
    let m = reduce(initialModel, { kind: 'connected' });
    m = reduce(m, { kind: 'frame', frame: transition(1, serverState({ phase })) });
    return allowedControls(m);
  }

  it('matches the machine phase by phase', () => {
    expect(at('Idle')).toEqual({
      start: true, cont: false, reset: true, simulate: false,
    });
    expect(at('Recording').simulate).toBe(true);
    expect(at('Displaying').cont).toBe(true);
    expect(at('AwaitFollowUp').simulate).toBe(true);
    expect(at('Error')).toEqual({
      start: false, cont: false, reset: true, simulate: false,
    });
  });

  it('disables everything while offline', () => {
    let m = reduce(initialModel, {
      kind: 'frame',
      frame: transition(1, serverState({ phase: 'Idle' })),
    });
    m = reduce(m, { kind: 'disconnected' });
    expect(allowedControls(m)).toEqual({
      start: false, cont: false, reset: false, simulate: false,
    });
  });
});
