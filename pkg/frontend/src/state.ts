// View-model reducer.  The view is a pure function of the last server
// snapshot plus any frames received since; the console itself never
// mutates conversation state.

import type { Connection, EventFrame, ServerState } from './types.js';

export interface ViewModel {
  connection: Connection;
  server: ServerState | null;
  lastSeq: number;
  // a hole in the seq numbering means we missed frames and must resync
  needsResync: boolean;
  notice: string | null;
}

export const initialModel: ViewModel = {
  connection: 'connecting',
  server: null,
  lastSeq: 0,
  needsResync: false,
  notice: null,
};

export type Action =
  | { kind: 'connected' }
  | { kind: 'disconnected' }
  | { kind: 'snapshot'; state: ServerState; seq: number }
  | { kind: 'frame'; frame: EventFrame };

export function reduce(model: ViewModel, action: Action): ViewModel {
  switch (action.kind) {
    case 'connected':
      return { ...model, connection: 'live' };
    case 'disconnected':
      return { ...model, connection: 'offline' };
    case 'snapshot':
      return {
        ...model,
        server: action.state,
        lastSeq: action.seq,
        needsResync: false,
      };
    case 'frame':
      return applyFrame(model, action.frame);
  }
}

function applyFrame(model: ViewModel, frame: EventFrame): ViewModel {
  if (model.lastSeq > 0 && frame.seq > model.lastSeq + 1) {
    // keep the stale view on screen but flag that /state must be refetched
    return { ...model, needsResync: true, lastSeq: frame.seq };
  }
  if (frame.seq <= model.lastSeq) {
    return model; // duplicate or out-of-order replay
  }
  const next = { ...model, lastSeq: frame.seq };
  switch (frame.type) {
    case 'transition':
      return { ...next, server: frame.state, notice: null };
    case 'latency': {
      if (!model.server) return next;
      const server = {
        ...model.server,
        latency_log: [...model.server.latency_log, {
          load_s: frame.load_s,
          preprocess_s: frame.preprocess_s,
          decode_s: frame.decode_s,
          dispatch_s: frame.dispatch_s,
          total_s: frame.total_s,
        }],
      };
      return { ...next, server };
    }
    case 'rejected':
      return { ...next, notice: frame.error };
    case 'low_confidence':
      return {
        ...next,
        notice: `low confidence ${frame.confidence.toFixed(2)} for ${frame.key}`,
      };
  }
}

// Which controls make sense in each phase; the server is still the
// authority, this only drives button disabling.
export function allowedControls(model: ViewModel): {
  start: boolean;
  cont: boolean;
  reset: boolean;
  simulate: boolean;
} {
  const phase = model.server?.phase;
  const live = model.connection === 'live' && phase !== undefined;
  return {
    start: live && phase === 'Idle',
    cont: live && phase === 'Displaying',
    reset: live,
    simulate: live && (phase === 'Recording' || phase === 'AwaitFollowUp'),
  };
}
