// Wire types mirrored from the session service JSON payloads.

export type Phase =
  | 'Idle'
  | 'Recording'
  | 'Decoding'
  | 'Prompting'
  | 'Displaying'
  | 'AwaitFollowUp'
  | 'Error';

export interface ConversationTurn {
  role: 'decoded_user' | 'followup_user' | 'assistant';
  text: string;
  decoded_key: string | null;
  confidence: number | null;
  timestamp: number;
}

export interface LatencyRecord {
  load_s: number;
  preprocess_s: number;
  decode_s: number;
  dispatch_s: number;
  total_s: number;
}

export interface ServerState {
  phase: Phase;
  current_topic: string | null;
  conversation: ConversationTurn[];
  latency_log: LatencyRecord[];
  error_reason: string | null;
}

export interface SignalChannel {
  index: number;
  values: number[];
}

export interface SignalPreview {
  n_time: number;
  channels: SignalChannel[];
}

interface FrameBase {
  seq: number;
  time: number;
}

export interface TransitionFrame extends FrameBase {
  type: 'transition';
  event: string;
  state: ServerState;
}

export interface LatencyFrame extends FrameBase, LatencyRecord {
  type: 'latency';
}

export interface RejectedFrame extends FrameBase {
  type: 'rejected';
  error: string;
}

export interface LowConfidenceFrame extends FrameBase {
  type: 'low_confidence';
  key: string;
  confidence: number;
}

export type EventFrame =
  | TransitionFrame
  | LatencyFrame
  | RejectedFrame
  | LowConfidenceFrame;

export type Connection = 'connecting' | 'live' | 'offline';
