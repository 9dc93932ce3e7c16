"""Near-real-time decode loop: a pure session state machine, timed per-trial
decoding, and a chat-completion client with a deterministic mock mode.

The machine is a pure transition function over frozen states, so the
service layer can keep one writer and hand immutable snapshots to readers.
"""

from __future__ import annotations

import json
import os
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .bundle import BundleError, import_csv
from .embeddings import QuestionBank, select_followup
from .model import DataError, Montage, Trial, TrialTensor

PHASES = ("Idle", "Recording", "Decoding", "Prompting", "Displaying",
          "AwaitFollowUp", "Error")

ENV_KEY = "MINDGPT_LLM_KEY"


class TransitionError(DataError):
    pass


class LlmError(DataError):
    pass


# --- events -----------------------------------------------------------------

@dataclass(frozen=True)
class Start:
    pass


@dataclass(frozen=True)
class TrialFileReady:
    path: str


@dataclass(frozen=True)
class DecodeDone:
    key: str
    confidence: float
    text: str = ""            # resolved sentence or follow-up question
    followup: bool = False


@dataclass(frozen=True)
class LlmReply:
    text: str


@dataclass(frozen=True)
class Continue:
    pass


@dataclass(frozen=True)
class Reset:
    pass


@dataclass(frozen=True)
class Failure:
    reason: str


# --- state ------------------------------------------------------------------

@dataclass(frozen=True)
class ConversationTurn:
    role: str                 # decoded_user | followup_user | assistant
    text: str
    decoded_key: str | None = None
    confidence: float | None = None
    timestamp: float = 0.0

    def __post_init__(self):
        if self.role == "decoded_user" and (
                self.decoded_key is None or self.confidence is None):
            raise DataError("decoded_user turns need decoded_key and confidence")
        if self.confidence is not None and not 0.0 <= self.confidence <= 1.0:
            raise DataError(f"confidence {self.confidence} outside [0, 1]")

    def to_json(self) -> dict:
        return {"role": self.role, "text": self.text,
                "decoded_key": self.decoded_key,
                "confidence": self.confidence, "timestamp": self.timestamp}


@dataclass(frozen=True)
class LatencyBreakdown:
    load_s: float
    preprocess_s: float
    decode_s: float
    dispatch_s: float
    total_s: float

    def __post_init__(self):
        parts = (self.load_s, self.preprocess_s, self.decode_s, self.dispatch_s)
        if any(p < 0 for p in parts) or self.total_s < 0:
            raise DataError("latency stages must be >= 0")
        if self.total_s < sum(parts) - 1e-6:
            raise DataError("total latency below the sum of its stages")

    def to_json(self) -> dict:
        return {"load_s": self.load_s, "preprocess_s": self.preprocess_s,
                "decode_s": self.decode_s, "dispatch_s": self.dispatch_s,
                "total_s": self.total_s}


@dataclass(frozen=True)
class SessionState:
    phase: str = "Idle"
    conversation: tuple = ()
    current_topic: str | None = None
    latency_log: tuple = ()
    pending_path: str | None = None
    error_reason: str | None = None

    def to_json(self) -> dict:
        return {
            "phase": self.phase,
            "current_topic": self.current_topic,
            "conversation": [t.to_json() for t in self.conversation],
            "latency_log": [l.to_json() for l in self.latency_log],
            "error_reason": self.error_reason,
        }


def session_step(state: SessionState, event, now: float | None = None) -> SessionState:
    """Pure transition function; raises TransitionError on any (phase, event)
    pair outside the documented machine."""
    ts = time.time() if now is None else now
    if isinstance(event, Reset):
        # conversation stays in the log across resets
        return replace(state, phase="Idle", current_topic=None,
                       pending_path=None, error_reason=None)
    if isinstance(event, Failure):
        return replace(state, phase="Error", error_reason=event.reason,
                       pending_path=None)

    phase = state.phase
    if isinstance(event, Start) and phase == "Idle":
        return replace(state, phase="Recording")
    if isinstance(event, TrialFileReady) and phase in ("Recording", "AwaitFollowUp"):
        return replace(state, phase="Decoding", pending_path=event.path)
    if isinstance(event, DecodeDone) and phase == "Decoding":
        role = "followup_user" if event.followup else "decoded_user"
        turn = ConversationTurn(role, event.text or event.key,
                                event.key, event.confidence, ts)
        return replace(state, phase="Prompting",
                       conversation=state.conversation + (turn,),
                       current_topic=event.key, pending_path=None)
    if isinstance(event, LlmReply) and phase == "Prompting":
        turn = ConversationTurn("assistant", event.text, timestamp=ts)
        return replace(state, phase="Displaying",
                       conversation=state.conversation + (turn,))
    if isinstance(event, Continue) and phase == "Displaying":
        return replace(state, phase="AwaitFollowUp")
    raise TransitionError(
        f"event {type(event).__name__} is illegal in phase {phase}")


# --- trial loading and timed decode -----------------------------------------

def load_trial_file(path, montage: Montage) -> Trial:
    """A single trial from a CSV row dump or a bundle ``.f32`` pair."""
    p = Path(path)
    if not p.exists():
        raise BundleError(f"no such trial file: {p}")
    stem = p.name
    if p.suffix == ".csv":
        return import_csv(p, montage, label="unknown", id=p.stem,
                          session="live")
    if p.suffix == ".f32":
        if stem.endswith(".short.f32"):
            raise BundleError(f"{stem} holds short channels; submit the long file")
        n_long = montage.n_long
        size = p.stat().st_size
        if size % (4 * n_long) != 0 or size == 0:
            raise BundleError(
                f"{stem}: {size} bytes is not a whole number of "
                f"{n_long}-channel float32 rows")
        n_time = size // (4 * n_long)
        long = np.fromfile(p, dtype="<f4").reshape(n_time, n_long)
        short_p = p.parent / (p.name[:-4] + ".short.f32")
        if short_p.exists():
            short = np.fromfile(short_p, dtype="<f4").reshape(n_time, -1)
        else:
            short = np.zeros((n_time, montage.n_short))
        return Trial(p.stem, "unknown", "live", "live",
                     TrialTensor(long, "raw_intensity"),
                     TrialTensor(short, "raw_intensity"))
    raise BundleError(f"unsupported trial file type: {stem}")


def decode_file(path, preproc_cfg, montage: Montage, decoder):
    """Load, preprocess, and decode one trial, timing each stage.

    Returns (key, confidence, LatencyBreakdown, trial).
    """
    from .preprocess import run_pipeline

    t0 = time.perf_counter()
    trial = load_trial_file(path, montage)
    t1 = time.perf_counter()
    tensor = run_pipeline(trial, preproc_cfg, montage)
    t2 = time.perf_counter()
    proba = np.asarray(decoder.predict_proba([tensor]))[0]
    t3 = time.perf_counter()
    best = int(np.argmax(proba))
    key = decoder.classes[best]
    confidence = float(proba[best])
    t4 = time.perf_counter()
    lat = LatencyBreakdown(t1 - t0, t2 - t1, t3 - t2, t4 - t3, t4 - t0)
    return key, confidence, lat, tensor


# --- follow-up selection ----------------------------------------------------

def followup_text(current_topic, decoded_key: str, predicted_embedding,
                  bank: QuestionBank, sentences: dict):
    """Resolve what the next user turn says.

    Same topic again: the nearest follow-up question for that topic.
    Topic switch (or first decode): the sentence text itself.
    Returns (text, is_followup).
    """
    if decoded_key not in sentences:
        raise DataError(f"no sentence text for key {decoded_key!r}")
    if current_topic == decoded_key and predicted_embedding is not None:
        _, question = select_followup(predicted_embedding, bank, decoded_key)
        return question, True
    return sentences[decoded_key], False


# --- LLM client -------------------------------------------------------------

DEFAULT_SYSTEM_INSTRUCTION = (
    "You are a helpful assistant in a brain-computer interface dialogue. "
    "Provide useful suggestions based on the user's imagined input."
)


@dataclass(frozen=True)
class LlmConfig:
    mode: str = "mock"                       # mock | live
    endpoint: str = "https://api.openai.com/v1/chat/completions"
    model: str = "gpt-4"
    timeout_s: float = 30.0
    system_instruction: str = DEFAULT_SYSTEM_INSTRUCTION
    mock_replies: dict | None = None         # topic -> reply; None = shipped file

    def __post_init__(self):
        if self.mode not in ("mock", "live"):
            raise DataError(f"unknown llm mode {self.mode!r}")


def _default_mock_replies() -> dict:
    from importlib import resources
    text = resources.files("nirspeech.data").joinpath("mock_replies.json") \
        .read_text("utf-8")
    return json.loads(text)


def _wire_messages(cfg: LlmConfig, conversation) -> list[dict]:
    role_map = {"decoded_user": "user", "followup_user": "user",
                "assistant": "assistant"}
    messages = [{"role": "system", "content": cfg.system_instruction}]
    for turn in conversation:
        messages.append({"role": role_map[turn.role], "content": turn.text})
    return messages


def llm_send(cfg: LlmConfig, conversation) -> str:
    """Assistant reply for the conversation so far.

    Mock mode answers deterministically by the last decoded topic.  Live
    mode POSTs a chat-completion body, retrying one timeout before failing.
    """
    if not conversation:
        raise LlmError("conversation is empty")
    if conversation[-1].role == "assistant":
        raise LlmError("last turn must be a user role")

    if cfg.mode == "mock":
        replies = cfg.mock_replies if cfg.mock_replies is not None \
            else _default_mock_replies()
        topic = next((t.decoded_key for t in reversed(conversation)
                      if t.decoded_key is not None), None)
        return replies.get(topic, replies.get("default", ""))

    key = os.environ.get(ENV_KEY)
    if not key:
        raise LlmError(f"live mode requires the {ENV_KEY} environment variable")
    import httpx
    body = {"model": cfg.model, "messages": _wire_messages(cfg, conversation)}
    headers = {"Authorization": f"Bearer {key}"}
    last_exc = None
    for attempt in range(2):
        try:
            resp = httpx.post(cfg.endpoint, json=body, headers=headers,
                              timeout=cfg.timeout_s)
            break
        except httpx.TimeoutException as exc:
            last_exc = exc
    else:
        raise LlmError(f"timeout after retry: {last_exc}")
    if resp.status_code // 100 != 2:
        raise LlmError(f"llm endpoint returned {resp.status_code}")
    try:
        return resp.json()["choices"][0]["message"]["content"]
    except (KeyError, IndexError, ValueError) as exc:
        raise LlmError(f"malformed llm reply: {exc}") from exc
