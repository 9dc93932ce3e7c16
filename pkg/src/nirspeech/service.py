"""HTTP front end for the decode session.

One worker thread owns the state machine; HTTP handlers enqueue events and
read immutable snapshots.  Every transition and latency record fans out to
all `/events` subscribers as JSON frames with a strictly increasing
sequence number, so clients can detect gaps and resync from `/state`.
"""

from __future__ import annotations

import json
import queue
import threading
import time
from dataclasses import dataclass, field
from dataclasses import replace as dc_replace
from pathlib import Path

import numpy as np

from .embeddings import QuestionBank, default_bank, default_sentences
from .model import DataError, Montage
from .preprocess import PreprocConfig
from .session import (Continue, DecodeDone, Failure, LatencyBreakdown,
                      LlmConfig, LlmReply, Reset, SessionState, Start,
                      TransitionError, TrialFileReady, decode_file,
                      followup_text, llm_send, session_step)


@dataclass
class ServiceConfig:
    decoder: object
    montage: Montage
    preproc_cfg: PreprocConfig = field(default_factory=PreprocConfig)
    llm: LlmConfig = field(default_factory=LlmConfig)
    bank: QuestionBank | None = None
    sentences: dict | None = None
    synth_cfg: object = None          # enables simulated trials when set
    inbox_dir: str | None = None
    inbox_poll_s: float = 0.5
    confidence_threshold: float = 0.0
    log_file: str | None = None       # JSON-lines transition log


class SessionService:
    """Owns the state machine and the event fan-out."""

    def __init__(self, cfg: ServiceConfig):
        self.cfg = cfg
        if cfg.bank is None:
            cfg.bank = default_bank()
        if cfg.sentences is None:
            cfg.sentences = default_sentences()
        self._state = SessionState()
        self._lock = threading.Lock()
        self._seq = 0
        self._subscribers: list[queue.Queue] = []
        self._work: queue.Queue = queue.Queue()
        self._stop = threading.Event()
        self._last_embedding = None
        self._last_signal = None
        self._worker = threading.Thread(target=self._run, daemon=True)
        self._worker.start()
        self._watcher = None
        if cfg.inbox_dir:
            self._watcher = threading.Thread(target=self._watch_inbox, daemon=True)
            self._watcher.start()

    # -- public surface ------------------------------------------------------

    def snapshot(self) -> SessionState:
        with self._lock:
            return self._state

    def submit(self, event) -> None:
        self._work.put(event)

    def subscribe(self) -> queue.Queue:
        q: queue.Queue = queue.Queue()
        with self._lock:
            self._subscribers.append(q)
        return q

    def unsubscribe(self, q) -> None:
        with self._lock:
            if q in self._subscribers:
                self._subscribers.remove(q)

    def close(self) -> None:
        self._stop.set()
        self._work.put(None)
        self._worker.join(timeout=5)

    def signal_preview(self, max_channels: int = 16, max_points: int = 64):
        """Downsampled traces of the last decoded trial for a strip chart."""
        with self._lock:
            sig = self._last_signal
        if sig is None:
            return {"channels": [], "n_time": 0}
        n_time, n_ch = sig.shape
        ch_step = max(1, int(np.ceil(n_ch / max_channels)))
        t_step = max(1, int(np.ceil(n_time / max_points)))
        picked = list(range(0, n_ch, ch_step))[:max_channels]
        return {
            "n_time": n_time,
            "channels": [
                {"index": c, "values": [float(v) for v in sig[::t_step, c]]}
                for c in picked
            ],
        }

    # -- worker --------------------------------------------------------------

    def _run(self) -> None:
        while not self._stop.is_set():
            event = self._work.get()
            if event is None:
                break
            try:
                self._apply(event)
            except TransitionError as exc:
                self._emit("rejected", {"error": str(exc)})
            except Exception as exc:              # decode/llm failures
                self._apply_step(Failure(str(exc)))

    def _apply(self, event) -> None:
        if isinstance(event, TrialFileReady):
            self._apply_step(event)
            self._decode_and_chat(event.path)
        else:
            self._apply_step(event)

    def _apply_step(self, event) -> None:
        with self._lock:
            self._state = session_step(self._state, event)
            state = self._state
        self._emit("transition",
                   {"event": type(event).__name__, "state": state.to_json()})

    def _decode_and_chat(self, path: str) -> None:
        cfg = self.cfg
        prior_topic = self.snapshot().current_topic
        key, confidence, lat, tensor = decode_file(
            path, cfg.preproc_cfg, cfg.montage, cfg.decoder)
        with self._lock:
            self._last_signal = tensor.data
            self._state = dc_replace(
                self._state, latency_log=self._state.latency_log + (lat,))
        self._emit("latency", lat.to_json())
        if confidence < cfg.confidence_threshold:
            self._emit("low_confidence",
                       {"key": key, "confidence": confidence})
            self._apply_step(Failure(
                f"confidence {confidence:.3f} below threshold"))
            return
        embedding = self._predict_embedding(tensor)
        text, is_followup = followup_text(
            prior_topic, key, embedding, cfg.bank, cfg.sentences)
        self._apply_step(DecodeDone(key, confidence, text, is_followup))
        reply = llm_send(cfg.llm, self.snapshot().conversation)
        self._apply_step(LlmReply(reply))

    def _predict_embedding(self, tensor):
        dec = self.cfg.decoder
        if hasattr(dec, "predict_embeddings"):
            return np.asarray(dec.predict_embeddings([tensor]))[0]
        return None

    def _watch_inbox(self) -> None:
        seen: set[str] = set()
        inbox = Path(self.cfg.inbox_dir)
        while not self._stop.is_set():
            if inbox.exists():
                for p in sorted(inbox.iterdir()):
                    name = p.name
                    if name in seen or name.endswith(".short.f32"):
                        continue
                    if p.suffix in (".f32", ".csv"):
                        seen.add(name)
                        self.submit(TrialFileReady(str(p)))
            time.sleep(self.cfg.inbox_poll_s)

    def _emit(self, frame_type: str, payload: dict) -> None:
        with self._lock:
            self._seq += 1
            frame = {"seq": self._seq, "type": frame_type,
                     "time": time.time(), **payload}
            subs = list(self._subscribers)
        if self.cfg.log_file:
            with open(self.cfg.log_file, "a", encoding="utf-8") as fh:
                fh.write(json.dumps(frame, sort_keys=True) + "\n")
        for q in subs:
            q.put(frame)


CONTROL_EVENTS = {"start": Start, "continue": Continue, "reset": Reset}


def create_app(cfg: ServiceConfig):
    """FastAPI app over one SessionService."""
    from fastapi import FastAPI, HTTPException
    from fastapi.responses import StreamingResponse

    service = SessionService(cfg)
    app = FastAPI(title="nirspeech session")
    app.state.service = service

    @app.get("/state")
    def get_state():
        return service.snapshot().to_json()

    @app.get("/conversation")
    def get_conversation():
        return {"turns": [t.to_json() for t in service.snapshot().conversation]}

    @app.get("/signal")
    def get_signal(max_channels: int = 16, max_points: int = 64):
        return service.signal_preview(min(max_channels, 16), max_points)

    @app.post("/control")
    def post_control(body: dict):
        action = body.get("action")
        if action not in CONTROL_EVENTS:
            raise HTTPException(422, f"unknown action {action!r}")
        try:
            # control transitions validate synchronously so the caller sees
            # illegal-transition errors immediately
            service._apply_step(CONTROL_EVENTS[action]())
        except TransitionError as exc:
            raise HTTPException(409, str(exc))
        return service.snapshot().to_json()

    @app.post("/trial")
    def post_trial(body: dict):
        phase = service.snapshot().phase
        if phase not in ("Recording", "AwaitFollowUp"):
            raise HTTPException(409, f"cannot accept a trial in phase {phase}")
        if "path" in body:
            path = body["path"]
            if not Path(path).exists():
                raise HTTPException(404, f"no such file: {path}")
        elif "simulate_label" in body:
            path = _simulate(cfg, body["simulate_label"])
        else:
            raise HTTPException(422, "body needs 'path' or 'simulate_label'")
        service.submit(TrialFileReady(str(path)))
        return {"accepted": str(path)}

    @app.get("/events")
    def get_events(limit: int | None = None):
        # `limit` closes the stream after that many frames, for clients
        # (and tests) that cannot hold a connection open indefinitely
        def stream():
            q = service.subscribe()
            sent = 0
            try:
                while limit is None or sent < limit:
                    try:
                        frame = q.get(timeout=15.0)
                    except queue.Empty:
                        yield ": keepalive\n\n"
                        continue
                    yield f"data: {json.dumps(frame, sort_keys=True)}\n\n"
                    sent += 1
            finally:
                service.unsubscribe(q)
        return StreamingResponse(stream(), media_type="text/event-stream")

    return app


def _simulate(cfg: ServiceConfig, label: str) -> Path:
    import tempfile

    from .synth import synth_trial

    if cfg.synth_cfg is None:
        raise DataError("simulated trials need a synth config")
    trial = synth_trial(cfg.synth_cfg, label,
                        trial_seed=int(time.time_ns() % (2 ** 31)))
    out = Path(tempfile.mkdtemp(prefix="nirspeech-sim-"))
    long_p = out / f"{trial.id}.f32"
    np.ascontiguousarray(trial.long.data, dtype="<f4").tofile(long_p)
    np.ascontiguousarray(trial.short.data, dtype="<f4").tofile(
        out / f"{trial.id}.short.f32")
    return long_p
