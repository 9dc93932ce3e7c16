"""Drive the decode session end to end in process: start a session, submit
a simulated trial, watch the state machine move, and read the conversation.

Run:  python3 demos/03_session_loop.py
"""
import time

import numpy as np

from nirspeech.service import ServiceConfig, SessionService
from nirspeech.session import Continue, LlmConfig, Start, TrialFileReady
from nirspeech.synth import SynthConfig, synth_trial


class TopicDecoder:
    """Stand-in decoder so the demo runs in seconds; see demo 02 for real
    decoder training."""
    classes = ("Call", "Restaurant", "Venus")

    def predict_proba(self, tensors):
        return np.array([[0.05, 0.91, 0.04]] * len(tensors))


cfg = SynthConfig(snr=3.0, seed=1)
trial = synth_trial(cfg, "Restaurant", trial_seed=0)
import tempfile, pathlib
out = pathlib.Path(tempfile.mkdtemp())
path = out / f"{trial.id}.f32"
np.ascontiguousarray(trial.long.data, dtype="<f4").tofile(path)
np.ascontiguousarray(trial.short.data, dtype="<f4").tofile(
    out / f"{trial.id}.short.f32")

service = SessionService(ServiceConfig(
    decoder=TopicDecoder(), montage=cfg.montage, llm=LlmConfig()))
frames = service.subscribe()

service.submit(Start())
service.submit(TrialFileReady(str(path)))
deadline = time.time() + 10
while time.time() < deadline:
    f = frames.get(timeout=10)
    if f["type"] == "transition":
        print(f"seq {f['seq']:2d}  ->  {f['state']['phase']}")
    elif f["type"] == "latency":
        print(f"seq {f['seq']:2d}  latency {f['total_s'] * 1000:.0f} ms "
              f"(load {f['load_s'] * 1000:.0f}, "
              f"preprocess {f['preprocess_s'] * 1000:.0f}, "
              f"decode {f['decode_s'] * 1000:.0f})")
    if f.get("type") == "transition" and f["state"]["phase"] == "Displaying":
        break
service.submit(Continue())
time.sleep(0.2)

print()
for turn in service.snapshot().conversation:
    print(f"[{turn.role}] {turn.text}")
service.close()
