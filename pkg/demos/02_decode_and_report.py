"""Train the three decoders on a small synthetic dataset and print a
cross-validated report for the tree ensemble.

Run:  python3 demos/02_decode_and_report.py   (about a minute)
"""
import numpy as np

from nirspeech.cnn import CnnDecoder, TrainConfig
from nirspeech.embeddings import default_store
from nirspeech.evaluate import ProtocolConfig, render_report, run_protocol
from nirspeech.extra_trees import XtcConfig, XtcDecoder
from nirspeech.preprocess import PreprocConfig, run_pipeline
from nirspeech.ridge import RidgeEmbeddingDecoder
from nirspeech.synth import SynthConfig, synth_dataset

cfg = SynthConfig(snr=4.0, seed=0)
ds = synth_dataset(cfg, {"Call": 10, "Restaurant": 10, "Venus": 10, "Rest": 30})
pc = PreprocConfig()
feats = [run_pipeline(t, pc, cfg.montage) for t in ds.trials]
labels = [t.label for t in ds.trials]


def accuracy(decoder, name, feats, labels):
    decoder.fit(feats, labels)
    pred = decoder.predict(feats)
    acc = np.mean([p == t for p, t in zip(pred, labels)])
    print(f"{name:8s} train accuracy {acc:.3f} on {len(labels)} trials")


# detection: speech vs rest with the tree ensemble
detect_labels = ["Rest" if l == "Rest" else "Speech" for l in labels]
accuracy(XtcDecoder(XtcConfig(n_estimators=50, seed=0)), "trees",
         feats, detect_labels)

# 3-class: ridge-to-embeddings and the CNN, on speech trials only
speech = [i for i, l in enumerate(labels) if l != "Rest"]
sf = [feats[i] for i in speech]
sl = [labels[i] for i in speech]
store = default_store()
targets = {k: store.get(k) for k in ("Call", "Restaurant", "Venus")}
accuracy(RidgeEmbeddingDecoder(targets, seed=0), "ridge", sf, sl)
accuracy(CnnDecoder(train_cfg=TrainConfig(max_epochs=20,
                                          reg_grid=((0.0, 0.0),), seed=0)),
         "cnn", sf, sl)

# proper cross-validated protocol with per-seed rows and a Fisher-combined
# p-value; the protocol collapses topic labels to Speech/Rest for this
# decoder on its own
proto = ProtocolConfig(k=3, seeds=(0, 6), chance=0.5, decoder="xtc",
                       level="full")
rep = run_protocol(ds, lambda seed: XtcDecoder(XtcConfig(
    n_estimators=50, seed=seed)), pc, proto, features=feats)
text, _ = render_report(rep)
print()
print(text, end="")
