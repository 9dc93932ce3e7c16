"""Command-line entry point exposing every pipeline stage.

Exit codes: 0 success, 2 usage, 3 data error, 4 numeric failure, 5 network.
Every randomized subcommand requires --seed and is bit-reproducible.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .model import DataError, Dataset, Trial, TrialTensor, LABELS

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4
EXIT_NETWORK = 5


def _load_config(args) -> dict:
    if getattr(args, "config", None):
        with open(args.config, "r", encoding="utf-8") as fh:
            return json.load(fh)
    return {}


def _parse_counts(text: str) -> dict:
    parts = text.split(",")
    if len(parts) != 4:
        raise DataError("--counts needs 4 comma-separated integers "
                        "(Call,Restaurant,Venus,Rest)")
    return {lab: int(v) for lab, v in zip(LABELS, parts)}


def _preproc_cfg(args, config: dict):
    from .preprocess import PreprocConfig
    base = config.get("preprocess", {})
    if getattr(args, "level", None):
        base = {**base, "level": args.level}
    return PreprocConfig.from_json(base) if base else PreprocConfig()


# --- subcommands ------------------------------------------------------------

def cmd_synth(args) -> int:
    from .bundle import write_bundle
    from .synth import SynthConfig, synth_dataset
    cfg = SynthConfig(snr=args.snr, seed=args.seed, n_time=args.n_time)
    counts = _parse_counts(args.counts)
    dataset = synth_dataset(cfg, counts)
    write_bundle(dataset, args.out)
    print(f"wrote {len(dataset.trials)} trials to {args.out}")
    return EXIT_OK


def cmd_import(args) -> int:
    from .bundle import import_csv, montage_from_json, write_bundle
    with open(args.montage, "r", encoding="utf-8") as fh:
        montage = montage_from_json(json.load(fh))
    trials = []
    for spec in args.csv:
        if ":" not in spec:
            raise DataError(f"--csv needs LABEL:PATH, got {spec!r}")
        label, path = spec.split(":", 1)
        tid = Path(path).stem
        trials.append(import_csv(path, montage, label=label, id=tid,
                                 session=args.session, subject=args.subject))
    write_bundle(Dataset(args.subject, montage, tuple(trials)), args.out)
    print(f"imported {len(trials)} trials to {args.out}")
    return EXIT_OK


def cmd_preprocess(args) -> int:
    from .bundle import read_bundle, write_bundle
    from .model import trim_trial
    from .preprocess import run_pipeline
    dataset = read_bundle(args.bundle)
    cfg = _preproc_cfg(args, _load_config(args))
    trials = []
    for t in dataset.trials:
        tensor = run_pipeline(t, cfg, dataset.montage)
        short = trim_trial(t.short, tensor.n_time)
        trials.append(Trial(t.id, t.label, t.subject, t.session, tensor, short))
    write_bundle(Dataset(dataset.subject, dataset.montage, tuple(trials)),
                 args.out)
    print(f"preprocessed {len(trials)} trials at level {cfg.level} to {args.out}")
    return EXIT_OK


def _embedding_targets(labels, store_file, seed):
    from .embeddings import default_store, pseudo_embed
    store = default_store(seed, store_file)
    return {lab: (store.get(lab) if lab in store.vectors
                  else pseudo_embed(lab, seed))
            for lab in set(labels)}


def _decoder_factory(name: str, args, labels):
    if name == "xtc":
        from .extra_trees import XtcConfig, XtcDecoder
        return lambda seed: XtcDecoder(XtcConfig(seed=seed))
    if name == "ridge":
        from .ridge import RidgeEmbeddingDecoder
        targets = _embedding_targets(
            labels, getattr(args, "embeddings", None), args.seed)
        return lambda seed: RidgeEmbeddingDecoder(targets=targets, seed=seed)
    if name == "cnn":
        from .cnn import CnnDecoder, TrainConfig
        return lambda seed: CnnDecoder(train_cfg=TrainConfig(seed=seed))
    raise DataError(f"unknown decoder {name!r}")


def _features(dataset, cfg):
    from .preprocess import run_pipeline
    return [run_pipeline(t, cfg, dataset.montage) for t in dataset.trials]


def cmd_train(args) -> int:
    from .bundle import read_bundle
    dataset = read_bundle(args.bundle)
    cfg = _preproc_cfg(args, _load_config(args))
    features = _features(dataset, cfg)
    labels = [t.label for t in dataset.trials]
    if args.decoder == "xtc":
        labels = ["Rest" if lab == "Rest" else "Speech" for lab in labels]
    factory = _decoder_factory(args.decoder, args, labels)
    decoder = factory(args.seed)
    decoder.fit(features, labels)

    out = Path(args.out)
    if args.decoder == "xtc":
        from .extra_trees import model_to_json
        out.write_text(json.dumps(model_to_json(decoder.model), sort_keys=True))
    elif args.decoder == "ridge":
        from .ridge import save_ridge_model
        save_ridge_model(out, decoder.ridge, decoder.classifier,
                         decoder.scaler, decoder.clamp,
                         decoder.classifier.classes)
    else:
        from .cnn import save_cnn_model
        save_cnn_model(out, decoder.params, decoder.arch, decoder.classes,
                       decoder.scaler)
    pred = decoder.predict(features)
    metrics = {
        "decoder": args.decoder, "level": cfg.level, "seed": args.seed,
        "n_trials": len(labels),
        "train_accuracy": float(np.mean([p == t for p, t in zip(pred, labels)])),
    }
    out.with_suffix(out.suffix + ".metrics.json").write_text(
        json.dumps(metrics, sort_keys=True, indent=1) + "\n")
    print(f"trained {args.decoder} on {len(labels)} trials "
          f"(train acc {metrics['train_accuracy']:.3f}) -> {out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    from .bundle import read_bundle
    from .evaluate import ProtocolConfig, render_report, run_protocol
    dataset = read_bundle(args.bundle)
    cfg = _preproc_cfg(args, _load_config(args))
    seeds = tuple(int(s) for s in args.seeds.split(","))
    labels = [t.label for t in dataset.trials]
    if args.decoder == "xtc":
        chance = 0.5
    else:
        chance = 1.0 / len(set(labels))
    proto = ProtocolConfig(k=args.folds, seeds=seeds, chance=chance,
                           decoder=args.decoder, level=cfg.level)
    factory = _decoder_factory(
        args.decoder, args,
        ["Rest" if lab == "Rest" else "Speech" for lab in labels]
        if args.decoder == "xtc" else labels)
    report = run_protocol(dataset, factory, cfg, proto, n_jobs=args.jobs)
    text, csv = render_report(report)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.csv").write_text(csv)
    (out / "report.json").write_text(
        json.dumps(report.to_json(), sort_keys=True, indent=1) + "\n")
    (out / "report.txt").write_text(text)
    print(text, end="")
    return EXIT_OK


def cmd_glm(args) -> int:
    from .bundle import read_bundle
    from .glm import build_design, contrast_z, glm_fit, speech_rest_contrast
    from .preprocess import linear_detrend, optical_density
    dataset = read_bundle(args.bundle)
    cfg = _preproc_cfg(args, _load_config(args))
    fs = dataset.montage.sample_rate_hz
    blocks, short_blocks, events = [], [], []
    offset = 0.0
    for t in dataset.trials:
        od = linear_detrend(optical_density(t.long, cfg))
        blocks.append(od.data)
        short_blocks.append(
            linear_detrend(optical_density(t.short, cfg)).data
            if t.short.n_channels else np.zeros((t.long.n_time, 0)))
        events.append({
            "condition": "rest" if t.label == "Rest" else "speech",
            "onset_s": offset + args.onset,
            "duration_s": args.duration,
        })
        offset += t.long.n_time / fs
    Y = np.vstack(blocks)
    short = np.vstack(short_blocks)
    design = build_design(events, short if short.shape[1] else None,
                          fs, Y.shape[0])
    result = glm_fit(design, Y)
    z = contrast_z(result, speech_rest_contrast(design))
    out = Path(args.out)
    with open(out, "w", encoding="utf-8") as fh:
        fh.write("channel,z\n")
        for c, zv in enumerate(z):
            fh.write(f"{c},{zv:.6f}\n")
    print(f"wrote z-map for {len(z)} channels to {out}")
    return EXIT_OK


def cmd_embed(args) -> int:
    from .embeddings import (default_bank, default_questions, default_store,
                             save_store)
    store = default_store(args.seed, args.store)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_store(out / "embeddings.json", store)
    bank = default_bank(args.seed)
    payload = {
        topic: [{"text": q,
                 "embedding": [float(v) for v in bank.embeddings[topic][i]]}
                for i, q in enumerate(qs)]
        for topic, qs in default_questions().items()}
    (out / "questions.json").write_text(
        json.dumps(payload, sort_keys=True, indent=1) + "\n")
    print(f"wrote embeddings ({store.provenance}) and question bank to {out}")
    return EXIT_OK


def _load_decoder(path: str, kind: str):
    if kind == "xtc":
        from .extra_trees import XtcDecoder, model_from_json
        with open(path, "r", encoding="utf-8") as fh:
            model = model_from_json(json.load(fh))
        dec = XtcDecoder(model.config)
        dec.model = model
        return dec
    if kind == "ridge":
        from .ridge import RidgeEmbeddingDecoder, load_ridge_model
        m, clf, scaler, clamp = load_ridge_model(path)
        return RidgeEmbeddingDecoder(targets={}, scaler=scaler, ridge=m,
                                     classifier=clf, clamp=clamp)
    if kind == "cnn":
        from .cnn import CnnDecoder, load_cnn_model
        params, arch, classes, scaler = load_cnn_model(path)
        return CnnDecoder(arch=arch, params=params, classes=classes,
                          scaler=scaler)
    raise DataError(f"unknown decoder {kind!r}")


def cmd_serve(args) -> int:
    import uvicorn
    from .service import ServiceConfig, create_app
    from .session import LlmConfig
    cfg = _preproc_cfg(args, _load_config(args))
    decoder = _load_decoder(args.model, args.decoder)
    if args.montage:
        from .bundle import montage_from_json
        with open(args.montage, "r", encoding="utf-8") as fh:
            montage = montage_from_json(json.load(fh))
    else:
        from .synth import default_montage
        montage = default_montage()
    synth_cfg = None
    if args.simulate:
        from .synth import SynthConfig
        synth_cfg = SynthConfig(snr=args.snr, seed=args.seed or 0)
    app = create_app(ServiceConfig(
        decoder=decoder, montage=montage, preproc_cfg=cfg,
        llm=LlmConfig(mode=args.llm_mode), synth_cfg=synth_cfg,
        inbox_dir=args.inbox, log_file=args.log_file))
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return EXIT_OK


# --- parser -----------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="nirspeech",
        description="Imagined-speech fNIRS decoding pipeline.")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, seed_required=False):
        sp.add_argument("--config", help="JSON config file; flags override it")
        sp.add_argument("--seed", type=int, required=seed_required,
                        help="random seed (required for randomized commands)")
        sp.add_argument("--log-level", default="info",
                        choices=("debug", "info", "warning", "error"))

    sp = sub.add_parser("synth", help="generate a synthetic trial bundle")
    common(sp, seed_required=True)
    sp.add_argument("--snr", type=float, default=1.0,
                    help="planted signal amplitude in white-noise units")
    sp.add_argument("--counts", default="141,141,141,140",
                    help="trials per class: Call,Restaurant,Venus,Rest")
    sp.add_argument("--n-time", type=int, default=150)
    sp.add_argument("--out", required=True, help="bundle directory")
    sp.set_defaults(func=cmd_synth)

    sp = sub.add_parser("import", help="build a bundle from CSV trial dumps")
    common(sp)
    sp.add_argument("--montage", required=True, help="montage JSON file")
    sp.add_argument("--csv", action="append", required=True,
                    metavar="LABEL:PATH", help="repeatable trial CSV")
    sp.add_argument("--subject", default="csv")
    sp.add_argument("--session", default="s0")
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_import)

    sp = sub.add_parser("preprocess", help="run the preprocessing pipeline")
    common(sp)
    sp.add_argument("--bundle", required=True)
    sp.add_argument("--level", choices=("raw", "od", "full"))
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_preprocess)

    sp = sub.add_parser("train", help="fit a decoder and dump it")
    common(sp, seed_required=True)
    sp.add_argument("--bundle", required=True)
    sp.add_argument("--decoder", required=True, choices=("xtc", "ridge", "cnn"))
    sp.add_argument("--level", choices=("raw", "od", "full"))
    sp.add_argument("--embeddings", help="embedding store JSON (ridge)")
    sp.add_argument("--out", required=True, help="model dump path")
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("eval", help="cross-validated evaluation report")
    common(sp, seed_required=True)
    sp.add_argument("--bundle", required=True)
    sp.add_argument("--decoder", required=True, choices=("xtc", "ridge", "cnn"))
    sp.add_argument("--level", choices=("raw", "od", "full"))
    sp.add_argument("--embeddings", help="embedding store JSON (ridge)")
    sp.add_argument("--folds", type=int, default=3)
    sp.add_argument("--seeds", default="0,6,12,24,42")
    sp.add_argument("--jobs", type=int, default=1,
                    help="fold/seed parallelism; 1 for strict reproducibility")
    sp.add_argument("--out-dir", required=True)
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("glm", help="speech-vs-rest z-map over a bundle")
    common(sp)
    sp.add_argument("--bundle", required=True)
    sp.add_argument("--onset", type=float, default=2.0,
                    help="stimulus onset within each trial (s)")
    sp.add_argument("--duration", type=float, default=10.0,
                    help="assumed stimulus duration (s)")
    sp.add_argument("--out", required=True, help="z-map CSV path")
    sp.set_defaults(func=cmd_glm)

    sp = sub.add_parser("embed", help="write sentence embeddings and questions")
    common(sp, seed_required=True)
    sp.add_argument("--store", help="existing embedding JSON to pass through")
    sp.add_argument("--out-dir", required=True)
    sp.set_defaults(func=cmd_embed)

    sp = sub.add_parser("serve", help="run the decode session service")
    common(sp)
    sp.add_argument("--model", required=True, help="decoder dump path")
    sp.add_argument("--decoder", required=True, choices=("xtc", "ridge", "cnn"))
    sp.add_argument("--level", choices=("raw", "od", "full"))
    sp.add_argument("--montage", help="montage JSON; default synthetic")
    sp.add_argument("--llm-mode", default="mock", choices=("mock", "live"))
    sp.add_argument("--simulate", action="store_true",
                    help="enable server-side simulated trials")
    sp.add_argument("--snr", type=float, default=2.0)
    sp.add_argument("--inbox", help="directory watched for new trial files")
    sp.add_argument("--log-file", help="JSON-lines transition log")
    sp.add_argument("--host", default="127.0.0.1")
    sp.add_argument("--port", type=int, default=8470)
    sp.set_defaults(func=cmd_serve)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    from .session import LlmError
    try:
        return args.func(args)
    except LlmError as exc:
        print(f"error: network: {exc}", file=sys.stderr)
        return EXIT_NETWORK
    except DataError as exc:
        print(f"error: data: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (np.linalg.LinAlgError, FloatingPointError, ZeroDivisionError,
            OverflowError) as exc:
        print(f"error: numeric: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"error: network: {exc}", file=sys.stderr)
        return EXIT_NETWORK


if __name__ == "__main__":
    sys.exit(main())
