"""On-disk trial bundle format.

A bundle directory holds ``manifest.json`` plus one ``.f32`` file per trial
tensor: little-endian IEEE-754 float32, row-major ``[time][channel]``, no
header (shapes live in the manifest).  The manifest JSON is canonical:
sorted keys, UTF-8, LF line endings, so two writes of the same dataset are
byte-identical.
"""

from __future__ import annotations

import csv as csv_mod
import json
import os
from pathlib import Path

import numpy as np

from .model import (ChannelInfo, DataError, Dataset, Montage, Trial,
                    TrialTensor)

FORMAT_VERSION = 1


class BundleError(DataError):
    pass


def _channel_to_json(ch: ChannelInfo) -> dict:
    return {
        "index": ch.index,
        "source_id": ch.source_id,
        "detector_id": ch.detector_id,
        "wavelength_nm": ch.wavelength_nm,
        "distance_mm": ch.distance_mm,
        "is_short": ch.is_short,
    }


def _channel_from_json(d: dict) -> ChannelInfo:
    return ChannelInfo(d["index"], d["source_id"], d["detector_id"],
                       d["wavelength_nm"], d["distance_mm"], d["is_short"])


def montage_to_json(m: Montage) -> dict:
    return {
        "channels": [_channel_to_json(c) for c in m.channels],
        "short_channels": [_channel_to_json(c) for c in m.short_channels],
        "n_sources": m.n_sources,
        "n_detectors": m.n_detectors,
        "sample_rate_hz": m.sample_rate_hz,
    }


def montage_from_json(d: dict) -> Montage:
    return Montage(
        tuple(_channel_from_json(c) for c in d["channels"]),
        tuple(_channel_from_json(c) for c in d["short_channels"]),
        d["n_sources"], d["n_detectors"], d["sample_rate_hz"],
    )


def _write_f32(path: Path, data: np.ndarray, trial_id: str) -> None:
    bad = ~np.isfinite(data)
    if bad.any():
        t, c = np.argwhere(bad)[0]
        raise BundleError(
            f"trial {trial_id}: non-finite sample at (t={t}, c={c}); refusing to write"
        )
    np.ascontiguousarray(data, dtype="<f4").tofile(path)


def _read_f32(path: Path, n_time: int, n_channels: int) -> np.ndarray:
    expected = n_time * n_channels * 4
    actual = path.stat().st_size
    if actual != expected:
        raise BundleError(
            f"{path.name}: {actual} bytes on disk, manifest shape "
            f"{n_time}x{n_channels} needs {expected}"
        )
    raw = np.fromfile(path, dtype="<f4")
    return raw.reshape(n_time, n_channels)


def write_bundle(d: Dataset, dir: str | os.PathLike) -> dict:
    """Write the dataset; returns the manifest dict."""
    out = Path(dir)
    out.mkdir(parents=True, exist_ok=True)
    entries = []
    for t in d.trials:
        data_path = f"{t.id}.f32"
        short_path = f"{t.id}.short.f32"
        _write_f32(out / data_path, t.long.data, t.id)
        _write_f32(out / short_path, t.short.data, t.id)
        entries.append({
            "id": t.id,
            "label": t.label,
            "session": t.session,
            "data_path": data_path,
            "short_path": short_path,
            "kind": t.long.kind,
            "short_kind": t.short.kind,
            "n_time": t.long.n_time,
            "n_channels": t.long.n_channels,
            "n_short": t.short.n_channels,
        })
    manifest = {
        "format_version": FORMAT_VERSION,
        "subject": d.subject,
        "montage": montage_to_json(d.montage),
        "trials": entries,
    }
    text = json.dumps(manifest, sort_keys=True, indent=1, ensure_ascii=False)
    (out / "manifest.json").write_bytes(text.encode("utf-8") + b"\n")
    return manifest


def read_manifest(dir: str | os.PathLike) -> dict:
    path = Path(dir) / "manifest.json"
    if not path.exists():
        raise BundleError(f"no manifest.json in {dir}")
    manifest = json.loads(path.read_text(encoding="utf-8"))
    version = manifest.get("format_version")
    if version != FORMAT_VERSION:
        raise BundleError(f"unknown bundle format_version {version}")
    return manifest


def read_bundle(dir: str | os.PathLike) -> Dataset:
    root = Path(dir)
    manifest = read_manifest(root)
    montage = montage_from_json(manifest["montage"])
    trials = []
    for e in manifest["trials"]:
        if e["n_channels"] != montage.n_long:
            raise BundleError(
                f"trial {e['id']}: n_channels {e['n_channels']} does not match "
                f"montage ({montage.n_long})"
            )
        long = _read_f32(root / e["data_path"], e["n_time"], e["n_channels"])
        short = _read_f32(root / e["short_path"], e["n_time"], e["n_short"])
        trials.append(Trial(e["id"], e["label"], manifest["subject"],
                            e["session"],
                            TrialTensor(long, e.get("kind", "raw_intensity")),
                            TrialTensor(short, e.get("short_kind", "raw_intensity"))))
    return Dataset(manifest["subject"], montage, tuple(trials))


def import_csv(file: str | os.PathLike, montage: Montage, label: str,
               id: str, session: str, subject: str = "csv") -> Trial:
    """One row per time sample; long-channel columns then short columns."""
    n_long, n_short = montage.n_long, montage.n_short
    rows = []
    with open(file, newline="") as fh:
        for r, row in enumerate(csv_mod.reader(fh)):
            if not row:
                continue
            if len(row) != n_long + n_short:
                raise BundleError(
                    f"row {r}: {len(row)} columns, expected "
                    f"{n_long} long + {n_short} short = {n_long + n_short}"
                )
            vals = []
            for c, cell in enumerate(row):
                try:
                    v = float(cell)
                except ValueError:
                    v = float("nan")
                if not np.isfinite(v):
                    raise BundleError(f"non-numeric cell at row {r}, col {c}: {cell!r}")
                vals.append(v)
            rows.append(vals)
    data = np.array(rows, dtype=np.float64)
    return Trial(id, label, subject, session,
                 TrialTensor(data[:, :n_long], "raw_intensity"),
                 TrialTensor(data[:, n_long:], "raw_intensity"))
