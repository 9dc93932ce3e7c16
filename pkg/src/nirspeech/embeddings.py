"""Sentence-embedding storage, a deterministic fallback embedder, cosine
similarity, and follow-up question selection.

Embeddings are data, not inference: real 768-d vectors can be loaded from a
JSON file produced offline; when none exists, ``pseudo_embed`` hashes
character trigrams into 768 signed buckets so the whole pipeline stays
runnable without any model download.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from importlib import resources

import numpy as np

from .model import DataError

EMBED_DIM = 768


@dataclass(frozen=True)
class EmbeddingStore:
    vectors: dict            # key -> 768-float list
    provenance: str          # "file" | "pseudo"

    def __post_init__(self):
        for key, v in self.vectors.items():
            arr = np.asarray(v, dtype=np.float64)
            if arr.shape != (EMBED_DIM,):
                raise DataError(
                    f"embedding {key!r} has dimension {arr.size}, expected {EMBED_DIM}")
            if not np.all(np.isfinite(arr)):
                raise DataError(f"embedding {key!r} contains non-finite values")

    def get(self, key: str) -> np.ndarray:
        if key not in self.vectors:
            raise DataError(f"no embedding for key {key!r}")
        return np.asarray(self.vectors[key], dtype=np.float64)

    def keys(self):
        return list(self.vectors)


@dataclass(frozen=True)
class QuestionBank:
    """Per topic: exactly 10 questions, each paired with its embedding."""
    questions: dict          # topic -> list of 10 strings
    embeddings: dict         # topic -> [10 x 768] array

    def __post_init__(self):
        for topic, qs in self.questions.items():
            if len(qs) != 10:
                raise DataError(f"topic {topic!r} has {len(qs)} questions, expected 10")
            emb = np.asarray(self.embeddings[topic], dtype=np.float64)
            if emb.shape != (10, EMBED_DIM):
                raise DataError(f"topic {topic!r} embedding block has shape {emb.shape}")


def load_store(path) -> EmbeddingStore:
    with open(path, "r", encoding="utf-8") as fh:
        raw = json.load(fh, object_pairs_hook=_reject_duplicates)
    return EmbeddingStore(dict(raw), "file")


def _reject_duplicates(pairs):
    seen = set()
    for key, _ in pairs:
        if key in seen:
            raise DataError(f"duplicate key {key!r} in embedding file")
        seen.add(key)
    return dict(pairs)


def save_store(path, store: EmbeddingStore) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump({k: list(map(float, v)) for k, v in store.vectors.items()},
                  fh, indent=1, sort_keys=True)
        fh.write("\n")


def pseudo_embed(text: str, seed: int = 0) -> np.ndarray:
    """Deterministic 768-d unit vector from character trigrams.

    Each trigram's md5 (salted with the seed) picks a bucket and a sign;
    the signed counts are L2-normalized.  Same text, same vector.
    """
    if not text:
        raise DataError("cannot embed empty text")
    v = np.zeros(EMBED_DIM)
    grams = [text[i:i + 3] for i in range(len(text) - 2)] or [text]
    for g in grams:
        digest = hashlib.md5(f"{seed}:{g}".encode("utf-8")).digest()
        h = int.from_bytes(digest[:8], "little")
        bucket = h % EMBED_DIM
        sign = 1.0 if (h >> 32) & 1 == 0 else -1.0
        v[bucket] += sign
    norm = np.linalg.norm(v)
    if norm == 0:
        # pathological cancellation: fall back to a single deterministic bucket
        digest = hashlib.md5(f"{seed}:{text}".encode("utf-8")).digest()
        v[int.from_bytes(digest[:8], "little") % EMBED_DIM] = 1.0
        norm = 1.0
    return v / norm


def cosine(u, v) -> float:
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if u.shape != v.shape:
        raise DataError(f"shape mismatch {u.shape} vs {v.shape}")
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu == 0 or nv == 0:
        raise DataError("cosine undefined for zero-norm input")
    return float(np.clip(u @ v / (nu * nv), -1.0, 1.0))


def select_followup(predicted, bank: QuestionBank, topic: str) -> tuple[int, str]:
    """The topic question maximizing cosine with the prediction.

    Returns (index, question); ties break to the lowest index.
    """
    if topic not in bank.questions:
        raise DataError(f"unknown topic {topic!r}")
    emb = np.asarray(bank.embeddings[topic], dtype=np.float64)
    sims = [cosine(predicted, emb[i]) for i in range(emb.shape[0])]
    best = int(np.argmax(sims))
    return best, bank.questions[topic][best]


# ---------------------------------------------------------------------------
# shipped defaults

def _data_text(name: str) -> str:
    return resources.files("nirspeech.data").joinpath(name).read_text("utf-8")


def default_sentences() -> dict:
    return json.loads(_data_text("sentences.json"))


def default_questions() -> dict:
    return json.loads(_data_text("questions.json"))


def default_store(seed: int = 0, store_file=None) -> EmbeddingStore:
    """Sentence embeddings: loaded from ``store_file`` when given, otherwise
    pseudo-embedded from the shipped sentence texts."""
    if store_file is not None:
        return load_store(store_file)
    sentences = default_sentences()
    return EmbeddingStore(
        {k: pseudo_embed(text, seed).tolist() for k, text in sentences.items()},
        "pseudo")


def default_bank(seed: int = 0) -> QuestionBank:
    questions = default_questions()
    return QuestionBank(
        questions,
        {topic: np.array([pseudo_embed(q, seed) for q in qs])
         for topic, qs in questions.items()})
