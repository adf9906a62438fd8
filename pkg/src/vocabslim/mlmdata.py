"""Deterministic masked-LM batch construction and adaptation manifests.

Masking uses the standard scheme: each non-special position is selected
independently with probability ``mask_rate``; of the selected positions a
``mask_split`` fraction is replaced by the mask id, a fraction by a random
normal piece id, and the rest left unchanged (defaults 0.15, 0.8/0.1/0.1).
Randomness comes from a counter-based generator keyed by (seed, sequence
index), so batches are bit-identical regardless of how many workers
process the sequences.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np

from vocabslim import container, paths
from vocabslim.errors import ValidationError
from vocabslim.fingerprint import content_fingerprint
from vocabslim.tokenizer import UnigramModel

IGNORE_INDEX = -100
CHUNK_FLOOR = 8


@dataclass
class AdaptConfig:
    """Hyper-parameters for one adaptation or fine-tuning run."""

    epochs: int = 3
    learning_rate: float = 5e-5
    batch_size: int = 10
    max_seq_len: int = 256
    mask_rate: float = 0.15
    mask_split: tuple[float, float, float] = (0.8, 0.1, 0.1)
    gradient_accumulation: int = 1

    def validate(self) -> None:
        if self.epochs < 0:
            raise ValidationError("epochs must be >= 0")
        if not (0.0 <= self.mask_rate < 1.0):
            raise ValidationError(f"mask_rate must be in [0, 1), got {self.mask_rate}")
        if abs(sum(self.mask_split) - 1.0) > 1e-9:
            raise ValidationError(f"mask_split must sum to 1, got {self.mask_split}")
        if any(f < 0 for f in self.mask_split):
            raise ValidationError("mask_split fractions must be non-negative")
        if self.max_seq_len < CHUNK_FLOOR:
            raise ValidationError(f"max_seq_len must be >= {CHUNK_FLOOR}")

    def to_dict(self) -> dict:
        return {
            "epochs": self.epochs,
            "learning_rate": self.learning_rate,
            "batch_size": self.batch_size,
            "max_seq_len": self.max_seq_len,
            "mask_rate": self.mask_rate,
            "mask_split": list(self.mask_split),
            "gradient_accumulation": self.gradient_accumulation,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "AdaptConfig":
        cfg = cls(
            epochs=int(doc.get("epochs", 3)),
            learning_rate=float(doc.get("learning_rate", 5e-5)),
            batch_size=int(doc.get("batch_size", 10)),
            max_seq_len=int(doc.get("max_seq_len", 256)),
            mask_rate=float(doc.get("mask_rate", 0.15)),
            mask_split=tuple(doc.get("mask_split", (0.8, 0.1, 0.1))),
            gradient_accumulation=int(doc.get("gradient_accumulation", 1)),
        )
        cfg.validate()
        return cfg


# Fine-tuning presets: epochs per task and max sequence lengths 164/500/128;
# sentiment uses the lower 2e-5 rate.
PRESETS = {
    "maft": AdaptConfig(),
    "ner": AdaptConfig(epochs=50, learning_rate=5e-5, batch_size=32, max_seq_len=164),
    "topic": AdaptConfig(epochs=25, learning_rate=5e-5, batch_size=32, max_seq_len=500),
    "sentiment": AdaptConfig(epochs=20, learning_rate=2e-5, batch_size=32, max_seq_len=128),
}


def chunk_corpus(
    tokens: Iterable[int], max_seq_len: int, bos: int, eos: int
) -> Iterator[list[int]]:
    """Greedily pack a token stream into [bos] + content + [eos] vectors of
    at most ``max_seq_len``. A final remainder shorter than 8 is dropped;
    nothing else is."""
    if max_seq_len < CHUNK_FLOOR:
        raise ValidationError(f"max_seq_len must be >= {CHUNK_FLOOR}, got {max_seq_len}")
    capacity = max_seq_len - 2
    buf: list[int] = []
    for t in tokens:
        buf.append(t)
        if len(buf) == capacity:
            yield [bos] + buf + [eos]
            buf = []
    if buf and len(buf) + 2 >= CHUNK_FLOOR:
        yield [bos] + buf + [eos]


@dataclass
class MaskedBatch:
    """input_ids with mask corruptions applied, labels holding the original
    ids at selected positions (IGNORE_INDEX elsewhere), and the padding
    attention mask. All int32, shape (batch, seq)."""

    input_ids: np.ndarray
    labels: np.ndarray
    attention_mask: np.ndarray

    def __post_init__(self):
        if not (self.input_ids.shape == self.labels.shape == self.attention_mask.shape):
            raise ValidationError("batch tensor shapes disagree")

    def save(self, path, metadata: dict[str, str] | None = None) -> None:
        container.save(
            path,
            {
                "input_ids": self.input_ids.astype("<i4"),
                "labels": self.labels.astype("<i4"),
                "attention_mask": self.attention_mask.astype("<i4"),
            },
            metadata or {},
        )

    @classmethod
    def load(cls, path) -> "MaskedBatch":
        tensors, _ = container.load(path, mmap_payload=False)
        return cls(tensors["input_ids"], tensors["labels"], tensors["attention_mask"])


def mask_batch(
    chunks: Sequence[Sequence[int]],
    config: AdaptConfig,
    seed: int,
    model: UnigramModel,
    first_sequence_index: int = 0,
) -> MaskedBatch:
    """Apply MLM corruption to token chunks, padded to config.max_seq_len.

    Sequence i draws from Philox keyed by (seed, first_sequence_index + i),
    which makes the output a pure function of (chunks, config, seed) and
    lets callers shard the work without changing the bytes.
    """
    config.validate()
    if not chunks:
        raise ValidationError("mask_batch needs at least one chunk")
    L = config.max_seq_len
    if any(len(c) > L for c in chunks):
        raise ValidationError("chunk longer than max_seq_len")

    special = model.special_ids()
    normal_ids = np.asarray(model.normal_ids(), dtype=np.int32)
    if normal_ids.size == 0:
        raise ValidationError("model has no normal pieces to sample replacements from")
    special_arr = np.asarray(sorted(special), dtype=np.int32)

    B = len(chunks)
    input_ids = np.full((B, L), model.pad_id, dtype=np.int32)
    attention = np.zeros((B, L), dtype=np.int32)
    labels = np.full((B, L), IGNORE_INDEX, dtype=np.int32)

    mask_frac, random_frac, _ = config.mask_split
    for i, chunk in enumerate(chunks):
        n = len(chunk)
        ids = np.asarray(chunk, dtype=np.int32)
        input_ids[i, :n] = ids
        attention[i, :n] = 1
        rng = np.random.Generator(
            np.random.Philox(key=np.asarray([seed, first_sequence_index + i], dtype=np.uint64))
        )
        u_select = rng.random(n)
        u_op = rng.random(n)
        replacements = normal_ids[rng.integers(0, normal_ids.size, size=n)]

        maskable = ~np.isin(ids, special_arr)
        selected = maskable & (u_select < config.mask_rate)
        labels[i, :n][selected] = ids[selected]
        to_mask = selected & (u_op < mask_frac)
        to_random = selected & ~to_mask & (u_op < mask_frac + random_frac)
        row = input_ids[i, :n]
        row[to_mask] = model.mask_id
        row[to_random] = replacements[to_random]
    return MaskedBatch(input_ids, labels, attention)


def mask_batch_sharded(
    chunks: Sequence[Sequence[int]],
    config: AdaptConfig,
    seed: int,
    model: UnigramModel,
    threads: int | None = None,
) -> MaskedBatch:
    """mask_batch across a thread pool. Sequence i always draws from the
    (seed, i) key, so the bytes are identical for any shard count."""
    if threads is None or threads <= 1 or len(chunks) < 2:
        return mask_batch(chunks, config, seed, model)
    from concurrent.futures import ThreadPoolExecutor

    n = len(chunks)
    threads = min(threads, n)
    bounds = [(i * n // threads, (i + 1) * n // threads) for i in range(threads)]

    def work(span):
        lo, hi = span
        return mask_batch(chunks[lo:hi], config, seed, model, first_sequence_index=lo)

    with ThreadPoolExecutor(max_workers=threads) as pool:
        parts = list(pool.map(work, bounds))
    return MaskedBatch(
        np.vstack([p.input_ids for p in parts]),
        np.vstack([p.labels for p in parts]),
        np.vstack([p.attention_mask for p in parts]),
    )


# ---------------------------------------------------------------------------
# Adaptation manifest: binds corpus shards, tokenizer, checkpoint, and the
# hyper-parameters into one reproducible run description.


def emit_manifest(
    config: AdaptConfig,
    corpus_manifest_path,
    tokenizer_path,
    checkpoint_path,
    out_path,
    selection_path=None,
    batch_path=None,
    mode: str = "maft",
    seed: int | None = None,
) -> dict:
    """Write the adaptation manifest JSON, refusing dangling references."""
    config.validate()
    refs = {
        "corpus_manifest": corpus_manifest_path,
        "tokenizer": tokenizer_path,
        "checkpoint": checkpoint_path,
    }
    if selection_path is not None:
        refs["selection"] = selection_path
    if batch_path is not None:
        refs["batches"] = batch_path
    for role, p in refs.items():
        if not Path(p).exists():
            raise ValidationError(f"manifest references missing {role}: {p}")
    base = Path(out_path).parent
    doc = {
        "mode": mode,
        "adapt": config.to_dict(),
        "artifacts": {role: paths.relativize(p, base) for role, p in refs.items()},
        # fingerprints ignore timestamp headers so reruns bind identically
        "fingerprints": {role: content_fingerprint(p) for role, p in refs.items()},
        "packing": "greedy-within-shard",
    }
    if seed is not None:
        doc["seed"] = seed
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    out_path.write_text(
        json.dumps(doc, ensure_ascii=False, sort_keys=True, indent=2) + "\n",
        encoding="utf-8",
    )
    return doc
