"""Checkpoint loading and embedding-matrix surgery.

Pruning is a pure row-selection: every surviving embedding row stays
bit-identical to its source row and every non-embedding tensor is copied
byte-for-byte. An untied output head (and its bias) is pruned with the
same id remap; the tying flag is required metadata because parameter
accounting differs between the two layouts.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from datetime import datetime, timezone
from typing import Iterable

import numpy as np

from vocabslim import container
from vocabslim.errors import ValidationError

META_EMBEDDING = "embedding_tensor"
META_OUTPUT_HEAD = "output_head_tensor"
META_OUTPUT_BIAS = "output_bias_tensor"


@dataclass
class Checkpoint:
    """Named tensor map plus string metadata (vocab_size, hidden_dim,
    tied flag, tensor-role names)."""

    tensors: dict[str, np.ndarray]
    metadata: dict[str, str]

    @property
    def embedding_name(self) -> str:
        name = self.metadata.get(META_EMBEDDING)
        if not name:
            raise ValidationError("checkpoint metadata lacks embedding_tensor")
        return name

    @property
    def tied(self) -> bool:
        value = self.metadata.get("tied", "").lower()
        if value not in ("true", "false"):
            raise ValidationError(f"checkpoint metadata 'tied' must be true/false, got {value!r}")
        return value == "true"

    @property
    def vocab_size(self) -> int:
        return int(self.metadata["vocab_size"])

    def validate(self) -> None:
        for name, arr in self.tensors.items():
            if arr.dtype != np.dtype("<f4"):
                raise ValidationError(
                    f"tensor {name!r} has dtype {arr.dtype}; checkpoints must be f32"
                )
        emb = self.tensors.get(self.embedding_name)
        if emb is None:
            raise ValidationError(f"embedding tensor {self.embedding_name!r} not in checkpoint")
        if emb.ndim != 2:
            raise ValidationError("embedding tensor must be two-dimensional")
        if "vocab_size" in self.metadata and self.vocab_size != emb.shape[0]:
            raise ValidationError(
                f"metadata vocab_size={self.metadata['vocab_size']} but embedding has {emb.shape[0]} rows"
            )
        head = self.metadata.get(META_OUTPUT_HEAD)
        if self.tied and head and head != self.embedding_name:
            raise ValidationError("tied checkpoint declares a distinct output head tensor")
        if head and head != self.embedding_name and head not in self.tensors:
            raise ValidationError(f"output head tensor {head!r} not in checkpoint")
        bias = self.metadata.get(META_OUTPUT_BIAS)
        if bias and bias not in self.tensors:
            raise ValidationError(f"output bias tensor {bias!r} not in checkpoint")


def load_checkpoint(path, mmap_payload: bool = True) -> Checkpoint:
    tensors, metadata = container.load(path, mmap_payload=mmap_payload)
    ckpt = Checkpoint(tensors, metadata)
    ckpt.validate()
    return ckpt


def save_checkpoint(ckpt: Checkpoint, path, timestamp: bool = False) -> None:
    """Write atomically; ``timestamp`` stamps created_at into the metadata
    (off by default so reruns produce byte-identical files)."""
    metadata = dict(ckpt.metadata)
    if timestamp:
        metadata["created_at"] = datetime.now(timezone.utc).isoformat()
    container.save(path, ckpt.tensors, metadata)


@dataclass
class SurgeryPlan:
    """How to cut a checkpoint down to a reduced vocabulary."""

    embedding_tensor: str
    output_head_tensor: str | None
    output_bias_tensor: str | None
    tied: bool
    remap: dict[int, int] = field(default_factory=dict)

    def validate(self) -> None:
        news = sorted(self.remap.values())
        if news != list(range(len(news))):
            raise ValidationError("remap must be injective with contiguous new ids from 0")
        if self.tied and self.output_head_tensor not in (None, self.embedding_tensor):
            raise ValidationError("tied plan must not name a distinct output head tensor")

    @property
    def keep_old_ids(self) -> list[int]:
        # new id order; selection is stable so this is ascending
        return [old for old, _ in sorted(self.remap.items(), key=lambda kv: kv[1])]


def plan_for(ckpt: Checkpoint, keep_ids: Iterable[int]) -> SurgeryPlan:
    """Build the stable-order remap (specials and low ids stay in front)."""
    vocab = ckpt.tensors[ckpt.embedding_name].shape[0]
    olds = sorted(set(int(i) for i in keep_ids))
    if not olds:
        raise ValidationError("empty keep-set")
    if olds[0] < 0 or olds[-1] >= vocab:
        raise ValidationError(
            f"keep ids out of range for embedding with {vocab} rows: {olds[0]}..{olds[-1]}"
        )
    remap = {old: new for new, old in enumerate(olds)}
    plan = SurgeryPlan(
        ckpt.embedding_name,
        ckpt.metadata.get(META_OUTPUT_HEAD) or None,
        ckpt.metadata.get(META_OUTPUT_BIAS) or None,
        ckpt.tied,
        remap,
    )
    plan.validate()
    return plan


def prune_embeddings(ckpt: Checkpoint, plan: SurgeryPlan) -> Checkpoint:
    """Select embedding rows per the plan; untied heads and biases get the
    same treatment, everything else is passed through unchanged."""
    plan.validate()
    if plan.tied != ckpt.tied:
        raise ValidationError("plan tying flag disagrees with checkpoint metadata")
    rows = np.asarray(plan.keep_old_ids, dtype=np.int64)
    emb = ckpt.tensors[plan.embedding_tensor]
    if rows.size and (rows[-1] >= emb.shape[0] or rows[0] < 0):
        raise ValidationError("keep ids out of range of the embedding matrix")

    pruned_names = {plan.embedding_tensor}
    new_tensors: dict[str, np.ndarray] = {plan.embedding_tensor: emb[rows]}
    if not plan.tied and plan.output_head_tensor:
        head = ckpt.tensors[plan.output_head_tensor]
        if head.shape[0] != emb.shape[0]:
            raise ValidationError(
                f"output head has {head.shape[0]} rows but embedding has {emb.shape[0]}"
            )
        new_tensors[plan.output_head_tensor] = head[rows]
        pruned_names.add(plan.output_head_tensor)
    if plan.output_bias_tensor:
        bias = ckpt.tensors[plan.output_bias_tensor]
        if bias.shape[0] != emb.shape[0]:
            raise ValidationError("output bias length disagrees with the embedding rows")
        new_tensors[plan.output_bias_tensor] = bias[rows]
        pruned_names.add(plan.output_bias_tensor)
    for name, arr in ckpt.tensors.items():
        if name not in pruned_names:
            new_tensors[name] = arr

    metadata = dict(ckpt.metadata)
    metadata["vocab_size"] = str(rows.size)
    return Checkpoint(new_tensors, metadata)


def param_count(ckpt: Checkpoint) -> int:
    """Total stored parameters; a tied embedding is stored (and counted)
    once."""
    return int(sum(int(np.prod(a.shape, dtype=np.int64)) for a in ckpt.tensors.values()))


def byte_count(ckpt: Checkpoint) -> int:
    return int(sum(a.size * a.dtype.itemsize for a in ckpt.tensors.values()))


def size_report(before: Checkpoint, after: Checkpoint) -> dict:
    pb, pa = param_count(before), param_count(after)
    return {
        "params_before": pb,
        "params_after": pa,
        "reduction_fraction": 1.0 - pa / pb if pb else 0.0,
        "bytes_before": byte_count(before),
        "bytes_after": byte_count(after),
    }
