"""Subword frequency tables, coverage, and reduced-vocabulary selection.

Two selection strategies are supported: ``pooled`` ranks pieces over the
sum of all group tables and takes a single top-k; ``per_group`` takes a
dedicated top-k per script group and merges the sets, optionally union'd
with the top pieces of the original tokenizer. Counts are exact 64-bit
integers; ranking ties break toward the lower piece id.
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, NamedTuple, Sequence

import numpy as np

from vocabslim import tokenizer as tok
from vocabslim.errors import ArtifactMismatchError, ValidationError

POOLED = "pooled"
PER_GROUP = "per_group"


@dataclass
class FreqTable:
    """Exact piece-emission counts of one script group's corpus."""

    counts: np.ndarray  # int64, length = tokenizer vocab size
    group: str
    tokenizer_fingerprint: str

    def __post_init__(self):
        self.counts = np.asarray(self.counts, dtype=np.int64)
        if self.counts.ndim != 1:
            raise ValidationError("counts must be one-dimensional")
        if (self.counts < 0).any():
            raise ValidationError("negative counts")

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def merge(self, other: "FreqTable") -> "FreqTable":
        if other.tokenizer_fingerprint != self.tokenizer_fingerprint:
            raise ArtifactMismatchError(
                "cannot merge frequency tables from different tokenizers: "
                f"{self.tokenizer_fingerprint[:12]} vs {other.tokenizer_fingerprint[:12]}"
            )
        if len(other.counts) != len(self.counts):
            raise ArtifactMismatchError("frequency tables have different sizes")
        return FreqTable(self.counts + other.counts, self.group, self.tokenizer_fingerprint)

    # TSV: one header comment line, then `piece_id<TAB>piece<TAB>count`
    # sorted by count desc, id asc. Zero-count pieces are omitted.

    def save(self, path, model: tok.UnigramModel) -> None:
        order = np.lexsort((np.arange(len(self.counts)), -self.counts))
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8", newline="") as f:
            f.write(
                f"# tokenizer_fingerprint={self.tokenizer_fingerprint}"
                f"\tgroup={self.group}"
                f"\tvocab_size={len(self.counts)}"
                f"\ttotal={self.total}\n"
            )
            for i in order:
                if self.counts[i] == 0:
                    break
                f.write(f"{i}\t{model.pieces[i].piece}\t{self.counts[i]}\n")

    @classmethod
    def load(cls, path) -> "FreqTable":
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        if not lines or not lines[0].startswith("# "):
            raise ValidationError(f"{path}: missing frequency table header")
        header = {}
        for part in lines[0][2:].split("\t"):
            key, _, value = part.partition("=")
            header[key] = value
        try:
            vocab_size = int(header["vocab_size"])
            fingerprint = header["tokenizer_fingerprint"]
            group = header["group"]
        except KeyError as e:
            raise ValidationError(f"{path}: header missing {e}") from e
        counts = np.zeros(vocab_size, dtype=np.int64)
        for line in lines[1:]:
            if not line.strip():
                continue
            pid, _piece, count = line.split("\t")
            counts[int(pid)] = int(count)
        table = cls(counts, group, fingerprint)
        if "total" in header and table.total != int(header["total"]):
            raise ValidationError(f"{path}: total does not match row sum")
        return table


def count_frequencies(
    lines: Iterable[str],
    model: tok.UnigramModel,
    group: str,
    unk_granularity: str = "run",
) -> FreqTable:
    """Count exact piece emissions of encode() over a line stream.

    UNK emissions land on the unk id, so the table total equals the number
    of pieces the tokenizer would produce on this corpus.
    """
    counts = np.zeros(len(model.pieces), dtype=np.int64)
    for line in lines:
        seq = tok.encode(line.rstrip("\n"), model, unk_granularity)
        if seq.ids:
            counts += np.bincount(seq.ids, minlength=len(counts))
    return FreqTable(counts, group, model.fingerprint())


def count_shards(
    shards: Sequence[Path],
    model: tok.UnigramModel,
    group: str,
    threads: int | None = None,
    unk_granularity: str = "run",
) -> FreqTable:
    """Shard-parallel counting; the merge is integer addition in shard
    order, so the result is independent of the thread count."""
    from vocabslim.corpus import iter_lines_strict

    def work(path) -> FreqTable:
        return count_frequencies(iter_lines_strict(path), model, group, unk_granularity)

    if threads is not None and threads <= 1:
        tables = [work(p) for p in shards]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            tables = list(pool.map(work, shards))
    out = FreqTable(np.zeros(len(model.pieces), dtype=np.int64), group, model.fingerprint())
    for t in tables:
        out = out.merge(t)
    return out


def coverage(freq: FreqTable, selected: Iterable[int]) -> float:
    """Fraction of piece occurrences whose type is in the selection
    (1.0 for an empty corpus by convention)."""
    total = freq.total
    if total == 0:
        return 1.0
    idx = np.fromiter(set(selected), dtype=np.int64, count=-1)
    if idx.size and ((idx < 0) | (idx >= len(freq.counts))).any():
        raise ValidationError("selected ids out of range")
    return float(freq.counts[idx].sum()) / total if idx.size else 0.0


def _rank_order(freq: FreqTable) -> np.ndarray:
    # count descending, then id ascending
    return np.lexsort((np.arange(len(freq.counts)), -freq.counts))


def select_top_k(freq: FreqTable, k: int) -> list[int]:
    """The k highest-count piece ids in rank order (ties to lower id).

    Asking for more than the number of nonzero-count pieces pads the
    result with the lowest-id zero-count pieces.
    """
    if k < 0:
        raise ValidationError(f"k must be >= 0, got {k}")
    order = _rank_order(freq)
    return [int(i) for i in order[: min(k, len(order))]]


class CoverageSelection(NamedTuple):
    k: int
    ids: list[int]
    coverage: float
    unk_shortfall: bool


def select_for_coverage(freq: FreqTable, target: float, unk_id: int | None = None) -> CoverageSelection:
    """Smallest k whose top-k selection reaches the coverage target.

    ``unk_shortfall`` is set when the selection only reaches the target by
    counting unknown-token mass, i.e. the kept in-vocabulary pieces alone
    fall short of the target on this corpus.
    """
    if not (0.0 <= target <= 1.0):
        raise ValidationError(f"coverage target must be in [0, 1], got {target}")
    total = freq.total
    order = _rank_order(freq)
    if target == 0.0 or total == 0:
        return CoverageSelection(0, [], 1.0 if total == 0 else 0.0, False)
    prefix = np.cumsum(freq.counts[order])
    covered = prefix / total
    k = int(np.searchsorted(covered, target, side="left")) + 1
    nonzero = int((freq.counts > 0).sum())
    k = min(k, nonzero)
    ids = [int(i) for i in order[:k]]
    covered_mass = int(prefix[k - 1]) if k else 0
    cov = covered_mass / total
    shortfall = False
    if unk_id is not None and 0 <= unk_id < len(freq.counts) and unk_id in set(ids):
        shortfall = (covered_mass - int(freq.counts[unk_id])) < target * total
    return CoverageSelection(k, ids, cov, shortfall)


@dataclass
class VocabSelection:
    """A chosen keep-set of piece ids plus the recipe that produced it."""

    keep_ids: list[int]
    recipe: dict
    achieved_coverage: dict[str, float]
    tokenizer_fingerprint: str
    vocab_size: int

    def validate(self) -> None:
        if len(set(self.keep_ids)) != len(self.keep_ids):
            raise ValidationError("keep_ids contains duplicates")
        if any(not (0 <= i < self.vocab_size) for i in self.keep_ids):
            raise ValidationError("keep_ids out of range for declared vocab size")
        for g, c in self.achieved_coverage.items():
            if not (0.0 <= c <= 1.0):
                raise ValidationError(f"coverage for group {g!r} outside [0,1]: {c}")

    def to_json(self) -> str:
        doc = {
            "keep_ids": self.keep_ids,
            "recipe": self.recipe,
            "achieved_coverage": self.achieved_coverage,
            "tokenizer_fingerprint": self.tokenizer_fingerprint,
            "vocab_size": self.vocab_size,
        }
        return json.dumps(doc, ensure_ascii=False, sort_keys=True, indent=1) + "\n"

    def save(self, path) -> None:
        Path(path).write_text(self.to_json(), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "VocabSelection":
        try:
            doc = json.loads(Path(path).read_text(encoding="utf-8"))
            sel = cls(
                [int(i) for i in doc["keep_ids"]],
                doc["recipe"],
                doc["achieved_coverage"],
                doc["tokenizer_fingerprint"],
                int(doc["vocab_size"]),
            )
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
            raise ValidationError(f"{path}: malformed selection file: {e}") from e
        sel.validate()
        return sel


def original_top_ids(
    model: tok.UnigramModel, n: int, freq: FreqTable | None = None
) -> list[int]:
    """Top-n pieces of the original tokenizer, excluding specials.

    Default ranking is ascending piece id (original inventories put their
    frequent pieces at low ids); pass a frequency table to rank by counts
    instead.
    """
    specials = model.special_ids()
    if freq is None:
        ranked = [i for i in range(len(model.pieces)) if i not in specials]
    else:
        ranked = [int(i) for i in _rank_order(freq) if int(i) not in specials]
    return ranked[:n]


def merge_selections(
    group_ids: Mapping[str, Sequence[int]],
    original_topn_ids: Sequence[int],
    model: tok.UnigramModel,
) -> list[int]:
    """Union of the per-group keep-sets, the original-tokenizer top-n, and
    the specials, deduplicated and ordered by original piece id."""
    union: set[int] = set(original_topn_ids)
    for ids in group_ids.values():
        union |= set(ids)
    if not union:
        raise ValidationError("empty union: no group contributed any piece")
    union |= model.special_ids()
    bad = [i for i in union if not (0 <= i < len(model.pieces))]
    if bad:
        raise ValidationError(f"merged ids out of range: {sorted(bad)[:5]}")
    return sorted(union)


def select_strategy(
    freq_tables: Mapping[str, FreqTable],
    strategy: str,
    model: tok.UnigramModel,
    *,
    k: int | None = None,
    k_per_group: Mapping[str, int] | None = None,
    original_topn_ids: Sequence[int] = (),
) -> VocabSelection:
    """Build a VocabSelection under the pooled or per-group strategy.

    Pooled sums every group table and takes one top-k; per-group takes a
    dedicated top-k per table and merges. Both union in the original-topn
    ids and the specials, and both record achieved per-group coverage.
    """
    if not freq_tables:
        raise ValidationError("no frequency tables given")
    fp = model.fingerprint()
    for g, table in freq_tables.items():
        if table.tokenizer_fingerprint != fp:
            raise ArtifactMismatchError(
                f"frequency table for group {g!r} was built with a different tokenizer"
            )

    if strategy == POOLED:
        if k is None:
            raise ValidationError("pooled strategy requires a single k")
        pooled = FreqTable(np.zeros(len(model.pieces), dtype=np.int64), "all", fp)
        for table in freq_tables.values():
            pooled = pooled.merge(FreqTable(table.counts, "all", fp))
        groups = {"all": select_top_k(pooled, k)}
        recipe_k = {"all": k}
    elif strategy == PER_GROUP:
        if k_per_group is None:
            raise ValidationError("per_group strategy requires k_per_group")
        missing = sorted(set(freq_tables) - set(k_per_group))
        if missing:
            raise ValidationError(f"missing k for declared groups: {missing}")
        groups = {g: select_top_k(freq_tables[g], k_per_group[g]) for g in sorted(freq_tables)}
        recipe_k = {g: int(k_per_group[g]) for g in sorted(freq_tables)}
    else:
        raise ValidationError(f"unknown strategy {strategy!r}")

    keep_ids = merge_selections(groups, original_topn_ids, model)
    keep_set = set(keep_ids)
    achieved = {g: coverage(t, keep_set) for g, t in sorted(freq_tables.items())}
    recipe = {
        "strategy": strategy,
        "k_per_group": recipe_k,
        "original_topn": len(original_topn_ids),
    }
    sel = VocabSelection(keep_ids, recipe, achieved, fp, len(model.pieces))
    sel.validate()
    return sel
