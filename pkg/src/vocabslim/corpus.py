"""Corpus ingestion: line cleaning, shard manifests, label filtering, splits.

Cleaning follows two rules: drop lines made of numbers/punctuation only
(operationally: lines containing no Unicode letter at all), and drop lines
with fewer than ``min_tokens`` whitespace-separated tokens (default 6).
"""

from __future__ import annotations

import json
import math
import random
import unicodedata
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Iterable, Sequence, TextIO

from vocabslim import paths
from vocabslim.errors import DecodeError, ValidationError

DEFAULT_MIN_TOKENS = 6


def _has_letter(line: str) -> bool:
    return any(unicodedata.category(ch).startswith("L") for ch in line)


def clean_line(line: str, min_tokens: int = DEFAULT_MIN_TOKENS) -> bool:
    """Return True if the line survives cleaning.

    A line is dropped when it contains no letter (Unicode category L*),
    which covers numeric-only and punctuation-only lines across scripts,
    or when its whitespace token count is below ``min_tokens``.
    """
    if min_tokens < 1:
        raise ValidationError(f"min_tokens must be >= 1, got {min_tokens}")
    if not _has_letter(line):
        return False
    if len(line.split()) < min_tokens:
        return False
    return True


@dataclass
class CleanStats:
    lines_in: int = 0
    lines_kept: int = 0
    bytes_kept: int = 0

    def merge(self, other: "CleanStats") -> "CleanStats":
        return CleanStats(
            self.lines_in + other.lines_in,
            self.lines_kept + other.lines_kept,
            self.bytes_kept + other.bytes_kept,
        )


def preprocess_corpus(
    lines: Iterable[str],
    out: TextIO,
    min_tokens: int = DEFAULT_MIN_TOKENS,
) -> CleanStats:
    """Copy the lines passing clean_line to ``out``, preserving order.

    ``bytes_kept`` counts the UTF-8 bytes written, one trailing newline per
    kept line, so it matches the size of the emitted file.
    """
    stats = CleanStats()
    for line in lines:
        line = line.rstrip("\n")
        stats.lines_in += 1
        if clean_line(line, min_tokens):
            out.write(line + "\n")
            stats.lines_kept += 1
            stats.bytes_kept += len(line.encode("utf-8")) + 1
    return stats


def iter_lines_strict(path) -> Iterable[str]:
    """Yield decoded lines of a UTF-8 file, raising DecodeError with the
    absolute byte offset of the first bad byte."""
    offset = 0
    with open(path, "rb") as f:
        for raw in f:
            try:
                yield raw.decode("utf-8")
            except UnicodeDecodeError as e:
                raise DecodeError(path, offset + e.start, e.reason) from e
            offset += len(raw)


def clean_file(in_path, out_path, min_tokens: int = DEFAULT_MIN_TOKENS) -> CleanStats:
    in_path, out_path = Path(in_path), Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    tmp = out_path.with_suffix(out_path.suffix + ".tmp")
    with open(tmp, "w", encoding="utf-8", newline="") as out:
        stats = preprocess_corpus(iter_lines_strict(in_path), out, min_tokens)
    tmp.replace(out_path)
    return stats


# ---------------------------------------------------------------------------
# Shard manifests


@dataclass
class ShardEntry:
    path: str
    language: str
    group: str
    line_count: int
    byte_count: int


@dataclass
class CorpusManifest:
    """Provenance record for a cleaned corpus: one entry per shard file."""

    shards: list[ShardEntry]
    preprocessing: dict
    created_at: str = field(
        default_factory=lambda: datetime.now(timezone.utc).isoformat()
    )

    def validate(
        self, groups: Sequence[str] | None = None, check_files: bool = False
    ) -> None:
        seen_paths = set()
        for s in self.shards:
            if s.path in seen_paths:
                raise ValidationError(f"duplicate shard path in manifest: {s.path}")
            seen_paths.add(s.path)
            if s.line_count < 0 or s.byte_count < 0:
                raise ValidationError(f"negative counts for shard {s.path}")
            if groups is not None and s.group not in groups:
                raise ValidationError(
                    f"shard {s.path} has group {s.group!r}, not in declared set {sorted(groups)}"
                )
            if check_files:
                actual = Path(s.path).stat().st_size
                if actual != s.byte_count:
                    raise ValidationError(
                        f"shard {s.path} has {actual} bytes but the manifest says {s.byte_count}"
                    )

    def shards_for_group(self, group: str) -> list[ShardEntry]:
        return [s for s in self.shards if s.group == group]

    def to_json(self, base=None) -> str:
        """Serialize; shard paths under ``base`` are written relative to it
        so the manifest survives relocation and reruns bind identically."""
        shards = []
        for s in self.shards:
            entry = dict(vars(s))
            if base is not None:
                entry["path"] = paths.relativize(s.path, base)
            shards.append(entry)
        doc = {
            "shards": shards,
            "preprocessing": self.preprocessing,
            "created_at": self.created_at,
        }
        return json.dumps(doc, ensure_ascii=False, indent=2, sort_keys=True) + "\n"

    def save(self, path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.to_json(base=path.parent), encoding="utf-8")

    @classmethod
    def from_json(cls, text: str, base=None) -> "CorpusManifest":
        try:
            doc = json.loads(text)
            shards = []
            for s in doc["shards"]:
                if base is not None:
                    s = dict(s, path=str(paths.resolve(s["path"], base)))
                shards.append(ShardEntry(**s))
            return cls(shards, doc["preprocessing"], doc.get("created_at", ""))
        except (json.JSONDecodeError, KeyError, TypeError) as e:
            raise ValidationError(f"malformed corpus manifest: {e}") from e

    @classmethod
    def load(cls, path) -> "CorpusManifest":
        path = Path(path)
        return cls.from_json(path.read_text(encoding="utf-8"), base=path.parent)


def clean_shards(
    shard_specs: Sequence[tuple[str, str, Path]],
    out_dir,
    min_tokens: int = DEFAULT_MIN_TOKENS,
    threads: int | None = None,
) -> tuple[CorpusManifest, CleanStats]:
    """Clean shards in parallel and build a manifest.

    ``shard_specs`` is a sequence of (language, group, input_path). Each
    shard is processed independently; stats merge by integer addition, so
    the result does not depend on the degree of parallelism. Output files
    are named after the input stems; colliding stems are rejected.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    out_paths = []
    seen = set()
    for _, _, in_path in shard_specs:
        name = Path(in_path).stem + ".txt"
        if name in seen:
            raise ValidationError(f"shard filename collision on {name!r}")
        seen.add(name)
        out_paths.append(out_dir / name)

    def work(i: int) -> CleanStats:
        return clean_file(shard_specs[i][2], out_paths[i], min_tokens)

    n = len(shard_specs)
    if threads is not None and threads <= 1:
        per_shard = [work(i) for i in range(n)]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            per_shard = list(pool.map(work, range(n)))

    total = CleanStats()
    entries = []
    for (lang, group, _), out_path, st in zip(shard_specs, out_paths, per_shard):
        total = total.merge(st)
        entries.append(
            ShardEntry(str(out_path), lang, group, st.lines_kept, st.bytes_kept)
        )
    manifest = CorpusManifest(
        entries,
        {"min_tokens": min_tokens, "filters_applied": ["no_letter", "min_tokens"]},
    )
    manifest.validate()
    return manifest, total


# ---------------------------------------------------------------------------
# Labeled data


@dataclass(frozen=True)
class LabeledExample:
    text: str
    label: str


def filter_multilabel(items: Iterable[tuple[str, set]]) -> list[LabeledExample]:
    """Keep only items carrying exactly one candidate label."""
    out = []
    for text, labels in items:
        if len(labels) == 0:
            raise ValidationError(f"item without any candidate label: {text[:40]!r}")
        if len(labels) == 1:
            out.append(LabeledExample(text, next(iter(labels))))
    return out


def enforce_min_class_size(
    examples: Sequence[LabeledExample], min_size: int = 200
) -> tuple[list[LabeledExample], set]:
    """Drop every class with fewer than ``min_size`` examples."""
    if min_size < 1:
        raise ValidationError(f"min_size must be >= 1, got {min_size}")
    counts: dict[str, int] = {}
    for ex in examples:
        counts[ex.label] = counts.get(ex.label, 0) + 1
    dropped = {label for label, c in counts.items() if c < min_size}
    kept = [ex for ex in examples if ex.label not in dropped]
    return kept, dropped


def _largest_remainder(n: int, ratios: Sequence[float]) -> list[int]:
    # Ties go to the earlier split in (train, dev, test) order.
    floors = [math.floor(r * n) for r in ratios]
    remainders = [r * n - f for r, f in zip(ratios, floors)]
    leftover = n - sum(floors)
    order = sorted(range(len(ratios)), key=lambda i: (-remainders[i], i))
    for i in order[:leftover]:
        floors[i] += 1
    return floors


def stratified_split(
    examples: Sequence[LabeledExample],
    ratios: tuple[float, float, float],
    seed: int,
) -> tuple[list[LabeledExample], list[LabeledExample], list[LabeledExample]]:
    """Split into (train, dev, test) preserving per-class proportions.

    Per class, counts are allocated by largest-remainder rounding of
    ratio * class_size; membership within a class is shuffled by a
    generator derived from (seed, class label) only, so reruns are
    byte-identical and changing the seed changes membership but never the
    per-class counts.
    """
    if len(ratios) != 3:
        raise ValidationError("exactly three split ratios required")
    if any(r <= 0 for r in ratios):
        raise ValidationError(f"split ratios must be positive, got {ratios}")
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ValidationError(f"split ratios must sum to 1, got {sum(ratios)}")

    by_label: dict[str, list[LabeledExample]] = {}
    for ex in examples:
        by_label.setdefault(ex.label, []).append(ex)

    for label, group in by_label.items():
        if len(group) < 3:
            raise ValidationError(
                f"class {label!r} has only {len(group)} examples; "
                "need at least one per split"
            )

    train: list[LabeledExample] = []
    dev: list[LabeledExample] = []
    test: list[LabeledExample] = []
    for label in sorted(by_label):
        group = list(by_label[label])
        rng = random.Random(f"{seed}\x1f{label}")
        rng.shuffle(group)
        n_train, n_dev, _ = _largest_remainder(len(group), ratios)
        train.extend(group[:n_train])
        dev.extend(group[n_train : n_train + n_dev])
        test.extend(group[n_train + n_dev :])
    return train, dev, test


# ---------------------------------------------------------------------------
# Labeled TSV I/O: `label<TAB>text`, UTF-8, no header.


def read_labeled_tsv(path, multi_label_sep: str | None = None):
    """Read labeled data. With ``multi_label_sep`` set, the label column may
    hold several labels and items are returned as (text, label_set) pairs."""
    rows = []
    for i, line in enumerate(iter_lines_strict(path)):
        line = line.rstrip("\n")
        if not line:
            continue
        if "\t" not in line:
            raise ValidationError(f"{path}: line {i + 1} has no tab separator")
        label, text = line.split("\t", 1)
        if multi_label_sep is not None:
            labels = {l for l in label.split(multi_label_sep) if l}
            rows.append((text, labels))
        else:
            rows.append(LabeledExample(text, label))
    return rows


def write_labeled_tsv(examples: Iterable[LabeledExample], path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as f:
        for ex in examples:
            f.write(f"{ex.label}\t{ex.text}\n")
