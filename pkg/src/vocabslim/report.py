"""Audit reports: UNK counts across tokenizer variants, coverage, size.

Reports are pure functions of their input artifacts. The JSON form is the
source of truth; timestamps live in a separate ``header`` object so that
hashing the rest of the document ignores them. A fixed-width text
rendering (tokenizers down, datasets across) is provided for reading.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Mapping, Sequence

from vocabslim import tokenizer as tok
from vocabslim import vocabselect
from vocabslim.corpus import iter_lines_strict
from vocabslim.errors import ArtifactMismatchError, DecodeError
from vocabslim.fingerprint import sha256_file


@dataclass
class UnkReport:
    rows: list[dict]
    generated_from: dict[str, str] = field(default_factory=dict)

    def to_json(self, timestamp: bool = True) -> str:
        doc = {
            "header": {"created_at": datetime.now(timezone.utc).isoformat()} if timestamp else {},
            "rows": self.rows,
            "generated_from": self.generated_from,
        }
        return json.dumps(doc, ensure_ascii=False, sort_keys=True, indent=2) + "\n"

    def save(self, path, timestamp: bool = True) -> None:
        Path(path).write_text(self.to_json(timestamp), encoding="utf-8")


def unk_report(
    tokenizers: Sequence[tuple[str, object]],
    datasets: Sequence[tuple[str, object]],
    unk_granularity: str = "run",
) -> UnkReport:
    """One row per (tokenizer, dataset) with UNK and total token counts.

    ``tokenizers`` maps names to model file paths or loaded models;
    ``datasets`` maps names to text file paths. An unreadable dataset
    produces a row-level error entry instead of failing the report.
    """
    loaded: list[tuple[str, tok.UnigramModel]] = []
    fingerprints: dict[str, str] = {}
    for name, m in tokenizers:
        model = m if isinstance(m, tok.UnigramModel) else tok.UnigramModel.load(m)
        loaded.append((name, model))
        fingerprints[f"tokenizer:{name}"] = model.fingerprint()
    for name, p in datasets:
        try:
            fingerprints[f"dataset:{name}"] = sha256_file(p)
        except OSError:
            fingerprints[f"dataset:{name}"] = "unreadable"

    rows = []
    for tname, model in loaded:
        for dname, path in datasets:
            try:
                counts = tok.count_unks(iter_lines_strict(path), model, unk_granularity)
            except (OSError, DecodeError) as e:
                rows.append(
                    {"tokenizer_name": tname, "dataset_name": dname, "error": str(e)}
                )
                continue
            total = counts["total_tokens"]
            rows.append(
                {
                    "tokenizer_name": tname,
                    "dataset_name": dname,
                    "unk_count": counts["unk_tokens"],
                    "total_tokens": total,
                    "unk_rate": counts["unk_tokens"] / total if total else 0.0,
                }
            )
    return UnkReport(rows, fingerprints)


def render_unk_table(report: UnkReport) -> str:
    """Fixed-width #UNK table, one tokenizer per row, one dataset per column."""
    tokenizers = []
    datasets = []
    cells: dict[tuple[str, str], str] = {}
    for row in report.rows:
        t, d = row["tokenizer_name"], row["dataset_name"]
        if t not in tokenizers:
            tokenizers.append(t)
        if d not in datasets:
            datasets.append(d)
        cells[(t, d)] = "ERR" if "error" in row else str(row["unk_count"])
    widths = [max(len("tokenizer"), *(len(t) for t in tokenizers))]
    for d in datasets:
        widths.append(max(len(f"{d} #UNK"), *(len(cells.get((t, d), "")) for t in tokenizers)))
    lines = []
    header = ["tokenizer".ljust(widths[0])] + [
        f"{d} #UNK".rjust(w) for d, w in zip(datasets, widths[1:])
    ]
    lines.append("  ".join(header))
    for t in tokenizers:
        row = [t.ljust(widths[0])] + [
            cells.get((t, d), "-").rjust(w) for d, w in zip(datasets, widths[1:])
        ]
        lines.append("  ".join(row))
    return "\n".join(lines) + "\n"


def coverage_report(
    selection: vocabselect.VocabSelection,
    freq_tables: Mapping[str, vocabselect.FreqTable],
    targets: Sequence[float] = (0.996, 0.998),
    unk_id: int | None = None,
) -> dict:
    """Per-group achieved coverage of the selection plus the k needed to
    reach each configured target on that group's table."""
    keep = set(selection.keep_ids)
    groups = {}
    for g, table in sorted(freq_tables.items()):
        if table.tokenizer_fingerprint != selection.tokenizer_fingerprint:
            raise ArtifactMismatchError(
                f"frequency table for group {g!r} does not share the selection's tokenizer"
            )
        per_target = {}
        for t in targets:
            res = vocabselect.select_for_coverage(table, t, unk_id=unk_id)
            per_target[f"{t:g}"] = {"k": res.k, "unk_shortfall": res.unk_shortfall}
        groups[g] = {
            "achieved_coverage": vocabselect.coverage(table, keep),
            "k_for_target": per_target,
            "total_tokens": table.total,
        }
    return {
        "groups": groups,
        "keep_size": len(selection.keep_ids),
        "recipe": selection.recipe,
        "tokenizer_fingerprint": selection.tokenizer_fingerprint,
    }


def save_json_report(doc: dict, path, timestamp: bool = True) -> None:
    """Write a report as {"header": {...}, ...body...} with the timestamp
    confined to the header."""
    body = dict(doc)
    header = {"created_at": datetime.now(timezone.utc).isoformat()} if timestamp else {}
    out = {"header": header, **body}
    Path(path).write_text(
        json.dumps(out, ensure_ascii=False, sort_keys=True, indent=2) + "\n",
        encoding="utf-8",
    )
