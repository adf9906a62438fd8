"""Readers for the toolkit's wire formats.

This package never imports the producing toolkit; everything below parses
the documented formats directly: the tensor container (8-byte header
length + JSON header + payload), the unigram tokenizer JSON, corpus and
adaptation manifests, and labeled TSV / CoNLL data.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from adaptharness import HarnessError

DTYPES = {"F32": np.dtype("<f4"), "I32": np.dtype("<i4")}


def read_container(path) -> tuple[dict[str, np.ndarray], dict[str, str]]:
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < 8:
        raise HarnessError(f"{path}: not a tensor container")
    (n,) = struct.unpack("<Q", raw[:8])
    if 8 + n > len(raw):
        raise HarnessError(f"{path}: header length {n} exceeds file size")
    header = json.loads(raw[8 : 8 + n].decode("utf-8"))
    metadata = header.pop("__metadata__", {})
    payload = raw[8 + n :]
    tensors = {}
    for name, spec in header.items():
        dt = DTYPES.get(spec["dtype"])
        if dt is None:
            raise HarnessError(f"{path}: tensor {name!r} has unsupported dtype")
        begin, end = spec["data_offsets"]
        if end > len(payload):
            raise HarnessError(f"{path}: tensor {name!r} truncated")
        arr = np.frombuffer(payload, dtype=dt, count=(end - begin) // dt.itemsize, offset=begin)
        tensors[name] = arr.reshape(spec["shape"]).copy()
    return tensors, metadata


def write_container(path, tensors: dict[str, np.ndarray], metadata: dict[str, str]) -> None:
    header: dict = {"__metadata__": {str(k): str(v) for k, v in metadata.items()}}
    offset = 0
    names = sorted(tensors)
    for name in names:
        arr = np.ascontiguousarray(tensors[name])
        kind = "F32" if arr.dtype == np.dtype("<f4") else "I32"
        nbytes = arr.size * arr.dtype.itemsize
        header[name] = {
            "dtype": kind,
            "shape": [int(d) for d in arr.shape],
            "data_offsets": [offset, offset + nbytes],
        }
        offset += nbytes
    blob = json.dumps(header, ensure_ascii=False, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as f:
        f.write(struct.pack("<Q", len(blob)))
        f.write(blob)
        for name in names:
            np.ascontiguousarray(tensors[name]).tofile(f)


# ---------------------------------------------------------------------------
# Unigram tokenizer model: pieces with log-prob scores, Viterbi decoding.


class Tokenizer:
    def __init__(self, doc: dict):
        if doc.get("version") != 1:
            raise HarnessError(f"unsupported tokenizer version {doc.get('version')!r}")
        self.boundary = doc.get("boundary", "▁")
        self.pieces = [(p, float(s), k) for p, s, k in doc["pieces"]]
        self.special = doc["special"]
        self.unk_id = self.special["unk"]
        self.bos_id = self.special["bos"]
        self.eos_id = self.special["eos"]
        self.pad_id = self.special["pad"]
        self.mask_id = self.special["mask"]
        self._index = {
            p: (i, s) for i, (p, s, k) in enumerate(self.pieces) if k == "normal"
        }
        self._max_len = max((len(p) for p in self._index), default=0)

    @classmethod
    def load(cls, path) -> "Tokenizer":
        return cls(json.loads(Path(path).read_text(encoding="utf-8")))

    def encode(self, text: str) -> list[int]:
        """Maximum-score segmentation with unknown runs collapsing to one
        unk id each (enough fidelity for featurizing labeled data)."""
        s = self._normalize(text)
        n = len(s)
        # (unk_chars, score) per suffix, minimizing unks then maximizing score
        best = [(0, 0.0)] * (n + 1)
        for i in range(n - 1, -1, -1):
            cand = (best[i + 1][0] + 1, best[i + 1][1])
            for L in range(1, min(self._max_len, n - i) + 1):
                hit = self._index.get(s[i : i + L])
                if hit is not None:
                    u, sc = best[i + L]
                    if (u, -(hit[1] + sc)) < (cand[0], -cand[1]):
                        cand = (u, hit[1] + sc)
            best[i] = cand
        ids: list[int] = []
        i = 0
        in_unk = False
        while i < n:
            step = None
            for L in range(min(self._max_len, n - i), 0, -1):
                hit = self._index.get(s[i : i + L])
                if hit is not None:
                    u, sc = best[i + L]
                    if (u, hit[1] + sc) == best[i]:
                        step = (L, hit[0])
                        break
            if step is None:
                if not in_unk:
                    ids.append(self.unk_id)
                    in_unk = True
                i += 1
            else:
                ids.append(step[1])
                i += step[0]
                in_unk = False
        return ids

    def _normalize(self, text: str) -> str:
        parts = []
        in_ws = False
        for ch in text:
            if ch.isspace():
                in_ws = True
                continue
            if in_ws:
                parts.append(self.boundary)
                in_ws = False
            parts.append(ch)
        if in_ws:
            parts.append(self.boundary)
        s = "".join(parts)
        if s and not s.startswith(self.boundary):
            s = self.boundary + s
        return s


# ---------------------------------------------------------------------------
# Manifests and labeled data


def load_adapt_manifest(path) -> dict:
    path = Path(path)
    doc = json.loads(path.read_text(encoding="utf-8"))
    for key in ("adapt", "artifacts"):
        if key not in doc:
            raise HarnessError(f"{path}: adaptation manifest lacks {key!r}")
    base = path.parent
    doc["artifacts"] = {
        role: str(p if Path(p).is_absolute() else base / p)
        for role, p in doc["artifacts"].items()
    }
    return doc


def manifest_languages(corpus_manifest_path) -> set[str]:
    doc = json.loads(Path(corpus_manifest_path).read_text(encoding="utf-8"))
    return {s["language"] for s in doc.get("shards", [])}


def read_labeled_tsv(path) -> list[tuple[str, str]]:
    """(label, text) rows of a `label<TAB>text` file."""
    rows = []
    for i, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines()):
        if not line:
            continue
        if "\t" not in line:
            raise HarnessError(f"{path}: line {i + 1} has no tab separator")
        label, text = line.split("\t", 1)
        rows.append((label, text))
    return rows


def read_conll(path) -> list[list[tuple[str, str]]]:
    """Sentences of (token, tag) pairs; blank lines separate sentences."""
    sentences: list[list[tuple[str, str]]] = []
    current: list[tuple[str, str]] = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if not line.strip():
            if current:
                sentences.append(current)
                current = []
            continue
        parts = line.split("\t") if "\t" in line else line.split()
        if len(parts) < 2:
            raise HarnessError(f"{path}: CoNLL line needs token and tag: {line!r}")
        current.append((parts[0], parts[-1]))
    if current:
        sentences.append(current)
    return sentences
