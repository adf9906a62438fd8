"""Shared helpers and independent oracles.

The segmentation oracle here enumerates every way to split a string into
vocabulary pieces and single unknown characters, then picks the winner by
the documented rule (fewest unknown characters, then highest total score,
then longest-first-piece / lowest-id). It shares no code with the encoder
it checks.
"""

import json
import random
import struct

import numpy as np

from vocabslim import cli, container
from vocabslim.tokenizer import UnigramModel

B = "\u2581"


# ---------------------------------------------------------------------------
# Brute-force segmentation oracle


def _enumerate_units(s, piece_index, i=0):
    """Yield every full-cover unit sequence. Units are
    ("piece", id, string, score) or ("unk", position)."""
    if i == len(s):
        yield []
        return
    for L in range(1, len(s) - i + 1):
        sub = s[i : i + L]
        if sub in piece_index:
            pid, score = piece_index[sub]
            for rest in _enumerate_units(s, piece_index, i + L):
                yield [("piece", pid, sub, score)] + rest
    for rest in _enumerate_units(s, piece_index, i + 1):
        yield [("unk", i)] + rest


def _seq_stats(units):
    unk_chars = sum(1 for u in units if u[0] == "unk")
    score = 0.0
    for u in reversed(units):  # right fold, matching incremental DP sums
        if u[0] == "piece":
            score = u[3] + score
    return unk_chars, score


def _prefer(a, b):
    """Return the preferred of two unit sequences with equal (unk, score)."""
    for ua, ub in zip(a, b):
        if ua == ub:
            continue
        if ua[0] != ub[0]:
            return a if ua[0] == "piece" else b
        if ua[0] == "piece":
            if len(ua[2]) != len(ub[2]):
                return a if len(ua[2]) > len(ub[2]) else b
            return a if ua[1] < ub[1] else b
        return a  # same-position unks are equal; unreachable
    return a


def brute_force_segment(s, piece_index):
    """Optimal segmentation of ``s`` over ``piece_index`` (string -> (id,
    score)), as (ids, unk_char_count, score) with one unk id (-1) per
    maximal unknown run."""
    best = None
    best_key = None
    for units in _enumerate_units(s, piece_index):
        key = _seq_stats(units)
        cmp_key = (key[0], -key[1])
        if best is None or cmp_key < best_key:
            best, best_key = units, cmp_key
        elif cmp_key == best_key:
            best = _prefer(best, units)
    ids = []
    in_unk = False
    for u in best:
        if u[0] == "unk":
            if not in_unk:
                ids.append(-1)
                in_unk = True
        else:
            ids.append(u[1])
            in_unk = False
    return ids, best_key[0], -best_key[1]


def piece_index_of(model):
    """The oracle's view of a model: normal pieces only."""
    return {
        p.piece: (i, p.score)
        for i, p in enumerate(model.pieces)
        if p.kind == "normal"
    }


def random_toy_model(rng, max_pieces=20, alphabet="abc"):
    """A small random unigram model over a tiny alphabet, with boundary
    pieces mixed in so normalized text is exercised."""
    pieces = set()
    n = rng.randint(3, max_pieces)
    while len(pieces) < n:
        length = rng.randint(1, 4)
        s = "".join(rng.choice(alphabet) for _ in range(length))
        if rng.random() < 0.4:
            s = "▁" + s[: max(1, length - 1)]
        pieces.add(s)
    if rng.random() < 0.5:
        pieces.add("▁")
    return UnigramModel.with_default_specials(
        [(p, round(rng.uniform(-8.0, -0.5), 3)) for p in sorted(pieces)]
    )


def scrub_timestamps(data: bytes, suffix: str) -> bytes:
    """Drop the documented timestamp locations from an artifact so reruns
    can be compared byte-for-byte."""
    if suffix == ".json":
        doc = json.loads(data.decode("utf-8"))
        doc.pop("created_at", None)
        if isinstance(doc.get("header"), dict):
            doc["header"].pop("created_at", None)
        return json.dumps(doc, sort_keys=True).encode("utf-8")
    if suffix == ".vsc":  # tensor container: timestamp sits in metadata
        n = struct.unpack("<Q", data[:8])[0]
        header = json.loads(data[8 : 8 + n].decode("utf-8"))
        header.get("__metadata__", {}).pop("created_at", None)
        return json.dumps(header, sort_keys=True).encode("utf-8") + data[8 + n :]
    return data


def rng_for(name: str) -> random.Random:
    return random.Random(f"vocabslim-tests:{name}")


# ---------------------------------------------------------------------------
# Desk-scale CLI pipeline fixture, shared by the CLI and acceptance suites


def run(argv):
    return cli.main(argv)


def build_desk_fixture(tmp_path):
    """Desk-scale pipeline fixture: a tokenizer covering two script
    groups, a corpus per group, and a small tied checkpoint."""
    latin_pieces = [(c, -2.0) for c in "abcd"] + [(f"{B}{c}", -1.5) for c in "abcd"]
    geez_pieces = [(c, -2.2) for c in "wxyz"] + [(f"{B}{c}", -1.7) for c in "wxyz"]
    model = UnigramModel.with_default_specials(
        [(B, -3.0)] + latin_pieces + geez_pieces
    )
    model_path = tmp_path / "tok.json"
    model.save(model_path)

    latin = tmp_path / "latin.raw"
    latin.write_text(
        "\n".join(["ab cd ab cd ab cd", "a b c d a b", "abcd abcd dcba abc ab a"] * 5) + "\n",
        encoding="utf-8",
    )
    geez = tmp_path / "geez.raw"
    geez.write_text(
        "\n".join(["wx yz wx yz wx yz", "w x y z w x"] * 3) + "\n", encoding="utf-8"
    )

    vocab = len(model.pieces)
    rng = np.random.default_rng(7)
    ckpt_path = tmp_path / "model.vsc"
    container.save(
        ckpt_path,
        {
            "emb": rng.standard_normal((vocab, 8)).astype("<f4"),
            "layer.w": rng.standard_normal((8, 8)).astype("<f4"),
        },
        {
            "embedding_tensor": "emb",
            "vocab_size": str(vocab),
            "hidden_dim": "8",
            "tied": "true",
        },
    )
    return {"model": model_path, "latin": latin, "geez": geez, "ckpt": ckpt_path, "dir": tmp_path}


def pipeline(desk, out_dir, seed=11):
    """Run every CLI stage into out_dir; returns the artifact paths."""
    out = out_dir
    out.mkdir(parents=True, exist_ok=True)
    a = {}
    assert run([
        "clean",
        "--shard", f"lat=latin={desk['latin']}",
        "--shard", f"gz=geez={desk['geez']}",
        "--out-dir", str(out / "clean"),
        "--min-tokens", "2",
        "--manifest", str(out / "clean" / "manifest.json"),
    ]) == 0
    a["manifest"] = out / "clean" / "manifest.json"
    for group in ("latin", "geez"):
        assert run([
            "count",
            "--model", str(desk["model"]),
            "--group", group,
            "--manifest", str(a["manifest"]),
            "--output", str(out / f"freq-{group}.tsv"),
        ]) == 0
        a[f"freq-{group}"] = out / f"freq-{group}.tsv"
    assert run([
        "select",
        "--model", str(desk["model"]),
        "--strategy", "per-group",
        "--freq", f"latin={a['freq-latin']}",
        "--freq", f"geez={a['freq-geez']}",
        "--k", "latin=6", "--k", "geez=4",
        "--original-topn", "2",
        "--output", str(out / "selection.json"),
    ]) == 0
    a["selection"] = out / "selection.json"
    assert run([
        "prune-tokenizer",
        "--model", str(desk["model"]),
        "--selection", str(a["selection"]),
        "--output", str(out / "tok-pruned.json"),
        "--remap", str(out / "remap.tsv"),
    ]) == 0
    a["tok-pruned"] = out / "tok-pruned.json"
    a["remap"] = out / "remap.tsv"
    assert run([
        "prune-model",
        "--checkpoint", str(desk["ckpt"]),
        "--selection", str(a["selection"]),
        "--output", str(out / "model-pruned.vsc"),
        "--remap", str(a["remap"]),
        "--report", str(out / "size.json"),
    ]) == 0
    a["model-pruned"] = out / "model-pruned.vsc"
    a["size"] = out / "size.json"
    assert run([
        "mask",
        "--corpus", str(out / "clean" / "latin.txt"),
        "--model", str(a["tok-pruned"]),
        "--seed", str(seed),
        "--max-seq-len", "16",
        "--output", str(out / "batches.vsc"),
        "--emit-manifest", str(out / "adapt.json"),
        "--corpus-manifest", str(a["manifest"]),
        "--checkpoint", str(a["model-pruned"]),
        "--selection", str(a["selection"]),
    ]) == 0
    a["batches"] = out / "batches.vsc"
    a["adapt"] = out / "adapt.json"
    assert run([
        "report-unk",
        "--tokenizer", f"full={desk['model']}",
        "--tokenizer", f"pruned={a['tok-pruned']}",
        "--dataset", f"latin={out / 'clean' / 'latin.txt'}",
        "--dataset", f"geez={out / 'clean' / 'geez.txt'}",
        "--output", str(out / "unk.json"),
        "--text", str(out / "unk.txt"),
    ]) == 0
    a["unk"] = out / "unk.json"
    a["unk-text"] = out / "unk.txt"
    assert run([
        "report-coverage",
        "--selection", str(a["selection"]),
        "--freq", f"latin={a['freq-latin']}",
        "--freq", f"geez={a['freq-geez']}",
        "--model", str(desk["model"]),
        "--output", str(out / "coverage.json"),
    ]) == 0
    a["coverage"] = out / "coverage.json"
    assert run([
        "report-size",
        "--before", str(desk["ckpt"]),
        "--after", str(a["model-pruned"]),
        "--output", str(out / "size2.json"),
    ]) == 0
    a["size2"] = out / "size2.json"
    return a
