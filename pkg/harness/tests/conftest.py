"""Session fixture: the full prepared-artifact set (see prep.py)."""

import pytest

from prep import make_corpus, vocabslim, write_checkpoint, write_tokenizer


@pytest.fixture(scope="session")
def prepared(tmp_path_factory):
    """Full artifact set: cleaned corpora in two languages, a pruned
    tokenizer and checkpoint, masked batches, and the adaptation manifest."""
    root = tmp_path_factory.mktemp("prepared")
    tok = root / "tokenizer.json"
    vocab = write_tokenizer(tok)
    ckpt = root / "model.vsc"
    write_checkpoint(ckpt, vocab)

    make_corpus(root / "lat.raw", "abcdefghij", seed=1)
    make_corpus(root / "gz.raw", "wxyz", lines=30, seed=2)
    vocabslim(
        "clean",
        "--shard", f"lat=latin={root / 'lat.raw'}",
        "--shard", f"gz=geez={root / 'gz.raw'}",
        "--out-dir", root / "clean", "--min-tokens", "2",
        "--manifest", root / "clean" / "manifest.json",
    )
    for group in ("latin", "geez"):
        vocabslim(
            "count", "--model", tok, "--group", group,
            "--manifest", root / "clean" / "manifest.json",
            "--output", root / f"freq-{group}.tsv",
        )
    vocabslim(
        "select", "--model", tok, "--strategy", "per-group",
        "--freq", f"latin={root / 'freq-latin.tsv'}",
        "--freq", f"geez={root / 'freq-geez.tsv'}",
        "--k", "latin=16", "--k", "geez=8", "--original-topn", "2",
        "--output", root / "selection.json",
    )
    vocabslim(
        "prune-tokenizer", "--model", tok,
        "--selection", root / "selection.json",
        "--output", root / "tokenizer-pruned.json",
        "--remap", root / "remap.tsv",
    )
    vocabslim(
        "prune-model", "--checkpoint", ckpt,
        "--selection", root / "selection.json",
        "--output", root / "model-pruned.vsc",
    )
    vocabslim(
        "mask",
        "--corpus", root / "clean" / "lat.txt",
        "--corpus", root / "clean" / "gz.txt",
        "--model", root / "tokenizer-pruned.json",
        "--seed", "17", "--max-seq-len", "16",
        "--output", root / "batches.vsc",
        "--emit-manifest", root / "adapt.json",
        "--corpus-manifest", root / "clean" / "manifest.json",
        "--checkpoint", root / "model-pruned.vsc",
        "--selection", root / "selection.json",
    )
    return {
        "root": root,
        "tokenizer": tok,
        "tokenizer_pruned": root / "tokenizer-pruned.json",
        "checkpoint": ckpt,
        "checkpoint_pruned": root / "model-pruned.vsc",
        "selection": root / "selection.json",
        "manifest": root / "adapt.json",
        "batches": root / "batches.vsc",
        "corpus_manifest": root / "clean" / "manifest.json",
    }
