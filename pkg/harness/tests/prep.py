"""Fixture builders: artifacts produced by the asset-preparation CLI.

The harness owns no artifact producers, so tests write raw-format files
(tokenizer JSON, checkpoint container, corpora) and drive the `vocabslim`
command line to clean, select, prune, and mask, exactly as a user would.
"""

import json
import subprocess
import sys

import numpy as np

from adaptharness.formats import write_container

B = "▁"


def vocabslim(*argv):
    proc = subprocess.run(
        [sys.executable, "-m", "vocabslim.cli", *map(str, argv)],
        capture_output=True,
        text=True,
    )
    assert proc.returncode == 0, f"vocabslim {argv[0]} failed:\n{proc.stderr}"
    return proc.stdout


def write_tokenizer(path, letters="abcdefghij wxyz"):
    groups = letters.split()
    pieces = [["<unk>", 0.0, "special"], ["<s>", 0.0, "special"],
              ["</s>", 0.0, "special"], ["<pad>", 0.0, "special"],
              ["<mask>", 0.0, "special"]]
    for chars in groups:
        for c in chars:
            pieces.append([c, -2.0, "normal"])
            pieces.append([f"{B}{c}", -1.5, "normal"])
    doc = {
        "version": 1,
        "boundary": B,
        "normalization": "none",
        "pieces": pieces,
        "special": {"unk": 0, "bos": 1, "eos": 2, "pad": 3, "mask": 4},
    }
    path.write_text(json.dumps(doc, ensure_ascii=False, sort_keys=True) + "\n", encoding="utf-8")
    return len(pieces)


def write_checkpoint(path, vocab, dim=32, layers=2, heads=4, ffn=64, max_pos=64, seed=0):
    rng = np.random.default_rng(seed)
    scale = 0.05
    tensors = {
        "embeddings.word.weight": (rng.standard_normal((vocab, dim)) * scale).astype("<f4"),
        "embeddings.position.weight": (rng.standard_normal((max_pos, dim)) * scale).astype("<f4"),
        "embeddings.norm.weight": np.ones(dim, dtype="<f4"),
        "embeddings.norm.bias": np.zeros(dim, dtype="<f4"),
    }
    for i in range(layers):
        pre = f"layers.{i}."
        for name in ("attn.q", "attn.k", "attn.v", "attn.out"):
            tensors[pre + name + ".weight"] = (rng.standard_normal((dim, dim)) * scale).astype("<f4")
            tensors[pre + name + ".bias"] = np.zeros(dim, dtype="<f4")
        tensors[pre + "ffn.fc1.weight"] = (rng.standard_normal((ffn, dim)) * scale).astype("<f4")
        tensors[pre + "ffn.fc1.bias"] = np.zeros(ffn, dtype="<f4")
        tensors[pre + "ffn.fc2.weight"] = (rng.standard_normal((dim, ffn)) * scale).astype("<f4")
        tensors[pre + "ffn.fc2.bias"] = np.zeros(dim, dtype="<f4")
        for norm in ("norm1", "norm2"):
            tensors[pre + norm + ".weight"] = np.ones(dim, dtype="<f4")
            tensors[pre + norm + ".bias"] = np.zeros(dim, dtype="<f4")
    metadata = {
        "embedding_tensor": "embeddings.word.weight",
        "vocab_size": str(vocab),
        "hidden_dim": str(dim),
        "num_layers": str(layers),
        "num_heads": str(heads),
        "ffn_dim": str(ffn),
        "max_positions": str(max_pos),
        "tied": "true",
    }
    write_container(path, tensors, metadata)
    return metadata


def make_corpus(path, letters, lines=60, words_per_line=8, seed=0):
    rng = np.random.default_rng(seed)
    rows = []
    for _ in range(lines):
        words = [
            "".join(rng.choice(list(letters), size=rng.integers(1, 4)))
            for _ in range(words_per_line)
        ]
        rows.append(" ".join(words))
    path.write_text("\n".join(rows) + "\n", encoding="utf-8")
