"""Masked-LM adaptation runs and downstream fine-tuning smoke tests.

The CI path always targets a small randomly initialized model with the
architecture the container declares; pointing the harness at a real
full-size checkpoint is the same code path, just a bigger file. Primary
artifacts are only ever read, never written.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from torch import nn

from adaptharness import HarnessError
from adaptharness.formats import (
    Tokenizer,
    load_adapt_manifest,
    manifest_languages,
    read_container,
    read_conll,
    read_labeled_tsv,
)
from adaptharness.model import Encoder, EncoderConfig, convert_checkpoint

IGNORE = -100

# Fine-tuning presets: epochs per task, max sequence lengths 164/500/128,
# the lower 2e-5 rate for sentiment.
FINETUNE_PRESETS = {
    "ner": {"epochs": 50, "learning_rate": 5e-5, "max_seq_len": 164, "batch_size": 32},
    "topic": {"epochs": 25, "learning_rate": 5e-5, "max_seq_len": 500, "batch_size": 32},
    "sentiment": {"epochs": 20, "learning_rate": 2e-5, "max_seq_len": 128, "batch_size": 32},
}


@dataclass
class AdaptRun:
    """One adaptation job: the manifest to follow, the mode, and where the
    metrics JSON goes. Mode "maft" adapts on several languages at once (the
    manifest must cover at least two), "laft" specializes to exactly one,
    "none" skips the language check."""

    manifest: str
    mode: str  # maft | laft | none
    metrics_out: str

    def validate_languages(self, languages: set[str]) -> None:
        if self.mode == "laft" and len(languages) != 1:
            raise HarnessError(
                f"laft adapts one language but the manifest covers {sorted(languages)}"
            )
        if self.mode == "maft" and len(languages) < 2:
            raise HarnessError(
                f"maft needs at least two languages, manifest covers {sorted(languages)}"
            )
        if self.mode not in ("maft", "laft", "none"):
            raise HarnessError(f"unknown mode {self.mode!r}")


def _run_id(*parts) -> str:
    h = hashlib.sha256("\x1f".join(str(p) for p in parts).encode("utf-8"))
    return h.hexdigest()[:16]


def _write_metrics(path, doc: dict) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(
        json.dumps(doc, ensure_ascii=False, sort_keys=True, indent=2) + "\n",
        encoding="utf-8",
    )


def _eval_loss(model, batches) -> float:
    model.eval()
    total, n = 0.0, 0
    with torch.no_grad():
        for input_ids, attention, labels in batches:
            if not (labels != IGNORE).any():
                continue
            _, loss = model(input_ids, attention, labels)
            total += float(loss)
            n += 1
    if n == 0:
        raise HarnessError("no labeled positions in any batch")
    return total / n


def run_adaptation(
    run: AdaptRun,
    max_steps: int | None = None,
    batch_size: int | None = None,
    seed: int = 0,
) -> dict:
    """Train MLM on the manifest's masked batches with its hyper-parameters
    and record the loss trajectory. Non-finite loss aborts the run."""
    manifest = load_adapt_manifest(run.manifest)
    run.validate_languages(manifest_languages(manifest["artifacts"]["corpus_manifest"]))
    if "batches" not in manifest["artifacts"]:
        raise HarnessError("manifest declares no masked-batch artifact to train on")

    tensors, _ = read_container(manifest["artifacts"]["batches"])
    input_ids = torch.from_numpy(tensors["input_ids"].astype(np.int64))
    attention = torch.from_numpy(tensors["attention_mask"].astype(np.int64))
    labels = torch.from_numpy(tensors["labels"].astype(np.int64))

    torch.manual_seed(seed)
    model, _ = convert_checkpoint(manifest["artifacts"]["checkpoint"])

    adapt = manifest["adapt"]
    bs = batch_size or int(adapt.get("batch_size", 10))
    epochs = int(adapt.get("epochs", 3))
    batches = [
        (input_ids[i : i + bs], attention[i : i + bs], labels[i : i + bs])
        for i in range(0, input_ids.shape[0], bs)
    ]

    initial_loss = _eval_loss(model, batches)
    optimizer = torch.optim.Adam(model.parameters(), lr=float(adapt["learning_rate"]))
    losses: list[float] = []
    steps = 0
    budget = max_steps if max_steps is not None else epochs * len(batches)
    model.train()
    while steps < budget:
        for ids_b, att_b, lab_b in batches:
            if steps >= budget:
                break
            if not (lab_b != IGNORE).any():
                continue
            optimizer.zero_grad()
            _, loss = model(ids_b, att_b, lab_b)
            if not torch.isfinite(loss):
                raise HarnessError(f"loss diverged at step {steps}: {float(loss)}")
            loss.backward()
            optimizer.step()
            losses.append(float(loss.detach()))
            steps += 1
    final_loss = _eval_loss(model, batches)

    doc = {
        "run_id": _run_id(manifest.get("fingerprints"), run.mode, seed),
        "mode": run.mode,
        "initial_loss": initial_loss,
        "final_loss": final_loss,
        "steps": steps,
        "losses": losses,
        "task_metrics": {},
    }
    _write_metrics(run.metrics_out, doc)
    return doc


# ---------------------------------------------------------------------------
# Fine-tuning smoke tests


class SequenceClassifier(nn.Module):
    def __init__(self, cfg: EncoderConfig, n_labels: int):
        super().__init__()
        self.encoder = Encoder(cfg)
        self.head = nn.Linear(cfg.hidden_dim, n_labels)

    def forward(self, input_ids, attention_mask, labels=None):
        h = self.encoder(input_ids, attention_mask)
        mask = attention_mask[..., None].float()
        pooled = (h * mask).sum(1) / mask.sum(1).clamp(min=1.0)
        logits = self.head(pooled)
        loss = None
        if labels is not None:
            loss = torch.nn.functional.cross_entropy(logits, labels.long())
        return logits, loss


class TokenClassifier(nn.Module):
    def __init__(self, cfg: EncoderConfig, n_labels: int):
        super().__init__()
        self.encoder = Encoder(cfg)
        self.head = nn.Linear(cfg.hidden_dim, n_labels)

    def forward(self, input_ids, attention_mask, labels=None):
        logits = self.head(self.encoder(input_ids, attention_mask))
        loss = None
        if labels is not None:
            loss = torch.nn.functional.cross_entropy(
                logits.view(-1, logits.shape[-1]), labels.view(-1).long(), ignore_index=IGNORE
            )
        return logits, loss


def _pad_batchify(rows, pad_id, batch_size):
    batches = []
    for i in range(0, len(rows), batch_size):
        chunk = rows[i : i + batch_size]
        width = max(len(r[0]) for r in chunk)
        ids = torch.full((len(chunk), width), pad_id, dtype=torch.long)
        att = torch.zeros((len(chunk), width), dtype=torch.long)
        labs = (
            torch.full((len(chunk), width), IGNORE, dtype=torch.long)
            if isinstance(chunk[0][1], list)
            else torch.zeros(len(chunk), dtype=torch.long)
        )
        for j, (seq, lab) in enumerate(chunk):
            ids[j, : len(seq)] = torch.as_tensor(seq)
            att[j, : len(seq)] = 1
            if isinstance(lab, list):
                labs[j, : len(lab)] = torch.as_tensor(lab)
            else:
                labs[j] = lab
        batches.append((ids, att, labs))
    return batches


def _f1_macro(golds, preds, n_labels) -> float:
    scores = []
    for c in range(n_labels):
        tp = sum(1 for g, p in zip(golds, preds) if g == c and p == c)
        fp = sum(1 for g, p in zip(golds, preds) if g != c and p == c)
        fn = sum(1 for g, p in zip(golds, preds) if g == c and p != c)
        denom = 2 * tp + fp + fn
        scores.append(2 * tp / denom if denom else 0.0)
    return sum(scores) / n_labels


def _f1_tokens_non_o(golds, preds, o_id) -> float:
    tp = sum(1 for g, p in zip(golds, preds) if g == p and g != o_id)
    fp = sum(1 for g, p in zip(golds, preds) if p != o_id and g != p)
    fn = sum(1 for g, p in zip(golds, preds) if g != o_id and g != p)
    denom = 2 * tp + fp + fn
    return 2 * tp / denom if denom else 0.0


def _featurize_tsv(rows, tokenizer, label_ids, max_seq_len):
    out = []
    for label, text in rows:
        ids = tokenizer.encode(text)[: max_seq_len - 2]
        out.append(([tokenizer.bos_id] + ids + [tokenizer.eos_id], label_ids[label]))
    return out


def _featurize_conll(sentences, tokenizer, tag_ids, max_seq_len):
    out = []
    for sent in sentences:
        ids = [tokenizer.bos_id]
        labels = [IGNORE]
        for token, tag in sent:
            pieces = tokenizer.encode(token)
            if not pieces:
                continue
            ids.extend(pieces)
            labels.extend([tag_ids[tag]] + [IGNORE] * (len(pieces) - 1))
        ids = ids[: max_seq_len - 1] + [tokenizer.eos_id]
        labels = labels[: max_seq_len - 1] + [IGNORE]
        out.append((ids, labels))
    return out


def finetune_eval(
    task: str,
    checkpoint_path,
    tokenizer_path,
    train_path,
    eval_path,
    metrics_out,
    preset: dict | None = None,
    max_steps: int | None = None,
    seed: int = 0,
) -> dict:
    """Fine-tune the converted encoder on labeled data and report F1.

    ``task`` selects the preset and the data format: ner reads CoNLL and
    scores token-level F1 over non-O tags; topic and sentiment read the
    two-column TSV and score macro-F1.
    """
    if task not in FINETUNE_PRESETS:
        raise HarnessError(f"unknown task {task!r}")
    preset = dict(FINETUNE_PRESETS[task], **(preset or {}))
    tokenizer = Tokenizer.load(tokenizer_path)
    torch.manual_seed(seed)
    base, metadata = convert_checkpoint(checkpoint_path)
    cfg = EncoderConfig.from_metadata(metadata)

    if task == "ner":
        train_sents = read_conll(train_path)
        eval_sents = read_conll(eval_path)
        if not eval_sents:
            raise HarnessError("empty evaluation set")
        tags = sorted({t for s in train_sents for _, t in s})
        unseen = {t for s in eval_sents for _, t in s} - set(tags)
        if unseen:
            raise HarnessError(f"label-set mismatch: eval has unseen tags {sorted(unseen)}")
        tag_ids = {t: i for i, t in enumerate(tags)}
        train_rows = _featurize_conll(train_sents, tokenizer, tag_ids, preset["max_seq_len"])
        eval_rows = _featurize_conll(eval_sents, tokenizer, tag_ids, preset["max_seq_len"])
        model = TokenClassifier(cfg, len(tags))
    else:
        train_data = read_labeled_tsv(train_path)
        eval_data = read_labeled_tsv(eval_path)
        if not eval_data:
            raise HarnessError("empty evaluation set")
        labels = sorted({l for l, _ in train_data})
        unseen = {l for l, _ in eval_data} - set(labels)
        if unseen:
            raise HarnessError(f"label-set mismatch: eval has unseen labels {sorted(unseen)}")
        label_ids = {l: i for i, l in enumerate(labels)}
        train_rows = _featurize_tsv(train_data, tokenizer, label_ids, preset["max_seq_len"])
        eval_rows = _featurize_tsv(eval_data, tokenizer, label_ids, preset["max_seq_len"])
        model = SequenceClassifier(cfg, len(labels))

    model.encoder.load_state_dict(base.encoder.state_dict())
    optimizer = torch.optim.Adam(model.parameters(), lr=float(preset["learning_rate"]))
    train_batches = _pad_batchify(train_rows, tokenizer.pad_id, int(preset["batch_size"]))
    budget = max_steps if max_steps is not None else int(preset["epochs"]) * len(train_batches)

    losses = []
    steps = 0
    model.train()
    while steps < budget:
        for ids, att, labs in train_batches:
            if steps >= budget:
                break
            optimizer.zero_grad()
            _, loss = model(ids, att, labs)
            if not torch.isfinite(loss):
                raise HarnessError(f"loss diverged at step {steps}")
            loss.backward()
            optimizer.step()
            losses.append(float(loss.detach()))
            steps += 1

    model.eval()
    golds, preds = [], []
    with torch.no_grad():
        for ids, att, labs in _pad_batchify(eval_rows, tokenizer.pad_id, int(preset["batch_size"])):
            logits, _ = model(ids, att)
            pred = logits.argmax(-1)
            if task == "ner":
                keep = labs != IGNORE
                golds.extend(labs[keep].tolist())
                preds.extend(pred[keep].tolist())
            else:
                golds.extend(labs.tolist())
                preds.extend(pred.tolist())

    if task == "ner":
        o_id = tag_ids.get("O", -1)
        f1 = _f1_tokens_non_o(golds, preds, o_id)
    else:
        f1 = _f1_macro(golds, preds, len(labels))

    doc = {
        "run_id": _run_id(task, str(checkpoint_path), seed, budget),
        "mode": f"finetune:{task}",
        "losses": losses,
        "steps": steps,
        "task_metrics": {"f1": f1, "preset": preset},
    }
    _write_metrics(metrics_out, doc)
    return doc
