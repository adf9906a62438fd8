"""Command-line pipeline driver.

One binary with subcommands: clean, split, count, select, prune-tokenizer,
prune-model, mask, report-unk, report-coverage, report-size. Stages read
and write only their declared artifacts; every artifact carries the
fingerprints of its inputs so later stages refuse mismatched compositions.

Exit codes: 0 success, 2 usage error, 3 validation error, 4 I/O error,
5 artifact mismatch. Stochastic stages (split, mask) require an explicit
--seed. VOCABSLIM_OUT_DIR and VOCABSLIM_THREADS provide environment
defaults for the output directory and the worker cap.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from vocabslim import corpus, mlmdata, report, surgery, tokenizer, vocabselect
from vocabslim.errors import ArtifactMismatchError, ValidationError, VocabslimError

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_VALIDATION = 3
EXIT_IO = 4
EXIT_MISMATCH = 5


def _env_threads() -> int | None:
    raw = os.environ.get("VOCABSLIM_THREADS")
    return int(raw) if raw else None


def _out_dir(value: str | None) -> Path:
    if value:
        return Path(value)
    env = os.environ.get("VOCABSLIM_OUT_DIR")
    if env:
        return Path(env)
    raise ValidationError("no output directory: pass --out-dir or set VOCABSLIM_OUT_DIR")


def _load_config(path: str | None) -> dict:
    if not path:
        return {}
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise ValidationError(f"config file {path} is not valid JSON: {e}") from e
    if not isinstance(doc, dict):
        raise ValidationError(f"config file {path} must hold a JSON object")
    return doc


def _resolve(args, config: dict, key: str, default=None):
    """Flag value if given, else config file value, else the default."""
    value = getattr(args, key, None)
    if value is not None:
        return value
    if key in config:
        return config[key]
    return default


def _parse_kv(pairs: list[str], what: str) -> dict[str, str]:
    out = {}
    for item in pairs:
        key, sep, value = item.partition("=")
        if not sep or not key:
            raise ValidationError(f"{what} must look like name=value, got {item!r}")
        out[key] = value
    return out


def _parse_fractions(raw, what: str, n: int = 3) -> tuple[float, ...]:
    """Accept "0.7,0.1,0.2" from a flag or [0.7, 0.1, 0.2] from a config."""
    parts = list(raw) if isinstance(raw, (list, tuple)) else [
        p for p in str(raw).split(",") if p != ""
    ]
    if len(parts) != n:
        raise ValidationError(f"{what} needs {n} comma-separated numbers, got {raw!r}")
    return tuple(float(p) for p in parts)


# ---------------------------------------------------------------------------
# Subcommand implementations


def cmd_clean(args) -> int:
    config = _load_config(args.config)
    min_tokens = int(_resolve(args, config, "min_tokens", corpus.DEFAULT_MIN_TOKENS))
    threads = _resolve(args, config, "threads", _env_threads())
    out_dir = _out_dir(_resolve(args, config, "out_dir"))

    specs = []
    for spec in args.shard:
        parts = spec.split("=", 2)
        if len(parts) != 3:
            raise ValidationError(f"--shard must look like lang=group=path, got {spec!r}")
        lang, group, path = parts
        specs.append((lang, group, Path(path)))
    manifest, stats = corpus.clean_shards(specs, out_dir, min_tokens, threads)
    manifest_path = Path(args.manifest) if args.manifest else out_dir / "manifest.json"
    manifest.save(manifest_path)
    print(
        f"lines_in={stats.lines_in} lines_kept={stats.lines_kept} "
        f"bytes_kept={stats.bytes_kept} manifest={manifest_path}"
    )
    return EXIT_OK


def cmd_split(args) -> int:
    config = _load_config(args.config)
    seed = _resolve(args, config, "seed")
    if seed is None:
        raise ValidationError("split is stochastic: --seed is required, no silent default")
    ratios = _parse_fractions(_resolve(args, config, "ratios", "0.7,0.1,0.2"), "--ratios")
    out_dir = _out_dir(_resolve(args, config, "out_dir"))
    min_class = int(_resolve(args, config, "min_class_size", 0))
    sep = _resolve(args, config, "multi_label_sep")

    if sep:
        items = corpus.read_labeled_tsv(args.input, multi_label_sep=sep)
        examples = corpus.filter_multilabel(items)
    else:
        examples = corpus.read_labeled_tsv(args.input)
    dropped: set = set()
    if min_class > 0:
        examples, dropped = corpus.enforce_min_class_size(examples, min_class)
    train, dev, test = corpus.stratified_split(examples, ratios, int(seed))
    out_dir.mkdir(parents=True, exist_ok=True)
    corpus.write_labeled_tsv(train, out_dir / "train.tsv")
    corpus.write_labeled_tsv(dev, out_dir / "dev.tsv")
    corpus.write_labeled_tsv(test, out_dir / "test.tsv")
    print(
        f"train={len(train)} dev={len(dev)} test={len(test)} "
        f"dropped_classes={sorted(dropped)}"
    )
    return EXIT_OK


def cmd_count(args) -> int:
    config = _load_config(args.config)
    threads = _resolve(args, config, "threads", _env_threads())
    model = tokenizer.UnigramModel.load(args.model)

    shards = [Path(p) for p in args.shard]
    if args.manifest:
        manifest = corpus.CorpusManifest.load(args.manifest)
        manifest.validate(check_files=True)
        shards += [Path(s.path) for s in manifest.shards_for_group(args.group)]
    if not shards:
        raise ValidationError(f"no shards given for group {args.group!r}")
    table = vocabselect.count_shards(shards, model, args.group, threads, args.unk_granularity)
    table.save(args.output, model)
    print(f"group={args.group} total_tokens={table.total} output={args.output}")
    return EXIT_OK


def cmd_select(args) -> int:
    config = _load_config(args.config)
    model = tokenizer.UnigramModel.load(args.model)
    freq_paths = _parse_kv(args.freq, "--freq")
    tables = {g: vocabselect.FreqTable.load(p) for g, p in sorted(freq_paths.items())}

    topn = int(_resolve(args, config, "original_topn", 0))
    if args.original_freq:
        orig_table = vocabselect.FreqTable.load(args.original_freq)
        if orig_table.tokenizer_fingerprint != model.fingerprint():
            raise ArtifactMismatchError(
                "--original-freq was built with a different tokenizer"
            )
        topn_ids = vocabselect.original_top_ids(model, topn, orig_table)
    else:
        topn_ids = vocabselect.original_top_ids(model, topn)

    if args.strategy == "pooled":
        if len(args.k) != 1 or "=" in args.k[0]:
            raise ValidationError("pooled strategy takes exactly one plain --k value")
        selection = vocabselect.select_strategy(
            tables, "pooled", model, k=int(args.k[0]), original_topn_ids=topn_ids
        )
    else:
        k_per_group = {g: int(v) for g, v in _parse_kv(args.k, "--k").items()}
        selection = vocabselect.select_strategy(
            tables, "per_group", model, k_per_group=k_per_group, original_topn_ids=topn_ids
        )
    selection.save(args.output)
    cov = " ".join(f"{g}={c:.4f}" for g, c in selection.achieved_coverage.items())
    print(f"keep={len(selection.keep_ids)} coverage: {cov} output={args.output}")
    return EXIT_OK


def cmd_prune_tokenizer(args) -> int:
    model = tokenizer.UnigramModel.load(args.model)
    selection = vocabselect.VocabSelection.load(args.selection)
    if selection.tokenizer_fingerprint != model.fingerprint():
        raise ArtifactMismatchError(
            "selection was computed for a different tokenizer "
            f"({selection.tokenizer_fingerprint[:12]} vs {model.fingerprint()[:12]})"
        )
    pruned, remap = tokenizer.prune(model, selection.keep_ids)
    pruned.save(args.output)
    if args.remap:
        tokenizer.write_remap(remap, args.remap)
    print(f"pieces={len(model.pieces)} -> {len(pruned.pieces)} output={args.output}")
    return EXIT_OK


def cmd_prune_model(args) -> int:
    ckpt = surgery.load_checkpoint(args.checkpoint)
    selection = vocabselect.VocabSelection.load(args.selection)
    if selection.vocab_size != ckpt.tensors[ckpt.embedding_name].shape[0]:
        raise ArtifactMismatchError(
            f"selection is for vocab size {selection.vocab_size} but the checkpoint "
            f"embedding has {ckpt.tensors[ckpt.embedding_name].shape[0]} rows"
        )
    keep = sorted(set(selection.keep_ids))
    plan = surgery.plan_for(ckpt, keep)
    if args.remap:
        expected = tokenizer.read_remap(args.remap)
        if expected != plan.remap:
            raise ArtifactMismatchError(
                f"remap table {args.remap} disagrees with the selection-derived remap"
            )
    pruned = surgery.prune_embeddings(ckpt, plan)
    surgery.save_checkpoint(pruned, args.output)
    rep = surgery.size_report(ckpt, surgery.load_checkpoint(args.output))
    if args.report:
        report.save_json_report(rep, args.report)
    print(
        f"params {rep['params_before']} -> {rep['params_after']} "
        f"reduction={rep['reduction_fraction']:.4f} output={args.output}"
    )
    return EXIT_OK


def cmd_mask(args) -> int:
    config = _load_config(args.config)
    seed = _resolve(args, config, "seed")
    if seed is None:
        raise ValidationError("mask is stochastic: --seed is required, no silent default")
    model = tokenizer.UnigramModel.load(args.model)
    adapt = mlmdata.AdaptConfig(
        max_seq_len=int(_resolve(args, config, "max_seq_len", 256)),
        mask_rate=float(_resolve(args, config, "mask_rate", 0.15)),
        mask_split=_parse_fractions(
            _resolve(args, config, "mask_split", "0.8,0.1,0.1"), "--mask-split"
        ),
    )
    adapt.validate()

    chunks: list[list[int]] = []
    for path in args.corpus:
        def tokens(p=path):
            for line in corpus.iter_lines_strict(p):
                yield from tokenizer.encode(line.rstrip("\n"), model).ids
        chunks.extend(
            mlmdata.chunk_corpus(tokens(), adapt.max_seq_len, model.bos_id, model.eos_id)
        )
    if not chunks:
        raise ValidationError("corpus produced no chunks to mask")
    threads = _resolve(args, config, "threads", _env_threads())
    batch = mlmdata.mask_batch_sharded(chunks, adapt, int(seed), model, threads)
    batch.save(
        args.output,
        {
            "seed": str(seed),
            "mask_rate": str(adapt.mask_rate),
            "tokenizer_fingerprint": model.fingerprint(),
        },
    )
    n_sel = int((batch.labels != mlmdata.IGNORE_INDEX).sum())
    print(f"sequences={batch.input_ids.shape[0]} selected_positions={n_sel} output={args.output}")

    if args.emit_manifest:
        if not (args.corpus_manifest and args.checkpoint):
            raise ValidationError(
                "--emit-manifest needs --corpus-manifest and --checkpoint references"
            )
        mlmdata.emit_manifest(
            adapt,
            args.corpus_manifest,
            args.model,
            args.checkpoint,
            args.emit_manifest,
            selection_path=args.selection,
            batch_path=args.output,
            seed=int(seed),
        )
        print(f"manifest={args.emit_manifest}")
    return EXIT_OK


def cmd_report_unk(args) -> int:
    tokenizers = [(name, path) for name, path in _parse_kv(args.tokenizer, "--tokenizer").items()]
    datasets = [(name, path) for name, path in _parse_kv(args.dataset, "--dataset").items()]
    rep = report.unk_report(tokenizers, datasets, args.unk_granularity)
    rep.save(args.output)
    text = report.render_unk_table(rep)
    if args.text:
        Path(args.text).write_text(text, encoding="utf-8")
    sys.stdout.write(text)
    return EXIT_OK


def cmd_report_coverage(args) -> int:
    selection = vocabselect.VocabSelection.load(args.selection)
    tables = {g: vocabselect.FreqTable.load(p) for g, p in _parse_kv(args.freq, "--freq").items()}
    targets = tuple(float(t) for t in args.targets.split(","))
    unk_id = None
    if args.model:
        unk_id = tokenizer.UnigramModel.load(args.model).unk_id
    doc = report.coverage_report(selection, tables, targets, unk_id=unk_id)
    report.save_json_report(doc, args.output)
    for g, info in doc["groups"].items():
        print(f"{g}: coverage={info['achieved_coverage']:.4f}")
    return EXIT_OK


def cmd_report_size(args) -> int:
    before = surgery.load_checkpoint(args.before)
    after = surgery.load_checkpoint(args.after)
    rep = surgery.size_report(before, after)
    report.save_json_report(rep, args.output)
    print(
        f"params_before={rep['params_before']} params_after={rep['params_after']} "
        f"reduction={rep['reduction_fraction']:.4f}"
    )
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="vocabslim",
        description="Corpus cleaning, vocabulary reduction, tokenizer/model pruning, "
        "and masked-LM data preparation for multilingual models.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_config(p):
        p.add_argument("--config", help="JSON config file; explicit flags win")

    p = sub.add_parser("clean", help="clean corpus shards and write a manifest")
    p.add_argument("--shard", action="append", required=True, metavar="LANG=GROUP=PATH")
    p.add_argument("--out-dir", dest="out_dir")
    p.add_argument("--min-tokens", dest="min_tokens", type=int)
    p.add_argument("--threads", type=int)
    p.add_argument("--manifest", help="manifest path (default OUT_DIR/manifest.json)")
    add_config(p)
    p.set_defaults(func=cmd_clean)

    p = sub.add_parser("split", help="stratified train/dev/test split of labeled TSV")
    p.add_argument("--input", required=True)
    p.add_argument("--out-dir", dest="out_dir")
    p.add_argument("--ratios", help="train,dev,test (default 0.7,0.1,0.2)")
    p.add_argument("--seed", type=int)
    p.add_argument("--min-class-size", dest="min_class_size", type=int)
    p.add_argument(
        "--multi-label-sep",
        dest="multi_label_sep",
        help="treat the label column as multi-label with this separator and "
        "drop items with more than one label",
    )
    add_config(p)
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("count", help="count subword frequencies for one group")
    p.add_argument("--model", required=True)
    p.add_argument("--group", required=True)
    p.add_argument("--shard", action="append", default=[], metavar="PATH")
    p.add_argument("--manifest", help="take shards tagged --group from this manifest")
    p.add_argument("--output", required=True)
    p.add_argument("--threads", type=int)
    p.add_argument("--unk-granularity", dest="unk_granularity", choices=("run", "char"), default="run")
    add_config(p)
    p.set_defaults(func=cmd_count)

    p = sub.add_parser("select", help="select a reduced vocabulary")
    p.add_argument("--model", required=True)
    p.add_argument("--strategy", choices=("pooled", "per-group"), required=True)
    p.add_argument("--freq", action="append", required=True, metavar="GROUP=PATH")
    p.add_argument("--k", action="append", required=True, metavar="GROUP=K or K")
    p.add_argument("--original-topn", dest="original_topn", type=int)
    p.add_argument(
        "--original-freq",
        dest="original_freq",
        help="rank the original-topn pieces by this frequency table instead of by id",
    )
    p.add_argument("--output", required=True)
    add_config(p)
    p.set_defaults(func=cmd_select)

    p = sub.add_parser("prune-tokenizer", help="restrict a tokenizer to a selection")
    p.add_argument("--model", required=True)
    p.add_argument("--selection", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--remap", help="write the old->new id table here")
    p.set_defaults(func=cmd_prune_tokenizer)

    p = sub.add_parser("prune-model", help="prune checkpoint embedding rows")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--selection", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--remap", help="verify against this remap table")
    p.add_argument("--report", help="write a size report JSON here")
    p.set_defaults(func=cmd_prune_model)

    p = sub.add_parser("mask", help="build deterministic masked-LM batches")
    p.add_argument("--corpus", action="append", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--max-seq-len", dest="max_seq_len", type=int)
    p.add_argument("--mask-rate", dest="mask_rate", type=float)
    p.add_argument("--mask-split", dest="mask_split")
    p.add_argument("--threads", type=int)
    p.add_argument("--output", required=True)
    p.add_argument("--emit-manifest", dest="emit_manifest", help="also write an adaptation manifest")
    p.add_argument("--corpus-manifest", dest="corpus_manifest")
    p.add_argument("--checkpoint")
    p.add_argument("--selection")
    add_config(p)
    p.set_defaults(func=cmd_mask)

    p = sub.add_parser("report-unk", help="UNK counts per tokenizer and dataset")
    p.add_argument("--tokenizer", action="append", required=True, metavar="NAME=PATH")
    p.add_argument("--dataset", action="append", required=True, metavar="NAME=PATH")
    p.add_argument("--output", required=True)
    p.add_argument("--text", help="also write the fixed-width table here")
    p.add_argument("--unk-granularity", dest="unk_granularity", choices=("run", "char"), default="run")
    p.set_defaults(func=cmd_report_unk)

    p = sub.add_parser("report-coverage", help="coverage of a selection per group")
    p.add_argument("--selection", required=True)
    p.add_argument("--freq", action="append", required=True, metavar="GROUP=PATH")
    p.add_argument("--targets", default="0.996,0.998")
    p.add_argument("--model", help="tokenizer model, used to flag UNK shortfalls")
    p.add_argument("--output", required=True)
    p.set_defaults(func=cmd_report_coverage)

    p = sub.add_parser("report-size", help="parameter/byte accounting of two checkpoints")
    p.add_argument("--before", required=True)
    p.add_argument("--after", required=True)
    p.add_argument("--output", required=True)
    p.set_defaults(func=cmd_report_size)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "strategy", None) == "per-group":
        args.strategy = "per_group"
    try:
        return args.func(args)
    except ArtifactMismatchError as e:
        print(f"error: artifact mismatch: {e}", file=sys.stderr)
        return EXIT_MISMATCH
    except ValidationError as e:
        print(f"error: validation: {e}", file=sys.stderr)
        return EXIT_VALIDATION
    except OSError as e:
        print(f"error: io: {e}", file=sys.stderr)
        return EXIT_IO
    except VocabslimError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
