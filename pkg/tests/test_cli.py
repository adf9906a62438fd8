"""CLI wiring: subcommands, exit codes, artifact fingerprint checks, and
end-to-end determinism of the whole pipeline."""

import json

import pytest

from helpers import build_desk_fixture, pipeline, scrub_timestamps
from vocabslim import cli, container
from vocabslim.tokenizer import UnigramModel

B = "▁"


def run(argv):
    return cli.main(argv)


@pytest.fixture
def desk(tmp_path):
    return build_desk_fixture(tmp_path)


class TestSubcommands:
    def test_clean_prints_stats_and_writes_manifest(self, desk, capsys):
        out = desk["dir"] / "c1"
        assert run([
            "clean", "--shard", f"lat=latin={desk['latin']}",
            "--out-dir", str(out), "--min-tokens", "6",
        ]) == 0
        line = capsys.readouterr().out
        assert "lines_in=" in line and "lines_kept=" in line
        assert (out / "manifest.json").exists()

    def test_split_requires_seed(self, desk, capsys):
        tsv = desk["dir"] / "labeled.tsv"
        tsv.write_text("".join(f"L{i % 2}\ttext {i}\n" for i in range(40)), encoding="utf-8")
        code = run(["split", "--input", str(tsv), "--out-dir", str(desk["dir"] / "s")])
        assert code == cli.EXIT_VALIDATION
        assert "seed" in capsys.readouterr().err

    def test_split_writes_three_tsvs(self, desk):
        tsv = desk["dir"] / "labeled.tsv"
        tsv.write_text("".join(f"L{i % 2}\ttext {i}\n" for i in range(40)), encoding="utf-8")
        out = desk["dir"] / "s2"
        assert run([
            "split", "--input", str(tsv), "--out-dir", str(out), "--seed", "3",
        ]) == 0
        n = sum(
            len((out / f"{part}.tsv").read_text().splitlines())
            for part in ("train", "dev", "test")
        )
        assert n == 40

    def test_mask_requires_seed(self, desk, capsys):
        code = run([
            "mask", "--corpus", str(desk["latin"]), "--model", str(desk["model"]),
            "--output", str(desk["dir"] / "b.vsc"),
        ])
        assert code == cli.EXIT_VALIDATION
        assert "seed" in capsys.readouterr().err

    def test_unknown_flag_exits_2(self, desk):
        with pytest.raises(SystemExit) as exc:
            run(["clean", "--nonsense"])
        assert exc.value.code == 2

    def test_missing_input_file_exits_4(self, desk, capsys):
        code = run([
            "count", "--model", str(desk["model"]), "--group", "g",
            "--shard", str(desk["dir"] / "missing.txt"),
            "--output", str(desk["dir"] / "f.tsv"),
        ])
        assert code == cli.EXIT_IO

    def test_malformed_selection_exits_3(self, desk, tmp_path, capsys):
        bad = tmp_path / "bad.json"
        bad.write_text("{not json", encoding="utf-8")
        code = run([
            "prune-model", "--checkpoint", str(desk["ckpt"]),
            "--selection", str(bad), "--output", str(tmp_path / "x.vsc"),
        ])
        assert code == cli.EXIT_VALIDATION
        assert "malformed" in capsys.readouterr().err

    def test_selection_for_wrong_tokenizer_exits_5(self, desk, tmp_path, capsys):
        other = UnigramModel.with_default_specials([("qq", -1.0)])
        other_path = tmp_path / "other.json"
        other.save(other_path)
        out = desk["dir"] / "p"
        a = pipeline(desk, out)
        code = run([
            "prune-tokenizer", "--model", str(other_path),
            "--selection", str(a["selection"]),
            "--output", str(tmp_path / "x.json"),
        ])
        assert code == cli.EXIT_MISMATCH

    def test_config_file_supplies_defaults_flags_win(self, desk, tmp_path, capsys):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"min_tokens": 6, "out_dir": str(tmp_path / "cfgout")}))
        assert run([
            "clean", "--shard", f"lat=latin={desk['latin']}", "--config", str(cfg),
        ]) == 0
        kept_with_six = int(
            capsys.readouterr().out.split("lines_kept=")[1].split()[0]
        )
        assert run([
            "clean", "--shard", f"lat=latin={desk['latin']}", "--config", str(cfg),
            "--min-tokens", "2", "--out-dir", str(tmp_path / "cfgout2"),
        ]) == 0
        kept_with_two = int(
            capsys.readouterr().out.split("lines_kept=")[1].split()[0]
        )
        assert kept_with_two >= kept_with_six

    def test_env_out_dir(self, desk, tmp_path, monkeypatch):
        monkeypatch.setenv("VOCABSLIM_OUT_DIR", str(tmp_path / "envout"))
        assert run(["clean", "--shard", f"lat=latin={desk['latin']}", "--min-tokens", "2"]) == 0
        assert (tmp_path / "envout" / "manifest.json").exists()


class TestEndToEnd:
    def test_pipeline_deterministic_across_runs(self, desk):
        a1 = pipeline(desk, desk["dir"] / "run1")
        a2 = pipeline(desk, desk["dir"] / "run2")
        assert set(a1) == set(a2)
        for key in a1:
            b1, b2 = a1[key].read_bytes(), a2[key].read_bytes()
            suffix = a1[key].suffix
            assert scrub_timestamps(b1, suffix) == scrub_timestamps(b2, suffix), key

    def test_pruned_artifacts_are_consistent(self, desk):
        a = pipeline(desk, desk["dir"] / "run3")
        selection = json.loads(a["selection"].read_text())
        pruned_tok = json.loads(a["tok-pruned"].read_text())
        assert len(pruned_tok["pieces"]) == len(selection["keep_ids"])
        tensors, meta = container.load(a["model-pruned"])
        assert tensors["emb"].shape[0] == len(selection["keep_ids"])
        assert meta["vocab_size"] == str(len(selection["keep_ids"]))
        size = json.loads(a["size"].read_text())
        assert size["params_after"] < size["params_before"]

    def test_reports_reference_fingerprints(self, desk):
        a = pipeline(desk, desk["dir"] / "run4")
        unk = json.loads(a["unk"].read_text())
        assert any(k.startswith("tokenizer:") for k in unk["generated_from"])
        adapt = json.loads(a["adapt"].read_text())
        assert set(adapt["fingerprints"]) >= {"corpus_manifest", "tokenizer", "checkpoint"}
