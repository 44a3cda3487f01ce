"""End-to-end command-line flows on tiny settings."""

import json
import subprocess
import sys

import pytest

from skillmix.cli import build_parser, parse_skill_sets, read_config_file, run
from skillmix.data import load_corpus


@pytest.fixture(scope="module")
def data_dir(tmp_path_factory):
    path = tmp_path_factory.mktemp("cli") / "data"
    code = run(["prepare-data", "--output", str(path), "--seed", "5",
                "--synthetic-sizes", "40,8,8"])
    assert code == 0
    return path


@pytest.fixture(scope="module")
def trained(data_dir, tmp_path_factory):
    out = tmp_path_factory.mktemp("cli-train") / "model.bin"
    code = run(["train", "--data", str(data_dir), "--variant", "AoP",
                "--out", str(out), "--epochs", "2", "--patience", "2",
                "--seed", "3", "--max-steps", "6"])
    assert code == 0
    return out


class TestPrepareData:
    def test_identical_argv_identical_outputs(self, tmp_path):
        outs = []
        for name in ("a", "b"):
            path = tmp_path / name
            assert run(["prepare-data", "--output", str(path), "--seed", "9",
                        "--synthetic-sizes", "12,4,4"]) == 0
            outs.append((path / "train.jsonl").read_bytes())
        assert outs[0] == outs[1]

    def test_writes_splits_and_schema(self, data_dir):
        for name in ("train.jsonl", "valid.jsonl", "test.jsonl", "schema.json"):
            assert (data_dir / name).exists()
        schema = json.loads((data_dir / "schema.json").read_text())
        examples = load_corpus(data_dir / "train.jsonl", schema["skills"])
        assert len(examples) == 40

    def test_convert_mode_needs_schema(self, tmp_path):
        raw = tmp_path / "raw.json"
        raw.write_text(json.dumps({"dialogues": []}))
        code = run(["prepare-data", "--input", str(raw),
                    "--output", str(tmp_path / "out")])
        assert code == 1

    def test_convert_mode(self, tmp_path, data_dir):
        raw = tmp_path / "raw.json"
        raw.write_text(json.dumps({"dialogues": [{
            "domain": "Hotel",
            "turns": [
                {"speaker": "Usr", "utterance": ["cheap", "hotel", "please"]},
                {"speaker": "Sys", "utterance": ["done"],
                 "state": {"hotel": {"pricerange": "cheap"}},
                 "acts": {"INFORM-HOTEL": []}, "db_results": []},
            ]}]}))
        out = tmp_path / "converted"
        code = run(["prepare-data", "--input", str(raw), "--output", str(out),
                    "--schema", str(data_dir / "schema.json")])
        assert code == 0
        assert (out / "converted.jsonl").exists()


class TestTrainEval:
    def test_train_writes_artifacts(self, trained):
        assert trained.exists()
        log = trained.with_suffix(".log.csv")
        assert log.exists()
        assert log.with_suffix(".png").exists()

    def test_eval_writes_report_and_figures(self, trained, data_dir, tmp_path):
        out = tmp_path / "report.json"
        code = run(["eval", "--checkpoint", str(trained), "--data", str(data_dir),
                    "--split", "test", "--out", str(out), "--max-length", "6"])
        assert code == 0
        report = json.loads(out.read_text())
        for key in ("F1", "BLEU", "SQL_Acc", "Ppl", "C"):
            assert key in report
        assert out.with_suffix(".txt").exists()
        assert out.with_suffix(".alphas.tsv").exists()
        assert out.with_suffix(".alphas.png").exists()

    def test_alpha_dump_format(self, trained, data_dir, tmp_path):
        out = tmp_path / "r.json"
        run(["eval", "--checkpoint", str(trained), "--data", str(data_dir),
             "--split", "valid", "--out", str(out), "--max-length", "4"])
        lines = out.with_suffix(".alphas.tsv").read_text().splitlines()
        header = lines[0].split("\t")
        assert header[0] == "example" and len(header) == 5
        assert len(lines) == 1 + 8
        assert all(len(line.split("\t")) == 5 for line in lines[1:])


class TestCompose:
    def test_compose_rows(self, trained, data_dir, tmp_path, capsys):
        ctx = tmp_path / "ctx.json"
        ctx.write_text(json.dumps({
            "history": ["i", "need", "a", "hotel", "with", "stars", "2"],
            "types": ["Usr"] * 7,
            "segments": [0] * 7,
            "memory": [],
        }))
        out = tmp_path / "compose.json"
        code = run(["compose", "--checkpoint", str(trained), "--context", str(ctx),
                    "--skills", "SQL,Hotel;BOOK,Hotel;Persona", "--max-length", "5",
                    "--out", str(out)])
        assert code == 0
        rows = json.loads(out.read_text())
        assert len(rows) == 3
        assert rows[0]["skills"] == ["SQL", "Hotel"]
        assert sum(rows[0]["alpha"]) == 2.0
        printed = capsys.readouterr().out
        assert "response" in printed

    def test_unknown_skill_fails_cleanly(self, trained, tmp_path):
        ctx = tmp_path / "ctx.json"
        ctx.write_text(json.dumps({"history": ["hi"], "types": ["Usr"],
                                   "segments": [0], "memory": []}))
        code = run(["compose", "--checkpoint", str(trained), "--context", str(ctx),
                    "--skills", "Train"])
        assert code == 1


class TestBenchAndGradcheck:
    def test_bench_small(self, tmp_path):
        out = tmp_path / "bench.json"
        code = run(["bench", "--grid", "small", "--reps", "2", "--t", "8",
                    "--out", str(out)])
        assert code == 0
        payload = json.loads(out.read_text())
        assert payload["theorem"]["violations"] == []
        assert payload["empirical"]["aop_counters"]["decoder_invocations"] == 4
        assert payload["empirical"]["aor_counters"]["decoder_invocations"] == 4 * 13
        assert out.with_suffix(".costs.png").exists()
        assert out.with_suffix(".timing.png").exists()

    def test_gradcheck_passes(self):
        code = run(["gradcheck", "--dims", "8", "--experts", "3", "--seed", "7",
                    "--max-per-tensor", "4"])
        assert code == 0


class TestParsing:
    def test_unknown_subcommand_exits_2(self):
        with pytest.raises(SystemExit) as err:
            build_parser().parse_args(["frobnicate"])
        assert err.value.code == 2

    def test_unknown_flag_exits_2(self):
        with pytest.raises(SystemExit) as err:
            build_parser().parse_args(["bench", "--bogus"])
        assert err.value.code == 2

    def test_every_subcommand_has_help(self, capsys):
        for cmd in ("prepare-data", "train", "eval", "compose", "bench", "gradcheck"):
            with pytest.raises(SystemExit) as err:
                build_parser().parse_args([cmd, "--help"])
            assert err.value.code == 0
            assert capsys.readouterr().out

    def test_skill_set_parsing(self):
        assert parse_skill_sets("SQL,Hotel;Persona") == [["SQL", "Hotel"], ["Persona"]]
        with pytest.raises(ValueError):
            parse_skill_sets(";")

    def test_config_file_and_flag_precedence(self, data_dir, tmp_path):
        cfg = tmp_path / "run.cfg"
        cfg.write_text("epochs = 1\nbatch-size = 4  # comment\n\nlr = 0.002\n")
        parsed = read_config_file(cfg)
        assert parsed == {"epochs": "1", "batch_size": "4", "lr": "0.002"}
        out = tmp_path / "m.bin"
        code = run(["train", "--data", str(data_dir), "--variant", "TRS",
                    "--config", str(cfg), "--out", str(out),
                    "--max-steps", "2", "--epochs", "1"])
        assert code == 0

    def test_config_file_rejects_garbage(self, tmp_path):
        bad = tmp_path / "bad.cfg"
        bad.write_text("this line has no equals\n")
        with pytest.raises(ValueError):
            read_config_file(bad)


def test_module_entry_point_runs():
    proc = subprocess.run([sys.executable, "-m", "skillmix.cli", "--help"],
                          capture_output=True, text=True)
    assert proc.returncode == 0
    assert "prepare-data" in proc.stdout
