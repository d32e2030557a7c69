"""End-to-end tests for the command-line pipeline and its artifact contracts."""

import hashlib
from pathlib import Path

import pytest

from chronomine.cli import (
    DATASET_FILE_VERSION,
    MANIFEST_FILE_VERSION,
    DEFAULT_CONFIG,
    UsageError,
    apply_override,
    load_config,
    main,
    parse_overrides,
    read_dataset_artifact,
    read_manifest,
)
from chronomine.errors import ConfigError
from chronomine.mining import read_rule_file
from chronomine.predict import read_predictions
from chronomine.synth import TRUTH_FILE_VERSION, read_truth_table
from chronomine.tkg import add_inverse_facts

RAW_ROWS = """\
alice\tmentors\tbob\t2001\t2005
bob\tmentors\tcarol\t2006\t2010
carol\tmentors\tdana\t2011\t2015
alice\tfounds\tlab\t2000\t2000
bob\tfounds\tlab\t2007\t2007
"""

QUERY_ROWS = (
    TRUTH_FILE_VERSION
    + "\n"
    + "dana\tmentors\terin\t2016\t2020\n"
    + "carol\tfounds\tlab\t2012\t2012\n"
)


def _sha(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _run(stage: str, out: Path, *extra: str, seed: int = 7) -> int:
    return main([stage, "--out", str(out), "--seed", str(seed), *extra])


def _run_pipeline(out: Path, *, seed: int = 7) -> None:
    assert _run("synth", out, "--synth.entities", "40", seed=seed) == 0
    assert _run("mine", out, seed=seed) == 0
    assert _run("fit", out, seed=seed) == 0
    assert (
        _run(
            "train",
            out,
            "--train.epochs",
            "2",
            "--train.per_predicate_cap",
            "16",
            seed=seed,
        )
        == 0
    )
    assert _run("predict", out, seed=seed) == 0
    assert _run("eval", out, seed=seed) == 0


@pytest.fixture(scope="class")
def pipeline_dir(tmp_path_factory) -> Path:
    out = tmp_path_factory.mktemp("pipeline")
    _run_pipeline(out)
    return out


class TestConfigLoading:
    def test_defaults_without_file(self):
        config = load_config(None)
        assert config == DEFAULT_CONFIG
        assert config is not DEFAULT_CONFIG

    def test_file_overrides_defaults(self, tmp_path):
        path = tmp_path / "run.ini"
        path.write_text("[train]\nepochs = 5\n[run]\nmode = rule\n")
        config = load_config(str(path))
        assert config["train"]["epochs"] == "5"
        assert config["run"]["mode"] == "rule"
        assert config["train"]["batch_size"] == "32"

    def test_missing_file_rejected(self, tmp_path):
        with pytest.raises(ConfigError, match="not found"):
            load_config(str(tmp_path / "absent.ini"))

    def test_unknown_section_rejected(self, tmp_path):
        path = tmp_path / "run.ini"
        path.write_text("[nonsense]\nkey = 1\n")
        with pytest.raises(ConfigError, match=r"unknown config section \[nonsense\]"):
            load_config(str(path))

    def test_unknown_key_rejected(self, tmp_path):
        path = tmp_path / "run.ini"
        path.write_text("[train]\nmomentum = 0.9\n")
        with pytest.raises(ConfigError, match="unknown config key train.momentum"):
            load_config(str(path))

    def test_override_applies(self):
        config = load_config(None)
        apply_override(config, "mine.min_support", "4")
        assert config["mine"]["min_support"] == "4"

    def test_override_unknown_key_rejected(self):
        config = load_config(None)
        with pytest.raises(ConfigError, match="unknown config key"):
            apply_override(config, "mine.bogus", "4")

    def test_parse_overrides_both_forms(self):
        pairs = parse_overrides(["--train.epochs", "3", "--run.mode=rule"])
        assert pairs == [("train.epochs", "3"), ("run.mode", "rule")]

    def test_parse_overrides_rejects_undotted(self):
        with pytest.raises(UsageError):
            parse_overrides(["--verbose"])

    def test_parse_overrides_rejects_missing_value(self):
        with pytest.raises(UsageError, match="needs a value"):
            parse_overrides(["--train.epochs"])


class TestExitCodes:
    def test_unknown_stage_is_usage_error(self, capsys):
        assert main(["explode"]) == 1
        assert "usage error" in capsys.readouterr().err

    def test_missing_stage_is_usage_error(self):
        assert main([]) == 1

    def test_unknown_override_is_usage_exit(self, tmp_path, capsys):
        rc = main(["synth", "--out", str(tmp_path), "--train.bogus", "1"])
        assert rc == 1
        assert "configuration error" in capsys.readouterr().err

    def test_bad_flag_value_is_usage_exit(self, tmp_path):
        assert main(["synth", "--out", str(tmp_path), "--seed", "abc"]) == 1

    def test_malformed_dataset_is_data_exit(self, tmp_path, capsys):
        raw = tmp_path / "bad.tsv"
        raw.write_text("only\tthree\tcolumns\n")
        rc = main(
            ["convert", "--out", str(tmp_path / "out"), "--data.train", str(raw)]
        )
        assert rc == 2
        assert "data error" in capsys.readouterr().err

    def test_missing_artifact_is_dependency_exit(self, tmp_path, capsys):
        rc = main(["mine", "--out", str(tmp_path)])
        assert rc == 3
        err = capsys.readouterr().err
        assert "dataset.tsv" in err and "convert" in err

    def test_missing_referenced_file_is_config_exit(self, tmp_path):
        rc = main(
            [
                "convert",
                "--out",
                str(tmp_path),
                "--data.train",
                str(tmp_path / "absent.tsv"),
            ]
        )
        assert rc == 1


class TestConvert:
    def test_writes_versioned_dataset(self, tmp_path):
        raw = tmp_path / "facts.tsv"
        raw.write_text(RAW_ROWS)
        out = tmp_path / "out"
        assert main(["convert", "--out", str(out), "--data.train", str(raw)]) == 0
        lines = (out / "dataset.tsv").read_text().splitlines()
        assert lines[0] == DATASET_FILE_VERSION
        tkg = read_dataset_artifact(out / "dataset.tsv")
        assert tkg.num_facts == 5
        assert sorted(tkg.predicates) == ["founds", "mentors"]

    def test_normalizes_queries_file(self, tmp_path):
        raw = tmp_path / "facts.tsv"
        raw.write_text(RAW_ROWS)
        queries = tmp_path / "queries.tsv"
        queries.write_text(QUERY_ROWS)
        out = tmp_path / "out"
        rc = main(
            [
                "convert",
                "--out",
                str(out),
                "--data.train",
                str(raw),
                "--data.queries",
                str(queries),
            ]
        )
        assert rc == 0
        with (out / "queries.tsv").open() as fh:
            rows = read_truth_table(fh)
        assert rows[0][:3] == ("dana", "mentors", "erin")
        assert rows[0][3].start == 2016

    def test_requires_train_path(self, tmp_path):
        assert main(["convert", "--out", str(tmp_path)]) == 1


class TestPipelineArtifacts:
    def test_synth_outputs_carry_version_lines(self, pipeline_dir):
        assert (
            pipeline_dir / "dataset.tsv"
        ).read_text().splitlines()[0] == DATASET_FILE_VERSION
        assert (
            pipeline_dir / "queries.tsv"
        ).read_text().splitlines()[0] == TRUTH_FILE_VERSION

    def test_rules_are_readable(self, pipeline_dir):
        tkg = add_inverse_facts(read_dataset_artifact(pipeline_dir / "dataset.tsv"))
        with (pipeline_dir / "rules.tsv").open() as fh:
            ranked = read_rule_file(fh, tkg.predicates)
        assert ranked
        assert all(support >= 2 for _, support in ranked)

    def test_predictions_align_with_queries(self, pipeline_dir):
        tkg = read_dataset_artifact(pipeline_dir / "dataset.tsv")
        with (pipeline_dir / "queries.tsv").open() as fh:
            rows = read_truth_table(fh, tkg.granularity)
        with (pipeline_dir / "predictions.tsv").open() as fh:
            predicted = read_predictions(fh, tkg.granularity)
        assert len(predicted) == len(rows)
        for (triple, *_), (s, p, o, _) in zip(predicted, rows):
            assert triple == (s, p, o)

    def test_eval_writes_report(self, pipeline_dir):
        lines = (pipeline_dir / "report.tsv").read_text().splitlines()
        assert lines[0] == "scope\tpredicate\tcount\taeiou\ttac\tmae"
        assert any(line.startswith("overall\t") for line in lines[1:])

    def test_manifest_records_every_stage(self, pipeline_dir):
        text = (pipeline_dir / "manifest.tsv").read_text()
        assert text.splitlines()[0] == MANIFEST_FILE_VERSION
        rows = read_manifest(pipeline_dir)
        for stage in ("synth", "mine", "fit", "train", "predict", "eval"):
            assert stage in rows
            kinds = {row[0] for row in rows[stage]}
            assert {"config", "seed", "output"} <= kinds

    def test_manifest_hashes_match_files(self, pipeline_dir):
        for stage_rows in read_manifest(pipeline_dir).values():
            for row in stage_rows:
                if row[0] == "output":
                    assert _sha(pipeline_dir / row[1]) == row[2]

    def test_eval_prints_summary(self, pipeline_dir, capsys):
        assert _run("eval", pipeline_dir) == 0
        text = capsys.readouterr().out
        assert "queries evaluated:" in text
        assert "aeIOU" in text and "MAE" in text


class TestReproducibility:
    def test_same_seed_gives_identical_predictions(self, tmp_path):
        first, second = tmp_path / "a", tmp_path / "b"
        _run_pipeline(first)
        _run_pipeline(second)
        for name in ("dataset.tsv", "rules.tsv", "densities.tsv", "model.tsv",
                     "predictions.tsv", "report.tsv"):
            assert _sha(first / name) == _sha(second / name), name

    def test_predict_rerun_is_bit_exact(self, pipeline_dir):
        before = _sha(pipeline_dir / "predictions.tsv")
        assert _run("predict", pipeline_dir) == 0
        assert _sha(pipeline_dir / "predictions.tsv") == before

    def test_different_seed_changes_dataset(self, tmp_path):
        first, second = tmp_path / "a", tmp_path / "b"
        assert _run("synth", first, "--synth.entities", "40", seed=7) == 0
        assert _run("synth", second, "--synth.entities", "40", seed=8) == 0
        assert _sha(first / "dataset.tsv") != _sha(second / "dataset.tsv")


class TestDependencyChain:
    def test_eval_without_model_names_train(self, tmp_path, capsys):
        out = tmp_path / "out"
        assert _run("synth", out, "--synth.entities", "40") == 0
        assert _run("mine", out) == 0
        assert _run("fit", out) == 0
        rc = _run("eval", out)
        assert rc == 3
        err = capsys.readouterr().err
        assert "model.tsv" in err and "train" in err

    def test_tampered_artifact_is_detected(self, tmp_path, capsys):
        out = tmp_path / "out"
        assert _run("synth", out, "--synth.entities", "40") == 0
        assert _run("mine", out) == 0
        rules = out / "rules.tsv"
        rules.write_text(rules.read_text() + "\n")
        rc = _run("fit", out)
        assert rc == 3
        err = capsys.readouterr().err
        assert "rules.tsv" in err and "mine" in err

    def test_tampered_predictions_rejected(self, tmp_path, capsys):
        out = tmp_path / "out"
        _run_pipeline(out)
        path = out / "predictions.tsv"
        lines = path.read_text().splitlines()
        lines[2], lines[3] = lines[3], lines[2]
        path.write_text("\n".join(lines) + "\n")
        rc = _run("eval", out)
        assert rc == 3
        assert "predictions.tsv" in capsys.readouterr().err

    def test_misaligned_queries_rejected(self, tmp_path, capsys):
        out = tmp_path / "out"
        _run_pipeline(out)
        # evaluating against a reordered queries file must fail loudly even
        # though the predictions artifact itself is untouched
        with (out / "queries.tsv").open() as fh:
            rows = read_truth_table(fh)
        rows = rows[::-1]
        other = tmp_path / "reordered.tsv"
        lines = [TRUTH_FILE_VERSION] + [
            f"{s}\t{p}\t{o}\t{when.start}\t{when.end}" for s, p, o, when in rows
        ]
        other.write_text("\n".join(lines) + "\n")
        rc = _run("eval", out, "--data.queries", str(other))
        assert rc == 2
        assert "line up" in capsys.readouterr().err


class TestRunFlags:
    def test_parallel_predict_matches_serial(self, pipeline_dir):
        serial = _sha(pipeline_dir / "predictions.tsv")
        assert _run("predict", pipeline_dir, "--jobs", "2") == 0
        assert _sha(pipeline_dir / "predictions.tsv") == serial

    def test_forecast_predictions_ground(self, tmp_path):
        out = tmp_path / "out"
        assert _run("synth", out, "--synth.entities", "40") == 0
        assert _run("mine", out) == 0
        assert _run("fit", out) == 0
        assert (
            _run("train", out, "--train.epochs", "2",
                 "--train.per_predicate_cap", "16")
            == 0
        )
        assert _run("predict", out, "--forecast") == 0
        tkg = read_dataset_artifact(out / "dataset.tsv")
        with (out / "predictions.tsv").open() as fh:
            predicted = read_predictions(fh, tkg.granularity)
        # planted consequences are preceded by their triggers, so the
        # restricted graph still grounds most queries
        assert sum(1 for _, _, flag, _ in predicted if not flag) >= len(predicted) // 2

    def test_rule_mode_runs(self, tmp_path):
        out = tmp_path / "out"
        assert _run("synth", out, "--synth.entities", "40") == 0
        assert _run("mine", out) == 0
        assert _run("fit", out) == 0
        rc = _run(
            "train",
            out,
            "--mode",
            "rule",
            "--train.epochs",
            "1",
            "--train.per_predicate_cap",
            "8",
        )
        assert rc == 0
        assert _run("predict", out, "--mode", "rule") == 0

    def test_zero_evaluated_queries_is_nonzero_exit(self, tmp_path, capsys):
        out = tmp_path / "out"
        _run_pipeline(out)
        # replace every truth with unknown endpoints: eval must refuse success
        with (out / "queries.tsv").open() as fh:
            rows = read_truth_table(fh)
        lines = [TRUTH_FILE_VERSION]
        lines += [f"{s}\t{p}\t{o}\t####\t####" for s, p, o, _ in rows]
        (out / "queries.tsv").write_text("\n".join(lines) + "\n")
        assert _run("predict", out) == 0
        rc = _run("eval", out)
        assert rc == 2
        assert "no queries were evaluated" in capsys.readouterr().err
