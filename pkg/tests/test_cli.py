# tests/test_cli.py

import os

import pandas as pd
import yaml
from click.testing import CliRunner

from src.cli.main import cli
from src.common.artifacts import read_json, read_trace
from src.controller import controller as controller_module
from tests.conftest import fast_settings, file_bytes


def _invoke(*args):
    return CliRunner().invoke(cli, list(args), catch_exceptions=False)


def test_pipeline_writes_every_artifact(fast_config_file, tmp_path):
    out = tmp_path / "run"
    result = _invoke("--config", fast_config_file, "pipeline", "--out", str(out))
    assert result.exit_code == 0, result.output
    for name in ("selection.json", "trace.jsonl", "search.ckpt", "model.ckpt", "retrain_report.json",
                 "report.csv", "evaluation.json"):
        assert (out / name).exists(), name

    selection = read_json(str(out / "selection.json"))
    assert len(selection["selected"]) == 2
    assert selection["seed"] == 11
    assert read_trace(str(out / "trace.jsonl"))[0]["config_hash"] == selection["config_hash"]
    assert read_json(str(out / "evaluation.json"))["config_hash"] == selection["config_hash"]
    ledger = pd.read_csv(out / "report.csv")
    assert len(ledger) == 1 and ledger["kind"][0] == "selection"


def test_rerun_reproduces_selection_bytes(fast_config_file, tmp_path):
    assert _invoke("--config", fast_config_file, "search", "--out", str(tmp_path / "a")).exit_code == 0
    assert _invoke("--config", fast_config_file, "search", "--out", str(tmp_path / "b")).exit_code == 0
    assert file_bytes(tmp_path / "a" / "selection.json") == file_bytes(tmp_path / "b" / "selection.json")


def test_seed_and_override_flags(fast_config_file, tmp_path):
    out = tmp_path / "seeded"
    result = _invoke("--config", fast_config_file, "search", "--out", str(out), "--seed", "3", "--override", "search.k=3")
    assert result.exit_code == 0, result.output
    selection = read_json(str(out / "selection.json"))
    assert selection["seed"] == 3 and len(selection["selected"]) == 3


def test_invalid_config_exits_with_two(tmp_path):
    path = tmp_path / "bad.yaml"
    path.write_text(yaml.safe_dump({"search": {"nonsense": 1}}), encoding="utf-8")
    result = CliRunner().invoke(cli, ["--config", str(path), "search", "--out", str(tmp_path / "x")])
    assert result.exit_code == 2
    assert "search.nonsense" in result.output


def test_bad_override_exits_with_two(fast_config_file, tmp_path):
    result = CliRunner().invoke(cli, ["--config", fast_config_file, "search", "--override", "search.k=0"])
    assert result.exit_code == 2


def test_runtime_failure_exits_with_one(fast_config_file, tmp_path):
    result = CliRunner().invoke(cli, ["--config", fast_config_file, "evaluate", "--checkpoint", str(tmp_path / "nope.ckpt")])
    assert result.exit_code == 2
    broken = tmp_path / "broken.ckpt"
    broken.write_bytes(b"not a container at all")
    result = CliRunner().invoke(cli, ["--config", fast_config_file, "evaluate", "--checkpoint", str(broken),
                                      "--out", str(tmp_path / "e")])
    assert result.exit_code == 1


def test_synth_then_retrain_all_fields(fast_config_file, tmp_path):
    out = tmp_path / "all"
    assert _invoke("--config", fast_config_file, "synth", "--out", str(out)).exit_code == 0
    assert (out / "dataset.afd").exists()
    result = _invoke("--config", fast_config_file, "retrain", "--out", str(out), "--override", "retrain.fields=all")
    assert result.exit_code == 0, result.output
    report = read_json(str(out / "retrain_report.json"))
    assert report["selected"] == [0, 1, 2, 3, 4]
    assert pd.read_csv(out / "report.csv")["kind"][0] == "all"


def test_retrain_without_selection_is_a_config_error(fast_config_file, tmp_path):
    result = CliRunner().invoke(cli, ["--config", fast_config_file, "retrain", "--out", str(tmp_path / "empty")])
    assert result.exit_code == 2


def test_enumerate_then_report_prints_the_percentile(tmp_path):
    settings = fast_settings(tmp_path, synthetic={"num_fields": 3, "informative_fields": [0]}, search={"k": 2},
                             oracle={"k_filter": 2})
    config_path = tmp_path / "small.yaml"
    config_path.write_text(yaml.safe_dump(settings), encoding="utf-8")
    out = tmp_path / "small"
    assert _invoke("--config", str(config_path), "pipeline", "--out", str(out)).exit_code == 0
    result = _invoke("--config", str(config_path), "enumerate", "--out", str(out))
    assert result.exit_code == 0, result.output
    assert len(pd.read_csv(out / "subsets.csv")) == 3
    assert read_json(str(out / "subsets_summary.json"))["selection_percentile"] is not None

    report_dir = tmp_path / "merged"
    result = _invoke("report", str(out / "report.csv"), str(out / "report.csv"),
                     "--subsets", str(out / "subsets.csv"), "--out", str(report_dir))
    assert result.exit_code == 0, result.output
    assert "percentile" in result.output
    assert len(pd.read_csv(report_dir / "merged_report.csv")) == 1
    scatter = pd.read_csv(report_dir / "scatter.csv")
    assert len(scatter) == 4 and scatter["is_selection"].sum() == 1


def test_report_of_no_ledgers_writes_headers_only(tmp_path):
    result = _invoke("report", "--out", str(tmp_path))
    assert result.exit_code == 0
    merged = pd.read_csv(tmp_path / "merged_report.csv")
    assert merged.empty and "config_hash" in merged.columns


def test_report_names_the_drifted_ledger(tmp_path):
    path = tmp_path / "weird.csv"
    path.write_text("a,b\n1,2\n", encoding="utf-8")
    result = CliRunner().invoke(cli, ["report", str(path), "--out", str(tmp_path / "r")])
    assert result.exit_code == 1
    assert "SchemaDriftError" in result.output


def test_log_level_from_environment(fast_config_file, tmp_path, monkeypatch):
    monkeypatch.setenv("LOG_LEVEL", "ERROR")
    result = _invoke("--config", fast_config_file, "synth", "--out", str(tmp_path / "quiet"))
    assert result.exit_code == 0
    assert os.path.exists(tmp_path / "quiet" / "dataset.afd")


def test_empty_threshold_selection_still_reports(fast_config_file, tmp_path, monkeypatch):
    real_select = controller_module.select_by_threshold

    def select_nothing(source, threshold=0.5):
        return real_select(source, threshold=1.0)

    monkeypatch.setattr(controller_module, "select_by_threshold", select_nothing)
    out = tmp_path / "empty"
    result = _invoke("--config", fast_config_file, "pipeline", "--out", str(out),
                     "--override", "controller.mode=softmax_threshold")
    assert result.exit_code == 0, result.output
    assert "No field was selected" in result.output
    assert read_json(str(out / "selection.json"))["selected"] == []
    assert (out / "trace.jsonl").exists()
    assert not (out / "model.ckpt").exists()

    ledger = pd.read_csv(out / "report.csv")
    assert len(ledger) == 1
    assert ledger["k"][0] == 0 and pd.isna(ledger["test_auc"][0])

    result = _invoke("report", str(out / "report.csv"), "--out", str(tmp_path / "merged"))
    assert result.exit_code == 0, result.output
