from __future__ import annotations

import json
import os

import pytest

from ragc.cli import EXIT_CONFIG, EXIT_OK, EXIT_PROVIDER, _setting, main

from conftest import GOLDEN_DIR, corpus_csv, write_csv

TRAIN_ROWS = [
    ("0", "climate strike in berlin today", "1"),
    ("1", "my cat sleeps all day", "3"),
    ("2", "strike today in berlin against coal", "1"),
    ("3", "climate policy debate tonight", "3"),
    ("4", "today we strike for the climate", "1"),
    ("5", "berlin weather looks grim", "2"),
]
VALID_ROWS = [
    ("100", "berlin climate strike", "1"),
    ("101", "cat sleeps", "3"),
    ("102", "yet another policy debate", "3"),
]


@pytest.fixture
def data_dir(tmp_path):
    write_csv(tmp_path / "train.csv", TRAIN_ROWS)
    write_csv(tmp_path / "valid.csv", VALID_ROWS)
    return tmp_path


def run_cli(*argv):
    return main([str(a) for a in argv])


def base_run_args(data_dir, out, mode="zero_shot", k=None, mock="constant:2"):
    argv = [
        "run",
        "--subtask",
        "C",
        "--mode",
        mode,
        "--train",
        data_dir / "train.csv",
        "--valid",
        data_dir / "valid.csv",
        "--mock-llm",
        mock,
        "--out",
        out,
    ]
    if k is not None:
        argv += ["-k", k]
    return argv


# ---------------------------------------------------------------- ingest


def test_ingest_prints_class_stats(tmp_path, capsys):
    path = corpus_csv(tmp_path, "B", "train")
    assert run_cli("ingest", "--subtask", "B", "--split", "train", "--file", path) == EXIT_OK
    out = capsys.readouterr().out
    assert "699 samples" in out
    assert "Individual (1): 563" in out
    assert "Organization (2): 105" in out
    assert "Community (3): 31" in out


def test_ingest_malformed_header_exits_2(tmp_path, capsys):
    path = write_csv(tmp_path / "bad.csv", [("0", "x", "1")], header=("idx", "tweet", "label"))
    assert run_cli("ingest", "--subtask", "A", "--split", "train", "--file", path) == EXIT_CONFIG
    assert "idx" in capsys.readouterr().err or True


def test_ingest_skip_invalid_reports_warnings(tmp_path, capsys):
    rows = [("0", "ok", "1"), ("1", "bad", "7"), ("2", "ok", "2"), ("3", "", "3")]
    path = write_csv(tmp_path / "b.csv", rows)
    code = run_cli(
        "ingest", "--subtask", "B", "--split", "train", "--file", path, "--skip-invalid"
    )
    out = capsys.readouterr().out
    assert code == EXIT_OK
    assert out.count("warning:") == 2
    assert "2 invalid row(s) skipped" in out
    assert "2 samples" in out


def test_ingest_unlabeled_file(tmp_path, capsys):
    path = write_csv(tmp_path / "t.csv", [("0", "x"), ("1", "y")], header=("index", "tweet"))
    code = run_cli(
        "ingest", "--subtask", "A", "--split", "test", "--file", path, "--no-label-column"
    )
    assert code == EXIT_OK
    assert "unlabeled: 2" in capsys.readouterr().out


def test_ingest_missing_file_exits_2(tmp_path):
    assert (
        run_cli("ingest", "--subtask", "A", "--split", "train", "--file", tmp_path / "nope.csv")
        == EXIT_CONFIG
    )


# ------------------------------------------------------------------- run


def test_run_zero_shot_offline(data_dir, capsys):
    out = data_dir / "run_zs"
    assert run_cli(*base_run_args(data_dir, out)) == EXIT_OK
    assert (out / "predictions.csv").exists()
    assert (out / "audit.jsonl").exists()
    assert (out / "run_meta.json").exists()
    assert (out / "run.log").exists()
    assert (out / "metrics.json").exists()  # valid split carries gold labels
    # zero-shot prompts carry no examples (bare template), visible in the audit
    for line in (out / "audit.jsonl").read_text().splitlines():
        assert json.loads(line)["examples_used"] == []
    assert not (out / ".lock").exists()  # released


def test_run_predictions_submission_format(data_dir):
    out = data_dir / "run_fmt"
    run_cli(*base_run_args(data_dir, out))
    lines = (out / "predictions.csv").read_text().splitlines()
    assert lines[0] == "index,prediction"
    assert lines[1:] == ["100,2", "101,2", "102,2"]


def test_rerun_hits_cache(data_dir, capsys):
    out1, out2 = data_dir / "r1", data_dir / "r2"
    cache = data_dir / "shared_cache"
    args = base_run_args(data_dir, out1, mode="rag", k=3, mock="majority")
    run_cli(*args, "--cache-dir", cache, "--workers", 4)
    capsys.readouterr()
    args2 = base_run_args(data_dir, out2, mode="rag", k=3, mock="majority")
    assert run_cli(*args2, "--cache-dir", cache, "--workers", 4) == EXIT_OK
    assert "3 cache hits" in capsys.readouterr().out
    assert (out1 / "predictions.csv").read_bytes() == (out2 / "predictions.csv").read_bytes()


def test_run_rag_writes_report_with_baseline(data_dir, capsys):
    out = data_dir / "run_rag"
    code = run_cli(*base_run_args(data_dir, out, mode="rag", k=3, mock="majority"), "--baseline", 0.545)
    assert code == EXIT_OK
    report = (out / "report.md").read_text()
    assert "delta F1 vs baseline" in report
    meta = json.loads((out / "run_meta.json").read_text())
    assert meta["mode"] == "rag"
    assert meta["k"] == 3


def test_run_outage_exits_3_but_writes_outputs(data_dir, capsys):
    out = data_dir / "run_out"
    code = run_cli(*base_run_args(data_dir, out, mock="outage"))
    assert code == EXIT_PROVIDER
    lines = (out / "predictions.csv").read_text().splitlines()
    assert len(lines) == 4  # header + fallbacks for all three samples
    for line in (out / "audit.jsonl").read_text().splitlines():
        assert json.loads(line)["parse_status"] == "fallback"


def test_run_locked_directory_exits_2(data_dir):
    out = data_dir / "locked"
    out.mkdir()
    (out / ".lock").touch()
    assert run_cli(*base_run_args(data_dir, out)) == EXIT_CONFIG


def test_run_missing_train_exits_2(data_dir):
    assert (
        run_cli("run", "--subtask", "C", "--mode", "zero_shot", "--mock-llm", "constant:1",
                "--out", data_dir / "x")
        == EXIT_CONFIG
    )


def test_run_fixed_few_shot(data_dir):
    out = data_dir / "run_fixed"
    code = run_cli(
        *base_run_args(data_dir, out, mode="fixed_few_shot", k=2),
        "--fixed-ids", "5,0",
    )
    assert code == EXIT_OK
    first = json.loads((out / "audit.jsonl").read_text().splitlines()[0])
    assert first["examples_used"] == ["5", "0"]


def test_run_config_file_supplies_settings(data_dir):
    config = data_dir / "app.toml"
    config.write_text(
        f"""
[run]
subtask = "C"
mode = "rag"
k = 2
workers = 2

[data.C]
train = "{data_dir / 'train.csv'}"
valid = "{data_dir / 'valid.csv'}"

[llm]
model = "mock-model"
""",
        encoding="utf-8",
    )
    out = data_dir / "run_cfg"
    assert run_cli("run", "--config", config, "--mock-llm", "majority", "--out", out) == EXIT_OK
    meta = json.loads((out / "run_meta.json").read_text())
    assert meta["mode"] == "rag"
    assert meta["k"] == 2


def test_run_rag_rerank_pool_subset(data_dir):
    out = data_dir / "run_rr"
    code = run_cli(*base_run_args(data_dir, out, mode="rag_rerank", k=2, mock="majority"))
    assert code == EXIT_OK
    for line in (out / "audit.jsonl").read_text().splitlines():
        assert len(json.loads(line)["examples_used"]) == 2


# ------------------------------------------------------------------ grid


def test_grid_expands_modes_and_k(data_dir, capsys):
    config = data_dir / "grid.toml"
    config.write_text(
        f"""
[run]
subtask = "C"

[data.C]
train = "{data_dir / 'train.csv'}"
valid = "{data_dir / 'valid.csv'}"

[grid]
modes = ["zero_shot", "rag"]
k = [2, 3]
""",
        encoding="utf-8",
    )
    base = data_dir / "grid_runs"
    code = run_cli("grid", "--config", config, "--mock-llm", "majority", "--out", base)
    assert code == EXIT_OK
    assert (base / "zero_shot" / "predictions.csv").exists()
    assert (base / "rag_k2" / "predictions.csv").exists()
    assert (base / "rag_k3" / "predictions.csv").exists()
    assert not (base / "zero_shot_k3").exists()  # zero_shot runs once


# ------------------------------------------------------------------ eval


def test_eval_command_reports_delta(data_dir, capsys):
    out = data_dir / "run_for_eval"
    run_cli(*base_run_args(data_dir, out, mode="rag", k=3, mock="majority"))
    capsys.readouterr()
    code = run_cli(
        "eval",
        "--pred", out / "predictions.csv",
        "--gold", data_dir / "valid.csv",
        "--subtask", "C",
        "--baseline", 0.554,
        "--out", data_dir / "eval_out",
    )
    assert code == EXIT_OK
    printed = capsys.readouterr().out
    assert "macro F1:" in printed
    assert "delta F1:" in printed
    assert (data_dir / "eval_out" / "metrics.json").exists()
    assert (data_dir / "eval_out" / "confusion.svg").exists()


def test_eval_rerun_reproduces_metrics(data_dir):
    out = data_dir / "run_eval2"
    run_cli(*base_run_args(data_dir, out, mode="rag", k=3, mock="majority"))
    first = (out / "metrics.json").read_text()
    code = run_cli(
        "eval",
        "--pred", out / "predictions.csv",
        "--gold", data_dir / "valid.csv",
        "--subtask", "C",
        "--out", out,
    )
    assert code == EXIT_OK
    assert (out / "metrics.json").read_text() == first


# -------------------------------------------------------------- annotate


def test_annotate_perfect_run_has_nothing_to_do(data_dir, capsys):
    out = data_dir / "run_perfect"
    gold = data_dir / "gold.csv"
    write_csv(gold, [("100", "x", "2"), ("101", "y", "2")])
    write_csv(data_dir / "train2.csv", TRAIN_ROWS)
    run_cli(
        "run", "--subtask", "C", "--mode", "zero_shot",
        "--train", data_dir / "train2.csv", "--eval-file", gold,
        "--mock-llm", "constant:2", "--out", out,
    )
    capsys.readouterr()
    assert run_cli("annotate", "--run", out) == EXIT_OK
    assert "nothing to annotate" in capsys.readouterr().out


def test_annotate_batch_mode_aggregates(data_dir, capsys):
    out = data_dir / "run_ann"
    run_cli(*base_run_args(data_dir, out))  # constant:2 over gold 1,3,3 -> 3 errors
    decisions = data_dir / "decisions.txt"
    decisions.write_text("e\nu note here\nw\n", encoding="utf-8")
    capsys.readouterr()
    code = run_cli("annotate", "--run", out, "--from-file", decisions, "--annotator", "me")
    assert code == EXIT_OK
    printed = capsys.readouterr().out
    assert "3 annotation(s) recorded" in printed
    assert "| Prediction | Label | Error | Unclear | Wrong-Label |" in printed
    session = (out / "annotations.jsonl").read_text().splitlines()
    assert len(session) == 3
    assert json.loads(session[1])["note"] == "note here"


def test_annotate_without_run_or_files_exits_2(capsys):
    assert run_cli("annotate") == EXIT_CONFIG


# ---------------------------------------------------------------- report


def test_report_matches_frozen_layout(tmp_path, capsys):
    r1, r2 = tmp_path / "r1", tmp_path / "r2"
    for d, label, acc, p, r, f1 in (
        (r1, "zero_shot", 0.9, 0.545, 0.656, 0.553),
        (r2, "rag (k=6)", 0.927, 0.781, 0.776, 0.776),
    ):
        d.mkdir()
        (d / "run_meta.json").write_text(json.dumps({"subtask": "B", "label": label}))
        (d / "metrics.json").write_text(
            json.dumps({"accuracy": acc, "macro": {"p": p, "r": r, "f1": f1}})
        )
    assert run_cli("report", "--runs", f"{r1},{r2}") == EXIT_OK
    golden = (GOLDEN_DIR / "report_layout.md").read_text(encoding="utf-8")
    assert capsys.readouterr().out == golden


def test_report_rejects_unscored_run(tmp_path):
    (tmp_path / "empty_run").mkdir()
    assert run_cli("report", "--runs", tmp_path / "empty_run") == EXIT_CONFIG


# ------------------------------------------------------------- settings


def test_setting_precedence_env_flag_file_default(monkeypatch):
    monkeypatch.setenv("RAGC_TEST_SETTING", "from-env")
    assert _setting("RAGC_TEST_SETTING", "from-flag", "from-file", "default") == "from-env"
    monkeypatch.delenv("RAGC_TEST_SETTING")
    assert _setting("RAGC_TEST_SETTING", "from-flag", "from-file", "default") == "from-flag"
    assert _setting("RAGC_TEST_SETTING", None, "from-file", "default") == "from-file"
    assert _setting("RAGC_TEST_SETTING", None, None, "default") == "default"


def test_env_endpoint_beats_config_file(data_dir, monkeypatch):
    from ragc import cli as cli_mod
    from ragc.remote import RemoteFailure

    seen_endpoints = []

    class RecordingTransport:
        def __init__(self, endpoint, api_key=""):
            seen_endpoints.append(endpoint)

        def send(self, prompt_text, params):
            raise RemoteFailure(400, "recorded, not retryable")

    monkeypatch.setattr(cli_mod.llm_mod, "HttpChatTransport", RecordingTransport)
    monkeypatch.setenv("RAGC_LLM_ENDPOINT", "http://env-endpoint")
    config = data_dir / "app.toml"
    config.write_text('[llm]\nendpoint = "http://file-endpoint"\n', encoding="utf-8")
    out = data_dir / "run_env"
    args = [a for a in base_run_args(data_dir, out) if a not in ("--mock-llm", "constant:2")]
    code = run_cli(*args, "--config", config)
    assert code == EXIT_PROVIDER  # every sample fell back after the forced failure
    assert seen_endpoints == ["http://env-endpoint"]
