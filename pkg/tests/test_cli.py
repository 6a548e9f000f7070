import json
import os

import pytest

from goal_driving_server.harness.cli import EXIT_FAILED, EXIT_OK, build_parser, main
from goal_driving_server.harness.reports import DRIVING_TIMES_FILE, SUMMARY_TEXT_FILE


def test_variant_to_stdout(capsys):
    assert main(["variant", "--base", "s3", "--irrational"]) == EXIT_OK
    document = json.loads(capsys.readouterr().out)
    assert document["id"] == "S3-irrational"
    assert document["variant"] == "irrational"


def test_variant_to_file(tmp_path, capsys):
    out = str(tmp_path / "s4_irrational.json")
    assert main(["variant", "--base", "S4", "--irrational", "--out", out]) == EXIT_OK
    with open(out, encoding="utf-8") as f:
        assert json.load(f)["id"] == "S4-irrational"


def test_variant_needs_flag(capsys):
    assert main(["variant", "--base", "s3"]) == EXIT_FAILED
    assert "--irrational" in capsys.readouterr().err


def test_variant_only_for_s3_s4():
    with pytest.raises(SystemExit):
        build_parser().parse_args(["variant", "--base", "s1", "--irrational"])


def test_unknown_algorithm(tmp_path, capsys):
    code = main(["run", "--scenario", "S1", "--algo", "MPC", "--instances", "1", "--out", str(tmp_path)])
    assert code == EXIT_FAILED
    assert "Unknown algorithm" in capsys.readouterr().err


def test_report_without_runs(tmp_path, capsys):
    assert main(["report", "--in", str(tmp_path)]) == EXIT_FAILED
    assert "Failed to report" in capsys.readouterr().err


def test_run_then_report(tmp_path, capsys):
    out = str(tmp_path / "s1_cvel")
    code = main(
        ["run", "--scenario", "S1", "--algo", "CVel", "--instances", "1", "--seed", "5",
         "--timeout", "2", "--simulations", "3", "--out", out]
    )
    printed = capsys.readouterr().out
    assert "S1 CVel #000" in printed
    assert code in (EXIT_OK, EXIT_FAILED)
    assert os.path.exists(os.path.join(out, DRIVING_TIMES_FILE))
    report_dir = str(tmp_path / "report")
    assert main(["report", "--in", out, "--out", report_dir]) == EXIT_OK
    assert os.path.exists(os.path.join(report_dir, SUMMARY_TEXT_FILE))
    with open(os.path.join(out, "run.json"), encoding="utf-8") as f:
        manifest = json.load(f)
    assert manifest["seed"] == 5
    assert manifest["config"]["mcts"]["simulations"] == 3
