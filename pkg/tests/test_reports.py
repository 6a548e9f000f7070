"""
Tests for report aggregation and report files.
"""

import csv
import os

import pytest
from docx import Document

from goal_driving_server.core.exceptions import ContractError
from goal_driving_server.harness.experiment import DECISIONS_FILE, RECORDS_FILE, MetricsRecord
from goal_driving_server.harness.reports import (
    DRIVING_TIMES_FILE,
    DRIVING_TIMES_HEADER,
    GOAL_PROBS_FILE,
    GOAL_PROBS_MEAN_FILE,
    SUMMARY_DOCUMENT_FILE,
    SUMMARY_TEXT_FILE,
    aggregate_driving_times,
    average_goal_probabilities,
    emit_reports,
    format_decision,
    load_records,
    mean_and_stderr,
    report_directory,
)
from goal_driving_server.utils.file_utils import write_jsonl


def make_records():
    return [
        MetricsRecord("S1", "IGP2", 0, True, False, 10.0, goal_probabilities=[(0.0, 0.5), (1.0, 0.9)]),
        MetricsRecord("S1", "IGP2", 1, True, False, 12.0, goal_probabilities=[(0.0, 0.3), (1.0, 0.7)]),
        MetricsRecord("S1", "IGP2", 2, failure="timeout", goal_probabilities=[(0.0, 0.4)]),
        MetricsRecord("S1", "CVel", 0, collided=True, failure="collision"),
    ]


def read_csv(path):
    with open(path, newline="", encoding="utf-8") as f:
        return list(csv.reader(f))


class TestAggregates:
    def test_mean_and_stderr(self):
        assert mean_and_stderr([]) == (None, None)
        assert mean_and_stderr([7.0]) == (7.0, 0.0)
        mean, stderr = mean_and_stderr([10.0, 12.0])
        assert mean == pytest.approx(11.0)
        assert stderr == pytest.approx(1.0)

    def test_driving_times_over_completed_runs(self):
        aggregates = aggregate_driving_times(make_records())
        assert [(a.scenario, a.algorithm) for a in aggregates] == [("S1", "CVel"), ("S1", "IGP2")]
        cvel, igp2 = aggregates
        assert cvel.mean is None and cvel.n == 0 and cvel.collisions == 1
        assert cvel.row() == ("S1", "CVel", "", "", 0)
        assert igp2.row() == ("S1", "IGP2", "11.000", "1.000", 2)
        assert igp2.instances == 3
        assert igp2.failures == 1

    def test_goal_probabilities_averaged_per_time(self):
        rows = average_goal_probabilities(make_records())
        assert rows == [
            ("S1", "IGP2", 0.0, pytest.approx(0.4), 3),
            ("S1", "IGP2", 1.0, pytest.approx(0.8), 2),
        ]


def test_format_decision():
    entry = {"scenario": "S1", "algorithm": "IGP2", "instance": 3, "t": 2.0, "macro": "ChangeLeft",
             "q": {"Continue": -0.25, "ChangeLeft": -0.125}, "visits": {"Continue": 4, "ChangeLeft": 26}}
    line = format_decision(entry)
    assert line.startswith("S1 IGP2 #003 t=   2.0 ChangeLeft")
    assert line.endswith("ChangeLeft:-0.125/26 Continue:-0.250/4")


def test_emit_reports(tmp_path):
    out_dir = str(tmp_path / "reports")
    paths = emit_reports(make_records(), out_dir, [{"scenario": "S1", "macro": "Continue", "q": {}, "visits": {}}])
    names = {os.path.basename(p) for p in paths}
    assert names == {
        DRIVING_TIMES_FILE,
        GOAL_PROBS_FILE,
        GOAL_PROBS_MEAN_FILE,
        "decisions.log",
        SUMMARY_TEXT_FILE,
        SUMMARY_DOCUMENT_FILE,
    }
    times = read_csv(os.path.join(out_dir, DRIVING_TIMES_FILE))
    assert tuple(times[0]) == DRIVING_TIMES_HEADER
    assert times[1:] == [["S1", "CVel", "", "", "0"], ["S1", "IGP2", "11.000", "1.000", "2"]]
    probs = read_csv(os.path.join(out_dir, GOAL_PROBS_FILE))
    assert len(probs) == 1 + 5
    assert probs[1] == ["S1", "IGP2", "0", "0.000", "0.500000"]
    with open(os.path.join(out_dir, SUMMARY_TEXT_FILE), encoding="utf-8") as f:
        summary = f.read()
    assert "11.00 ± 1.00" in summary
    document = Document(os.path.join(out_dir, SUMMARY_DOCUMENT_FILE))
    table = document.tables[0]
    assert [c.text for c in table.rows[0].cells][:2] == ["Scenario", "Algorithm"]
    assert len(table.rows) == 3


def test_emit_reports_needs_records(tmp_path):
    with pytest.raises(ContractError):
        emit_reports([], str(tmp_path))


def test_report_directory_merges_runs(tmp_path):
    records = make_records()
    for name, part in (("igp2", records[:3]), ("cvel", records[3:])):
        run_dir = tmp_path / "runs" / name
        run_dir.mkdir(parents=True)
        write_jsonl(str(run_dir / RECORDS_FILE), [r.to_dict() for r in part])
        write_jsonl(str(run_dir / DECISIONS_FILE), [])
    loaded = load_records(str(tmp_path / "runs"))
    assert sorted((r.algorithm, r.instance) for r in loaded) == sorted((r.algorithm, r.instance) for r in records)
    paths = report_directory(str(tmp_path / "runs"), str(tmp_path / "out"))
    assert all(p.startswith(str(tmp_path / "out")) for p in paths)


def test_load_records_without_runs(tmp_path):
    with pytest.raises(ContractError):
        load_records(str(tmp_path))
    with pytest.raises(ContractError):
        load_records(str(tmp_path / "missing"))
