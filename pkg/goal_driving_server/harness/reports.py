"""
Aggregate experiment records into report files.

A report directory holds one or more runs (each with its own records.jsonl
and decisions.jsonl, possibly in subdirectories). emit_reports merges them
into driving-time and goal-probability tables, a decision log and a
summary in plain text and as a Word document.
"""

import csv
import logging
import math
import os
from dataclasses import dataclass
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from goal_driving_server.core.exceptions import ContractError, ReportError
from goal_driving_server.harness.experiment import DECISIONS_FILE, RECORDS_FILE, MetricsRecord
from goal_driving_server.utils.file_utils import ensure_output_dir, read_jsonl
from goal_driving_server.utils.report_document import write_summary_document

logger = logging.getLogger(__name__)

DRIVING_TIMES_FILE = "driving_times.csv"
GOAL_PROBS_FILE = "goal_probs.csv"
GOAL_PROBS_MEAN_FILE = "goal_probs_mean.csv"
DECISIONS_LOG_FILE = "decisions.log"
SUMMARY_TEXT_FILE = "summary.txt"
SUMMARY_DOCUMENT_FILE = "summary.docx"

DRIVING_TIMES_HEADER = ("scenario", "algorithm", "mean", "stderr", "n")
GOAL_PROBS_HEADER = ("scenario", "algorithm", "instance", "t", "p")
GOAL_PROBS_MEAN_HEADER = ("scenario", "algorithm", "t", "mean_p", "n")


@dataclass(frozen=True)
class DrivingTimeAggregate:
    """Driving times of the completed instances of one (scenario, algorithm) pair."""

    scenario: str
    algorithm: str
    mean: Optional[float]
    stderr: Optional[float]
    n: int
    instances: int
    collisions: int
    failures: int

    def row(self) -> Tuple[str, str, str, str, int]:
        return (self.scenario, self.algorithm, _fmt(self.mean), _fmt(self.stderr), self.n)


def _fmt(value: Optional[float], digits: int = 3) -> str:
    return "" if value is None else f"{value:.{digits}f}"


def group_records(records: Iterable[MetricsRecord]) -> Dict[Tuple[str, str], List[MetricsRecord]]:
    groups: Dict[Tuple[str, str], List[MetricsRecord]] = {}
    for record in records:
        groups.setdefault((record.scenario, record.algorithm), []).append(record)
    return {key: sorted(groups[key], key=lambda r: r.instance) for key in sorted(groups)}


def mean_and_stderr(values: Sequence[float]) -> Tuple[Optional[float], Optional[float]]:
    """Arithmetic mean and sample standard deviation over sqrt(n); stderr is 0 for a single value."""
    if not values:
        return None, None
    data = np.asarray(values, dtype=float)
    mean = float(np.mean(data))
    if len(data) < 2:
        return mean, 0.0
    return mean, float(np.std(data, ddof=1) / math.sqrt(len(data)))


def aggregate_driving_times(records: Iterable[MetricsRecord]) -> List[DrivingTimeAggregate]:
    aggregates = []
    for (scenario, algorithm), group in group_records(records).items():
        times = [r.driving_time for r in group if r.completed]
        mean, stderr = mean_and_stderr(times)
        aggregates.append(
            DrivingTimeAggregate(
                scenario,
                algorithm,
                mean,
                stderr,
                len(times),
                len(group),
                sum(r.collided for r in group),
                sum(not r.completed for r in group),
            )
        )
    return aggregates


def average_goal_probabilities(records: Iterable[MetricsRecord]) -> List[Tuple[str, str, float, float, int]]:
    """Instance-averaged true-goal probability per (scenario, algorithm, decision time)."""
    rows = []
    for (scenario, algorithm), group in group_records(records).items():
        by_time: Dict[float, List[float]] = {}
        for record in group:
            for t, p in record.goal_probabilities:
                by_time.setdefault(round(t, 3), []).append(p)
        for t in sorted(by_time):
            rows.append((scenario, algorithm, t, float(np.mean(by_time[t])), len(by_time[t])))
    return rows


def _find_files(in_dir: str, name: str) -> List[str]:
    found = []
    for root, dirs, files in os.walk(in_dir):
        dirs.sort()
        if name in files:
            found.append(os.path.join(root, name))
    return found


def load_records(in_dir: str) -> List[MetricsRecord]:
    """
    Records of every run under in_dir.

    Raises:
        ContractError: in_dir is missing or holds no records
    """
    if not os.path.isdir(in_dir):
        raise ContractError(f"Report input {in_dir} is not a directory")
    records = [MetricsRecord.from_dict(doc) for path in _find_files(in_dir, RECORDS_FILE) for doc in read_jsonl(path)]
    if not records:
        raise ContractError(f"No {RECORDS_FILE} found under {in_dir}")
    return records


def load_decisions(in_dir: str) -> List[dict]:
    return [doc for path in _find_files(in_dir, DECISIONS_FILE) for doc in read_jsonl(path)]


def format_decision(entry: dict) -> str:
    q = entry.get("q", {})
    visits = entry.get("visits", {})
    values = " ".join(f"{macro}:{q[macro]:+.3f}/{visits.get(macro, 0)}" for macro in sorted(q))
    return (
        f"{entry.get('scenario', '?')} {entry.get('algorithm', '?')} #{int(entry.get('instance', 0)):03d} "
        f"t={float(entry.get('t', 0.0)):6.1f} {entry.get('macro', '?'):<22} {values}"
    ).rstrip()


def summary_lines(aggregates: Sequence[DrivingTimeAggregate]) -> List[str]:
    header = f"{'scenario':<16} {'algorithm':<10} {'driving time (s)':>18} {'done':>9} {'collisions':>10}"
    lines = [header, "-" * len(header)]
    for agg in aggregates:
        time = "-" if agg.mean is None else f"{agg.mean:.2f} ± {agg.stderr:.2f}"
        lines.append(
            f"{agg.scenario:<16} {agg.algorithm:<10} {time:>18} {f'{agg.n}/{agg.instances}':>9} {agg.collisions:>10}"
        )
    return lines


def _write_csv(path: str, header: Sequence[str], rows: Iterable[Sequence[object]]):
    try:
        with open(path, "w", newline="", encoding="utf-8") as f:
            writer = csv.writer(f)
            writer.writerow(header)
            writer.writerows(rows)
    except OSError as e:
        raise ReportError(path, str(e)) from e


def _write_lines(path: str, lines: Iterable[str]):
    try:
        with open(path, "w", encoding="utf-8") as f:
            for line in lines:
                f.write(line + "\n")
    except OSError as e:
        raise ReportError(path, str(e)) from e


def emit_reports(records: Sequence[MetricsRecord], out_dir: str, decisions: Sequence[dict] = ()) -> List[str]:
    """
    Write the report files for a set of records.

    Args:
        records: Instance records, any mix of scenarios and algorithms
        out_dir: Directory for the report files
        decisions: Decision entries as written to decisions.jsonl

    Returns:
        Paths of the files written

    Raises:
        ContractError: records is empty
        ReportError: a file cannot be written
    """
    if not records:
        raise ContractError("Cannot report on an empty set of records")
    ensure_output_dir(out_dir)
    aggregates = aggregate_driving_times(records)
    paths = []

    path = os.path.join(out_dir, DRIVING_TIMES_FILE)
    _write_csv(path, DRIVING_TIMES_HEADER, (agg.row() for agg in aggregates))
    paths.append(path)

    path = os.path.join(out_dir, GOAL_PROBS_FILE)
    rows = [
        (r.scenario, r.algorithm, r.instance, f"{t:.3f}", f"{p:.6f}")
        for group in group_records(records).values()
        for r in group
        if r.goal_probabilities
        for t, p in r.goal_probabilities
    ]
    _write_csv(path, GOAL_PROBS_HEADER, rows)
    paths.append(path)

    path = os.path.join(out_dir, GOAL_PROBS_MEAN_FILE)
    mean_rows = [(s, a, f"{t:.3f}", f"{p:.6f}", n) for s, a, t, p, n in average_goal_probabilities(records)]
    _write_csv(path, GOAL_PROBS_MEAN_HEADER, mean_rows)
    paths.append(path)

    path = os.path.join(out_dir, DECISIONS_LOG_FILE)
    _write_lines(path, (format_decision(entry) for entry in decisions))
    paths.append(path)

    lines = summary_lines(aggregates)
    path = os.path.join(out_dir, SUMMARY_TEXT_FILE)
    _write_lines(path, lines)
    paths.append(path)

    outcome_rows = [
        (agg.scenario, agg.algorithm, _fmt(agg.mean, 2), _fmt(agg.stderr, 2), f"{agg.n}/{agg.instances}", agg.collisions)
        for agg in aggregates
    ]
    paths.append(
        write_summary_document(
            os.path.join(out_dir, SUMMARY_DOCUMENT_FILE),
            "Experiment summary",
            [
                (
                    "Driving times",
                    ("Scenario", "Algorithm", "Mean (s)", "Std. error (s)", "Completed", "Collisions"),
                    outcome_rows,
                )
            ],
            notes=[f"{len(records)} instances, {len(decisions)} decisions."],
        )
    )
    logger.info("Wrote %d report files to %s", len(paths), out_dir)
    return paths


def report_directory(in_dir: str, out_dir: Optional[str] = None) -> List[str]:
    """Load every run under in_dir and write its reports to out_dir (default in_dir)."""
    records = load_records(in_dir)
    return emit_reports(records, out_dir or in_dir, load_decisions(in_dir))
