"""
CSV state traces of simulated episodes.
"""

import csv
from typing import Dict, Iterable, List, Tuple

from goal_driving_server.core.exceptions import ReportError
from goal_driving_server.core.trajectory import VehicleState
from goal_driving_server.utils.file_utils import check_file_writeable

TRACE_HEADER = ("t", "vehicle_id", "x", "y", "heading", "speed", "acceleration", "active_maneuver")

TraceRow = Tuple[float, str, float, float, float, float, float, str]


def format_trace_row(row: TraceRow) -> List[str]:
    """Fixed-precision text so reruns produce byte-identical files."""
    t, vid, x, y, heading, speed, accel, maneuver = row
    return [f"{t:.2f}", vid, f"{x:.4f}", f"{y:.4f}", f"{heading:.5f}", f"{speed:.4f}", f"{accel:.4f}", maneuver]


def write_trace(path: str, rows: Iterable[TraceRow]):
    """
    Write a state trace CSV.

    Raises:
        ReportError: the file cannot be written
    """
    ok, message = check_file_writeable(path)
    if not ok:
        raise ReportError(path, message)
    try:
        with open(path, "w", newline="", encoding="utf-8") as f:
            writer = csv.writer(f)
            writer.writerow(TRACE_HEADER)
            for row in rows:
                writer.writerow(format_trace_row(row))
    except OSError as e:
        raise ReportError(path, str(e)) from e


def read_trace(path: str) -> Dict[str, List[VehicleState]]:
    """Per-vehicle state histories from a trace CSV, in time order."""
    histories: Dict[str, List[VehicleState]] = {}
    with open(path, "r", newline="", encoding="utf-8") as f:
        reader = csv.DictReader(f)
        missing = [c for c in TRACE_HEADER[:7] if c not in (reader.fieldnames or ())]
        if missing:
            raise ReportError(path, f"trace is missing columns {', '.join(missing)}")
        for row in reader:
            state = VehicleState(
                (float(row["x"]), float(row["y"])),
                float(row["heading"]),
                float(row["speed"]),
                float(row["acceleration"]),
                float(row["t"]),
            )
            histories.setdefault(row["vehicle_id"], []).append(state)
    for states in histories.values():
        states.sort(key=lambda s: s.time)
    return histories
