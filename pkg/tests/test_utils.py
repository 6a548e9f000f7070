import os

import pytest

from goal_driving_server.core.exceptions import ReportError
from goal_driving_server.utils.file_utils import (
    check_file_writeable,
    ensure_extension,
    list_files,
    read_jsonl,
    write_json,
    write_jsonl,
)
from goal_driving_server.utils.trace_utils import TRACE_HEADER, format_trace_row, read_trace, write_trace


def test_ensure_extension():
    assert ensure_extension("s3_irrational", ".json") == "s3_irrational.json"
    assert ensure_extension("summary.docx", ".docx") == "summary.docx"


def test_check_file_writeable_missing_directory(tmp_path):
    ok, message = check_file_writeable(str(tmp_path / "nope" / "file.json"))
    assert not ok
    assert "does not exist" in message


def test_check_file_writeable_new_and_existing_files(tmp_path):
    assert check_file_writeable(str(tmp_path / "fresh.json")) == (True, "")
    existing = tmp_path / "old.json"
    existing.write_text("{}", encoding="utf-8")
    assert check_file_writeable(str(existing)) == (True, "")
    assert existing.read_text(encoding="utf-8") == "{}"


def test_check_file_writeable_rejects_directories(tmp_path):
    ok, message = check_file_writeable(str(tmp_path))
    assert not ok
    assert message.endswith("is a directory")


def test_write_json_into_missing_directory(tmp_path):
    with pytest.raises(ReportError, match="Cannot write report to"):
        write_json(str(tmp_path / "nope" / "file.json"), {})


def test_jsonl(tmp_path):
    path = str(tmp_path / "rows.jsonl")
    write_jsonl(path, [{"b": 1, "a": 2}, {"c": [1, 2]}])
    with open(path, encoding="utf-8") as f:
        assert f.readline() == '{"a": 2, "b": 1}\n'
    assert read_jsonl(path) == [{"a": 2, "b": 1}, {"c": [1, 2]}]


def test_list_files(tmp_path):
    for name in ("b.json", "a.json", "c.txt"):
        (tmp_path / name).write_text("{}", encoding="utf-8")
    assert list_files(str(tmp_path), ".json") == ["a.json", "b.json"]
    assert list_files(str(tmp_path / "missing")) == []


def test_trace_row_precision():
    row = (0.1 + 0.2, "ego", 1.0 / 3.0, -1.75, 0.5, 10.0, -0.25, "lane-follow")
    assert format_trace_row(row) == ["0.30", "ego", "0.3333", "-1.7500", "0.50000", "10.0000", "-0.2500", "lane-follow"]


def test_trace_file(tmp_path):
    path = str(tmp_path / "trace.csv")
    rows = [
        (0.1, "ego", 1.0, -1.75, 0.0, 10.0, 0.0, "lane-follow"),
        (0.0, "ego", 0.0, -1.75, 0.0, 10.0, 0.0, "lane-follow"),
        (0.0, "V1", 30.0, 1.75, 0.0, 8.0, 0.5, "lane-change-right"),
    ]
    write_trace(path, rows)
    with open(path, encoding="utf-8") as f:
        assert f.readline().strip() == ",".join(TRACE_HEADER)
    histories = read_trace(path)
    assert set(histories) == {"ego", "V1"}
    assert [s.time for s in histories["ego"]] == [0.0, 0.1]
    assert histories["V1"][0].acceleration == 0.5


def test_trace_missing_columns(tmp_path):
    path = tmp_path / "trace.csv"
    path.write_text("t,vehicle_id,x\n0.0,ego,1.0\n", encoding="utf-8")
    with pytest.raises(ReportError, match="missing columns"):
        read_trace(str(path))
