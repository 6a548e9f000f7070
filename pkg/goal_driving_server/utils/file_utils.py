"""
File utility functions for experiment outputs and fixtures.
"""

import json
import os
from typing import Any, Iterable, List, Mapping, Optional, Tuple

from goal_driving_server.core.exceptions import ReportError


def check_file_writeable(filepath: str) -> Tuple[bool, str]:
    """
    Whether an output file can be (re)written, and if not, why.

    Returns:
        (True, "") or (False, a message naming the path at fault)
    """
    if os.path.isdir(filepath):
        return False, f"{filepath} is a directory"
    if os.path.exists(filepath):
        if not os.access(filepath, os.W_OK):
            return False, f"File {filepath} is read-only"
        try:
            # a locked output file only shows up on opening it
            open(filepath, "a", encoding="utf-8").close()
        except OSError as e:
            return False, f"File {filepath} cannot be opened for writing: {e.strerror or e}"
        return True, ""
    parent = os.path.dirname(filepath) or os.curdir
    if not os.path.isdir(parent):
        return False, f"Output directory {parent} does not exist"
    if not os.access(parent, os.W_OK | os.X_OK):
        return False, f"Output directory {parent} is not writeable"
    return True, ""


def ensure_output_dir(path: str) -> str:
    """
    Create an output directory if needed and check it is writeable.

    Raises:
        ReportError: the directory cannot be created or written
    """
    try:
        os.makedirs(path, exist_ok=True)
    except OSError as e:
        raise ReportError(path, str(e)) from e
    if not os.access(path, os.W_OK):
        raise ReportError(path, "directory is not writeable")
    return path


def ensure_extension(filename: str, extension: str) -> str:
    """
    Ensure filename has the given extension.

    Args:
        filename: The filename to check
        extension: Extension including the dot, e.g. ".json"

    Returns:
        Filename with the extension
    """
    if not filename.endswith(extension):
        return filename + extension
    return filename


def read_json(path: str) -> Any:
    with open(path, "r", encoding="utf-8") as f:
        return json.load(f)


def write_json(path: str, document: Any):
    ok, message = check_file_writeable(path)
    if not ok:
        raise ReportError(path, message)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(document, f, indent=2, sort_keys=True)
        f.write("\n")


def write_jsonl(path: str, rows: Iterable[Mapping[str, Any]]):
    ok, message = check_file_writeable(path)
    if not ok:
        raise ReportError(path, message)
    with open(path, "w", encoding="utf-8") as f:
        for row in rows:
            f.write(json.dumps(row, sort_keys=True) + "\n")


def read_jsonl(path: str) -> List[dict]:
    with open(path, "r", encoding="utf-8") as f:
        return [json.loads(line) for line in f if line.strip()]


def list_files(directory: str, extension: Optional[str] = None) -> List[str]:
    """Sorted file names in a directory, optionally filtered by extension."""
    if not os.path.isdir(directory):
        return []
    return sorted(
        name
        for name in os.listdir(directory)
        if os.path.isfile(os.path.join(directory, name)) and (extension is None or name.endswith(extension))
    )
