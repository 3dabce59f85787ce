"""JSON and CSV writers with fixed 17-significant-digit float formatting.

Output is byte-stable: keys sorted, no timestamps, floats as ``%.17g``.
"""
import csv
import io
import json
import math
from pathlib import Path

import numpy as np

from .errors import ParseError


def fmt(x):
    x = float(x)
    if math.isnan(x):
        return "nan"
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return "%.17g" % x


def _encode(obj, indent, level):
    pad = " " * (indent * (level + 1))
    end = " " * (indent * level)
    if obj is None or isinstance(obj, (bool, np.bool_)):
        return json.dumps(None if obj is None else bool(obj))
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        if not math.isfinite(float(obj)):
            return "null"
        return "%.17g" % float(obj)
    if isinstance(obj, str):
        return json.dumps(obj)
    if isinstance(obj, np.ndarray):
        return _encode(obj.tolist(), indent, level)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{pad}{json.dumps(str(k))}: {_encode(v, indent, level + 1)}"
                 for k, v in sorted(obj.items(), key=lambda kv: str(kv[0]))]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    if isinstance(obj, (list, tuple)):
        if not obj:
            return "[]"
        if all(not isinstance(v, (dict, list, tuple, np.ndarray)) for v in obj):
            return "[" + ", ".join(_encode(v, indent, level + 1) for v in obj) + "]"
        return "[\n" + ",\n".join(pad + _encode(v, indent, level + 1) for v in obj) + "\n" + end + "]"
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def dumps(obj, indent=1):
    return _encode(obj, indent, 0) + "\n"


def write_json(path, obj):
    Path(path).write_text(dumps(obj))


def read_json(path):
    try:
        return json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: {exc.msg}", exc.lineno) from exc


def _cell(v):
    if isinstance(v, str):
        return v
    if isinstance(v, (int, np.integer)) and not isinstance(v, bool):
        return str(int(v))
    return fmt(v)


def write_csv(path, header, rows):
    """rows: iterable of sequences; floats are formatted with ``fmt``."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_cell(v) for v in row])
    Path(path).write_text(buf.getvalue())


def read_csv(path, required=None):
    """Read a numeric CSV; returns (header, float array).  Line numbers in
    errors are 1-based file lines."""
    text = Path(path).read_text()
    reader = csv.reader(io.StringIO(text))
    try:
        header = next(reader)
    except StopIteration:
        raise ParseError(f"{path}: empty file", 1)
    if required is not None:
        missing = [c for c in required if c not in header]
        if missing:
            raise ParseError(f"{path}: missing columns {missing}", 1)
    rows = []
    for lineno, row in enumerate(reader, start=2):
        if not row:
            continue
        if len(row) != len(header):
            raise ParseError(f"{path}: expected {len(header)} fields, got {len(row)}", lineno)
        try:
            rows.append([float(v) if v != "" else math.nan for v in row])
        except ValueError:
            raise ParseError(f"{path}: non-numeric field", lineno) from None
    if not rows:
        raise ParseError(f"{path}: no data rows", 2)
    return header, np.asarray(rows, dtype=float)
