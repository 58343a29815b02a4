"""Byte-stable JSON output, atomic file writes and CSV readers.

Doubles are written with 17 significant digits (``%.17g``), which round-trips
every IEEE-754 double; dictionaries keep their insertion order, so the same
object always serializes to the same bytes.
"""

from __future__ import annotations

import csv
import io
import json
import math
import os
import tempfile
from pathlib import Path

import numpy as np


def fmt_float(x) -> str:
    """17-significant-digit text for a double (``nan``/``inf`` are not valid JSON)."""
    x = float(x)
    if not math.isfinite(x):
        raise ValueError(f"cannot write non-finite value {x!r}")
    s = "%.17g" % x
    if s in ("0", "-0"):
        return "0.0" if s == "0" else "-0.0"
    if "." not in s and "e" not in s and "n" not in s:
        s += ".0"
    return s


def _scalar(v) -> str | None:
    if v is None:
        return "null"
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        if not math.isfinite(float(v)):
            return "null"
        return fmt_float(v)
    if isinstance(v, str):
        return _json_str(v)
    return None


def _json_str(s: str) -> str:
    return json.dumps(s)


def dumps(obj, indent: int = 2) -> str:
    """Serialize ``obj`` deterministically; flat lists of scalars stay on one line.

    Non-finite floats become ``null``.
    """
    def enc(v, level):
        if isinstance(v, np.ndarray):
            v = v.tolist()
        s = _scalar(v)
        if s is not None:
            return s
        pad = " " * (indent * (level + 1))
        end = " " * (indent * level)
        if isinstance(v, dict):
            if not v:
                return "{}"
            items = [f"{pad}{_json_str(str(k))}: {enc(val, level + 1)}" for k, val in v.items()]
            return "{\n" + ",\n".join(items) + "\n" + end + "}"
        if isinstance(v, (list, tuple)):
            if not v:
                return "[]"
            flat = [_scalar(e) for e in v]
            if all(f is not None for f in flat):
                return "[" + ", ".join(flat) + "]"
            return "[\n" + ",\n".join(pad + enc(e, level + 1) for e in v) + "\n" + end + "]"
        raise TypeError(f"cannot serialize {type(v).__name__}")

    return enc(obj, 0) + "\n"


def atomic_write(path, text: str):
    """Write ``text`` to ``path`` through a temporary file in the same directory and a rename."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent or ".")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except FileNotFoundError:
            pass
        raise


def write_json(path, obj):
    atomic_write(path, dumps(obj))


def csv_text(write) -> str:
    """Run ``write(fh)`` against an in-memory buffer and return the text."""
    buf = io.StringIO(newline="")
    write(buf)
    return buf.getvalue()


def write_csv(path, write):
    atomic_write(path, csv_text(write))


def _rows(source):
    if isinstance(source, Path) or (isinstance(source, str) and "\n" not in source):
        with open(source, newline="") as fh:
            text = fh.read()
    else:
        text = source
    rows = list(csv.reader(io.StringIO(text, newline="")))
    if not rows:
        raise ValueError("empty CSV")
    return rows[0], rows[1:]


def _f(s):
    return float(s) if s != "" else np.nan


def read_roots_csv(source):
    """Parse the ``re,im,residual`` table; returns ``(roots, residuals)``."""
    head, rows = _rows(source)
    if head != ["re", "im", "residual"]:
        raise ValueError(f"unexpected root CSV header {head}")
    roots = np.array([complex(float(a), float(b)) for a, b, _ in rows], dtype=complex)
    res = np.array([float(c) for _, _, c in rows])
    return roots, res


def read_sweep_csv(source) -> dict:
    """Parse the ``r,abscissa,stable,chain_prediction`` table into arrays."""
    head, rows = _rows(source)
    if head != ["r", "abscissa", "stable", "chain_prediction"]:
        raise ValueError(f"unexpected sweep CSV header {head}")
    return {
        "r": np.array([float(r[0]) for r in rows]),
        "abscissa": np.array([_f(r[1]) for r in rows]),
        "stable": np.array([r[2] == "true" for r in rows]),
        "chain_prediction": np.array([_f(r[3]) for r in rows]),
    }


def read_region_csv(source) -> dict:
    """Parse the ``kp,kd,rhp_count,label`` table; unknown counts are ``-1``."""
    head, rows = _rows(source)
    if head != ["kp", "kd", "rhp_count", "label"]:
        raise ValueError(f"unexpected region CSV header {head}")
    return {
        "kp": np.array([float(r[0]) for r in rows]),
        "kd": np.array([float(r[1]) for r in rows]),
        "rhp_count": np.array([int(r[2]) if r[2] != "" else -1 for r in rows]),
        "label": [r[3] for r in rows],
    }
