"""Byte-stable JSON and CSV emission (12 significant digits, sorted keys)."""

from __future__ import annotations

import csv
import io
import json
import math
from pathlib import Path

DIGITS = 12


def fmt_float(v: float) -> float | str:
    """Round to 12 significant digits; non-finite values become strings."""
    if math.isnan(v):
        return "nan"
    if math.isinf(v):
        return "inf" if v > 0 else "-inf"
    r = float(f"{v:.{DIGITS}g}")
    return 0.0 if r == 0 else r


def canonical(obj):
    """Recursively convert to JSON-safe values with stable float formatting.

    Tuple dict keys are joined with ``|``.
    """
    if isinstance(obj, bool) or obj is None or isinstance(obj, str):
        return obj
    if isinstance(obj, int):
        return obj
    if isinstance(obj, float):
        return fmt_float(obj)
    if hasattr(obj, "item") and not hasattr(obj, "__len__"):
        return canonical(obj.item())
    if isinstance(obj, dict):
        return {(("|".join(map(str, k))) if isinstance(k, tuple) else str(k)): canonical(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [canonical(v) for v in obj]
    if hasattr(obj, "tolist"):
        return canonical(obj.tolist())
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def dumps(obj, indent: int | None = 2) -> str:
    return json.dumps(canonical(obj), sort_keys=True, indent=indent, allow_nan=False)


def write_json(obj, path: str | Path) -> None:
    Path(path).write_text(dumps(obj) + "\n")


def csv_text(header: list[str], rows: list[dict]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        out = []
        for h in header:
            v = row.get(h, "")
            out.append(f"{v:.{DIGITS}g}" if isinstance(v, float) else v)
        w.writerow(out)
    return buf.getvalue()


def write_csv(header: list[str], rows: list[dict], path: str | Path) -> None:
    Path(path).write_text(csv_text(header, rows))
