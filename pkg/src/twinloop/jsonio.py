"""Line-record JSON encoding with stable float formatting.

Run logs and transcripts must be byte-identical across repeated deterministic
runs and must keep at least millisecond resolution visible on timestamps, so
floats are written from their shortest round-trip repr padded to a minimum of
three decimals.  Output lines are plain JSON; ``json.loads`` reads them back
exactly.
"""

from __future__ import annotations

import json
import math
from decimal import ROUND_HALF_UP, Decimal


def round_half_away(x: float, ndigits: int = 2) -> float:
    """Round to ``ndigits`` decimals with ties going away from zero."""
    q = Decimal(1).scaleb(-ndigits)
    return float(Decimal(repr(x)).quantize(q, rounding=ROUND_HALF_UP))


def format_float(x: float) -> str:
    """Shortest round-trip decimal form, padded to >= 3 decimals."""
    if not math.isfinite(x):
        raise ValueError(f"non-finite value not representable in a log record: {x!r}")
    r = repr(float(x))
    if "e" in r or "E" in r:
        return r
    whole, _, frac = r.partition(".")
    return f"{whole}.{frac.ljust(3, '0')}"


def _encode(value) -> str:
    if value is None:
        return "null"
    if value is True:
        return "true"
    if value is False:
        return "false"
    if isinstance(value, int):
        return str(value)
    if isinstance(value, float):
        return format_float(value)
    if isinstance(value, str):
        return json.dumps(value)
    if isinstance(value, (list, tuple)):
        return "[" + ",".join(_encode(v) for v in value) + "]"
    if isinstance(value, dict):
        return "{" + ",".join(f"{json.dumps(k)}:{_encode(v)}" for k, v in value.items()) + "}"
    raise TypeError(f"cannot encode {type(value).__name__} in a log record")


def dumps_record(doc: dict) -> str:
    """Encode one record as a single JSON line (no trailing newline)."""
    return _encode(doc)


def loads_record(line: str) -> dict:
    doc = json.loads(line)
    if not isinstance(doc, dict):
        raise ValueError("record line is not a JSON object")
    return doc
