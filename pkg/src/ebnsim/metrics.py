"""Per-request figures of merit computed from attempt records.

Processing overhead sums the time of *every* attempt (failed ones included)
and divides by the number of successes. Capacity averages ``1/min(delta, t_j)``
over successful attempts only, so failed attempts cost time but add nothing
to capacity.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ebnsim.errors import NoMeasurementsError, NoSuccessesError

ATTEMPT_COLUMNS = ("request_id", "j", "c", "t_e", "t_s", "t_c", "t_p", "t_total_ns", "fidelity", "bit_s", "bit_d")
SUMMARY_COLUMNS = ("request_id", "T_ms", "C_eprs_per_s", "F_mean", "F_stderr", "QBER", "attempts", "successes", "aborted")


@dataclass
class AttemptRecord:
    request_id: str
    j: int
    c: int
    t_e: int
    t_s: int
    t_c: int
    t_p: int
    fidelity: float | None = None
    bit_s: int | None = None
    bit_d: int | None = None
    t_total: int = field(default=-1)

    def __post_init__(self):
        parts = self.t_e + self.t_s + self.t_c + self.t_p
        if self.t_total < 0:
            self.t_total = parts
        assert self.t_total == parts, f"accounting identity violated: {self.t_total} != {parts}"
        assert min(self.t_e, self.t_s, self.t_c, self.t_p) >= 0, "negative time component"
        if self.c == 0:
            self.fidelity = None


@dataclass
class RequestSummary:
    request_id: str
    T_ms: float
    C: float
    F_mean: float | None
    F_stderr: float | None
    qber: float | None
    attempts: int
    successes: int
    aborted: bool

    def row(self) -> dict:
        return {
            "request_id": self.request_id,
            "T_ms": self.T_ms,
            "C_eprs_per_s": self.C,
            "F_mean": self.F_mean,
            "F_stderr": self.F_stderr,
            "QBER": self.qber,
            "attempts": self.attempts,
            "successes": self.successes,
            "aborted": int(self.aborted),
        }


def processing_overhead(records) -> float:
    """Mean time per successful pair in ms; ``inf`` with no successes."""
    records = list(records)
    if not records:
        raise ValueError("need at least one attempt record")
    successes = sum(r.c for r in records)
    if successes == 0:
        return math.inf
    return sum(r.t_total for r in records) / successes / 1e6


def capacity(records, delta_ns: float) -> float:
    """EPR pairs per second, clamping each attempt's time at the persistence ``delta``."""
    records = list(records)
    if not records:
        raise ValueError("need at least one attempt record")
    good = [r for r in records if r.c == 1]
    if not good:
        return 0.0
    total = 0.0
    for r in good:
        t = min(delta_ns, r.t_total) * 1e-9
        total += 1.0 / t if t > 0 else math.inf
    return total / len(good)


def fidelity_mean(records) -> tuple[float, float]:
    """Mean fidelity over successes and its standard error."""
    f = np.array([r.fidelity for r in records if r.c == 1], dtype=float)
    if f.size == 0:
        raise NoSuccessesError("no successful attempts")
    stderr = float(f.std(ddof=1) / math.sqrt(f.size)) if f.size > 1 else 0.0
    return float(f.mean()), stderr


def qber(records) -> float:
    """Fraction of successful attempts whose end bits disagree."""
    pairs = [(r.bit_s, r.bit_d) for r in records if r.c == 1 and r.bit_s is not None]
    if not pairs:
        raise NoMeasurementsError("no measured attempts")
    return sum(1 for a, b in pairs if a != b) / len(pairs)


def summarize(request_id: str, records, delta_ns: float, aborted: bool = False) -> RequestSummary:
    records = list(records)
    successes = sum(r.c for r in records)
    if records:
        T = processing_overhead(records)
        C = capacity(records, delta_ns)
    else:
        T, C = math.inf, 0.0
    F = Fe = None
    if successes:
        F, Fe = fidelity_mean(records)
    try:
        q = qber(records)
    except NoMeasurementsError:
        q = None
    return RequestSummary(request_id, T, C, F, Fe, q, len(records), successes, aborted)


def fmt(value) -> str:
    """Fixed 12-significant-digit formatting used by every CSV writer."""
    if value is None:
        return ""
    if isinstance(value, bool):
        return str(int(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        v = float(value)
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        if math.isnan(v):
            return "nan"
        return f"{v:.12g}"
    return str(value)


def write_csv(path, columns, rows) -> None:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([fmt(row.get(c)) for c in columns])


def attempt_row(r: AttemptRecord) -> dict:
    return {
        "request_id": r.request_id,
        "j": r.j,
        "c": r.c,
        "t_e": r.t_e,
        "t_s": r.t_s,
        "t_c": r.t_c,
        "t_p": r.t_p,
        "t_total_ns": r.t_total,
        "fidelity": r.fidelity,
        "bit_s": r.bit_s,
        "bit_d": r.bit_d,
    }


def write_attempts(path, records) -> None:
    write_csv(path, ATTEMPT_COLUMNS, (attempt_row(r) for r in records))


def write_summary(path, summaries) -> None:
    write_csv(path, SUMMARY_COLUMNS, (s.row() for s in summaries))
