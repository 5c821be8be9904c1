"""Success-rate statistics: Wilson score intervals, Macro SR and report tables."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from statistics import NormalDist

Z95 = 1.959963984540054


@dataclass(frozen=True)
class TrialOutcome:
    k: int
    n: int

    def __post_init__(self):
        if self.n < 1 or not 0 <= self.k <= self.n:
            raise ValueError(f"need 0 <= k <= n and n >= 1, got k={self.k}, n={self.n}")


@dataclass(frozen=True)
class IntervalResult:
    sr: float
    lo: float
    hi: float
    center: float

    @property
    def half_width(self) -> float:
        return (self.hi - self.lo) / 2

    def format_pct(self, digits: int = 1) -> str:
        return f"{100 * self.sr:.{digits}f} ± {100 * self.half_width:.{digits}f}"


def z_value(confidence: float) -> float:
    if confidence == 0.95:
        return Z95
    if not 0 < confidence < 1:
        raise ValueError(f"confidence must be in (0, 1), got {confidence}")
    return NormalDist().inv_cdf(0.5 + confidence / 2)


def wilson_interval(outcome: TrialOutcome, confidence: float = 0.95) -> IntervalResult:
    k, n = outcome.k, outcome.n
    z = z_value(confidence)
    p = k / n
    z2 = z * z
    denom = 1 + z2 / n
    center = (p + z2 / (2 * n)) / denom
    half = z * math.sqrt(p * (1 - p) / n + z2 / (4 * n * n)) / denom
    # exact endpoints at the boundaries
    lo = 0.0 if k == 0 else max(0.0, center - half)
    hi = 1.0 if k == n else min(1.0, center + half)
    return IntervalResult(p, lo, hi, center)


def macro_sr(srs) -> float:
    srs = list(srs)
    if not srs:
        raise ValueError("macro_sr needs at least one success rate")
    return sum(srs) / len(srs)


class ReportSchemaError(ValueError):
    pass


def aggregate_report(runs, metric: str = "mean_val_loss", higher_is_better: bool = False) -> list[dict]:
    """One row per run, ordered by name, with ``best``/``second`` flags (ties share a flag)."""
    runs = [r if isinstance(r, dict) else r.to_dict() for r in runs]
    versions = sorted({r.get("schema_version") for r in runs}, key=str)
    if len(versions) > 1:
        raise ReportSchemaError(f"mixed report schema versions: {' vs '.join(map(str, versions))}")
    rows = [{"name": r["name"], metric: r[metric], "seed": r.get("seed")} for r in runs]
    rows.sort(key=lambda r: (r["name"], str(r["seed"])))
    distinct = sorted({r[metric] for r in rows}, reverse=higher_is_better)
    best = distinct[0] if distinct else None
    second = distinct[1] if len(distinct) > 1 else None
    for r in rows:
        r["best"] = r[metric] == best
        r["second"] = second is not None and r[metric] == second
    return rows


def summary_csv(rows: list[dict]) -> str:
    if not rows:
        return ""
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
    writer.writeheader()
    writer.writerows(rows)
    return buf.getvalue()
