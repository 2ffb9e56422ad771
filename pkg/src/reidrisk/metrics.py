"""Outcome statistics over attack runs: precision, FAR, Pearson correlation
with exact Student-t significance, grouped aggregation, and report emission.
"""

from __future__ import annotations

import csv
import json
import math
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

RUNS_CSV_COLUMNS = (
    "n_known",
    "n_unknown",
    "n_overlap",
    "n_comparisons",
    "ta",
    "fa",
    "precision",
    "far",
    "threshold",
    "seed",
    "variant",
)

SUMMARY_CSV_COLUMNS = ("group", "mean_ta", "mean_fa", "mean_precision", "mean_far", "n_runs")


@dataclass(frozen=True)
class RunRow:
    """One attack run's geometry, counts, and calibration context."""

    n_known: int
    n_unknown: int
    n_overlap: int
    n_comparisons: int
    ta: int
    fa: int
    threshold: float
    seed: int
    variant: str = "all"

    def __post_init__(self) -> None:
        if self.n_comparisons != self.n_known * self.n_unknown:
            raise ValueError(
                f"n_comparisons {self.n_comparisons} != n_known*n_unknown "
                f"({self.n_known}*{self.n_unknown})"
            )
        if min(self.ta, self.fa, self.n_overlap) < 0:
            raise ValueError("counts must be non-negative")

    @property
    def n_nontarget_comparisons(self) -> int:
        return self.n_comparisons - self.n_overlap

    @property
    def precision(self) -> float | None:
        return precision(self.ta, self.fa)

    @property
    def far_rate(self) -> float | None:
        n = self.n_nontarget_comparisons
        return far(self.fa, n) if n > 0 else None


@dataclass(frozen=True)
class StatResult:
    r: float
    t: float
    df: int
    p: float


@dataclass(frozen=True)
class GroupSummary:
    group: float
    mean_ta: float
    mean_fa: float
    mean_precision: float | None
    mean_far: float | None
    n_runs: int
    n_undefined_precision: int = 0


def precision(ta: int, fa: int) -> float | None:
    """TA/(TA+FA); None (undefined) when there are no acceptances at all."""
    if ta < 0 or fa < 0:
        raise ValueError("counts must be non-negative")
    total = ta + fa
    return ta / total if total > 0 else None


def far(fa: int, n_nontarget_comparisons: int) -> float:
    """False acceptances per non-target comparison."""
    if n_nontarget_comparisons <= 0:
        raise ValueError("n_nontarget_comparisons must be positive")
    return fa / n_nontarget_comparisons


def pearson_r(xs: Sequence[float], ys: Sequence[float]) -> float:
    """Sample Pearson correlation coefficient."""
    x = np.asarray(xs, dtype=np.float64)
    y = np.asarray(ys, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError(f"inputs must be equal-length 1-D, got {x.shape} vs {y.shape}")
    if x.size < 3:
        raise ValueError(f"need at least 3 points, got {x.size}")
    xd = x - x.mean()
    yd = y - y.mean()
    sx = float(xd @ xd)
    sy = float(yd @ yd)
    if sx == 0.0 or sy == 0.0:
        raise ValueError("correlation undefined for constant input")
    return float(np.clip((xd @ yd) / math.sqrt(sx * sy), -1.0, 1.0))


def t_test_r(r: float, n: int) -> StatResult:
    """Two-sided significance of a correlation via Student's t.

    t = r*sqrt(n-2)/sqrt(1-r^2) on n-2 degrees of freedom; the tail
    probability is the regularized incomplete beta I_{df/(df+t^2)}(df/2, 1/2).
    |r| = 1 saturates to an infinite statistic with p = 0.
    """
    if n < 3:
        raise ValueError(f"need n >= 3 observations, got {n}")
    if abs(r) > 1.0:
        raise ValueError(f"correlation {r} outside [-1, 1]")
    df = n - 2
    if abs(r) == 1.0:
        return StatResult(r=r, t=math.copysign(math.inf, r), df=df, p=0.0)
    t = r * math.sqrt(df) / math.sqrt(1.0 - r * r)
    p = _reg_inc_beta(0.5 * df, 0.5, df / (df + t * t))
    return StatResult(r=r, t=t, df=df, p=p)


def _reg_inc_beta(a: float, b: float, x: float) -> float:
    """Regularized incomplete beta I_x(a, b) via the standard continued fraction."""
    if x <= 0.0:
        return 0.0
    if x >= 1.0:
        return 1.0
    ln_front = (
        math.lgamma(a + b)
        - math.lgamma(a)
        - math.lgamma(b)
        + a * math.log(x)
        + b * math.log1p(-x)
    )
    if x < (a + 1.0) / (a + b + 2.0):
        return math.exp(ln_front) * _beta_cf(a, b, x) / a
    return 1.0 - math.exp(ln_front) * _beta_cf(b, a, 1.0 - x) / b


def _beta_cf(a: float, b: float, x: float, max_iter: int = 300, eps: float = 3e-16) -> float:
    tiny = 1e-300
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < tiny:
        d = tiny
    d = 1.0 / d
    h = d
    for m in range(1, max_iter + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < tiny:
            d = tiny
        c = 1.0 + aa / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < tiny:
            d = tiny
        c = 1.0 + aa / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < eps:
            return h
    raise RuntimeError(f"incomplete beta continued fraction did not converge (a={a}, b={b}, x={x})")


def aggregate(rows: Sequence[RunRow], group_by: str = "n_comparisons") -> list[GroupSummary]:
    """Grouped arithmetic means; undefined precisions are excluded from the
    precision mean and counted separately."""
    if not rows:
        raise ValueError("no rows to aggregate")
    if group_by not in RunRow.__dataclass_fields__:
        raise ValueError(f"unknown group_by field {group_by!r}")
    groups: dict[float, list[RunRow]] = {}
    for row in rows:
        groups.setdefault(getattr(row, group_by), []).append(row)
    summaries = []
    for key in sorted(groups):
        members = groups[key]
        precisions = [p for p in (m.precision for m in members) if p is not None]
        fars = [f for f in (m.far_rate for m in members) if f is not None]
        summaries.append(
            GroupSummary(
                group=key,
                mean_ta=float(np.mean([m.ta for m in members])),
                mean_fa=float(np.mean([m.fa for m in members])),
                mean_precision=float(np.mean(precisions)) if precisions else None,
                mean_far=float(np.mean(fars)) if fars else None,
                n_runs=len(members),
                n_undefined_precision=len(members) - len(precisions),
            )
        )
    return summaries


def emit_report(
    run_rows: Sequence[RunRow],
    summary_rows: Sequence[GroupSummary],
    out_dir: str | Path,
    formats: Sequence[str] = ("csv", "json"),
    config: dict | None = None,
) -> dict[str, Path]:
    """Write per-run and summary tables; the JSON report embeds the full
    configuration so a run is reproducible from its own artifacts."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written: dict[str, Path] = {}
    unknown = set(formats) - {"csv", "json"}
    if unknown:
        raise ValueError(f"unknown report formats: {sorted(unknown)}")
    if "csv" in formats:
        runs_path = out_dir / "runs.csv"
        _write_csv(runs_path, RUNS_CSV_COLUMNS, [_run_csv_values(r) for r in run_rows])
        written["runs_csv"] = runs_path
        summary_path = out_dir / "summary.csv"
        _write_csv(
            summary_path,
            SUMMARY_CSV_COLUMNS,
            [
                (
                    s.group,
                    s.mean_ta,
                    s.mean_fa,
                    "" if s.mean_precision is None else s.mean_precision,
                    "" if s.mean_far is None else s.mean_far,
                    s.n_runs,
                )
                for s in summary_rows
            ],
        )
        written["summary_csv"] = summary_path
    if "json" in formats:
        payload = {
            "config": config or {},
            "summary": [
                {
                    "group": s.group,
                    "mean_ta": s.mean_ta,
                    "mean_fa": s.mean_fa,
                    "mean_precision": s.mean_precision,
                    "mean_far": s.mean_far,
                    "n_runs": s.n_runs,
                    "n_undefined_precision": s.n_undefined_precision,
                }
                for s in summary_rows
            ],
            "runs": [
                {
                    "n_known": r.n_known,
                    "n_unknown": r.n_unknown,
                    "n_overlap": r.n_overlap,
                    "n_comparisons": r.n_comparisons,
                    "ta": r.ta,
                    "fa": r.fa,
                    "precision": r.precision,
                    "far": r.far_rate,
                    "threshold": r.threshold,
                    "seed": r.seed,
                    "variant": r.variant,
                }
                for r in run_rows
            ],
        }
        json_path = out_dir / "summary.json"
        _atomic_write_text(json_path, json.dumps(payload, indent=2, sort_keys=True) + "\n")
        written["summary_json"] = json_path
    return written


def load_runs_csv(path: str | Path) -> list[RunRow]:
    rows = []
    with Path(path).open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or tuple(reader.fieldnames) != RUNS_CSV_COLUMNS:
            raise ValueError(
                f"{path}: unexpected columns {reader.fieldnames}, expected {list(RUNS_CSV_COLUMNS)}"
            )
        for raw in reader:
            rows.append(
                RunRow(
                    n_known=int(raw["n_known"]),
                    n_unknown=int(raw["n_unknown"]),
                    n_overlap=int(raw["n_overlap"]),
                    n_comparisons=int(raw["n_comparisons"]),
                    ta=int(raw["ta"]),
                    fa=int(raw["fa"]),
                    threshold=float(raw["threshold"]),
                    seed=int(raw["seed"]),
                    variant=raw["variant"],
                )
            )
    return rows


def _run_csv_values(r: RunRow) -> tuple:
    return (
        r.n_known,
        r.n_unknown,
        r.n_overlap,
        r.n_comparisons,
        r.ta,
        r.fa,
        "" if r.precision is None else repr(r.precision),
        "" if r.far_rate is None else repr(r.far_rate),
        repr(r.threshold),
        r.seed,
        r.variant,
    )


def _write_csv(path: Path, columns: Sequence[str], rows: Sequence[Sequence]) -> None:
    lines = [",".join(columns)]
    for row in rows:
        lines.append(",".join(str(v) for v in row))
    _atomic_write_text(path, "\n".join(lines) + "\n")


def _atomic_write_text(path: Path, text: str) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    os.replace(tmp, path)
