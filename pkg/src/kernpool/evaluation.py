"""Verification: grouped scores, skill, randomised PIT and member MSE."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy import stats

from .kernels import DiscreteDistribution, EnergyKernel, KernelSpec, as_point
from .pooling import Panel
from .scoring import default_score_batch, energy_score_batch

__all__ = [
    "ScoreReport",
    "pit",
    "pit_batch",
    "pit_histogram",
    "ks_statistic",
    "member_mse",
    "case_scores",
    "score_by_group",
    "skill",
    "write_report",
    "REPORT_COLUMNS",
]

REPORT_COLUMNS = ("method", "group", "value", "n", "seed")


@dataclass(frozen=True)
class ScoreReport:
    group: str
    method: str
    value: float
    n: int


def _uniform(seed: int, case_index: int) -> float:
    # One stream per (seed, case): draws do not depend on evaluation order.
    return float(np.random.default_rng([int(seed), int(case_index)]).random())


def pit(F: DiscreteDistribution, y, seed: int = 0, case_index: int = 0) -> float:
    """Randomised PIT: F(y-) + V (F(y) - F(y-)) with V ~ U(0, 1)."""
    if F.dim != 1:
        raise ValueError("PIT needs a univariate forecast")
    yv = as_point(y, 1)[0]
    x = F.atoms[:, 0]
    lower = float(np.sum(F.weights[x < yv]))
    upper = float(np.sum(F.weights[x <= yv]))
    if upper == lower:
        return min(max(upper, 0.0), 1.0)
    u = lower + _uniform(seed, case_index) * (upper - lower)
    return min(max(u, 0.0), 1.0)


def pit_batch(atoms: np.ndarray, weights, obs: np.ndarray, seed: int = 0) -> np.ndarray:
    """PIT values for a panel of pooled forecasts (``atoms`` (n, K, 1), ``obs`` (n, 1))."""
    atoms = np.asarray(atoms, dtype=float)
    if atoms.ndim != 3 or atoms.shape[2] != 1:
        raise ValueError("PIT needs univariate forecasts")
    x = atoms[:, :, 0]
    y = np.asarray(obs, dtype=float).reshape(-1)
    w = np.broadcast_to(np.asarray(weights, dtype=float), x.shape)
    lower = np.sum(np.where(x < y[:, None], w, 0.0), axis=1)
    upper = np.sum(np.where(x <= y[:, None], w, 0.0), axis=1)
    u = upper.copy()
    for i in np.nonzero(upper > lower)[0]:
        u[i] = lower[i] + _uniform(seed, i) * (upper[i] - lower[i])
    return np.clip(u, 0.0, 1.0)


def pit_histogram(pits: Iterable[float], bins: int = 10) -> np.ndarray:
    """Counts in equal-width bins on [0, 1]; bins are right-closed, the first also left-closed."""
    if bins < 2:
        raise ValueError("need at least two bins")
    u = np.asarray(list(pits) if not isinstance(pits, np.ndarray) else pits, dtype=float).reshape(-1)
    if np.any((u < 0) | (u > 1)):
        raise ValueError("PIT values must lie in [0, 1]")
    idx = np.clip(np.ceil(u * bins).astype(int) - 1, 0, bins - 1)
    return np.bincount(idx, minlength=bins)


def ks_statistic(pits) -> float:
    """Kolmogorov-Smirnov distance of PIT values from U(0, 1)."""
    return float(stats.kstest(np.asarray(pits, dtype=float), "uniform").statistic)


def member_mse(panel: Panel) -> list:
    """Mean squared error of each member treated as a point forecast, per model."""
    out = []
    for X in panel.members:
        err = X - panel.obs[:, None, :]
        out.append(np.sum(err * err, axis=2).mean(axis=0))
    return out


def case_scores(outputs, obs: np.ndarray, score: str = "crps", spec: KernelSpec | None = None) -> np.ndarray:
    """Per-case scores of ``(atoms, weights)`` pooled forecasts."""
    atoms, weights = outputs
    if score == "crps":
        if atoms.shape[2] != 1:
            raise ValueError("CRPS needs univariate forecasts; use score='energy'")
        return energy_score_batch(atoms, weights, obs)
    if score == "energy":
        return energy_score_batch(atoms, weights, obs)
    if score == "kernel":
        return default_score_batch(spec or EnergyKernel(), atoms, weights, obs)
    raise ValueError(f"unknown score {score!r}")


def score_by_group(panel: Panel, outputs: Mapping[str, tuple], score: str = "crps",
                   group_by: Sequence[str] = (), spec: KernelSpec | None = None) -> list:
    """Mean score per (group, method), ordered by group label then by ``outputs`` order."""
    per_case = {m: case_scores(out, panel.obs, score, spec) for m, out in outputs.items()}
    reports = []
    for label, idx in panel.groups(group_by).items():
        if idx.size == 0:
            continue
        for method, s in per_case.items():
            reports.append(ScoreReport(label, method, float(np.mean(s[idx])), int(idx.size)))
    return reports


def skill(score_method: float, score_ref: float) -> float:
    """1 - score / reference score."""
    if not score_ref > 0:
        raise ValueError(f"reference score must be positive, got {score_ref}")
    return 1.0 - score_method / score_ref


def write_report(path, rows: Iterable[Mapping], seed: int, extra: Sequence[str] = ()) -> None:
    """Write rows with columns method, group, value, n, seed (+ ``extra``)."""
    columns = list(REPORT_COLUMNS) + list(extra)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            rec = dict(row, seed=seed)
            writer.writerow([_fmt(rec.get(c, "")) for c in columns])


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)
