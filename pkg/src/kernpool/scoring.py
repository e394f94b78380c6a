"""Kernel scores, CRPS, energy score and squared MMD for discrete forecasts.

All scores take weighted atoms, so pooled forecasts with unequal atom weights
are scored directly. The batched variants operate on a whole panel at once:
``atoms`` has shape ``(n, M, d)``, ``weights`` is ``(M,)`` or ``(n, M)`` and
``obs`` is ``(n, d)``.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .kernels import DiscreteDistribution, EnergyKernel, KernelSpec, _norm, as_point, cross_gram, embed_against_point

__all__ = [
    "ScoreConsistencyError",
    "NEG_TOL",
    "check_alphas",
    "kernel_score",
    "crps",
    "crps_sorted",
    "energy_score",
    "squared_mmd",
    "empirical_score",
    "kernel_score_batch",
    "energy_score_batch",
]

NEG_TOL = 1e-9


class ScoreConsistencyError(ArithmeticError):
    """A quantity that must be non-negative came out clearly negative."""


def _clamp(value):
    v = np.asarray(value, dtype=float)
    if np.any(v < -NEG_TOL):
        raise ScoreConsistencyError(f"negative score {v.min()!r} beyond tolerance {NEG_TOL}")
    v = np.where(v < 0, 0.0, v)
    return float(v) if v.ndim == 0 else v


def check_alphas(alphas, n: int | None = None) -> np.ndarray:
    """Validate case scaling factors: finite, non-negative, not all zero."""
    a = np.asarray(alphas, dtype=float).reshape(-1)
    if n is not None and a.shape[0] != n:
        raise ValueError(f"expected {n} alphas, got {a.shape[0]}")
    if a.size == 0 or not np.all(np.isfinite(a)) or np.any(a < 0):
        raise ValueError("alphas must be finite and non-negative")
    if not np.any(a > 0):
        raise ValueError("alphas must not all be zero")
    return a


def kernel_score(spec: KernelSpec, F: DiscreteDistribution, y) -> float:
    """S_k(F, y) = E k(X, X')/2 + k(y, y)/2 - E k(X, y)."""
    p = as_point(y, F.dim)
    kyy = float(spec.diag(p[None, :])[0])
    value = 0.5 * cross_gram(spec, F, F) + 0.5 * kyy - embed_against_point(spec, F, p)
    return _clamp(value)


def _abs_terms(F: DiscreteDistribution, y: np.ndarray):
    w = F.weights
    misfit = np.sum(w * _norm(F.atoms - y[None, :]))
    spread = np.sum(np.outer(w, w) * _norm(F.atoms[:, None, :] - F.atoms[None, :, :]))
    return misfit, spread


def crps(F: DiscreteDistribution, y) -> float:
    """CRPS(F, y) = E|X - y| - E|X - X'|/2 for a univariate forecast."""
    if F.dim != 1:
        raise ValueError(f"CRPS needs d = 1, got d = {F.dim}")
    misfit, spread = _abs_terms(F, as_point(y, 1))
    return _clamp(misfit - 0.5 * spread)


def crps_sorted(members, y: float) -> float:
    """CRPS of an equally weighted sample via the sorted-sample identity.

    sum_{m<m'} (x_(m') - x_(m)) = sum_m (2m - M - 1) x_(m) for 1-based ranks m.
    """
    x = np.sort(np.asarray(members, dtype=float).reshape(-1))
    m = x.size
    rank = np.arange(1, m + 1)
    pairs = np.sum((2 * rank - m - 1) * x)
    return float(np.sum(np.abs(x - y)) / m - pairs / m**2)


def energy_score(F: DiscreteDistribution, y) -> float:
    """ES(F, y) = E|X - y| - E|X - X'|/2 with the Euclidean norm."""
    misfit, spread = _abs_terms(F, as_point(y, F.dim))
    return _clamp(misfit - 0.5 * spread)


def squared_mmd(spec: KernelSpec, F: DiscreteDistribution, G: DiscreteDistribution) -> float:
    """|mu_F - mu_G|^2 in the RKHS of ``spec``."""
    if F.dim != G.dim:
        raise ValueError(f"dimension mismatch: {F.dim} vs {G.dim}")
    value = cross_gram(spec, F, F) + cross_gram(spec, G, G) - 2.0 * cross_gram(spec, F, G)
    return _clamp(value)


def empirical_score(spec: KernelSpec, forecasts: Sequence[DiscreteDistribution], obs, alphas=None) -> float:
    """sum_i alpha_i S_k(F_i, y_i)."""
    obs = list(obs)
    if len(forecasts) != len(obs):
        raise ValueError(f"{len(forecasts)} forecasts but {len(obs)} observations")
    a = check_alphas(np.ones(len(obs)) if alphas is None else alphas, len(obs))
    scores = np.array([kernel_score(spec, F, y) for F, y in zip(forecasts, obs)])
    return float(np.sum(a * scores))


# -- batched forms -----------------------------------------------------------

def _batch_weights(weights, n: int, m: int) -> np.ndarray:
    w = np.asarray(weights, dtype=float)
    if w.ndim == 1:
        w = np.broadcast_to(w, (n, m))
    if w.shape != (n, m):
        raise ValueError(f"weights shape {w.shape} does not match atoms ({n}, {m})")
    return w


def kernel_score_batch(spec: KernelSpec, atoms: np.ndarray, weights, obs: np.ndarray) -> np.ndarray:
    """Per-case kernel scores for a panel of weighted-atom forecasts."""
    atoms = np.asarray(atoms, dtype=float)
    obs = np.asarray(obs, dtype=float)
    n, m, d = atoms.shape
    if obs.shape != (n, d):
        raise ValueError(f"obs shape {obs.shape} does not match atoms {atoms.shape}")
    w = _batch_weights(weights, n, m)
    G = spec.gram(atoms, atoms)
    self_term = np.sum((G * w[:, :, None] * w[:, None, :]).reshape(n, -1), axis=1)
    g = spec.gram(atoms, obs[:, None, :])[:, :, 0]
    cross = np.sum(w * g, axis=1)
    kyy = spec.diag(obs)
    return _clamp(0.5 * self_term + 0.5 * kyy - cross)


def energy_score_batch(atoms: np.ndarray, weights, obs: np.ndarray) -> np.ndarray:
    """Per-case energy scores (CRPS when d = 1), computed without the |x| terms.

    Skipping the norm terms of the energy kernel avoids cancellation when the
    outcomes are far from the origin.
    """
    atoms = np.asarray(atoms, dtype=float)
    obs = np.asarray(obs, dtype=float)
    n, m, d = atoms.shape
    if obs.shape != (n, d):
        raise ValueError(f"obs shape {obs.shape} does not match atoms {atoms.shape}")
    w = _batch_weights(weights, n, m)
    misfit = np.sum(w * _norm(atoms - obs[:, None, :]), axis=1)
    dist = _norm(atoms[:, :, None, :] - atoms[:, None, :, :])
    spread = np.sum((dist * w[:, :, None] * w[:, None, :]).reshape(n, -1), axis=1)
    return _clamp(misfit - 0.5 * spread)


def default_score_batch(spec: KernelSpec, atoms, weights, obs) -> np.ndarray:
    if isinstance(spec, EnergyKernel):
        return energy_score_batch(atoms, weights, obs)
    return kernel_score_batch(spec, atoms, weights, obs)
