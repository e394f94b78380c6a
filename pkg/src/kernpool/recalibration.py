"""Member-by-member (MBM) recalibration of univariate ensembles.

Each sample is shifted and rescaled around its mean,

    t_m = (a + b * mean) + sqrt(c + d / s^2) * (z_m - mean),

on square-root transformed values z_m = sqrt(x_m), then squared back. The
member ordering is preserved whenever c, d >= 0. Parameters come from a
closed-form method-of-moments fit: ordinary least squares of the
(transformed) observation on the ensemble mean for (a, b), then least
squares of the squared residuals on (s^2, 1) for (c, d) under
non-negativity.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np
from scipy.optimize import nnls

from .pooling import Panel

__all__ = [
    "MbmParams",
    "IDENTITY",
    "mbm_apply",
    "mbm_fit",
    "fit_panel",
    "apply_panel",
]

_TRANSFORMS = ("sqrt", "identity")


@dataclass(frozen=True)
class MbmParams:
    a: float = 0.0
    b: float = 1.0
    c: float = 1.0
    d: float = 0.0

    def __post_init__(self):
        for name in "abcd":
            if not np.isfinite(getattr(self, name)):
                raise ValueError(f"MBM parameter {name} must be finite")
        if self.c < 0 or self.d < 0:
            raise ValueError(f"MBM spread parameters must be non-negative, got c={self.c}, d={self.d}")

    def as_tuple(self) -> tuple:
        return (self.a, self.b, self.c, self.d)


IDENTITY = MbmParams()


def _forward(x: np.ndarray, transform: str) -> np.ndarray:
    if transform == "sqrt":
        if np.any(x < 0):
            raise ValueError("square-root recalibration needs non-negative values")
        return np.sqrt(x)
    return x


def _backward(t: np.ndarray, transform: str) -> np.ndarray:
    if transform == "sqrt":
        # Clipping before squaring keeps the back transform monotone.
        return np.square(np.maximum(t, 0.0))
    return t


def _moments(z: np.ndarray):
    if z.shape[-1] < 2:
        raise ValueError("need at least two members for a sample variance")
    return z.mean(axis=-1), z.var(axis=-1, ddof=1)


def mbm_apply(params: MbmParams, members, transform: str = "sqrt") -> np.ndarray:
    """Recalibrate members along the last axis (one sample or a batch of samples)."""
    if transform not in _TRANSFORMS:
        raise ValueError(f"transform must be one of {_TRANSFORMS}")
    x = np.asarray(members, dtype=float)
    z = _forward(x, transform)
    zbar, s2 = _moments(z)
    if params == IDENTITY:
        return x.copy()
    if params.d > 0:
        if np.any(s2 == 0):
            raise ZeroDivisionError("zero ensemble variance with d > 0")
        scale = np.sqrt(params.c + params.d / np.where(s2 == 0, 1.0, s2))
    else:
        scale = np.full_like(s2, np.sqrt(params.c))
    t = (params.a + params.b * zbar)[..., None] + scale[..., None] * (z - zbar[..., None])
    return _backward(t, transform)


def mbm_fit(members, obs=None, transform: str = "sqrt") -> MbmParams:
    """Method-of-moments MBM parameters from ``members`` (n, M) and ``obs`` (n,).

    ``members`` may instead be a sequence of ``(members, observation)`` pairs.
    """
    if obs is None:
        pairs = list(members)
        members = np.array([np.asarray(p[0], dtype=float) for p in pairs])
        obs = np.array([float(p[1]) for p in pairs])
    X = np.asarray(members, dtype=float)
    y = np.asarray(obs, dtype=float).reshape(-1)
    if X.ndim != 2 or X.shape[0] != y.size:
        raise ValueError(f"members shape {X.shape} does not match {y.size} observations")
    if y.size < 3:
        raise ValueError("need at least 3 cases to fit MBM parameters")
    z = _forward(X, transform)
    zy = _forward(y, transform)
    zbar, s2 = _moments(z)
    if np.ptp(zbar) == 0:
        raise ValueError("degenerate design: all ensemble means are equal")
    design = np.column_stack([np.ones_like(zbar), zbar])
    (a, b), *_ = np.linalg.lstsq(design, zy, rcond=None)
    r2 = (zy - a - b * zbar) ** 2
    if not np.any(s2 > 0):
        return MbmParams(float(a), float(b), 1.0, 0.0)
    (c, d), _ = nnls(np.column_stack([s2, np.ones_like(s2)]), r2)
    return MbmParams(float(a), float(b), float(c), float(d))


def fit_panel(panel: Panel, group_by: Sequence[str] = (), transform: str = "sqrt") -> dict:
    """Separate parameters per model and per group: ``{(model_id, group): MbmParams}``."""
    if panel.d != 1:
        raise ValueError("member-by-member recalibration is univariate")
    out = {}
    for label, idx in panel.groups(group_by).items():
        for mid, X in zip(panel.model_ids, panel.members):
            out[(mid, label)] = mbm_fit(X[idx, :, 0], panel.obs[idx, 0], transform)
    return out


def apply_panel(panel: Panel, params: Mapping, group_by: Sequence[str] = (), transform: str = "sqrt") -> Panel:
    """Recalibrate every model of ``panel`` with parameters from :func:`fit_panel`."""
    if panel.d != 1:
        raise ValueError("member-by-member recalibration is univariate")
    new = [np.array(X) for X in panel.members]
    for label, idx in panel.groups(group_by).items():
        for j, mid in enumerate(panel.model_ids):
            try:
                p = params[(mid, label)]
            except KeyError:
                raise KeyError(f"no MBM parameters for model {mid!r}, group {label!r}") from None
            new[j][idx, :, 0] = mbm_apply(p, panel.members[j][idx, :, 0], transform)
    return panel.with_members(new)
