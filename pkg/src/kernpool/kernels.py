"""Positive definite kernels on R^d and Gram sums over discrete distributions.

A discrete distribution is a finite set of weighted atoms. Its kernel mean
embedding is never materialised; every quantity needed downstream is a
weighted sum of kernel evaluations, which is what this module computes.

Kernel specifications are small immutable objects. All of them expose a
vectorised ``gram(X, Y)`` over the last two axes, so batched callers can pass
``(..., M, d)`` and ``(..., N, d)`` arrays and get ``(..., M, N)`` back.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Union

import numpy as np

__all__ = [
    "EnergyKernel",
    "GaussianKernel",
    "ChainedKernel",
    "KernelSpec",
    "DiscreteDistribution",
    "as_point",
    "eval_kernel",
    "cross_gram",
    "embed_against_point",
    "parse_kernel",
    "format_kernel",
    "median_bandwidth",
    "resolve_bandwidth",
]


def _norm(diff: np.ndarray) -> np.ndarray:
    if diff.shape[-1] == 1:
        return np.abs(diff[..., 0])
    return np.sqrt(np.sum(diff * diff, axis=-1))


@dataclass(frozen=True)
class EnergyKernel:
    """k(x, x') = |x| + |x'| - |x - x'| with the Euclidean norm."""

    def gram(self, X: np.ndarray, Y: np.ndarray) -> np.ndarray:
        nx = _norm(X)
        ny = _norm(Y)
        dist = _norm(X[..., :, None, :] - Y[..., None, :, :])
        return nx[..., :, None] + ny[..., None, :] - dist

    def diag(self, X: np.ndarray) -> np.ndarray:
        # |x| + |x| - 0
        return 2.0 * _norm(X)


@dataclass(frozen=True)
class GaussianKernel:
    """k(x, x') = exp(-|x - x'|^2 / (2 sigma^2)).

    ``sigma=None`` means "median heuristic, not yet resolved"; such a kernel
    must go through :func:`resolve_bandwidth` before it can be evaluated.
    """

    sigma: float | None = 1.0

    def __post_init__(self):
        if self.sigma is not None and not (np.isfinite(self.sigma) and self.sigma > 0):
            raise ValueError(f"Gaussian bandwidth must be positive, got {self.sigma}")

    def _sigma(self) -> float:
        if self.sigma is None:
            raise ValueError("Gaussian bandwidth is unresolved; call resolve_bandwidth first")
        return self.sigma

    def gram(self, X: np.ndarray, Y: np.ndarray) -> np.ndarray:
        s = self._sigma()
        diff = X[..., :, None, :] - Y[..., None, :, :]
        sq = np.sum(diff * diff, axis=-1)
        return np.exp(-sq / (2.0 * s * s))

    def diag(self, X: np.ndarray) -> np.ndarray:
        self._sigma()
        return np.ones(X.shape[:-1])


@dataclass(frozen=True)
class ChainedKernel:
    """Inner kernel evaluated on the thresholded points max(x, t), componentwise.

    Chaining with this transform gives threshold-weighted kernel scores, which
    ignore differences between outcomes that both lie below ``threshold``.
    """

    inner: "KernelSpec"
    threshold: float

    def __post_init__(self):
        if not np.isfinite(self.threshold):
            raise ValueError("threshold must be finite")

    def transform(self, X: np.ndarray) -> np.ndarray:
        return np.maximum(X, self.threshold)

    def gram(self, X: np.ndarray, Y: np.ndarray) -> np.ndarray:
        return self.inner.gram(self.transform(X), self.transform(Y))

    def diag(self, X: np.ndarray) -> np.ndarray:
        return self.inner.diag(self.transform(X))


KernelSpec = Union[EnergyKernel, GaussianKernel, ChainedKernel]


def as_point(x, d: int | None = None) -> np.ndarray:
    """Validate and return a point as a 1-D float array."""
    p = np.atleast_1d(np.asarray(x, dtype=float))
    if p.ndim != 1 or p.size == 0:
        raise ValueError(f"a point must be a non-empty vector, got shape {p.shape}")
    if not np.all(np.isfinite(p)):
        raise ValueError("point coordinates must be finite")
    if d is not None and p.size != d:
        raise ValueError(f"dimension mismatch: expected {d}, got {p.size}")
    return p


@dataclass(frozen=True, eq=False)
class DiscreteDistribution:
    """A finite weighted sample of points in R^d.

    ``atoms`` may be given as a flat sequence for d = 1. Weights default to
    uniform. Both arrays are stored read-only.
    """

    atoms: np.ndarray
    weights: np.ndarray | None = None

    def __post_init__(self):
        atoms = np.asarray(self.atoms, dtype=float)
        if atoms.ndim == 1:
            atoms = atoms[:, None]
        if atoms.ndim != 2 or atoms.shape[0] == 0 or atoms.shape[1] == 0:
            raise ValueError(f"atoms must have shape (M, d) with M, d >= 1, got {atoms.shape}")
        if not np.all(np.isfinite(atoms)):
            raise ValueError("atoms must be finite")
        m = atoms.shape[0]
        if self.weights is None:
            weights = np.full(m, 1.0 / m)
        else:
            weights = np.asarray(self.weights, dtype=float).reshape(-1)
            if weights.shape[0] != m:
                raise ValueError(f"{m} atoms but {weights.shape[0]} weights")
            if np.any(weights < 0) or not np.all(np.isfinite(weights)):
                raise ValueError("weights must be finite and non-negative")
            if abs(weights.sum() - 1.0) > 1e-12:
                raise ValueError(f"weights must sum to 1, got {weights.sum()!r}")
        atoms.setflags(write=False)
        weights.setflags(write=False)
        object.__setattr__(self, "atoms", atoms)
        object.__setattr__(self, "weights", weights)

    @property
    def size(self) -> int:
        return self.atoms.shape[0]

    @property
    def dim(self) -> int:
        return self.atoms.shape[1]

    @classmethod
    def dirac(cls, x) -> "DiscreteDistribution":
        return cls(as_point(x)[None, :])

    def same_as(self, other: "DiscreteDistribution", tol: float = 1e-12) -> bool:
        """Equality as measures: merge duplicate atoms, then compare."""
        a, wa = _merged(self)
        b, wb = _merged(other)
        return a.shape == b.shape and np.array_equal(a, b) and np.allclose(wa, wb, atol=tol, rtol=0)


def _merged(F: DiscreteDistribution):
    atoms, inverse = np.unique(F.atoms, axis=0, return_inverse=True)
    weights = np.zeros(atoms.shape[0])
    np.add.at(weights, inverse.reshape(-1), F.weights)
    keep = weights > 0
    return atoms[keep], weights[keep]


def _check_dims(*dims: int) -> None:
    if len(set(dims)) != 1:
        raise ValueError(f"dimension mismatch: {dims}")


def eval_kernel(spec: KernelSpec, x, x2) -> float:
    """k(x, x2) for two points of equal dimension."""
    p = as_point(x)
    q = as_point(x2, p.size)
    return float(spec.gram(p[None, :], q[None, :])[0, 0])


def cross_gram(spec: KernelSpec, P: DiscreteDistribution, Q: DiscreteDistribution) -> float:
    """E k(X, X') with X ~ P and X' ~ Q independent."""
    _check_dims(P.dim, Q.dim)
    G = spec.gram(P.atoms, Q.atoms)
    return float(np.sum(G * np.outer(P.weights, Q.weights)))


def embed_against_point(spec: KernelSpec, P: DiscreteDistribution, y) -> float:
    """E k(X, y) with X ~ P, i.e. the mean embedding of P evaluated at y."""
    q = as_point(y, P.dim)
    g = spec.gram(P.atoms, q[None, :])[:, 0]
    return float(np.sum(P.weights * g))


# -- specification strings ---------------------------------------------------

def parse_kernel(text: str) -> KernelSpec:
    """Parse ``energy``, ``gaussian:<sigma>``, ``gaussian:median`` or
    ``chained:threshold=<t>:<inner>``."""
    text = text.strip()
    head, _, rest = text.partition(":")
    head = head.lower()
    if head == "energy" and not rest:
        return EnergyKernel()
    if head == "gaussian":
        if rest == "median":
            return GaussianKernel(sigma=None)
        try:
            return GaussianKernel(sigma=float(rest))
        except ValueError:
            raise ValueError(f"bad Gaussian bandwidth in kernel spec {text!r}") from None
    if head == "chained":
        param, _, inner = rest.partition(":")
        key, _, value = param.partition("=")
        if key != "threshold" or not inner:
            raise ValueError(f"expected chained:threshold=<t>:<inner>, got {text!r}")
        return ChainedKernel(inner=parse_kernel(inner), threshold=float(value))
    raise ValueError(f"unknown kernel spec {text!r}")


def format_kernel(spec: KernelSpec) -> str:
    """Inverse of :func:`parse_kernel` (floats written with ``repr``)."""
    if isinstance(spec, EnergyKernel):
        return "energy"
    if isinstance(spec, GaussianKernel):
        return "gaussian:median" if spec.sigma is None else f"gaussian:{spec.sigma!r}"
    if isinstance(spec, ChainedKernel):
        return f"chained:threshold={spec.threshold!r}:{format_kernel(spec.inner)}"
    raise TypeError(f"not a kernel spec: {spec!r}")


def median_bandwidth(points: np.ndarray, max_points: int = 2000) -> float:
    """Median pairwise Euclidean distance of a point cloud.

    Large clouds are thinned to ``max_points`` evenly spaced rows so the
    result stays deterministic.
    """
    X = np.asarray(points, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if X.shape[0] > max_points:
        X = X[np.linspace(0, X.shape[0] - 1, max_points).astype(int)]
    if X.shape[0] < 2:
        raise ValueError("need at least two points for the median heuristic")
    iu = np.triu_indices(X.shape[0], k=1)
    dist = _norm(X[:, None, :] - X[None, :, :])[iu]
    med = float(np.median(dist))
    if med <= 0:
        raise ValueError("median pairwise distance is zero; pass an explicit bandwidth")
    return med


def resolve_bandwidth(spec: KernelSpec, points: np.ndarray) -> KernelSpec:
    """Replace any median-heuristic Gaussian bandwidth with its value on ``points``."""
    if isinstance(spec, GaussianKernel) and spec.sigma is None:
        return GaussianKernel(sigma=median_bandwidth(points))
    if isinstance(spec, ChainedKernel):
        pts = np.maximum(np.asarray(points, dtype=float), spec.threshold)
        return ChainedKernel(inner=resolve_bandwidth(spec.inner, pts), threshold=spec.threshold)
    return spec
