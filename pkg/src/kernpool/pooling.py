"""Panels of component forecasts and the four pooling strategies.

A :class:`Panel` stores each model's members as an ``(n, M_j, d)`` array.
Pooling with any strategy yields, for every case, the same number of atoms
and the same atom weights; only the atom positions vary by case. The batched
:func:`combine_panel` therefore returns ``(atoms, weights)`` with shapes
``(n, K, d)`` and ``(K,)``.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .kernels import DiscreteDistribution, KernelSpec, as_point
from .scoring import kernel_score

__all__ = [
    "Strategy",
    "WeightVector",
    "ForecastCase",
    "Panel",
    "equal_weights",
    "combine",
    "combine_panel",
    "model_contributions",
    "convexity_gap",
    "SIMPLEX_TOL",
]

SIMPLEX_TOL = 1e-10


class Strategy(str, enum.Enum):
    EQUAL = "equal"
    DISCRETE = "lp-discrete"
    POINT = "lp-point"
    ORDERED = "lp-ordered"

    @classmethod
    def parse(cls, name) -> "Strategy":
        if isinstance(name, cls):
            return name
        try:
            return cls(str(name).strip().lower())
        except ValueError:
            choices = ", ".join(s.value for s in cls)
            raise ValueError(f"unknown strategy {name!r}; choose from {choices}") from None

    @property
    def space(self) -> str:
        """Index space of the weight vector: ``"model"`` or ``"member"``."""
        return "model" if self in (Strategy.EQUAL, Strategy.DISCRETE) else "member"


@dataclass(frozen=True, eq=False)
class WeightVector:
    """A point on the probability simplex indexed by model or by member."""

    weights: np.ndarray
    space: str = "model"

    def __post_init__(self):
        if self.space not in ("model", "member"):
            raise ValueError(f"space must be 'model' or 'member', got {self.space!r}")
        w = np.array(self.weights, dtype=float).reshape(-1)
        if w.size == 0 or not np.all(np.isfinite(w)):
            raise ValueError("weights must be a non-empty finite vector")
        if np.any(w < -SIMPLEX_TOL) or abs(w.sum() - 1.0) > SIMPLEX_TOL:
            raise ValueError(f"weights are not on the simplex (sum={w.sum()!r}, min={w.min()!r})")
        w = np.maximum(w, 0.0)
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)

    def __len__(self):
        return self.weights.size

    def __eq__(self, other):
        if not isinstance(other, WeightVector):
            return NotImplemented
        return self.space == other.space and np.array_equal(self.weights, other.weights)


def equal_weights(J: int) -> WeightVector:
    return WeightVector(np.full(J, 1.0 / J), "model")


@dataclass(frozen=True, eq=False)
class ForecastCase:
    """J component forecasts, each an equally weighted sample, plus the outcome."""

    components: tuple
    observation: np.ndarray
    alpha: float = 1.0

    def __post_init__(self):
        comps = tuple(c if isinstance(c, DiscreteDistribution) else DiscreteDistribution(c) for c in self.components)
        if not comps:
            raise ValueError("a case needs at least one component")
        d = comps[0].dim
        obs = as_point(self.observation, d)
        for c in comps:
            if c.dim != d:
                raise ValueError("components differ in dimension")
            if not np.allclose(c.weights, 1.0 / c.size, rtol=0, atol=1e-15):
                raise ValueError("component members must be equally weighted")
        if not (np.isfinite(self.alpha) and self.alpha >= 0):
            raise ValueError("alpha must be non-negative")
        object.__setattr__(self, "components", comps)
        object.__setattr__(self, "observation", obs)

    @property
    def dim(self) -> int:
        return self.observation.size

    @property
    def member_counts(self) -> tuple:
        return tuple(c.size for c in self.components)


@dataclass(frozen=True, eq=False)
class Panel:
    """n forecast cases sharing the same models, member counts and dimension.

    ``members[j]`` has shape ``(n, M_j, d)``; ``obs`` has shape ``(n, d)``.
    ``meta`` maps optional labels such as ``lead_time`` or ``location`` to
    length-n arrays of strings.
    """

    members: tuple
    obs: np.ndarray
    model_ids: tuple = ()
    alphas: np.ndarray | None = None
    case_ids: tuple = ()
    meta: Mapping[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        obs = np.asarray(self.obs, dtype=float)
        if obs.ndim == 1:
            obs = obs[:, None]
        if obs.ndim != 2 or obs.shape[0] == 0:
            raise ValueError(f"obs must have shape (n, d) with n >= 1, got {obs.shape}")
        n, d = obs.shape
        members = []
        for j, X in enumerate(self.members):
            X = np.asarray(X, dtype=float)
            if X.ndim == 2 and d == 1:
                X = X[:, :, None]
            if X.ndim != 3 or X.shape[0] != n or X.shape[2] != d or X.shape[1] == 0:
                raise ValueError(f"model {j}: members shape {X.shape} incompatible with obs {obs.shape}")
            members.append(X)
        if not members:
            raise ValueError("a panel needs at least one model")
        for X in [obs, *members]:
            if not np.all(np.isfinite(X)):
                raise ValueError("panel values must be finite")
        model_ids = tuple(self.model_ids) or tuple(f"model{j}" for j in range(len(members)))
        if len(model_ids) != len(members) or len(set(model_ids)) != len(model_ids):
            raise ValueError("model_ids must be unique, one per model")
        alphas = np.ones(n) if self.alphas is None else np.asarray(self.alphas, dtype=float).reshape(-1)
        if alphas.shape != (n,) or np.any(alphas < 0) or not np.all(np.isfinite(alphas)):
            raise ValueError("alphas must be n non-negative finite values")
        case_ids = tuple(str(c) for c in self.case_ids) or tuple(str(i) for i in range(n))
        if len(case_ids) != n:
            raise ValueError("case_ids must have one entry per case")
        meta = {}
        for key, values in dict(self.meta).items():
            values = np.asarray(values, dtype=str)
            if values.shape != (n,):
                raise ValueError(f"meta column {key!r} must have one entry per case")
            values.setflags(write=False)
            meta[key] = values
        for arr in [obs, alphas, *members]:
            arr.setflags(write=False)
        object.__setattr__(self, "members", tuple(members))
        object.__setattr__(self, "obs", obs)
        object.__setattr__(self, "model_ids", model_ids)
        object.__setattr__(self, "alphas", alphas)
        object.__setattr__(self, "case_ids", case_ids)
        object.__setattr__(self, "meta", meta)

    @property
    def n(self) -> int:
        return self.obs.shape[0]

    @property
    def d(self) -> int:
        return self.obs.shape[1]

    @property
    def J(self) -> int:
        return len(self.members)

    @property
    def member_counts(self) -> tuple:
        return tuple(X.shape[1] for X in self.members)

    @classmethod
    def from_cases(cls, cases: Sequence[ForecastCase], model_ids: Sequence[str] = (), **kwargs) -> "Panel":
        if not cases:
            raise ValueError("empty panel")
        counts = cases[0].member_counts
        for c in cases:
            if c.member_counts != counts or c.dim != cases[0].dim:
                raise ValueError("cases differ in models, member counts or dimension")
        members = tuple(np.stack([c.components[j].atoms for c in cases]) for j in range(len(counts)))
        obs = np.stack([c.observation for c in cases])
        alphas = np.array([c.alpha for c in cases])
        return cls(members, obs, tuple(model_ids), alphas, **kwargs)

    def case(self, i: int) -> ForecastCase:
        comps = tuple(DiscreteDistribution(X[i]) for X in self.members)
        return ForecastCase(comps, self.obs[i], float(self.alphas[i]))

    @property
    def cases(self) -> list:
        return [self.case(i) for i in range(self.n)]

    def flat_members(self) -> np.ndarray:
        """Members in canonical order (model, then member index): ``(n, M, d)``."""
        return np.concatenate(self.members, axis=1)

    def sorted_members(self) -> np.ndarray:
        """Per case, each model's members sorted ascending (stable), concatenated."""
        if self.d != 1:
            raise ValueError("order statistics need univariate forecasts (d = 1)")
        return np.concatenate([np.sort(X, axis=1, kind="stable") for X in self.members], axis=1)

    def subset(self, index) -> "Panel":
        idx = np.arange(self.n)[index]
        return Panel(
            tuple(X[idx] for X in self.members),
            self.obs[idx],
            self.model_ids,
            self.alphas[idx],
            tuple(self.case_ids[i] for i in idx),
            {k: v[idx] for k, v in self.meta.items()},
        )

    def with_alphas(self, alphas) -> "Panel":
        return Panel(self.members, self.obs, self.model_ids, alphas, self.case_ids, self.meta)

    def with_members(self, members) -> "Panel":
        return Panel(tuple(members), self.obs, self.model_ids, self.alphas, self.case_ids, self.meta)

    def groups(self, keys: Sequence[str]) -> dict:
        """Map group label -> case indices, labels sorted; ``keys=()`` is one group ``"all"``."""
        if not keys:
            return {"all": np.arange(self.n)}
        for k in keys:
            if k not in self.meta:
                raise KeyError(f"panel has no meta column {k!r}")
        labels = ["|".join(f"{k}={self.meta[k][i]}" for k in keys) for i in range(self.n)]
        out = {}
        for lab in sorted(set(labels)):
            out[lab] = np.array([i for i, l in enumerate(labels) if l == lab])
        return out


def _check_space(strategy: Strategy, w: WeightVector, counts: Sequence[int]) -> None:
    if w.space != strategy.space:
        raise ValueError(f"strategy {strategy.value} needs {strategy.space} weights, got {w.space}")
    expected = len(counts) if w.space == "model" else sum(counts)
    if len(w) != expected:
        raise ValueError(f"expected {expected} weights, got {len(w)}")


def _atom_weights(strategy: Strategy, w: WeightVector, counts: Sequence[int]) -> np.ndarray:
    if strategy.space == "model":
        return np.concatenate([np.full(m, wj / m) for wj, m in zip(w.weights, counts)])
    return np.array(w.weights)


def combine(case: ForecastCase, strategy, w: WeightVector | None = None) -> DiscreteDistribution:
    """The pooled predictive distribution for one case.

    Duplicate atoms are kept, so atom k of the result always traces back to
    one member of one model.
    """
    strategy = Strategy.parse(strategy)
    counts = case.member_counts
    if strategy is Strategy.EQUAL:
        w = equal_weights(len(counts)) if w is None else w
    _check_space(strategy, w, counts)
    if strategy is Strategy.ORDERED:
        if case.dim != 1:
            raise ValueError("lp-ordered needs univariate forecasts (d = 1)")
        atoms = np.concatenate([np.sort(c.atoms, axis=0, kind="stable") for c in case.components])
    else:
        atoms = np.concatenate([c.atoms for c in case.components])
    weights = _atom_weights(strategy, w, counts)
    return DiscreteDistribution(atoms, weights / weights.sum())


def combine_panel(panel: Panel, strategy, w: WeightVector | None = None):
    """Batched :func:`combine`: returns ``(atoms (n, K, d), weights (K,))``."""
    strategy = Strategy.parse(strategy)
    counts = panel.member_counts
    if strategy is Strategy.EQUAL:
        w = equal_weights(panel.J) if w is None else w
    _check_space(strategy, w, counts)
    atoms = panel.sorted_members() if strategy is Strategy.ORDERED else panel.flat_members()
    return atoms, _atom_weights(strategy, w, counts)


def model_contributions(w: WeightVector, member_counts: Sequence[int]) -> np.ndarray:
    """Total weight given to each model."""
    counts = [int(m) for m in member_counts]
    if w.space == "model":
        if len(w) != len(counts):
            raise ValueError(f"{len(counts)} models but {len(w)} weights")
        return np.array(w.weights)
    if len(w) != sum(counts):
        raise ValueError(f"member counts sum to {sum(counts)} but there are {len(w)} weights")
    edges = np.cumsum([0] + counts)
    return np.array([w.weights[a:b].sum() for a, b in zip(edges[:-1], edges[1:])])


def convexity_gap(spec: KernelSpec, case: ForecastCase, w: WeightVector) -> float:
    """sum_j w_j S(F_j, y) - S(F_LP, y); non-negative for every kernel score."""
    if w.space != "model":
        raise ValueError("convexity_gap needs model weights")
    comp = np.array([kernel_score(spec, F, case.observation) for F in case.components])
    pooled = kernel_score(spec, combine(case, Strategy.DISCRETE, w), case.observation)
    return float(np.dot(w.weights, comp) - pooled)
