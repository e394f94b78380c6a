"""Quadratic programs for optimum-score pooling weights.

For a kernel score the weighted training score of a pooled forecast is

    sum_i alpha_i S_k(F_i(w), y_i) = w'Aw/2 + c'w + offset,

with A positive semidefinite, so the optimal weights solve a convex QP over
the probability simplex. :func:`assemble` builds (A, c, offset) for each
strategy and :func:`solve` minimises it by accelerated projected gradient.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .kernels import KernelSpec, resolve_bandwidth
from .pooling import Panel, Strategy, WeightVector, combine_panel, equal_weights
from .scoring import check_alphas, default_score_batch

__all__ = [
    "QpProblem",
    "SolverConfig",
    "Solution",
    "NotPsdError",
    "alpha_decay",
    "assemble",
    "project_simplex",
    "solve",
    "fit",
    "objective",
    "kkt_residual",
    "format_diagnostics",
]

CHUNK = 64
SUPPORT_TOL = 1e-10


class NotPsdError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class QpProblem:
    """minimise w'Aw/2 + c'w over the simplex; ``offset`` turns the value into the training score."""

    A: np.ndarray
    c: np.ndarray
    space: str = "model"
    offset: float = 0.0

    def __post_init__(self):
        A = np.array(self.A, dtype=float)
        c = np.array(self.c, dtype=float).reshape(-1)
        k = c.size
        if k == 0 or A.shape != (k, k):
            raise ValueError(f"A has shape {A.shape} but c has length {k}")
        if not (np.all(np.isfinite(A)) and np.all(np.isfinite(c))):
            raise ValueError("A and c must be finite")
        scale = max(np.abs(A).max(), 1.0)
        if np.abs(A - A.T).max() > 1e-10 * scale:
            raise ValueError("A is not symmetric")
        A.setflags(write=False)
        c.setflags(write=False)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "c", c)

    @property
    def size(self) -> int:
        return self.c.size


@dataclass(frozen=True)
class SolverConfig:
    kkt_tol: float = 1e-8
    max_iter: int = 50_000
    ridge: float = 1e-10
    power_iters: int = 100

    def __post_init__(self):
        if not self.kkt_tol > 0:
            raise ValueError("kkt_tol must be positive")
        if self.max_iter < 1 or self.power_iters < 30:
            raise ValueError("max_iter must be >= 1 and power_iters >= 30")
        if self.ridge < 0:
            raise ValueError("ridge must be non-negative")


@dataclass(frozen=True, eq=False)
class Solution:
    """Solver output.

    ``objective`` is w'Aw/2 + c'w on the unscaled problem; ``score`` adds the
    problem offset and equals the weighted training score of the pool.
    ``kkt_residual`` is measured on the problem normalised by trace(A)/K.
    """

    w: WeightVector
    objective: float
    iterations: int = 0
    kkt_residual: float = 0.0
    converged: bool = True
    score: float | None = None
    history: tuple = ()


def alpha_decay(n: int, lam: float = 1.0) -> np.ndarray:
    """alpha_i = lam**(n - i), i = 1..n: the most recent case gets weight 1."""
    if not 0 < lam <= 1:
        raise ValueError(f"decay factor must lie in (0, 1], got {lam}")
    return lam ** np.arange(n - 1, -1, -1, dtype=float)


def _tree_sum(parts: list) -> np.ndarray:
    while len(parts) > 1:
        paired = [parts[k] + parts[k + 1] for k in range(0, len(parts) - 1, 2)]
        if len(parts) % 2:
            paired.append(parts[-1])
        parts = paired
    return parts[0]


def _chunk_terms(spec: KernelSpec, atoms, obs, alphas, lo: int, hi: int):
    a = alphas[lo:hi]
    X = atoms[lo:hi]
    G = spec.gram(X, X)
    g = spec.gram(X, obs[lo:hi, None, :])[:, :, 0]
    B = np.sum(a[:, None, None] * G, axis=0)
    b = np.sum(a[:, None] * g, axis=0)
    return B, b


def _member_terms(spec: KernelSpec, atoms: np.ndarray, obs: np.ndarray, alphas: np.ndarray, n_jobs: int):
    # Fixed chunk boundaries and a fixed reduction tree keep the result
    # independent of the number of worker threads.
    n = atoms.shape[0]
    bounds = [(lo, min(lo + CHUNK, n)) for lo in range(0, n, CHUNK)]
    if n_jobs > 1 and len(bounds) > 1:
        with ThreadPoolExecutor(max_workers=n_jobs) as pool:
            parts = list(pool.map(lambda b: _chunk_terms(spec, atoms, obs, alphas, *b), bounds))
    else:
        parts = [_chunk_terms(spec, atoms, obs, alphas, *b) for b in bounds]
    B = _tree_sum([p[0] for p in parts])
    b = _tree_sum([p[1] for p in parts])
    return B, b


def _mirror(B: np.ndarray) -> np.ndarray:
    upper = np.triu(B)
    return upper + np.triu(B, 1).T


def assemble(spec: KernelSpec, panel: Panel, strategy, alphas=None, n_jobs: int = 1) -> QpProblem:
    """Kernel matrix A and vector c for ``strategy`` over ``panel``.

    Model-level problems (lp-discrete) average the member-level blocks:
    A_jl = sum_i alpha_i/(M_j M_l) sum_m sum_m' k(x_jm, x_lm').
    """
    strategy = Strategy.parse(strategy)
    if strategy is Strategy.EQUAL:
        raise ValueError("equal weights need no estimation")
    a = check_alphas(panel.alphas if alphas is None else alphas, panel.n)
    atoms = panel.sorted_members() if strategy is Strategy.ORDERED else panel.flat_members()
    B, b = _member_terms(spec, atoms, panel.obs, a, n_jobs)
    offset = 0.5 * float(np.sum(a * spec.diag(panel.obs)))
    if strategy is Strategy.DISCRETE:
        counts = panel.member_counts
        edges = np.cumsum([0, *counts])
        J = len(counts)
        A = np.empty((J, J))
        for j in range(J):
            for l in range(j, J):
                block = B[edges[j]:edges[j + 1], edges[l]:edges[l + 1]]
                A[j, l] = A[l, j] = np.sum(block) / (counts[j] * counts[l])
        # Adding 0.0 turns -0.0 into 0.0.
        c = np.array([-np.sum(b[edges[j]:edges[j + 1]]) / counts[j] for j in range(J)]) + 0.0
        return QpProblem(A, c, "model", offset)
    return QpProblem(_mirror(B), -b + 0.0, "member", offset)


def project_simplex(v) -> np.ndarray:
    """Euclidean projection onto {w >= 0, sum w = 1} by sorting and thresholding."""
    v = np.asarray(v, dtype=float).reshape(-1)
    if v.size == 0:
        raise ValueError("cannot project an empty vector")
    if not np.all(np.isfinite(v)):
        raise ValueError("vector must be finite")
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - 1.0
    ind = np.arange(1, v.size + 1)
    rho = np.nonzero(u - css / ind > 0)[0][-1]
    theta = css[rho] / (rho + 1)
    w = np.maximum(v - theta, 0.0)
    return w / w.sum()


def objective(problem: QpProblem, w) -> float:
    w = np.asarray(w, dtype=float)
    return float(0.5 * w @ problem.A @ w + problem.c @ w)


def kkt_residual(A: np.ndarray, c: np.ndarray, w: np.ndarray) -> float:
    """Largest gap between a supported gradient entry and the smallest one.

    On the simplex, w is optimal iff every coordinate with w_j > 0 attains
    min_l (Aw + c)_l.
    """
    g = A @ w + c
    support = w > SUPPORT_TOL
    return float(np.max(g[support]) - np.min(g))


def _check_psd(A: np.ndarray) -> None:
    k = A.shape[0]
    lam_min = float(np.linalg.eigvalsh(A)[0])
    tol = 1e-8 * max(np.trace(A) / k, np.finfo(float).tiny)
    if lam_min < -tol:
        raise NotPsdError(f"A is not positive semidefinite (smallest eigenvalue {lam_min:.3e})")


def _power_lmax(A: np.ndarray, iters: int) -> float:
    k = A.shape[0]
    v = np.full(k, 1.0 / math.sqrt(k)) + np.linspace(0.0, 1e-3, k)
    v /= np.linalg.norm(v)
    for _ in range(iters):
        u = A @ v
        nu = np.linalg.norm(u)
        if nu == 0.0:
            return 0.0
        v = u / nu
    return float(v @ A @ v)


def _polish(A: np.ndarray, c: np.ndarray, w: np.ndarray):
    """Solve the equality-constrained QP on the current support exactly."""
    S = np.nonzero(w > 0)[0]
    s = S.size
    kkt = np.zeros((s + 1, s + 1))
    kkt[:s, :s] = A[np.ix_(S, S)]
    kkt[:s, s] = 1.0
    kkt[s, :s] = 1.0
    if np.linalg.cond(kkt) > 1e12:
        return None
    rhs = np.concatenate([-c[S], [1.0]])
    sol = np.linalg.solve(kkt, rhs)
    if np.any(sol[:s] < 0):
        return None
    out = np.zeros_like(w)
    out[S] = sol[:s]
    return out / out.sum()


def solve(problem: QpProblem, config: SolverConfig = SolverConfig()) -> Solution:
    """Minimise w'Aw/2 + c'w over the simplex.

    The problem is divided by trace(A)/K and ridge-regularised, then solved by
    FISTA with exact simplex projection, step 1/L from power iteration,
    restarts whenever the objective increases, and a periodic exact solve on
    the current support. The iteration starts from uniform weights, so flat
    directions of A resolve towards the uniform end. Non-convergence is
    reported through ``converged=False``.
    """
    A0, c0 = problem.A, problem.c
    k = problem.size
    if k == 1:
        w = np.ones(1)
        return Solution(WeightVector(w, problem.space), objective(problem, w), 0, 0.0, True,
                        objective(problem, w) + problem.offset)
    _check_psd(A0)
    tr = float(np.trace(A0)) / k
    scale = tr if tr > 0 else (float(np.abs(c0).max()) or 1.0)
    A = A0 / scale
    c = c0 / scale
    if tr > 0 and config.ridge > 0:
        A = A + config.ridge * np.eye(k)
    L = 1.01 * _power_lmax(A, config.power_iters)
    if L <= 0:
        L = 1.0

    def f(x):
        return 0.5 * x @ A @ x + c @ x

    w = np.full(k, 1.0 / k)
    fw = f(w)
    y = w
    t = 1.0
    res = kkt_residual(A, c, w)
    history = [fw]
    it = 0
    while res > config.kkt_tol and it < config.max_iter:
        it += 1
        w_new = project_simplex(y - (A @ y + c) / L)
        f_new = f(w_new)
        if f_new > fw:
            if t > 1.0:
                y, t = w, 1.0
            else:
                L *= 2.0
            continue
        t_new = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * t * t))
        y = w_new + ((t - 1.0) / t_new) * (w_new - w)
        w, fw, t = w_new, f_new, t_new
        history.append(fw)
        res = kkt_residual(A, c, w)
        if res > config.kkt_tol and it % 10 == 1:
            cand = _polish(A, c, w)
            if cand is not None:
                f_cand = f(cand)
                r_cand = kkt_residual(A, c, cand)
                if f_cand <= fw + 1e-14 * (1.0 + abs(fw)) and r_cand < res:
                    w, fw, res, y, t = cand, f_cand, r_cand, cand, 1.0
                    history.append(fw)
    wv = WeightVector(w, problem.space)
    obj = objective(problem, wv.weights)
    return Solution(wv, obj, it, res, res <= config.kkt_tol, obj + problem.offset, tuple(float(h) * scale for h in history))


def fit(spec: KernelSpec, panel: Panel, strategy, alphas=None, config: SolverConfig = SolverConfig(),
        n_jobs: int = 1) -> Solution:
    """Optimal pooling weights for ``strategy`` on a training panel.

    A median-heuristic Gaussian bandwidth is resolved on the panel's members
    and observations first. ``equal`` returns uniform model weights without
    solving anything.
    """
    strategy = Strategy.parse(strategy)
    if strategy is Strategy.ORDERED and panel.d != 1:
        raise ValueError("lp-ordered needs univariate forecasts (d = 1)")
    spec = resolve_bandwidth(spec, np.concatenate([panel.flat_members().reshape(-1, panel.d), panel.obs]))
    a = check_alphas(panel.alphas if alphas is None else alphas, panel.n)
    if strategy is Strategy.EQUAL:
        w = equal_weights(panel.J)
        atoms, weights = combine_panel(panel, strategy, w)
        score = float(np.sum(a * default_score_batch(spec, atoms, weights, panel.obs)))
        offset = 0.5 * float(np.sum(a * spec.diag(panel.obs)))
        return Solution(w, score - offset, 0, 0.0, True, score)
    return solve(assemble(spec, panel, strategy, a, n_jobs), config)


def format_diagnostics(sol: Solution) -> str:
    """Plain-text ``key = value`` block describing a solver run."""
    lines = [
        f"space = {sol.w.space}",
        f"size = {len(sol.w)}",
        f"converged = {str(sol.converged).lower()}",
        f"iterations = {sol.iterations}",
        f"kkt_residual = {sol.kkt_residual!r}",
        f"objective = {sol.objective!r}",
        f"score = {sol.score!r}",
    ]
    if sol.history:
        head = ", ".join(repr(h) for h in sol.history[:5])
        lines.append(f"objective_trace_head = {head}")
        lines.append(f"objective_trace_last = {sol.history[-1]!r}")
        lines.append(f"objective_trace_length = {len(sol.history)}")
    return "\n".join(lines)
