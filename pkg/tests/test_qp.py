import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from conftest import random_panel
from kernpool import (
    EnergyKernel,
    GaussianKernel,
    Panel,
    QpProblem,
    SolverConfig,
    Strategy,
    WeightVector,
    alpha_decay,
    assemble,
    combine_panel,
    fit,
    project_simplex,
    solve,
)
from kernpool.qp import NotPsdError, format_diagnostics, kkt_residual, objective
from kernpool.scoring import kernel_score_batch

E = EnergyKernel()


def _loop_assemble(k, panel, strategy, alphas):
    """(A, c) straight from the defining double sums."""
    atoms = panel.sorted_members() if strategy is Strategy.ORDERED else panel.flat_members()
    n, K, _ = atoms.shape
    if strategy is Strategy.DISCRETE:
        owners = [j for j, m in enumerate(panel.member_counts) for _ in range(m)]
        J = panel.J
        A = np.zeros((J, J))
        c = np.zeros(J)
        M = panel.member_counts
        for i in range(n):
            for a in range(K):
                ja = owners[a]
                c[ja] -= alphas[i] / M[ja] * k(list(atoms[i, a]), list(panel.obs[i]))
                for b in range(K):
                    jb = owners[b]
                    A[ja, jb] += alphas[i] / (M[ja] * M[jb]) * k(list(atoms[i, a]), list(atoms[i, b]))
        return A, c
    A = np.zeros((K, K))
    c = np.zeros(K)
    for i in range(n):
        for a in range(K):
            c[a] -= alphas[i] * k(list(atoms[i, a]), list(panel.obs[i]))
            for b in range(K):
                A[a, b] += alphas[i] * k(list(atoms[i, a]), list(atoms[i, b]))
    return A, c


def test_assemble_worked_example(two_dirac_panel):
    P = assemble(E, two_dirac_panel, Strategy.DISCRETE)
    np.testing.assert_array_equal(P.A, [[0.0, 0.0], [0.0, 4.0]])
    np.testing.assert_array_equal(P.c, [0.0, -2.0])
    assert P.space == "model"
    assert P.offset == 1.0


def test_assemble_duplicated_cases_double(two_dirac_panel, rng):
    for panel in (two_dirac_panel, random_panel(rng, n=1)):
        twice = panel.subset([0, 0])
        for s in (Strategy.DISCRETE, Strategy.POINT, Strategy.ORDERED):
            a, b = assemble(E, panel, s), assemble(E, twice, s)
            np.testing.assert_array_equal(b.A, 2 * a.A)
            np.testing.assert_array_equal(b.c, 2 * a.c)


def test_point_on_single_member_models_equals_discrete(rng):
    panel = random_panel(rng, J=3, M_max=1, n=6, d=2)
    a, b = assemble(E, panel, Strategy.DISCRETE), assemble(E, panel, Strategy.POINT)
    np.testing.assert_array_equal(a.A, b.A)
    np.testing.assert_array_equal(a.c, b.c)


def test_assemble_errors(two_dirac_panel):
    with pytest.raises(ValueError, match="equal"):
        assemble(E, two_dirac_panel, Strategy.EQUAL)
    with pytest.raises(ValueError):
        assemble(E, two_dirac_panel, Strategy.DISCRETE, alphas=[0.0])
    with pytest.raises(ValueError):
        assemble(E, two_dirac_panel, Strategy.DISCRETE, alphas=[1.0, 1.0])
    with pytest.raises(ValueError):
        Panel((), np.zeros((1, 1)))


@pytest.mark.parametrize("strategy", [Strategy.DISCRETE, Strategy.POINT, Strategy.ORDERED])
def test_assemble_matches_loop_oracle(strategy, rng):
    for spec, k in ((E, oracles.energy_k), (GaussianKernel(0.9), oracles.gaussian_k(0.9))):
        panel = random_panel(rng, J=3, M_max=3, n=7)
        alphas = rng.uniform(0.1, 2, size=panel.n)
        P = assemble(spec, panel, strategy, alphas)
        A, c = _loop_assemble(k, panel, strategy, alphas)
        np.testing.assert_allclose(P.A, A, rtol=1e-12, atol=1e-12)
        np.testing.assert_allclose(P.c, c, rtol=1e-12, atol=1e-12)
        np.testing.assert_array_equal(P.A, P.A.T)


def test_assemble_thread_count_is_bitwise_irrelevant(rng):
    panel = random_panel(rng, J=3, M_max=10, n=300)
    for s in (Strategy.DISCRETE, Strategy.POINT, Strategy.ORDERED):
        a, b = assemble(E, panel, s, n_jobs=1), assemble(E, panel, s, n_jobs=8)
        np.testing.assert_array_equal(a.A, b.A)
        np.testing.assert_array_equal(a.c, b.c)


def test_project_simplex_examples():
    np.testing.assert_allclose(project_simplex([0.3, 0.7]), [0.3, 0.7], atol=1e-15)
    np.testing.assert_array_equal(project_simplex([1.0, 1.0]), [0.5, 0.5])
    np.testing.assert_array_equal(project_simplex([2.0, 0.0]), [1.0, 0.0])
    with pytest.raises(ValueError):
        project_simplex([])


@given(st.lists(st.floats(-100, 100, allow_nan=False), min_size=1, max_size=12))
@settings(max_examples=200, deadline=None)
def test_project_simplex_properties(v):
    v = np.array(v)
    w = project_simplex(v)
    assert np.all(w >= 0) and abs(w.sum() - 1.0) <= 1e-12
    # Optimality: v - w is constant on the support and no larger off it.
    r = v - w
    s = w > 0
    assert np.ptp(r[s]) <= 1e-9 * (1 + np.abs(v).max())
    if np.any(~s):
        assert r[~s].max() <= r[s].min() + 1e-9 * (1 + np.abs(v).max())


def test_solve_examples():
    sol = solve(QpProblem([[0.0, 0.0], [0.0, 4.0]], [0.0, -2.0]))
    np.testing.assert_allclose(sol.w.weights, [0.5, 0.5], atol=1e-6)
    assert sol.objective == pytest.approx(-0.5, abs=1e-12)
    assert sol.converged
    assert oracles.simplex_grid(2, 10000).shape == (10001, 2)
    W = oracles.simplex_grid(2, 10000)
    assert sol.objective <= (0.5 * 4 * W[:, 1] ** 2 - 2 * W[:, 1]).min() + 1e-12
    sol = solve(QpProblem(np.eye(3), np.zeros(3)))
    np.testing.assert_allclose(sol.w.weights, [1 / 3] * 3, atol=1e-9)
    sol = solve(QpProblem(np.zeros((2, 2)), [0.0, -1.0]))
    np.testing.assert_allclose(sol.w.weights, [0.0, 1.0], atol=1e-9)


def test_solve_single_weight():
    sol = solve(QpProblem([[2.0]], [-1.0], offset=3.0))
    assert sol.w.weights.tolist() == [1.0]
    assert sol.objective == 0.0 and sol.score == 3.0


def test_solve_rejects_non_psd():
    with pytest.raises(NotPsdError):
        solve(QpProblem([[1.0, 0.0], [0.0, -1.0]], [0.0, 0.0]))
    with pytest.raises(ValueError, match="symmetric"):
        QpProblem([[1.0, 0.5], [0.0, 1.0]], [0.0, 0.0])
    with pytest.raises(ValueError):
        QpProblem(np.eye(2), [0.0])


def test_solve_reports_non_convergence(rng):
    X = rng.normal(size=(6, 6))
    A = X @ X.T
    sol = solve(QpProblem(A, rng.normal(size=6) * 5), SolverConfig(max_iter=1))
    assert not sol.converged
    assert sol.kkt_residual > 1e-8
    assert sol.iterations <= 1


def test_solver_config_validation():
    with pytest.raises(ValueError):
        SolverConfig(kkt_tol=0)
    with pytest.raises(ValueError):
        SolverConfig(max_iter=0)
    with pytest.raises(ValueError):
        SolverConfig(ridge=-1)
    with pytest.raises(ValueError):
        SolverConfig(power_iters=10)


@given(seed=st.integers(0, 2**32 - 1), K=st.integers(2, 6))
@settings(max_examples=40, deadline=None)
def test_solve_against_grid(seed, K):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(K, int(rng.integers(1, K + 2))))
    A = X @ X.T
    c = rng.normal(size=K) * 2
    sol = solve(QpProblem(A, c))
    assert sol.converged
    assert sol.objective <= oracles.grid_minimum(A, c) + 1e-6
    # KKT certificate on the original scale.
    g = A @ sol.w.weights + c
    supp = sol.w.weights > 1e-10
    assert g[supp].max() - g.min() <= 1e-8 * max(np.trace(A) / K, 1.0)


def test_fit_worked_example(two_dirac_panel):
    sol = fit(E, two_dirac_panel, Strategy.DISCRETE)
    np.testing.assert_allclose(sol.w.weights, [0.5, 0.5], atol=1e-6)
    assert sol.score == pytest.approx(0.5, abs=1e-10)


def test_fit_perfect_component_gets_all_weight(rng):
    n, d = 12, 1
    obs = rng.normal(size=(n, d))
    perfect = obs[:, None, :]
    other = obs[:, None, :] + 1.0 + rng.normal(size=(n, 3, d))
    panel = Panel((perfect, other), obs)
    for spec in (GaussianKernel(1.0), GaussianKernel(None)):
        sol = fit(spec, panel, Strategy.DISCRETE)
        np.testing.assert_allclose(sol.w.weights, [1.0, 0.0], atol=1e-6)
        P = assemble(GaussianKernel(1.0), panel, Strategy.DISCRETE)
        if spec.sigma is not None:
            assert sol.objective <= oracles.grid_minimum(P.A, P.c) + 1e-6


def test_fit_identical_components_gives_uniform(rng):
    X = rng.normal(size=(15, 4, 1))
    panel = Panel((X, X, X), rng.normal(size=(15, 1)))
    sol = fit(E, panel, Strategy.DISCRETE)
    np.testing.assert_allclose(sol.w.weights, [1 / 3] * 3, atol=1e-9)


def test_fit_equal_strategy(rng):
    panel = random_panel(rng, J=3, n=8)
    sol = fit(E, panel, Strategy.EQUAL)
    np.testing.assert_array_equal(sol.w.weights, [1 / 3] * 3)
    atoms, w = combine_panel(panel, Strategy.EQUAL)
    assert sol.score == pytest.approx(float(np.sum(kernel_score_batch(E, atoms, w, panel.obs))), rel=1e-12)
    assert sol.iterations == 0


def test_fit_ordered_needs_univariate(rng):
    with pytest.raises(ValueError, match="univariate"):
        fit(E, random_panel(rng, d=2), Strategy.ORDERED)


@pytest.mark.parametrize("strategy", [Strategy.DISCRETE, Strategy.POINT, Strategy.ORDERED])
def test_objective_identity(strategy, rng):
    for spec in (E, GaussianKernel(1.2)):
        panel = random_panel(rng, J=3, M_max=4, n=9)
        alphas = rng.uniform(0.2, 1.5, size=panel.n)
        P = assemble(spec, panel, strategy, alphas)
        K = P.size
        gaps = []
        for _ in range(12):
            w = WeightVector(rng.dirichlet(np.ones(K)), strategy.space)
            atoms, aw = combine_panel(panel, strategy, w)
            score = float(np.sum(alphas * kernel_score_batch(spec, atoms, aw, panel.obs)))
            gaps.append(score - objective(P, w.weights))
        assert np.ptp(gaps) <= 1e-9
        assert gaps[0] == pytest.approx(P.offset, abs=1e-9)


def test_solution_score_equals_pooled_training_score(rng):
    panel = random_panel(rng, J=3, n=20)
    for strategy in (Strategy.DISCRETE, Strategy.POINT, Strategy.ORDERED):
        sol = fit(E, panel, strategy)
        atoms, aw = combine_panel(panel, strategy, sol.w)
        assert sol.score == pytest.approx(float(np.sum(kernel_score_batch(E, atoms, aw, panel.obs))), rel=1e-10)


def test_nesting_random_panels(rng):
    for _ in range(20):
        panel = random_panel(rng, J=int(rng.integers(1, 4)), M_max=6, n=int(rng.integers(1, 30)))
        for spec in (E, GaussianKernel(None)):
            d = fit(spec, panel, Strategy.DISCRETE)
            o = fit(spec, panel, Strategy.ORDERED)
            assert o.objective <= d.objective + 1e-9


def test_alpha_scale_equivariance(rng):
    panel = random_panel(rng, J=3, n=25)
    base = fit(E, panel, Strategy.POINT)
    for lam in (2.0, 0.25, 1024.0):
        scaled = fit(E, panel, Strategy.POINT, alphas=np.full(panel.n, lam))
        np.testing.assert_array_equal(scaled.w.weights, base.w.weights)
        assert scaled.objective == pytest.approx(lam * base.objective, rel=1e-12)
    for lam in (3.0, 0.7):
        P1 = assemble(E, panel, Strategy.POINT)
        P2 = assemble(E, panel, Strategy.POINT, np.full(panel.n, lam))
        np.testing.assert_allclose(P2.A, lam * P1.A, rtol=1e-13)
        scaled = fit(E, panel, Strategy.POINT, alphas=np.full(panel.n, lam))
        np.testing.assert_allclose(scaled.w.weights, base.w.weights, atol=1e-9)


def test_kkt_certificate(rng):
    for _ in range(10):
        panel = random_panel(rng, J=3, M_max=5, n=15)
        for strategy in (Strategy.DISCRETE, Strategy.POINT, Strategy.ORDERED):
            P = assemble(E, panel, strategy)
            sol = solve(P)
            assert sol.converged and sol.kkt_residual <= 1e-8
            s = np.trace(P.A) / P.size
            assert kkt_residual(P.A / s, P.c / s, sol.w.weights) <= 1e-8 + 1e-10


def test_solve_is_deterministic(rng):
    panel = random_panel(rng, J=3, M_max=8, n=40)
    P = assemble(E, panel, Strategy.ORDERED)
    a, b = solve(P), solve(P)
    np.testing.assert_array_equal(a.w.weights, b.w.weights)
    assert a.objective == b.objective and a.iterations == b.iterations


def test_alpha_decay():
    np.testing.assert_array_equal(alpha_decay(3, 0.5), [0.25, 0.5, 1.0])
    np.testing.assert_array_equal(alpha_decay(4), np.ones(4))
    for lam in (0.0, 1.5, -0.1):
        with pytest.raises(ValueError):
            alpha_decay(3, lam)


def test_format_diagnostics(two_dirac_panel):
    text = format_diagnostics(fit(E, two_dirac_panel, Strategy.DISCRETE))
    keys = dict(line.split(" = ", 1) for line in text.splitlines())
    assert keys["converged"] == "true"
    assert {"iterations", "kkt_residual", "objective", "objective_trace_length"} <= set(keys)
