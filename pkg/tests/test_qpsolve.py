import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from anglecov.qpsolve import QpProblem, kkt_residuals, solve
from oracles import dual_projected_gradient


def test_single_bound_example():
    # min x^2 s.t. x >= 1
    res = solve(QpProblem([1.0], [[1.0]], [-1.0], [-np.inf], [np.inf]))
    assert res.ok
    assert res.x[0] == pytest.approx(1.0, abs=1e-14)
    assert res.row_duals[0] == pytest.approx(2.0, abs=1e-12)
    assert res.objective == pytest.approx(1.0)


def test_unconstrained_optimum_feasible():
    res = solve(QpProblem([1.0, 2.0], [[1.0, 1.0]], [3.0], [-1, -1], [1, 1]))
    np.testing.assert_array_equal(res.x, 0.0)
    assert res.active_rows == [] and res.iterations == 0


def test_box_only_problem():
    res = solve(QpProblem([1.0, 1.0], np.zeros((0, 2)), [], [0.5, -2.0], [1.0, -1.0]))
    np.testing.assert_allclose(res.x, [0.5, -1.0])
    assert res.active_lower == [0] and res.active_upper == [1]
    assert res.lower_duals[0] == pytest.approx(1.0) and res.upper_duals[1] == pytest.approx(2.0)


def test_infeasible_detected():
    res = solve(QpProblem([1.0], [[1.0], [-1.0]], [-2.0, 1.0], [-10], [10]))
    assert res.status == "infeasible" and not res.ok
    res = solve(QpProblem([1.0], [[0.0]], [-1.0], [-1], [1]))
    assert res.status == "infeasible"


def test_duplicate_rows_are_handled():
    row = [1.0, 1.0]
    res = solve(QpProblem([1.0, 1.0], [row, row, [2.0, 2.0]], [-1.0, -1.0, -2.0], [-5, -5], [5, 5]))
    assert res.ok
    np.testing.assert_allclose(res.x, [0.5, 0.5], atol=1e-12)
    assert res.kkt_residual < 1e-10


def test_problem_validation():
    with pytest.raises(ValueError):
        QpProblem([0.0], [[1.0]], [0.0], [-1], [1])
    with pytest.raises(ValueError):
        QpProblem([1.0], [[1.0]], [0.0, 1.0], [-1], [1])
    with pytest.raises(ValueError):
        QpProblem([1.0], [[1.0]], [0.0], [1], [-1])
    with pytest.raises(ValueError):
        QpProblem([1.0], [[np.nan]], [0.0], [-1], [1])


def random_problem(rng, nv=None, nr=None, spread=(-4, 1), row_scale=(-2, 3)):
    nv = nv or int(rng.integers(1, 6))
    nr = int(rng.integers(0, 5)) if nr is None else nr
    diag = 10.0 ** rng.uniform(*spread, nv)
    rows = rng.normal(size=(nr, nv)) * 10.0 ** rng.uniform(*row_scale, (nr, 1))
    lo = -rng.uniform(0.1, 2, nv)
    hi = rng.uniform(0.1, 2, nv)
    # offsets chosen so that a random point inside the box is feasible
    z0 = rng.uniform(lo, hi)
    offsets = -(rows @ z0) + rng.uniform(0, 1, nr) * np.linalg.norm(rows, axis=1)
    return QpProblem(diag, rows, offsets, lo, hi)


def test_against_dual_oracle(rng):
    for _ in range(60):
        p = random_problem(rng, spread=(-1, 1), row_scale=(-1, 1))
        res = solve(p)
        assert res.ok
        assert res.kkt_residual < 1e-8
        z, lam, dual = dual_projected_gradient(p.diag, p.rows, p.offsets, p.lower, p.upper)
        tol = 1e-6 * max(1.0, abs(res.objective))
        # weak duality: any dual value bounds the optimum from below
        assert dual <= res.objective + tol
        # and the oracle closes the gap
        assert res.objective <= dual + tol
        if len(p.rows) == 0 or np.min(p.rows @ z + p.offsets) >= 0.0:
            assert res.objective <= p.objective(z) + tol


def test_stress_kkt(rng):
    worst = 0.0
    for _ in range(2000):
        p = random_problem(rng, nv=5, nr=2)
        res = solve(p)
        assert res.ok
        worst = max(worst, res.kkt_residual)
    assert worst < 1e-8


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(1e-3, 1e3))
def test_scaling_objective_keeps_solution_feasible(seed, scale):
    rng = np.random.default_rng(seed)
    p = random_problem(rng, nv=5, nr=2)
    q = QpProblem(p.diag * scale, p.rows, p.offsets, p.lower, p.upper)
    for prob in (p, q):
        res = solve(prob)
        assert res.ok
        r = kkt_residuals(prob, res.x, res.row_duals, res.lower_duals, res.upper_duals)
        assert r["primal"] < 1e-8
    # a uniform scale of the objective does not move the minimizer
    np.testing.assert_allclose(solve(q).x, solve(p).x, atol=1e-8)


def test_deterministic(rng):
    p = random_problem(rng, nv=5, nr=2)
    a, b = solve(p), solve(p)
    assert a.x.tobytes() == b.x.tobytes()
    assert a.row_duals.tobytes() == b.row_duals.tobytes()


def test_dual_oracle_sanity():
    z, lam, dual = dual_projected_gradient([1.0], [[1.0]], [-1.0], [-np.inf], [np.inf])
    assert dual == pytest.approx(1.0, abs=1e-8)
    assert z[0] == pytest.approx(1.0, abs=1e-8)
    assert lam[0] == pytest.approx(2.0, abs=1e-7)
    assert math.isfinite(z[0])
