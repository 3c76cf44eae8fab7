import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ssmid.nelder_mead import (DegenerateSimplexError, NelderMeadConfig, Simplex,
                               average_vertex_distance, centroid, nm_run, nm_step, order_simplex)


def neg(f):
    """Wrap a minimized function as a maximized objective."""
    return lambda x: -f(np.asarray(x))


def rosenbrock(x):
    return (1 - x[0]) ** 2 + 100 * (x[1] - x[0] ** 2) ** 2


def test_order_is_stable_on_ties():
    s = order_simplex(Simplex([[0, 0], [1, 0], [0, 1]], [1.0, 2.0, 1.0]))
    assert np.array_equal(s.points, [[1, 0], [0, 0], [0, 1]])


def test_nan_counts_as_worst():
    s = order_simplex(Simplex([[0.0], [1.0]], [np.nan, 0.0]))
    assert s.values[-1] == -np.inf and s.points[-1, 0] == 0.0


def test_centroid_excludes_worst():
    s = order_simplex(Simplex([[0, 0], [2, 0], [0, 2]], [3.0, 2.0, 1.0]))
    assert np.allclose(centroid(s), [1.0, 0.0])


def test_average_distance_of_unit_right_triangle():
    d = average_vertex_distance(np.array([[0, 0], [1, 0], [0, 1]]))
    assert d == pytest.approx((2 + np.sqrt(2)) / 3)


def test_one_d_boundary_tie_goes_to_contraction():
    # f = x^2 (minimized); vertices at 0 (best) and 1 (worst); reflection lands on -1, tie with worst
    s = Simplex([[0.0], [1.0]], [0.0, -1.0])
    new, evals, branch = nm_step(s, neg(lambda x: x[0] ** 2))
    assert branch == "contract_inside"
    assert np.allclose(evals[0][0], [-1.0]) and np.allclose(evals[1][0], [0.5])
    assert sorted(new.points.ravel()) == [0.0, 0.5]


def test_reflection_branch():
    # reflected value between best and second worst
    f = lambda x: abs(x[0] - 0.2) + abs(x[1])
    s = Simplex([[0, 0], [1, 0], [0, 1]], [-f(np.array(p)) for p in ([0, 0], [1, 0], [0, 1])])
    new, evals, branch = nm_step(s, neg(f))
    assert branch in {"reflect", "expand", "reflect_after_expand", "contract_outside",
                      "contract_inside", "shrink"}
    assert len(evals) >= 1


def test_expansion_accepted_on_linear_slope():
    f = lambda x: -x[0] - 0.5 * x[1]
    pts = np.array([[0.0, 0.0], [0.1, 0.0], [0.0, 0.1]])
    s = Simplex(pts, [-f(p) for p in pts])
    new, evals, branch = nm_step(s, neg(f))
    assert branch == "expand" and len(evals) == 2
    assert np.allclose(new.best_point, [0.15, 0.15])


def test_shrink_geometry_and_accounting():
    # objective worse everywhere except the best vertex forces shrink
    pts = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    best = pts[0]
    f = lambda x: 0.0 if np.allclose(x, best) else (1.0 if any(np.allclose(x, p) for p in pts) else 100.0)
    s = Simplex(pts, [-f(p) for p in pts])
    new, evals, branch = nm_step(s, neg(f))
    assert branch == "shrink"
    assert len(evals) == 2 + 2   # reflection, contraction, two shrunk vertices
    assert average_vertex_distance(new) == pytest.approx(0.5 * average_vertex_distance(s))
    assert any(np.allclose(p, best) for p in new.points)


def test_trial_points_respect_bounds():
    f = lambda x: -x[0] - x[1]
    pts = np.array([[0.8, 0.8], [0.9, 0.8], [0.8, 0.9]])
    s = Simplex(pts, [-f(p) for p in pts])
    res = nm_run(neg(f), s, max_evals=50, bounds=(0.0, 1.0))
    for x, _ in res.evaluations:
        assert np.all((x >= 0) & (x <= 1))


def test_rosenbrock():
    pts = np.array([[-1.2, 1.0], [-1.0, 1.0], [-1.2, 1.2]])
    s = Simplex(pts, [-rosenbrock(p) for p in pts])
    res = nm_run(neg(rosenbrock), s, d_lim=1e-8, max_evals=2000)
    assert np.linalg.norm(res.best_point - 1) < 1e-3
    assert len(res.evaluations) <= 2000


def test_stop_reasons():
    sphere = lambda x: float(np.sum(x ** 2))
    pts = np.array([[0.5, 0.5], [0.6, 0.5], [0.5, 0.6]])
    s = Simplex(pts, [-sphere(p) for p in pts])
    assert nm_run(neg(sphere), s, d_lim=1e-3).reason == "d_lim"
    assert nm_run(neg(sphere), s, max_evals=7).reason == "max_evals"
    assert nm_run(lambda x: 0.0, Simplex(pts, [0, 0, 0]), patience=3).reason == "no_improvement"
    # d_lim above the initial size terminates before any evaluation
    res = nm_run(neg(sphere), s, d_lim=10.0)
    assert res.reason == "d_lim" and res.evaluations == []


def test_budget_counts_every_call():
    calls = []
    obj = lambda x: calls.append(1) or -float(np.sum(np.asarray(x) ** 2))
    pts = np.array([[0.5, 0.5], [0.6, 0.5], [0.5, 0.6]])
    res = nm_run(obj, Simplex(pts, [obj(p) for p in pts]), max_evals=11)
    assert len(res.evaluations) == len(calls) - 3 == 11


def test_degenerate_simplex_rejected():
    with pytest.raises(DegenerateSimplexError):
        nm_run(lambda x: 0.0, Simplex([[0, 0], [1, 1], [2, 2]], [0, 0, 0]))
    with pytest.raises(DegenerateSimplexError):
        nm_run(lambda x: 0.0, Simplex([[0, 0], [0, 0], [0, 0]], [0, 0, 0]))


def test_config_validation():
    with pytest.raises(ValueError):
        NelderMeadConfig(gamma=1.0)
    with pytest.raises(ValueError):
        NelderMeadConfig(rho=1.0)
    with pytest.raises(ValueError):
        Simplex([[0, 0], [1, 0]], [0, 0])


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_best_value_is_monotone_on_random_quadratics(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 5))
    A = rng.standard_normal((n, n))
    H = A @ A.T + 0.1 * np.eye(n)
    c = rng.standard_normal(n)
    f = lambda x: float((x - c) @ H @ (x - c))
    pts = rng.standard_normal((n + 1, n))
    s = order_simplex(Simplex(pts, [-f(p) for p in pts]))
    best = s.best_value
    for _ in range(30):
        s, _, _ = nm_step(s, neg(f))
        s = order_simplex(s)
        assert s.best_value >= best
        best = s.best_value
