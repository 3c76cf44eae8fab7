"""Bounded Nelder-Mead simplex search on a maximized objective.

Vertices carry the objective value ``L`` (larger is better); the decision
tree works on ``L_minus = -L``.  ``NaN`` objective values count as ``-inf``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.distance import pdist


class DegenerateSimplexError(ValueError):
    pass


class _BudgetExhausted(Exception):
    pass


@dataclass(frozen=True)
class NelderMeadConfig:
    alpha: float = 1.0   # reflection
    gamma: float = 2.0   # expansion
    rho: float = 0.5     # contraction
    sigma: float = 0.5   # shrink
    improve_tol: float = 1e-9

    def __post_init__(self):
        if not self.alpha > 0:
            raise ValueError("reflection coefficient must be positive")
        if not self.gamma > 1:
            raise ValueError("expansion coefficient must exceed 1")
        if not 0 < self.rho < 1:
            raise ValueError("contraction coefficient must lie in (0, 1)")
        if not 0 < self.sigma < 1:
            raise ValueError("shrink coefficient must lie in (0, 1)")


@dataclass
class Simplex:
    """``n + 1`` vertices in ``n`` dimensions with their objective values."""

    points: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        self.points = np.array(self.points, dtype=float, ndmin=2)
        self.values = _clean(np.array(self.values, dtype=float).ravel())
        n1, n = self.points.shape
        if n1 != n + 1:
            raise ValueError(f"a simplex in {n} dimensions needs {n + 1} vertices, got {n1}")
        if len(self.values) != n1:
            raise ValueError("one value per vertex required")

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    @property
    def best_point(self):
        return self.points[int(np.argmax(self.values))]

    @property
    def best_value(self) -> float:
        return float(np.max(self.values))

    def copy(self) -> "Simplex":
        return Simplex(self.points.copy(), self.values.copy())


def _clean(v):
    v = np.asarray(v, dtype=float)
    return np.where(np.isnan(v), -np.inf, v)


def order_simplex(simplex: Simplex) -> Simplex:
    """Sort vertices best first (ascending ``-L``), stable on ties."""
    idx = np.argsort(-simplex.values, kind="stable")
    return Simplex(simplex.points[idx], simplex.values[idx])


def centroid(simplex: Simplex):
    """Mean of all vertices except the last (worst, once ordered)."""
    return simplex.points[:-1].mean(axis=0)


def average_vertex_distance(simplex_or_points) -> float:
    P = simplex_or_points.points if isinstance(simplex_or_points, Simplex) else \
        np.atleast_2d(simplex_or_points)
    if len(P) < 2:
        return 0.0
    return float(pdist(P).mean())


def _clamp(x, bounds):
    if bounds is None:
        return x
    return np.clip(x, bounds[0], bounds[1])


def nm_step(simplex: Simplex, objective, bounds=None, cfg: NelderMeadConfig = NelderMeadConfig()):
    """One pass of reflect / expand / contract / shrink.

    Returns ``(new_simplex, evaluations, branch)`` where ``evaluations`` lists
    every ``(point, value)`` the objective was called on, in call order.
    """
    s = order_simplex(simplex)
    P, f = s.points.copy(), -s.values.copy()   # f is the minimized value
    evals = []

    def ev(x):
        v = float(objective(x))
        if np.isnan(v):
            v = -np.inf
        evals.append((x.copy(), v))
        return -v

    xo = centroid(s)
    xw = P[-1]
    xr = _clamp(xo + cfg.alpha * (xo - xw), bounds)
    fr = ev(xr)

    if f[0] <= fr < f[-2]:
        P[-1], f[-1], branch = xr, fr, "reflect"
    elif fr < f[0]:
        xe = _clamp(xo + cfg.gamma * (xr - xo), bounds)
        fe = ev(xe)
        if fe < fr:
            P[-1], f[-1], branch = xe, fe, "expand"
        else:
            P[-1], f[-1], branch = xr, fr, "reflect_after_expand"
    else:
        if fr < f[-1]:
            xc, branch = _clamp(xo + cfg.rho * (xr - xo), bounds), "contract_outside"
        else:
            xc, branch = _clamp(xo + cfg.rho * (xw - xo), bounds), "contract_inside"
        fc = ev(xc)
        if fc < fr:
            P[-1], f[-1] = xc, fc
        else:
            for i in range(1, len(P)):
                P[i] = P[0] + cfg.sigma * (P[i] - P[0])
                f[i] = ev(P[i])
            branch = "shrink"
    return Simplex(P, -f), evals, branch


@dataclass
class NMResult:
    best_point: np.ndarray
    best_value: float
    evaluations: list
    reason: str
    simplex: Simplex
    n_iter: int
    branches: list = field(default_factory=list)


def check_nondegenerate(simplex: Simplex, tol: float = 1e-12):
    if average_vertex_distance(simplex) <= 0:
        raise DegenerateSimplexError("initial simplex has zero size")
    E = simplex.points[1:] - simplex.points[0]
    sv = np.linalg.svd(E, compute_uv=False)
    if sv.min() <= tol * max(1.0, sv.max()):
        raise DegenerateSimplexError("initial simplex has zero volume")


def nm_run(objective, initial: Simplex, d_lim: float = 0.0, patience: int | None = None,
           max_evals: int | None = None, bounds=None,
           cfg: NelderMeadConfig = NelderMeadConfig()) -> NMResult:
    """Iterate :func:`nm_step` until a stop rule fires.

    Stop rules: average vertex distance below ``d_lim``; ``patience``
    consecutive iterations without the best value improving by more than
    ``cfg.improve_tol``; ``max_evals`` objective calls.  The reason is one of
    ``"d_lim"``, ``"no_improvement"``, ``"max_evals"``.
    """
    check_nondegenerate(initial)
    simplex = order_simplex(initial)
    evaluations: list = []
    branches: list = []
    used = 0

    def counted(x):
        nonlocal used
        if max_evals is not None and used >= max_evals:
            raise _BudgetExhausted
        used += 1
        return objective(x)

    stale = 0
    n_iter = 0
    reason = "d_lim"
    while True:
        if average_vertex_distance(simplex) < d_lim:
            reason = "d_lim"
            break
        if patience is not None and stale >= patience:
            reason = "no_improvement"
            break
        if max_evals is not None and used >= max_evals:
            reason = "max_evals"
            break
        before = simplex.best_value
        step_evals: list = []
        try:
            new, step_evals, branch = nm_step(simplex, _Recorder(counted, step_evals), bounds, cfg)
        except _BudgetExhausted:
            evaluations.extend(step_evals)
            reason = "max_evals"
            break
        evaluations.extend(step_evals)
        branches.append(branch)
        simplex = order_simplex(new)
        n_iter += 1
        gain = simplex.best_value - before
        stale = 0 if (gain > cfg.improve_tol or (np.isinf(before) and np.isfinite(simplex.best_value))) \
            else stale + 1
    best = simplex
    # an aborted step may have found a better point than any vertex
    bp, bv = best.best_point.copy(), best.best_value
    for x, v in evaluations:
        if v > bv:
            bp, bv = x.copy(), v
    return NMResult(bp, bv, evaluations, reason, simplex, n_iter, branches)


class _Recorder:
    """Objective wrapper that keeps evaluations even if a step is aborted."""

    def __init__(self, fn, sink):
        self.fn = fn
        self.sink = sink

    def __call__(self, x):
        v = float(self.fn(x))
        self.sink.append((np.array(x, dtype=float), -np.inf if np.isnan(v) else v))
        return v

