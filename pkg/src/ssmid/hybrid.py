"""Alternating Nelder-Mead / Bayesian-optimization search over a likelihood.

The scheduler works in unit-cube coordinates of a :class:`ParameterSpace`
and shares one :class:`ObservationPool` between its phases:

* initialization: Latin-hypercube samples;
* Nelder-Mead rounds started from the best ``m`` pool points plus random
  others, stopped once the simplex shrinks below a halving distance limit or
  stops improving;
* Bayesian-optimization rounds that hand control back to Nelder-Mead as soon
  as a new point enters the pool's top ``m``, and end the search after ``s``
  proposals without one;
* a final Nelder-Mead refinement from the best ``n + 1`` points.
"""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy.stats import qmc

from .gp import AcquisitionConfig, GaussianProcessSurrogate, ObservationPool, maximize_acquisition
from .nelder_mead import (DegenerateSimplexError, NelderMeadConfig, Simplex,
                          average_vertex_distance, check_nondegenerate, nm_run, order_simplex)
from .ssm import ParameterSpace

PHASES = ("init", "nm", "bo", "final")


class InfeasibleSearchSpace(RuntimeError):
    """Every initial sample produced a log-likelihood of ``-inf``."""


class BudgetExhausted(Exception):
    pass


@dataclass(frozen=True)
class SchedulerConfig:
    """``None`` entries take dimension-dependent defaults in :meth:`resolved`."""

    D: int | None = None
    m: int = 3
    p: int | None = None
    s: int = 10
    d_final: float = 1e-3
    eval_budget: int = 500
    seed: int = 0
    rebaseline_d0: bool = False
    simplex_retries: int = 20

    def resolved(self, n: int) -> "SchedulerConfig":
        D = self.D if self.D is not None else max(2 * (n + 1), 20)
        p = self.p if self.p is not None else 2 * (n + 1)
        m = min(self.m, n)
        cfg = replace(self, D=D, p=p, m=m)
        cfg.validate(n)
        return cfg

    def validate(self, n: int):
        if not 1 <= self.m <= n:
            raise ValueError(f"m must lie in [1, {n}], got {self.m}")
        if self.D is None or self.D < n + 1:
            raise ValueError(f"D must be at least n + 1 = {n + 1}, got {self.D}")
        if not self.d_final > 0:
            raise ValueError("d_final must be positive")
        if self.eval_budget < self.D:
            raise ValueError(f"eval_budget ({self.eval_budget}) must be at least D ({self.D})")
        if self.p is not None and self.p < 1:
            raise ValueError("p must be positive")
        if self.s < 1:
            raise ValueError("s must be positive")


@dataclass(frozen=True)
class GpConfig:
    kernel: str = "matern52"
    noise_floor: float = 1e-8
    n_restarts: int = 2
    refit_all_until: int = 100
    refit_period: int = 5
    acquisition: AcquisitionConfig = AcquisitionConfig()


@dataclass
class EvalRecord:
    index: int
    theta: np.ndarray
    L: float
    phase: str
    best_so_far: float
    wall_time: float


@dataclass
class SwitchEvent:
    eval_index: int
    kind: str            # switch_to_nm | stagnated | budget
    rank: int | None
    value: float | None
    pool_values: np.ndarray  # pool snapshot when the event fired
    m: int

    def as_dict(self) -> dict:
        top = np.sort(self.pool_values[np.isfinite(self.pool_values)])[::-1][:self.m]
        return {"eval_index": self.eval_index, "kind": self.kind, "rank": self.rank,
                "value": None if self.value is None else float(self.value),
                "top_values": [float(v) for v in top]}


@dataclass
class RoundRecord:
    round: int
    d0: float
    d_lim: float
    d_initial: float
    reason: str
    n_evals: int


@dataclass
class RunTrace:
    records: list = field(default_factory=list)
    events: list = field(default_factory=list)
    rounds: list = field(default_factory=list)

    @property
    def n_evals(self) -> int:
        return len(self.records)

    def best_so_far(self) -> np.ndarray:
        return np.array([r.best_so_far for r in self.records])

    def values(self) -> np.ndarray:
        return np.array([r.L for r in self.records])

    def phases(self) -> list:
        return [r.phase for r in self.records]

    def evals_to_threshold(self, threshold: float):
        """1-based evaluation count at which best-so-far first reaches ``threshold``."""
        b = self.best_so_far()
        hit = np.flatnonzero(b >= threshold)
        return int(hit[0]) + 1 if hit.size else None

    def write_csv(self, path, param_names=None, include_time=False):
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        n = len(self.records[0].theta) if self.records else len(param_names or [])
        names = list(param_names) if param_names else [f"theta_{i + 1}" for i in range(n)]
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["eval_index", "phase", "L", "best_so_far", *names]
                       + (["wall_time"] if include_time else []))
            for r in self.records:
                w.writerow([r.index, r.phase, repr(r.L), repr(r.best_so_far),
                            *(repr(float(v)) for v in r.theta)]
                           + ([repr(r.wall_time)] if include_time else []))


class _Evaluator:
    """Budgeted likelihood calls that feed both the pool and the trace."""

    def __init__(self, space: ParameterSpace, likelihood, budget: int, pool: ObservationPool,
                 trace: RunTrace):
        self.space = space
        self.likelihood = likelihood
        self.budget = budget
        self.pool = pool
        self.trace = trace
        self.t0 = time.perf_counter()

    @property
    def remaining(self) -> int:
        return self.budget - len(self.pool)

    def __call__(self, u, phase: str) -> float:
        if self.remaining <= 0:
            raise BudgetExhausted
        u = np.clip(np.asarray(u, dtype=float), 0.0, 1.0)
        try:
            v = float(self.likelihood(self.space.from_unit(u)))
        except (FloatingPointError, ArithmeticError, ValueError):
            v = -np.inf
        if np.isnan(v) or v == np.inf:
            v = -np.inf
        self.pool.add(u, v)
        prev = self.trace.records[-1].best_so_far if self.trace.records else -np.inf
        self.trace.records.append(EvalRecord(len(self.pool), self.space.from_unit(u), v, phase,
                                             max(prev, v), time.perf_counter() - self.t0))
        return v

    def bind(self, phase):
        return lambda u: self(u, phase)


# --- phases -----------------------------------------------------------------------

def latin_hypercube(n: int, D: int, rng) -> np.ndarray:
    return qmc.LatinHypercube(d=n, seed=rng).random(D)


def initialize_pool(space: ParameterSpace, D: int, evaluator: _Evaluator, rng):
    if D < space.dim + 1:
        raise ValueError(f"D must be at least n + 1 = {space.dim + 1}")
    for u in latin_hypercube(space.dim, D, rng):
        try:
            evaluator(u, "init")
        except BudgetExhausted:
            break
    if not np.isfinite(evaluator.pool.y).any():
        raise InfeasibleSearchSpace(
            f"all {len(evaluator.pool)} initial samples have zero likelihood; "
            "check the parameter bounds and the datasets")
    return evaluator.pool


def _full_rank(P) -> bool:
    E = P[1:] - P[0]
    sv = np.linalg.svd(E, compute_uv=False)
    return bool(sv.min() > 1e-12 * max(1.0, sv.max()))


def build_nm_simplex(pool: ObservationPool, m: int, n: int, rng, retries: int = 20) -> Simplex:
    """Top ``m`` pool points plus ``n - m + 1`` random distinct others."""
    X, y = pool.X, pool.y
    ranked = list(pool.ranked())
    top = ranked[:m]
    # remaining entries, finite ones first so -inf points are only used as filler
    others_fin = [i for i in ranked[m:]]
    others_inf = [i for i in range(len(y)) if not np.isfinite(y[i])]
    need = n + 1 - len(top)
    if len(top) + len(others_fin) + len(others_inf) < n + 1:
        raise ValueError(f"pool needs at least {n + 1} points to form a simplex")

    def draw():
        pool_idx = others_fin if len(others_fin) >= need else others_fin + others_inf
        if len(others_fin) < need:
            pick = others_fin + list(rng.choice(others_inf, need - len(others_fin), replace=False))
        else:
            pick = list(rng.choice(pool_idx, need, replace=False))
        return top + [int(i) for i in pick]

    idx = draw()
    for _ in range(retries):
        if _full_rank(X[idx]):
            break
        idx = draw()
    P = X[idx].copy()
    if not _full_rank(P):
        # nudge the non-top vertices so the simplex has volume
        for j in range(len(top), len(P)):
            P[j] = np.clip(P[j] + 1e-6 * rng.standard_normal(n), 0.0, 1.0)
    return order_simplex(Simplex(P, y[idx]))


def d_lim_schedule(round: int, d0: float) -> float:
    if round < 1:
        raise ValueError("rounds are numbered from 1")
    return d0 / 2.0 ** round


@dataclass
class _State:
    d0: float | None = None
    gp_params: dict | None = None
    bo_iter: int = 0


def nm_phase(evaluator: _Evaluator, cfg: SchedulerConfig, round: int, state: _State, rng,
             nm_cfg: NelderMeadConfig = NelderMeadConfig()):
    pool, n = evaluator.pool, evaluator.space.dim
    simplex = build_nm_simplex(pool, cfg.m, n, rng, cfg.simplex_retries)
    d_init = average_vertex_distance(simplex)
    if state.d0 is None or cfg.rebaseline_d0:
        state.d0 = d_init
    d_lim = d_lim_schedule(round, state.d0)
    before = len(pool)
    try:
        res = nm_run(evaluator.bind("nm"), simplex, d_lim=d_lim, patience=cfg.p,
                     max_evals=max(evaluator.remaining, 0), bounds=(np.zeros(n), np.ones(n)),
                     cfg=nm_cfg)
        reason = res.reason
    except DegenerateSimplexError:
        reason = "degenerate"
    evaluator.trace.rounds.append(
        RoundRecord(round, state.d0, d_lim, d_init, reason, len(pool) - before))
    return reason


def _fit_gp(pool: ObservationPool, gp_cfg: GpConfig, state: _State, rng):
    X, y = pool.training_data()
    refit = len(y) <= gp_cfg.refit_all_until or state.bo_iter % gp_cfg.refit_period == 0 \
        or state.gp_params is None
    gp = GaussianProcessSurrogate(kernel=gp_cfg.kernel, noise_floor=gp_cfg.noise_floor,
                                  n_restarts=gp_cfg.n_restarts, optimize=refit,
                                  initial_hyperparameters=state.gp_params,
                                  random_state=int(rng.integers(2**31)))
    gp.fit(X, y)
    state.gp_params = gp.hyperparameters()
    return gp


def bo_phase(evaluator: _Evaluator, cfg: SchedulerConfig, gp_cfg: GpConfig, state: _State, rng,
             stop_on_top_m: bool = True, phase: str = "bo"):
    """Propose points by expected improvement until one ranks top ``m``.

    Returns ``"switch_to_nm"`` or ``"stagnated"`` (also when the budget runs
    out).  With ``stop_on_top_m=False`` and ``s`` large this is the plain
    Bayesian-optimization loop.
    """
    pool, trace, n = evaluator.pool, evaluator.trace, evaluator.space.dim
    stale = 0
    while True:
        if evaluator.remaining <= 0:
            trace.events.append(SwitchEvent(len(pool), "budget", None, None, pool.y, cfg.m))
            return "stagnated"
        if np.isfinite(pool.y).sum() < 2:
            u = rng.random(n)
        else:
            gp = _fit_gp(pool, gp_cfg, state, rng)
            L_star = pool.best_value
            incumbents = pool.X[pool.ranked()[:gp_cfg.acquisition.n_incumbent_starts]]
            u, _ = maximize_acquisition(gp, L_star, n, gp_cfg.acquisition,
                                        seed=int(rng.integers(2**31)), incumbents=incumbents)
            if np.min(np.linalg.norm(pool.X - u, axis=1)) < 1e-9:
                u, _ = maximize_acquisition(gp, L_star, n, gp_cfg.acquisition,
                                            seed=int(rng.integers(2**31)), incumbents=None)
        state.bo_iter += 1
        value = evaluator(u, phase)
        i = len(pool) - 1
        rank = pool.rank_of(i)
        if stop_on_top_m and rank <= cfg.m:
            trace.events.append(SwitchEvent(len(pool), "switch_to_nm", rank, value, pool.y, cfg.m))
            return "switch_to_nm"
        stale += 1
        if stale >= cfg.s:
            trace.events.append(SwitchEvent(len(pool), "stagnated", rank, value, pool.y, cfg.m))
            return "stagnated"


def top_simplex(pool: ObservationPool, n: int, rng=None) -> Simplex:
    """Simplex on the ``n + 1`` best pool points (``-inf`` points fill if needed)."""
    ranked = list(pool.ranked())
    rest = [i for i in range(len(pool)) if i not in set(ranked)]
    idx = (ranked + rest)[:n + 1]
    P = pool.X[idx].copy()
    if not _full_rank(P):
        rng = rng if rng is not None else np.random.default_rng(0)
        for j in range(1, len(P)):
            P[j] = np.clip(P[j] + 1e-6 * rng.standard_normal(n), 0.0, 1.0)
    return order_simplex(Simplex(P, pool.y[idx]))


def final_refinement(evaluator: _Evaluator, d_final: float, rng,
                     nm_cfg: NelderMeadConfig = NelderMeadConfig()) -> str:
    n = evaluator.space.dim
    simplex = top_simplex(evaluator.pool, n, rng)
    if average_vertex_distance(simplex) < d_final:
        return "converged"
    if evaluator.remaining <= 0:
        return "max_evals"
    try:
        res = nm_run(evaluator.bind("final"), simplex, d_lim=d_final, patience=None,
                     max_evals=evaluator.remaining, bounds=(np.zeros(n), np.ones(n)), cfg=nm_cfg)
    except DegenerateSimplexError:
        return "degenerate"
    return res.reason


@dataclass
class RunResult:
    theta: np.ndarray
    L: float
    trace: RunTrace
    pool: ObservationPool
    space: ParameterSpace
    final_reason: str = ""

    @property
    def n_evals(self) -> int:
        return len(self.pool)


def _streams(seed):
    ss = np.random.SeedSequence(seed)
    return [np.random.default_rng(c) for c in ss.spawn(4)]


def _setup(space, likelihood, cfg):
    cfg = cfg.resolved(space.dim)
    pool = ObservationPool(space.dim)
    trace = RunTrace()
    return cfg, _Evaluator(space, likelihood, cfg.eval_budget, pool, trace)


def _result(space, evaluator, reason=""):
    pool = evaluator.pool
    i = pool.best_index
    return RunResult(space.from_unit(pool.X[i]), float(pool.y[i]), evaluator.trace, pool, space,
                     reason)


def run(space: ParameterSpace, likelihood, cfg: SchedulerConfig = SchedulerConfig(),
        gp_cfg: GpConfig = GpConfig(), nm_cfg: NelderMeadConfig = NelderMeadConfig()) -> RunResult:
    """Maximize ``likelihood(theta)`` over ``space``; deterministic given ``cfg.seed``."""
    cfg, ev = _setup(space, likelihood, cfg)
    r_init, r_simplex, r_bo, r_final = _streams(cfg.seed)
    initialize_pool(space, cfg.D, ev, r_init)
    state = _State()
    rnd = 0
    while ev.remaining > 0:
        rnd += 1
        nm_phase(ev, cfg, rnd, state, r_simplex, nm_cfg)
        if ev.remaining <= 0:
            break
        if bo_phase(ev, cfg, gp_cfg, state, r_bo) == "stagnated":
            break
    reason = final_refinement(ev, cfg.d_final, r_final, nm_cfg)
    return _result(space, ev, reason)


def plain_bo(space: ParameterSpace, likelihood, cfg: SchedulerConfig = SchedulerConfig(),
             gp_cfg: GpConfig = GpConfig()) -> RunResult:
    """Ablation: Latin-hypercube start, then expected improvement until the budget ends."""
    cfg, ev = _setup(space, likelihood, cfg)
    r_init, _, r_bo, _ = _streams(cfg.seed)
    initialize_pool(space, cfg.D, ev, r_init)
    cfg = replace(cfg, s=cfg.eval_budget + 1)
    bo_phase(ev, cfg, gp_cfg, _State(), r_bo, stop_on_top_m=False)
    return _result(space, ev, "max_evals")


def plain_nm(space: ParameterSpace, likelihood, cfg: SchedulerConfig = SchedulerConfig(),
             nm_cfg: NelderMeadConfig = NelderMeadConfig(), restart_step: float = 0.1) -> RunResult:
    """Ablation: Nelder-Mead from the best ``n + 1`` initial samples, restarted
    around the incumbent with an axis-aligned simplex until the budget ends."""
    cfg, ev = _setup(space, likelihood, cfg)
    r_init, _, _, r_final = _streams(cfg.seed)
    initialize_pool(space, cfg.D, ev, r_init)
    n = space.dim
    simplex = top_simplex(ev.pool, n, r_final)
    box = (np.zeros(n), np.ones(n))
    while ev.remaining > 0:
        try:
            nm_run(ev.bind("nm"), simplex, d_lim=cfg.d_final, patience=cfg.p,
                   max_evals=ev.remaining, bounds=box, cfg=nm_cfg)
        except DegenerateSimplexError:
            pass
        if ev.remaining <= 0:
            break
        best = ev.pool.X[ev.pool.best_index]
        P = [best]
        for j in range(n):
            v = best.copy()
            v[j] = v[j] + restart_step if v[j] + restart_step <= 1 else v[j] - restart_step
            P.append(v)
        P = np.array(P)
        vals = [ev.pool.best_value]
        try:
            for v in P[1:]:
                vals.append(ev(v, "nm"))
        except BudgetExhausted:
            break
        simplex = Simplex(P, vals)
    return _result(space, ev, "max_evals")


OPTIMIZERS = {"accelerated": run, "plain_bo": plain_bo, "plain_nm": plain_nm}
