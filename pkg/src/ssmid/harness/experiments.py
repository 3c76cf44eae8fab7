"""Dataset synthesis, identification, validation and comparison studies.

Every function here is a pure function of ``(RunConfig, seed)`` plus the
files it reads, and writes its outputs with fixed float formatting so that
re-runs are byte-identical.  Timing is added to reports only on request.
"""

from __future__ import annotations

import csv
import json
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..battx import BattXConfig, BattXModel, OcvCurve
from ..estimator import LikelihoodObjective, derived_seed
from ..gp import AcquisitionConfig
from ..hybrid import OPTIMIZERS, GpConfig, RunResult, SchedulerConfig
from ..likelihood import LikelihoodConfig, UtParams
from ..models import LogisticModel, linear_gaussian_model
from ..nelder_mead import NelderMeadConfig
from ..ssm import Dataset, NoiseSpec, ParameterSpace, read_dataset_csv, simulate, write_dataset_csv
from .config import DatasetEntry, RunConfig
from .profiles import generate_profile

BATTX_Q = 1e-8
BATTX_R = (1e-3, 1e-2)


# --- building blocks -------------------------------------------------------------

@dataclass
class Setup:
    """Objects derived from a config that every experiment needs."""

    cfg: RunConfig
    model: object          # simulation model
    filter_model: object   # model handed to the likelihood evaluator
    space: ParameterSpace
    noise: NoiseSpec
    theta_true: np.ndarray | None
    input_names: list
    meas_names: list
    base_dir: Path


def build_setup(cfg: RunConfig, base_dir=".") -> Setup:
    mb = cfg.model
    if mb.kind == "battx":
        b = mb.battx
        bcfg = BattXConfig(N=b.N, eta=b.eta, sigma_ratio=b.sigma_ratio, T_ref=b.T_ref,
                           soc0=b.soc0, capacity_ah=b.capacity_ah,
                           **({"ocv": OcvCurve(tuple(map(tuple, b.ocv_knots)))}
                              if b.ocv_knots else {}))
        model = BattXModel(bcfg, dt=mb.dt)
        filter_model = model.unclamped()
        inputs, meas = ["current_A", "ambient_K"], ["voltage_V", "surface_temp_K"]
    elif mb.kind == "logistic":
        model = filter_model = LogisticModel(x0=mb.x0)
        inputs, meas = ["u1"], ["z1"]
    else:
        model = filter_model = linear_gaussian_model(x0=mb.x0)
        inputs, meas = ["u1"], ["z1"]
    entries = cfg.parameter_entries()
    space = ParameterSpace([p.name for p in entries], [p.lower for p in entries],
                           [p.upper for p in entries], [p.unit for p in entries])
    return Setup(cfg, model, filter_model, space, _noise(cfg, model), cfg.true_theta(),
                 inputs, meas, Path(base_dir))


def _noise(cfg: RunConfig, model) -> NoiseSpec:
    n, nz = model.state_dim, model.meas_dim
    if cfg.noise is None:
        if cfg.model.kind != "battx":
            raise ValueError("a 'noise' block is required for this model")
        return NoiseSpec.diagonal(np.full(n, BATTX_Q), BATTX_R)
    q, r = np.asarray(cfg.noise.Q, float), np.asarray(cfg.noise.R, float)
    if q.size == 1:
        q = np.full(n, q[0])
    if r.size == 1:
        r = np.full(nz, r[0])
    if q.size != n or r.size != nz:
        raise ValueError(f"noise.Q needs 1 or {n} entries and noise.R needs 1 or {nz}")
    return NoiseSpec.diagonal(q, r)


def dataset_seed(cfg: RunConfig, entry: DatasetEntry, index: int) -> int:
    return int(entry.seed) if entry.seed is not None else derived_seed(cfg.seed, 1_000 + index)


def synthesize(setup: Setup, entry: DatasetEntry, index: int, theta=None) -> Dataset:
    """Simulate one dataset from its profile at ``theta`` (default: the truth)."""
    theta = setup.theta_true if theta is None else np.asarray(theta, float)
    if theta is None:
        raise ValueError("synthesizing data needs a 'truth' value for every parameter")
    seed = dataset_seed(setup.cfg, entry, index)
    profile_seed, noise_seed = np.random.SeedSequence(seed).generate_state(2)
    mb = setup.cfg.model
    U = generate_profile(entry.profile, mb.battx.capacity_ah, mb.dt, seed=int(profile_seed))
    model = setup.model
    x0 = np.asarray(model.initial_state(U[0], theta), dtype=float)
    if entry.noiseless:
        Z = _clean_measurements(model, x0, U, theta)
    else:
        _, Z = simulate(model, x0, U, theta, setup.noise, seed=int(noise_seed))
    return Dataset(U, Z, mb.dt, label=entry.label, initial_state=x0)


def _clean_measurements(model, x0, U, theta):
    if hasattr(model, "simulate_deterministic"):
        _, Z = model.simulate_deterministic(x0, U, theta)
    else:
        _, Z = simulate(model, x0, U, theta)
    return np.asarray(Z)


def load_datasets(setup: Setup, entries, offset: int = 0) -> list[Dataset]:
    out = []
    for i, entry in enumerate(entries):
        if entry.profile is not None:
            out.append(synthesize(setup, entry, offset + i))
            continue
        path = Path(entry.path)
        if not path.is_absolute():
            path = setup.base_dir / path
        if not path.exists():
            raise FileNotFoundError(f"dataset {entry.label}: {path} not found")
        ds = read_dataset_csv(path, setup.model.input_dim, label=entry.label)
        x0 = setup.model.initial_state(ds.inputs[0], setup.theta_true)
        out.append(Dataset(ds.inputs, ds.measurements, ds.dt, ds.label, np.asarray(x0, float)))
    return out


def training_datasets(setup: Setup) -> list[Dataset]:
    if not setup.cfg.datasets:
        raise ValueError("the config lists no datasets")
    return load_datasets(setup, setup.cfg.datasets)


def validation_datasets(setup: Setup) -> list[Dataset]:
    return load_datasets(setup, setup.cfg.validation.datasets, offset=len(setup.cfg.datasets))


def likelihood_settings(cfg: RunConfig):
    lb = cfg.likelihood
    lcfg = LikelihoodConfig(n_particles=lb.n_particles, alpha_implicit=lb.alpha_implicit,
                            ess_fraction=lb.ess_fraction, jitter=lb.jitter, init_cov=lb.init_cov)
    return lcfg, UtParams(lb.ut.alpha, lb.ut.beta, lb.ut.kappa)


def make_objective(setup: Setup, datasets, seed: int, method: str | None = None,
                   n_particles: int | None = None) -> LikelihoodObjective:
    lcfg, ut = likelihood_settings(setup.cfg)
    if n_particles is not None:
        lcfg = LikelihoodConfig(**{**lcfg.__dict__, "n_particles": int(n_particles)})
    return LikelihoodObjective(setup.filter_model, datasets, setup.noise,
                               method or setup.cfg.likelihood.method, lcfg, ut, seed)


def algorithm_settings(cfg: RunConfig, seed: int):
    sb, gb = cfg.scheduler, cfg.gp
    sched = SchedulerConfig(D=sb.D, m=sb.m, p=sb.p, s=sb.s, d_final=sb.d_final,
                            eval_budget=sb.eval_budget, seed=int(seed),
                            rebaseline_d0=sb.rebaseline_d0)
    acq = AcquisitionConfig(**gb.acquisition.model_dump())
    gp = GpConfig(kernel=gb.kernel, noise_floor=gb.noise_floor, n_restarts=gb.n_restarts,
                  refit_all_until=gb.refit_all_until, refit_period=gb.refit_period,
                  acquisition=acq)
    nm = NelderMeadConfig(**cfg.nelder_mead.model_dump())
    return sched, gp, nm


def optimize(setup: Setup, objective, optimizer: str, seed: int) -> RunResult:
    sched, gp, nm = algorithm_settings(setup.cfg, seed)
    if optimizer == "accelerated":
        return OPTIMIZERS[optimizer](setup.space, objective, sched, gp, nm)
    if optimizer == "plain_bo":
        return OPTIMIZERS[optimizer](setup.space, objective, sched, gp)
    if optimizer == "plain_nm":
        return OPTIMIZERS[optimizer](setup.space, objective, sched, nm)
    raise ValueError(f"unknown optimizer {optimizer!r}")


# --- output helpers -----------------------------------------------------------------

def _num(v):
    """JSON-safe float (infinities and NaN become strings)."""
    if v is None:
        return None
    v = float(v)
    return v if np.isfinite(v) else str(v)


def write_json(path, obj):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=False) + "\n", encoding="utf-8")


def write_rows(path, header, rows):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in r])


# --- subcommands -----------------------------------------------------------------------

def generate_datasets(setup: Setup, out) -> list[Path]:
    """Write every configured dataset (training and validation) with a truth sidecar."""
    out = Path(out)
    cfg = setup.cfg
    written = []
    entries = list(cfg.datasets) + list(cfg.validation.datasets)
    for i, entry in enumerate(entries):
        if entry.profile is None:
            continue
        ds = synthesize(setup, entry, i)
        path = out / f"{entry.label}.csv"
        write_dataset_csv(path, ds, setup.input_names, setup.meas_names)
        write_json(out / f"{entry.label}.truth.json", {
            "label": entry.label,
            "seed": dataset_seed(cfg, entry, i),
            "noiseless": entry.noiseless,
            "profile": entry.profile.model_dump(mode="json"),
            "theta_true": setup.space.as_dict(setup.theta_true),
            "initial_state": [float(v) for v in ds.initial_state],
        })
        written.append(path)
    return written


def _true_log_likelihood(setup: Setup, datasets, seed):
    if setup.theta_true is None:
        return None
    return float(make_objective(setup, datasets, seed)(setup.theta_true))


def run_identification(setup: Setup, out, timing: bool = False) -> dict:
    """Identify the parameters; writes ``report.json`` and ``trace.csv`` under ``out``."""
    out = Path(out)
    cfg = setup.cfg
    datasets = training_datasets(setup)
    objective = make_objective(setup, datasets, cfg.seed)
    t0 = time.perf_counter()
    res = optimize(setup, objective, cfg.optimizer, cfg.seed)
    elapsed = time.perf_counter() - t0
    L_true = _true_log_likelihood(setup, datasets, cfg.seed)

    table = []
    for j, p in enumerate(cfg.parameter_entries()):
        est = float(res.theta[j])
        row = {"name": p.name, "unit": p.unit, "lower": p.lower, "upper": p.upper,
               "estimate": est, "truth": p.truth, "relative_error": None}
        if p.truth is not None and p.truth != 0:
            row["relative_error"] = abs(est - p.truth) / abs(p.truth)
        table.append(row)
    report = {
        "optimizer": cfg.optimizer,
        "likelihood": cfg.likelihood.method,
        "n_particles": cfg.likelihood.n_particles,
        "seed": cfg.seed,
        "datasets": [d.label for d in datasets],
        "log_likelihood": _num(res.L),
        "log_likelihood_true": _num(L_true),
        "theta": setup.space.as_dict(res.theta),
        "parameters": table,
        "n_evals": res.n_evals,
        "evals_to_threshold": (res.trace.evals_to_threshold(L_true - 1.0)
                               if L_true is not None and np.isfinite(L_true) else None),
        "final_reason": res.final_reason,
        "rounds": [{"round": r.round, "d0": r.d0, "d_lim": r.d_lim, "d_initial": r.d_initial,
                    "reason": r.reason, "n_evals": r.n_evals} for r in res.trace.rounds],
        "events": [{k: _num(v) if isinstance(v, float) else v for k, v in e.as_dict().items()}
                   for e in res.trace.events],
        "failures": dict(sorted(objective.failures.items())),
    }
    if timing:
        report["wall_time_s"] = elapsed
    write_json(out / "report.json", report)
    res.trace.write_csv(out / "trace.csv", setup.space.names, include_time=timing)
    return report


def _estimate(setup: Setup):
    v = setup.cfg.validation
    if v.estimate is not None:
        missing = [n for n in setup.space.names if n not in v.estimate]
        if missing:
            raise ValueError(f"validation.estimate lacks {missing}")
        return np.array([v.estimate[n] for n in setup.space.names], dtype=float)
    if v.report is not None:
        path = Path(v.report)
        if not path.is_absolute():
            path = setup.base_dir / path
        theta = json.loads(path.read_text(encoding="utf-8"))["theta"]
        return np.array([theta[n] for n in setup.space.names], dtype=float)
    if setup.theta_true is None:
        raise ValueError("validation needs 'estimate', 'report' or true parameter values")
    return setup.theta_true


def validate_model(setup: Setup, out, theta=None) -> list[dict]:
    """Per-dataset RMSE of the noise-free simulation at ``theta``.

    Writes ``rmse.csv`` and one ``residuals_<label>.csv`` per dataset
    (columns ``t`` then measured-minus-simulated per channel).
    """
    out = Path(out)
    theta = _estimate(setup) if theta is None else np.asarray(theta, float)
    datasets = validation_datasets(setup)
    if not datasets:
        raise ValueError("the config lists no validation datasets")
    rows = []
    for ds in datasets:
        Z = _clean_measurements(setup.model, ds.initial_state, ds.inputs, theta)
        resid = ds.measurements - Z
        t = (np.arange(ds.T) + 1) * ds.dt
        write_rows(out / f"residuals_{ds.label}.csv", ["t", *setup.meas_names],
                   [[float(tk), *map(float, rk)] for tk, rk in zip(t, resid)])
        rmse = np.sqrt(np.mean(resid ** 2, axis=0))
        rows.append({"dataset": ds.label, **{f"{n}_rmse": float(v)
                                             for n, v in zip(setup.meas_names, rmse)}})
    header = ["dataset", *[f"{n}_rmse" for n in setup.meas_names]]
    write_rows(out / "rmse.csv", header, [[r[h] for h in header] for r in rows])
    return rows


def _stats(values):
    v = np.asarray(values, dtype=float)
    fin = v[np.isfinite(v)]
    if fin.size == 0:
        return dict(mean=np.nan, std=np.nan, min=np.nan, q25=np.nan, median=np.nan,
                    q75=np.nan, max=np.nan)
    q = np.percentile(fin, [0, 25, 50, 75, 100])
    return dict(mean=float(fin.mean()), std=float(fin.std(ddof=1)) if fin.size > 1 else 0.0,
                min=q[0], q25=q[1], median=q[2], q75=q[3], max=q[4])


def filter_comparison(setup: Setup, out) -> list[dict]:
    """Repeat likelihood evaluations at the true parameters for each (method, N_p) cell.

    Writes ``filter_stats.csv`` (one row per cell) and ``filter_samples.csv``
    (every replication).  Replication ``r`` uses the same filter seed in every cell.
    """
    out = Path(out)
    cfg = setup.cfg
    fc = cfg.filter_comparison
    if setup.theta_true is None:
        raise ValueError("filter comparison needs a 'truth' value for every parameter")
    datasets = training_datasets(setup)
    lcfg, ut = likelihood_settings(cfg)
    rows, samples = [], []
    for method in fc.methods:
        for n_p in fc.n_particles:
            vals = []
            for r in range(fc.replications):
                obj = make_objective(setup, datasets, derived_seed(cfg.seed, r), method, n_p)
                v = obj(setup.theta_true)
                vals.append(v)
                samples.append([method, n_p, r, float(v)])
            st = _stats(vals)
            rows.append({"method": method, "n_particles": n_p, "replications": fc.replications,
                         "failures": int(np.sum(~np.isfinite(vals))), **st})
    header = ["method", "n_particles", "replications", "failures",
              "mean", "std", "min", "q25", "median", "q75", "max"]
    write_rows(out / "filter_stats.csv", header, [[r[h] for h in header] for r in rows])
    write_rows(out / "filter_samples.csv", ["method", "n_particles", "replication", "L"], samples)
    return rows


def optimizer_comparison(setup: Setup, out) -> dict:
    """Run each optimizer for several seeds and aggregate best-so-far curves.

    Writes ``optimizer_stats.csv`` (mean and std of best-so-far ``L`` per
    evaluation index, traces padded with their final value up to the budget)
    and ``optimizer_runs.csv`` (one row per run).
    """
    out = Path(out)
    cfg = setup.cfg
    oc = cfg.optimizer_comparison
    budget = cfg.scheduler.eval_budget
    datasets = training_datasets(setup)
    L_true = _true_log_likelihood(setup, datasets, cfg.seed)
    thr = L_true - 1.0 if L_true is not None and np.isfinite(L_true) else None
    curves, run_rows = {}, []
    for name in oc.optimizers:
        C = np.empty((oc.runs, budget))
        for r in range(oc.runs):
            seed = cfg.seed + r
            res = optimize(setup, make_objective(setup, datasets, seed), name, seed)
            b = res.trace.best_so_far()
            C[r, :len(b)] = b
            C[r, len(b):] = b[-1]
            run_rows.append([name, r, seed, float(res.L), res.n_evals,
                             "" if thr is None else (res.trace.evals_to_threshold(thr) or ""),
                             *map(float, res.theta)])
        curves[name] = C
    stat_rows = []
    for name, C in curves.items():
        with np.errstate(invalid="ignore"):
            mean = C.mean(axis=0)
            std = C.std(axis=0, ddof=1) if len(C) > 1 else np.zeros(budget)
        for k in range(budget):
            stat_rows.append([name, k + 1, float(mean[k]), float(std[k]), len(C)])
    write_rows(out / "optimizer_stats.csv", ["optimizer", "eval_index", "mean", "std", "n_runs"],
               stat_rows)
    write_rows(out / "optimizer_runs.csv",
               ["optimizer", "run", "seed", "L", "n_evals", "evals_to_threshold",
                *setup.space.names], run_rows)
    return {"curves": curves, "runs": run_rows, "threshold": thr}
