"""Maximum-likelihood identification of state-space model parameters."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .hybrid import OPTIMIZERS, GpConfig, SchedulerConfig
from .likelihood import METHODS, LikelihoodConfig, UtParams, total_log_likelihood
from .nelder_mead import NelderMeadConfig
from .ssm import Dataset, NoiseSpec, ParameterSpace, simulate


def derived_seed(run_seed: int, index: int) -> int:
    """Filter seed for the ``index``-th likelihood call of a run."""
    return int(np.random.SeedSequence([int(run_seed), int(index)]).generate_state(1)[0])


class LikelihoodObjective:
    """``theta -> L(theta)`` summed over datasets, with a fresh derived seed per call."""

    def __init__(self, model, datasets, noise: NoiseSpec, method="uipf",
                 cfg: LikelihoodConfig = LikelihoodConfig(), ut: UtParams = UtParams(), seed=0):
        if method not in METHODS:
            raise ValueError(f"unknown likelihood method {method!r}")
        self.model = model
        self.datasets = list(datasets)
        self.noise = noise
        self.method = method
        self.cfg = cfg
        self.ut = ut
        self.seed = seed
        self.calls = 0
        self.failures: dict = {}

    def __call__(self, theta) -> float:
        seed = derived_seed(self.seed, self.calls)
        self.calls += 1
        info: dict = {}
        v = total_log_likelihood(self.model, np.asarray(theta, dtype=float), self.datasets,
                                 self.noise, self.method, self.cfg, self.ut, seed, info)
        if not np.isfinite(v):
            reason = info.get("reason", "infeasible")
            self.failures[reason] = self.failures.get(reason, 0) + 1
        return v


def _as_datasets(X):
    if isinstance(X, Dataset):
        return [X]
    datasets = list(X)
    if not datasets or not all(isinstance(d, Dataset) for d in datasets):
        raise TypeError("expected a Dataset or a non-empty sequence of Datasets")
    return datasets


class SystemIdentifier(BaseEstimator):
    """Fit the parameters of a state-space model to input/measurement data.

    ``fit`` maximizes the summed log-likelihood of the datasets over
    ``space`` with the chosen optimizer.  ``filter_model`` (defaults to
    ``model``) is the variant handed to the likelihood evaluator, while
    ``predict`` simulates ``model``.
    """

    def __init__(self, model=None, space: ParameterSpace | None = None,
                 noise: NoiseSpec | None = None, likelihood="uipf", n_particles=100,
                 optimizer="accelerated", scheduler: SchedulerConfig | None = None,
                 gp: GpConfig | None = None, nelder_mead: NelderMeadConfig | None = None,
                 ut: UtParams | None = None, likelihood_config: LikelihoodConfig | None = None,
                 filter_model=None, random_state=0):
        self.model = model
        self.space = space
        self.noise = noise
        self.likelihood = likelihood
        self.n_particles = n_particles
        self.optimizer = optimizer
        self.scheduler = scheduler
        self.gp = gp
        self.nelder_mead = nelder_mead
        self.ut = ut
        self.likelihood_config = likelihood_config
        self.filter_model = filter_model
        self.random_state = random_state

    def _likelihood_config(self):
        base = self.likelihood_config or LikelihoodConfig()
        return LikelihoodConfig(**{**base.__dict__, "n_particles": int(self.n_particles)})

    def objective(self, datasets, seed=None) -> LikelihoodObjective:
        return LikelihoodObjective(self.filter_model or self.model, _as_datasets(datasets),
                                   self.noise, self.likelihood, self._likelihood_config(),
                                   self.ut or UtParams(),
                                   self.random_state if seed is None else seed)

    def fit(self, X, y=None):
        if self.model is None or self.space is None or self.noise is None:
            raise ValueError("model, space and noise must be set before fit")
        if self.optimizer not in OPTIMIZERS:
            raise ValueError(f"unknown optimizer {self.optimizer!r}; choose from {list(OPTIMIZERS)}")
        datasets = _as_datasets(X)
        sched = self.scheduler or SchedulerConfig()
        sched = SchedulerConfig(**{**sched.__dict__, "seed": int(self.random_state)})
        obj = self.objective(datasets)
        opt = OPTIMIZERS[self.optimizer]
        if self.optimizer == "accelerated":
            res = opt(self.space, obj, sched, self.gp or GpConfig(),
                      self.nelder_mead or NelderMeadConfig())
        elif self.optimizer == "plain_bo":
            res = opt(self.space, obj, sched, self.gp or GpConfig())
        else:
            res = opt(self.space, obj, sched, self.nelder_mead or NelderMeadConfig())
        self.theta_ = np.asarray(res.theta, dtype=float)
        self.log_likelihood_ = float(res.L)
        self.result_ = res
        self.trace_ = res.trace
        self.n_evals_ = res.n_evals
        self.failures_ = dict(obj.failures)
        return self

    def predict(self, X):
        """Noise-free simulated measurements at ``theta_`` for each dataset."""
        check_is_fitted(self, "theta_")
        datasets = _as_datasets(X)
        out = [self._simulate(d) for d in datasets]
        return out[0] if isinstance(X, Dataset) else out

    def _simulate(self, d: Dataset):
        x0 = d.initial_state if d.initial_state is not None else \
            self.model.initial_state(d.inputs[0], self.theta_)
        if hasattr(self.model, "simulate_deterministic"):
            _, z = self.model.simulate_deterministic(x0, d.inputs, self.theta_)
        else:
            _, z = simulate(self.model, x0, d.inputs, self.theta_)
        return z

    def score(self, X, y=None):
        """Summed log-likelihood of ``X`` at ``theta_`` (fixed filter seed)."""
        check_is_fitted(self, "theta_")
        return float(self.objective(X)(self.theta_))
