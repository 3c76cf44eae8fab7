"""Gaussian-process surrogate of the log-likelihood and expected improvement.

Inputs are points in the unit cube (parameters normalized by their search
box).  Targets are standardized internally; the constant prior mean is the
mean of the training targets.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_solve, cholesky, solve_triangular
from scipy.optimize import minimize
from scipy.special import erfc, erfcx
from scipy.stats import qmc
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted

KERNELS = ("matern52", "se")
_SQRT5 = np.sqrt(5.0)
_SQRT2 = math.sqrt(2.0)
_SQRT2PI = math.sqrt(2.0 * math.pi)
_SQRT_HALF_PI = math.sqrt(math.pi / 2.0)


class KernelConfigError(ValueError):
    pass


@dataclass(frozen=True)
class Kernel:
    """Stationary ARD kernel: ``variance * r(|a - b| / lengthscales)``."""

    family: str = "matern52"
    variance: float = 1.0
    lengthscales: tuple = (1.0,)

    def __post_init__(self):
        if self.family not in KERNELS:
            raise KernelConfigError(f"unknown kernel family {self.family!r}")
        ls = np.atleast_1d(np.asarray(self.lengthscales, dtype=float))
        if not self.variance > 0 or np.any(ls <= 0) or not np.all(np.isfinite(ls)):
            raise KernelConfigError("kernel hyperparameters must be positive")
        object.__setattr__(self, "lengthscales", tuple(ls.tolist()))

    def matrix(self, A, B=None):
        A = np.atleast_2d(A)
        B = A if B is None else np.atleast_2d(B)
        ls = np.asarray(self.lengthscales)
        r2 = _sqdist(A / ls, B / ls)
        return self.variance * _unit_kernel(self.family, r2)

    def __call__(self, a, b) -> float:
        return float(self.matrix(np.atleast_2d(a), np.atleast_2d(b))[0, 0])


def kernel_eval(kernel: Kernel, a, b) -> float:
    return kernel(a, b)


def _sqdist(A, B):
    d = (A * A).sum(1)[:, None] + (B * B).sum(1)[None, :] - 2.0 * A @ B.T
    return np.maximum(d, 0.0)


def _unit_kernel(family, r2):
    if family == "se":
        return np.exp(-0.5 * r2)
    r = np.sqrt(r2)
    return (1.0 + _SQRT5 * r + (5.0 / 3.0) * r2) * np.exp(-_SQRT5 * r)


def _unit_kernel_lengthscale_factor(family, r2, kval):
    """``g`` with ``dk/dlog(l_d) = variance * g * (delta_d / l_d)^2``."""
    if family == "se":
        return kval
    r = np.sqrt(r2)
    return (5.0 / 3.0) * (1.0 + _SQRT5 * r) * np.exp(-_SQRT5 * r)


@dataclass
class ObservationPool:
    """Every ``(theta, L)`` evaluated so far, ``theta`` in unit-cube coordinates.

    ``-inf`` values are kept for bookkeeping but never used as GP targets or
    ranked into the top of the pool.
    """

    dim: int
    points: list = field(default_factory=list)
    values: list = field(default_factory=list)

    def add(self, theta, value) -> int:
        theta = np.asarray(theta, dtype=float).ravel()
        if theta.shape != (self.dim,):
            raise ValueError(f"expected a point of dimension {self.dim}")
        v = float(value)
        if np.isnan(v):
            v = -np.inf
        self.points.append(theta.copy())
        self.values.append(v)
        return len(self.values) - 1

    def __len__(self):
        return len(self.values)

    @property
    def X(self) -> np.ndarray:
        return np.array(self.points).reshape(len(self.points), self.dim)

    @property
    def y(self) -> np.ndarray:
        return np.array(self.values, dtype=float)

    @property
    def finite(self) -> np.ndarray:
        return np.isfinite(self.y)

    @property
    def best_value(self) -> float:
        y = self.y
        return float(y[np.isfinite(y)].max()) if np.isfinite(y).any() else -np.inf

    @property
    def best_index(self) -> int:
        y = self.y
        if not np.isfinite(y).any():
            return 0
        return int(np.argmax(np.where(np.isfinite(y), y, -np.inf)))

    def ranked(self) -> np.ndarray:
        """Indices of finite entries, best first; ties keep insertion order."""
        y = self.y
        idx = np.flatnonzero(np.isfinite(y))
        return idx[np.argsort(-y[idx], kind="stable")]

    def rank_of(self, i: int) -> int:
        """1-based position of entry ``i`` in :meth:`ranked` (``-inf`` ranks last).

        An entry that ties an earlier one ranks behind it, so repeating a
        value never counts as entering the top of the pool.
        """
        y = self.y
        if not np.isfinite(y[i]):
            return len(y) + 1
        return int(np.sum(y > y[i]) + np.sum(y[:i] == y[i])) + 1

    def training_data(self):
        mask = self.finite
        return self.X[mask], self.y[mask]

    def copy(self) -> "ObservationPool":
        return ObservationPool(self.dim, [p.copy() for p in self.points], list(self.values))


class GaussianProcessSurrogate(RegressorMixin, BaseEstimator):
    """GP regression with ARD kernel and trained observation noise.

    Parameters
    ----------
    kernel : {"matern52", "se"}
    noise_floor : float
        Lower bound of the (standardized) observation-noise variance.
    n_restarts : int
        Random restarts of the marginal-likelihood search on top of the
        default and warm-start initializations.
    optimize : bool
        If False, keep ``initial_hyperparameters`` (or defaults) as given.
    initial_hyperparameters : dict, optional
        ``{"variance", "lengthscales", "noise"}`` in standardized units; used
        as a warm start.
    random_state : int or None
    """

    def __init__(self, kernel="matern52", noise_floor=1e-8, n_restarts=2, optimize=True,
                 initial_hyperparameters=None, lengthscale_bounds=(1e-2, 2e1),
                 variance_bounds=(1e-2, 1e2), noise_bounds=(None, 1.0), random_state=None):
        self.kernel = kernel
        self.noise_floor = noise_floor
        self.n_restarts = n_restarts
        self.optimize = optimize
        self.initial_hyperparameters = initial_hyperparameters
        self.lengthscale_bounds = lengthscale_bounds
        self.variance_bounds = variance_bounds
        self.noise_bounds = noise_bounds
        self.random_state = random_state

    # -- hyperparameter vector: [log variance, log lengthscales..., log noise]

    def _bounds(self, d):
        nlo = self.noise_bounds[0] if self.noise_bounds[0] is not None else self.noise_floor
        nlo = max(nlo, self.noise_floor)
        return ([np.log(self.variance_bounds)]
                + [np.log(self.lengthscale_bounds)] * d
                + [np.log((nlo, max(self.noise_bounds[1], nlo)))])

    def _pack(self, variance, lengthscales, noise, d):
        ls = np.broadcast_to(np.asarray(lengthscales, dtype=float), (d,))
        return np.concatenate([[np.log(variance)], np.log(ls), [np.log(noise)]])

    def log_marginal_likelihood(self, params, X=None, y=None, eval_gradient=False):
        """LML of standardized targets at log-hyperparameters ``params``."""
        if X is None:
            X, y = self.X_train_, self._y_std
        n, d = X.shape
        var = np.exp(params[0])
        ls = np.exp(params[1:1 + d])
        noise = np.exp(params[-1])
        Xs = X / ls
        r2 = _sqdist(Xs, Xs)
        ku = _unit_kernel(self.kernel, r2)
        K = var * ku
        K[np.diag_indices_from(K)] += noise
        try:
            L = cholesky(K, lower=True, check_finite=False)
        except np.linalg.LinAlgError:
            return (-np.inf, np.zeros_like(params)) if eval_gradient else -np.inf
        alpha = cho_solve((L, True), y, check_finite=False)
        lml = (-0.5 * y @ alpha - np.log(np.diag(L)).sum() - 0.5 * n * np.log(2 * np.pi))
        if not eval_gradient:
            return lml
        Kinv = cho_solve((L, True), np.eye(n), check_finite=False)
        W = np.outer(alpha, alpha) - Kinv
        grad = np.empty_like(params)
        grad[0] = 0.5 * np.sum(W * (var * ku))
        M = W * (var * _unit_kernel_lengthscale_factor(self.kernel, r2, ku))
        for j in range(d):
            diff = Xs[:, j][:, None] - Xs[:, j][None, :]
            grad[1 + j] = 0.5 * np.sum(M * diff * diff)
        grad[-1] = 0.5 * noise * np.trace(W)
        return lml, grad

    def fit(self, X, y):
        X = check_array(X, ensure_min_samples=1)
        y = np.asarray(y, dtype=float).ravel()
        if len(y) != len(X):
            raise ValueError("X and y differ in length")
        if not np.all(np.isfinite(y)):
            raise ValueError("GP targets must be finite")
        n, d = X.shape
        self.X_train_ = X.copy()
        self.y_train_ = y.copy()
        self.y_mean_ = float(y.mean())
        std = float(y.std())
        # identical targets: keep the prior variance floor instead of dividing by zero
        self.y_scale_ = std if std > 0 and np.isfinite(std) else 1.0
        self._y_std = (y - self.y_mean_) / self.y_scale_

        init = self.initial_hyperparameters or {}
        bounds = self._bounds(d)
        lo = np.array([b[0] for b in bounds])
        hi = np.array([b[1] for b in bounds])
        p0 = np.clip(self._pack(init.get("variance", 1.0),
                                init.get("lengthscales", 0.3),
                                init.get("noise", max(1e-4, self.noise_floor)), d), lo, hi)
        best = p0
        if self.optimize and n >= 2:
            rng = np.random.default_rng(self.random_state)
            starts = [p0]
            default = np.clip(self._pack(1.0, 0.3, max(1e-4, self.noise_floor), d), lo, hi)
            if not np.allclose(default, p0):
                starts.append(default)
            starts += [rng.uniform(lo, hi) for _ in range(self.n_restarts)]
            best_val = -np.inf

            def obj(p):
                v, g = self.log_marginal_likelihood(p, X, self._y_std, eval_gradient=True)
                if not np.isfinite(v):
                    return 1e25, np.zeros_like(p)
                return -v, -g

            for s in starts:
                res = minimize(obj, s, jac=True, method="L-BFGS-B", bounds=bounds,
                               options={"maxiter": 200})
                if np.isfinite(res.fun) and -res.fun > best_val:
                    best_val, best = -res.fun, res.x
        self._set_hyperparameters(best)
        return self

    def _set_hyperparameters(self, params):
        X, d = self.X_train_, self.X_train_.shape[1]
        self.hyperparameters_ = np.asarray(params, dtype=float)
        self.kernel_ = Kernel(self.kernel, float(np.exp(params[0])),
                              tuple(np.exp(params[1:1 + d])))
        self.noise_ = float(np.exp(params[-1]))
        self._ls = np.asarray(self.kernel_.lengthscales)
        self._Xs = X / self._ls
        self._Xs_sq = (self._Xs * self._Xs).sum(1)
        K = self.kernel_.matrix(X)
        K[np.diag_indices_from(K)] += self.noise_
        jitter = 0.0
        for _ in range(10):
            try:
                self.L_ = cholesky(K + jitter * np.eye(len(K)), lower=True, check_finite=False)
                break
            except np.linalg.LinAlgError:
                jitter = max(1e-10, 10 * jitter)
        else:
            raise np.linalg.LinAlgError("GP kernel matrix is not positive definite")
        self.alpha_ = cho_solve((self.L_, True), self._y_std, check_finite=False)
        self.log_marginal_likelihood_value_ = float(
            self.log_marginal_likelihood(params, X, self._y_std))

    def hyperparameters(self) -> dict:
        check_is_fitted(self, "kernel_")
        return {"variance": self.kernel_.variance,
                "lengthscales": np.array(self.kernel_.lengthscales),
                "noise": self.noise_}

    def predict(self, X, return_std=False):
        """Posterior mean (and standard deviation) of the latent function."""
        check_is_fitted(self, "alpha_")
        X = check_array(X)
        mu, sd = self._posterior(X)
        return (mu, sd) if return_std else mu

    def _posterior(self, X):
        # unchecked path for the acquisition inner loop
        ls = self._ls
        A = X / ls
        r2 = np.maximum((A * A).sum(1)[:, None] + self._Xs_sq[None, :] - 2.0 * A @ self._Xs.T, 0.0)
        Ks = self.kernel_.variance * _unit_kernel(self.kernel_.family, r2)
        mu = self.y_mean_ + self.y_scale_ * (Ks @ self.alpha_)
        V = solve_triangular(self.L_, Ks.T, lower=True, check_finite=False)
        var = self.kernel_.variance - np.sum(V * V, axis=0)
        return mu, np.sqrt(np.clip(var, 0.0, None)) * self.y_scale_


def gp_fit(pool: ObservationPool, kernel: str = "matern52", warm_start=None, n_restarts=2,
           noise_floor=1e-8, seed=None) -> GaussianProcessSurrogate:
    X, y = pool.training_data()
    if len(y) < 2:
        raise ValueError("GP training needs at least two finite observations")
    gp = GaussianProcessSurrogate(kernel=kernel, noise_floor=noise_floor,
                                  n_restarts=n_restarts, initial_hyperparameters=warm_start,
                                  random_state=seed)
    return gp.fit(X, y)


def gp_posterior(gp: GaussianProcessSurrogate, theta):
    mu, sd = gp.predict(np.atleast_2d(theta), return_std=True)
    return float(mu[0]), float(sd[0])


# --- expected improvement -------------------------------------------------------

def _norm_pdf(z):
    return np.exp(-0.5 * z * z) / np.sqrt(2.0 * np.pi)


def _norm_cdf(z):
    return 0.5 * erfc(-z / np.sqrt(2.0))


def expected_improvement_from_moments(mu, sigma, L_star):
    """Closed-form ``E[(f - L*)^+]`` for ``f ~ N(mu, sigma^2)``."""
    mu = np.asarray(mu, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    diff = mu - L_star
    pos = sigma > 0
    safe = np.where(pos, sigma, 1.0)
    z = diff / safe
    ei = diff * _norm_cdf(z) + safe * _norm_pdf(z)
    out = np.where(pos, np.maximum(ei, 0.0), np.maximum(diff, 0.0))
    return out if out.ndim else float(out)


def log_expected_improvement_from_moments(mu, sigma, L_star):
    """Logarithm of EI that stays finite deep in the lower tail."""
    mu = np.atleast_1d(np.asarray(mu, dtype=float))
    sigma = np.atleast_1d(np.asarray(sigma, dtype=float))
    out = np.full(mu.shape, -np.inf)
    pos = sigma > 0
    z = np.where(pos, (mu - L_star) / np.where(pos, sigma, 1.0), 0.0)
    hi = pos & (z > -1.0)
    lo = pos & ~hi
    if hi.any():
        h = z[hi] * _norm_cdf(z[hi]) + _norm_pdf(z[hi])
        out[hi] = np.log(h) + np.log(sigma[hi])
    if lo.any():
        zz = z[lo]
        # phi(z) + z Phi(z) = phi(z) * (1 + z sqrt(pi/2) erfcx(-z/sqrt2))
        t = 1.0 + zz * np.sqrt(np.pi / 2.0) * erfcx(-zz / np.sqrt(2.0))
        with np.errstate(divide="ignore", invalid="ignore"):
            out[lo] = (-0.5 * zz * zz - 0.5 * np.log(2 * np.pi)
                       + np.log(np.maximum(t, 1e-300)) + np.log(sigma[lo]))
    zero = ~pos & (mu > L_star)
    out[zero] = np.log(mu[zero] - L_star)
    return out


def _log_ei_scalar(mu, sd, L_star):
    if sd <= 0:
        return math.log(mu - L_star) if mu > L_star else -math.inf
    z = (mu - L_star) / sd
    if z > -1.0:
        h = z * 0.5 * math.erfc(-z / _SQRT2) + math.exp(-0.5 * z * z) / _SQRT2PI
        return math.log(h) + math.log(sd)
    t = 1.0 + z * _SQRT_HALF_PI * float(erfcx(-z / _SQRT2))
    return -0.5 * z * z - math.log(_SQRT2PI) + math.log(max(t, 1e-300)) + math.log(sd)


def expected_improvement(gp: GaussianProcessSurrogate, theta, L_star):
    mu, sd = gp.predict(np.atleast_2d(theta), return_std=True)
    ei = expected_improvement_from_moments(mu, sd, L_star)
    return float(ei[0]) if np.ndim(theta) == 1 else ei


@dataclass(frozen=True)
class AcquisitionConfig:
    n_starts: int = 32
    n_incumbent_starts: int = 4
    n_polish: int | None = 8   # best-scoring starts that get polished; None polishes all
    polish_evals: int = 60
    polish: bool = True


def maximize_acquisition(gp: GaussianProcessSurrogate, L_star: float, dim: int,
                         cfg: AcquisitionConfig = AcquisitionConfig(), seed=None,
                         incumbents=None):
    """Approximate ``argmax EI`` over the unit cube.

    ``cfg.n_starts`` scrambled-Sobol points plus up to
    ``cfg.n_incumbent_starts`` of the given ``incumbents`` (best observed
    points) are scored; the ``cfg.n_polish`` best of them seed bounded
    Nelder-Mead searches on ``log EI``.  Returns ``(point, ei_value)``.
    """
    from .nelder_mead import NelderMeadConfig, Simplex, nm_run

    rng = np.random.default_rng(seed)
    sobol = qmc.Sobol(dim, scramble=True, seed=rng)
    n_sobol = max(1, cfg.n_starts)
    starts = sobol.random(1 << int(np.ceil(np.log2(n_sobol))))[:n_sobol]
    if incumbents is not None and cfg.n_incumbent_starts > 0:
        inc = np.atleast_2d(incumbents)[:cfg.n_incumbent_starts]
        starts = np.vstack([starts, inc])

    def neg_log_ei(P):
        mu, sd = gp._posterior(np.atleast_2d(P))
        return -log_expected_improvement_from_moments(mu, sd, L_star)

    scores = neg_log_ei(starts)
    best_i = int(np.argmin(scores))
    best_x, best_s = starts[best_i].copy(), scores[best_i]
    if cfg.polish:
        lo, hi = np.zeros(dim), np.ones(dim)
        nm_cfg = NelderMeadConfig()
        step = 0.05
        order = np.argsort(scores, kind="stable")
        if cfg.n_polish is not None:
            order = order[:cfg.n_polish]

        def log_ei_point(p):
            mu, sd = gp._posterior(p[None, :])
            return _log_ei_scalar(float(mu[0]), float(sd[0]), L_star)

        for x0, s0 in zip(starts[order], scores[order]):
            if not np.isfinite(s0):
                continue
            verts = [x0]
            for j in range(dim):
                v = x0.copy()
                v[j] = v[j] + step if v[j] + step <= 1.0 else v[j] - step
                verts.append(v)
            verts = np.array(verts)
            vals = -neg_log_ei(verts)  # maximize log EI
            simplex = Simplex(verts, np.where(np.isfinite(vals), vals, -np.inf))
            res = nm_run(log_ei_point, simplex, d_lim=1e-6,
                         patience=10 * dim, max_evals=cfg.polish_evals, bounds=(lo, hi),
                         cfg=nm_cfg)
            if -res.best_value < best_s:
                best_x, best_s = res.best_point.copy(), -res.best_value
    best_x = np.clip(best_x, 0.0, 1.0)
    ei = expected_improvement(gp, best_x, L_star)
    return best_x, ei
