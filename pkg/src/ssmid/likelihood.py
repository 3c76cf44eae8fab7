"""Log-likelihood evaluation for state-space models.

The main estimator is the unscented implicit particle filter (U-IPF): every
particle carries a mean and a covariance, is pushed through the dynamics and
the measurement map with the unscented transform, receives a Kalman-type
update, and is then re-drawn with a small-covariance perturbation around the
updated mean.  An auxiliary particle filter (APF) and a deterministic
trajectory shortcut are provided alongside.

Infeasible parameter points and filter collapse never raise out of the
top-level evaluators; they return ``-inf`` and fill an optional ``info``
dict with a ``reason``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace

import numpy as np
from scipy.special import logsumexp

from .ssm import Dataset, ModelError, ModelInterface, NoiseSpec, simulate

log = logging.getLogger(__name__)

_LOG2PI = np.log(2.0 * np.pi)


class FilterError(RuntimeError):
    """Base class for numerical failures inside a filter."""


class CovarianceDegeneracyError(FilterError):
    pass


class FilterCollapseError(FilterError):
    def __init__(self, msg, k=None):
        super().__init__(msg if k is None else f"{msg} (time index {k})")
        self.k = k


@dataclass(frozen=True)
class UtParams:
    """Scaled unscented-transform constants."""

    alpha: float = 1e-3
    beta: float = 2.0
    kappa: float = 0.0

    def __post_init__(self):
        if not 0.0 < self.alpha <= 1.0:
            raise ValueError(f"alpha must be in (0, 1], got {self.alpha}")

    def weights(self, n: int):
        lam = self.alpha ** 2 * (n + self.kappa) - n
        c = n + lam
        if not c > 0:
            raise ValueError(f"n + lambda must be positive (n={n}, lambda={lam})")
        Wm = np.full(2 * n + 1, 0.5 / c)
        Wc = Wm.copy()
        Wm[0] = lam / c
        Wc[0] = lam / c + (1.0 - self.alpha ** 2 + self.beta)
        if not (np.isfinite(Wm[0]) and np.isfinite(Wc[0])):
            raise ValueError("unscented central weight is not finite")
        return Wm, Wc, c


@dataclass(frozen=True)
class LikelihoodConfig:
    n_particles: int = 100
    alpha_implicit: float = 1e-4
    ess_fraction: float = 0.5
    jitter: float = 1e-10
    init_cov: float = 1e-6

    def __post_init__(self):
        if self.n_particles < 1:
            raise ValueError("n_particles must be at least 1")
        if not 0.0 < self.alpha_implicit < 1.0:
            raise ValueError("alpha_implicit must lie in (0, 1)")
        if not 0.0 < self.ess_fraction <= 1.0:
            raise ValueError("ess_fraction must lie in (0, 1]")
        if self.jitter < 0 or self.init_cov < 0:
            raise ValueError("jitter and init_cov must be non-negative")


@dataclass
class ParticleEnsemble:
    means: np.ndarray    # (Np, n)
    covs: np.ndarray     # (Np, n, n)
    weights: np.ndarray  # (Np,)
    k: int = 0

    def __len__(self):
        return len(self.weights)

    @classmethod
    def initial(cls, x0, P0, n_particles: int) -> "ParticleEnsemble":
        """Every particle starts as the prior Gaussian itself."""
        x0 = np.asarray(x0, dtype=float)
        P0 = np.asarray(P0, dtype=float)
        n = len(x0)
        return cls(np.tile(x0, (n_particles, 1)),
                   np.broadcast_to(P0, (n_particles, n, n)).copy(),
                   np.full(n_particles, 1.0 / n_particles))


# --- linear-algebra helpers ----------------------------------------------------

def _sym(P):
    return 0.5 * (P + np.swapaxes(P, -1, -2))


def cholesky_jitter(P, jitter: float = 1e-10, max_tries: int = 8):
    """Batched lower Cholesky factor, adding trace-scaled jitter on failure."""
    P = np.asarray(P, dtype=float)
    if not np.isfinite(P).all():
        raise CovarianceDegeneracyError("covariance contains non-finite entries")
    try:
        return np.linalg.cholesky(P)
    except np.linalg.LinAlgError:
        pass
    flat = P.reshape(-1, P.shape[-2], P.shape[-1])
    out = np.empty_like(flat)
    n = P.shape[-1]
    eye = np.eye(n)
    for j, A in enumerate(flat):
        try:
            out[j] = np.linalg.cholesky(A)
            continue
        except np.linalg.LinAlgError:
            pass
        scale = max(np.trace(A) / n, np.finfo(float).tiny) if np.isfinite(A).all() else np.nan
        if not np.isfinite(scale):
            raise CovarianceDegeneracyError("covariance contains non-finite entries")
        eps = max(jitter, 1e-14) * scale
        for _ in range(max_tries):
            try:
                out[j] = np.linalg.cholesky(A + eps * eye)
                break
            except np.linalg.LinAlgError:
                eps *= 10.0
        else:
            raise CovarianceDegeneracyError("Cholesky failed after jitter")
    return out.reshape(P.shape)


def gaussian_logpdf(z, mean, cov):
    """Batched ``log N(z; mean, cov)`` over leading axes of ``mean``/``cov``."""
    r = np.asarray(z, dtype=float) - mean
    L = np.linalg.cholesky(cov)
    y = np.linalg.solve(L, r[..., None])[..., 0]
    d = r.shape[-1]
    logdet = 2.0 * np.sum(np.log(np.diagonal(L, axis1=-2, axis2=-1)), axis=-1)
    return -0.5 * (d * _LOG2PI + logdet + np.sum(y * y, axis=-1))


# --- unscented transform ----------------------------------------------------------

def sigma_points(mean, cov, ut: UtParams = UtParams(), jitter: float = 1e-10):
    mean = np.asarray(mean, dtype=float)
    n = mean.shape[-1]
    _, _, c = ut.weights(n)
    S = cholesky_jitter(cov, jitter) * np.sqrt(c)
    offs = np.swapaxes(S, -1, -2)  # rows are columns of S
    return np.concatenate([mean[..., None, :], mean[..., None, :] + offs,
                           mean[..., None, :] - offs], axis=-2)


def unscented_transform(g, mean, cov, ut: UtParams = UtParams(), jitter: float = 1e-10):
    """Propagate ``N(mean, cov)`` through ``g``.

    Returns ``(out_mean, out_cov, cross_cov)``.  ``g`` receives sigma points
    with shape ``(..., 2n+1, n)``.  Moments are accumulated from differences
    to the central point: with ``s = sum_i W_i (Y_i - Y_0)`` the weighted
    covariance reduces to ``sum_i W_i dY_i dY_i^T + (beta - alpha^2) s s^T``,
    which avoids cancelling the large negative central weight of
    small-``alpha`` transforms.
    """
    X = sigma_points(mean, cov, ut, jitter)
    n = X.shape[-1]
    Wm, _, _ = ut.weights(n)
    W = Wm[1:]
    Y = np.asarray(g(X), dtype=float)
    dY = Y[..., 1:, :] - Y[..., :1, :]
    dX = X[..., 1:, :] - X[..., :1, :]
    s = np.einsum("i,...ij->...j", W, dY)
    out_mean = Y[..., 0, :] + s
    out_cov = (np.einsum("i,...ij,...ik->...jk", W, dY, dY)
               + (ut.beta - ut.alpha ** 2) * s[..., :, None] * s[..., None, :])
    # sigma points are symmetric about the mean, so sum_i W_i dX_i = 0
    cross = np.einsum("i,...ij,...ik->...jk", W, dX, dY)
    return out_mean, _sym(out_cov), cross


# --- U-IPF building blocks -------------------------------------------------------

def predict_particle(model: ModelInterface, mean, cov, u, theta, Q, ut: UtParams = UtParams(),
                     jitter: float = 1e-10):
    """Time update of one particle (or a batch): UT through the dynamics plus ``Q``."""
    x_pred, P_hat, _ = unscented_transform(lambda X: model.transition(X, u, theta),
                                           mean, cov, ut, jitter)
    return x_pred, P_hat + Q


def predict_measurement(model: ModelInterface, x_pred, P_pred, u, theta, R,
                        ut: UtParams = UtParams(), jitter: float = 1e-10):
    z_pred, Pz_hat, Pxz = unscented_transform(lambda X: model.measurement(X, u, theta),
                                              x_pred, P_pred, ut, jitter)
    return z_pred, Pz_hat + R, Pxz


def kalman_update_particle(x_pred, P_pred, z_pred, P_z, P_xz, z):
    """Kalman-type measurement update; returns ``(x_tilde, P_post)``."""
    try:
        # K^T = P_z^{-1} P_xz^T since P_z is symmetric
        Kt = np.linalg.solve(P_z, np.swapaxes(P_xz, -1, -2))
    except np.linalg.LinAlgError:
        raise CovarianceDegeneracyError("innovation covariance is singular") from None
    if not np.all(np.isfinite(Kt)):
        raise CovarianceDegeneracyError("innovation covariance is singular")
    K = np.swapaxes(Kt, -1, -2)
    innov = np.asarray(z, dtype=float) - z_pred
    x_tilde = x_pred + np.einsum("...ij,...j->...i", K, innov)
    P_post = P_pred - P_xz @ Kt
    return x_tilde, _sym(P_post)


def implicit_sample(x_tilde, P_post, alpha_implicit: float, seed=None, jitter: float = 1e-10):
    """Draw ``x_tilde + chol(P_post) @ xi`` with ``xi ~ N(0, alpha I)``."""
    rng = np.random.default_rng(seed)
    L = cholesky_jitter(P_post, jitter)
    xi = rng.standard_normal(np.shape(x_tilde)) * np.sqrt(alpha_implicit)
    return x_tilde + np.einsum("...ij,...j->...i", L, xi)


def update_weights(prev_weights, log_likelihoods, k=None):
    """Normalized ``w_prev * p(z | particle)`` computed in log space."""
    lw = np.log(np.asarray(prev_weights, dtype=float)) + np.asarray(log_likelihoods, float)
    lw = np.where(np.isnan(lw), -np.inf, lw)
    top = lw.max()
    if not np.isfinite(top):
        raise FilterCollapseError("all particle weights underflowed to zero", k)
    w = np.exp(lw - top)
    return w / w.sum()


def predictive_log_likelihood(weights, z_pred, P_z, z):
    """``log sum_i w_i N(z; z_pred_i, P_z_i)``; ``-inf`` if every term vanishes."""
    with np.errstate(over="ignore"):
        lg = gaussian_logpdf(z, z_pred, P_z)
    lw = np.log(np.asarray(weights, dtype=float)) + lg
    lw = np.where(np.isnan(lw), -np.inf, lw)
    if not np.isfinite(lw.max()):
        return -np.inf
    return float(logsumexp(lw))


def effective_sample_size(weights) -> float:
    w = np.asarray(weights, dtype=float)
    return 1.0 / np.sum(w * w)


def systematic_indices(weights, rng) -> np.ndarray:
    w = np.asarray(weights, dtype=float)
    N = len(w)
    positions = (rng.random() + np.arange(N)) / N
    cs = np.cumsum(w)
    cs[-1] = 1.0
    return np.searchsorted(cs, positions, side="right").clip(max=N - 1)


def resample(ensemble: ParticleEnsemble, ess_fraction: float, seed=None) -> ParticleEnsemble:
    """Systematic resampling of (mean, covariance) pairs when ESS drops too low."""
    N = len(ensemble)
    if effective_sample_size(ensemble.weights) >= ess_fraction * N:
        return ensemble
    rng = np.random.default_rng(seed)
    idx = systematic_indices(ensemble.weights, rng)
    return ParticleEnsemble(ensemble.means[idx].copy(), ensemble.covs[idx].copy(),
                            np.full(N, 1.0 / N), ensemble.k)


# --- top-level evaluators -----------------------------------------------------------

def _initial_mean(model, dataset, theta):
    if dataset.initial_state is not None:
        return dataset.initial_state
    return np.asarray(model.initial_state(dataset.inputs[0], theta), dtype=float)


def _as_theta(theta):
    # parameterless models may pass None
    return np.empty(0) if theta is None else np.asarray(theta, dtype=float)


def _check_dt(model, dataset):
    dt = getattr(model, "dt", None)
    if dt is not None and not np.isclose(dt, dataset.dt):
        raise ValueError(f"model dt={dt} does not match dataset dt={dataset.dt}")


def _fail(info, reason, exc=None):
    if info is not None:
        info["reason"] = reason
        if exc is not None:
            info["detail"] = str(exc)
    log.debug("likelihood -> -inf (%s: %s)", reason, exc)
    return -np.inf


_FAILURES = (ModelError, FilterError, np.linalg.LinAlgError, FloatingPointError,
             ZeroDivisionError, OverflowError)


def uipf_log_likelihood(model: ModelInterface, theta, dataset: Dataset, noise: NoiseSpec,
                        cfg: LikelihoodConfig = LikelihoodConfig(), ut: UtParams = UtParams(),
                        seed=None, info: dict | None = None) -> float:
    """Sum of one-step predictive log-densities estimated by the U-IPF."""
    _check_dt(model, dataset)
    if info is not None:
        info.clear()
        info["reason"] = "ok"
        info["resamples"] = 0
    rng = np.random.default_rng(seed)
    theta = _as_theta(theta)
    if not np.all(np.isfinite(theta)):
        return _fail(info, "non-finite parameter")
    try:
        with np.errstate(all="ignore"):
            x0 = _initial_mean(model, dataset, theta)
            n = len(x0)
            ens = ParticleEnsemble.initial(x0, cfg.init_cov * np.eye(n), cfg.n_particles)
            total = 0.0
            U, Z = dataset.inputs, dataset.measurements
            for k in range(dataset.T):
                x_pred, P_pred = predict_particle(model, ens.means, ens.covs, U[k], theta,
                                                  noise.Q, ut, cfg.jitter)
                if not np.all(np.isfinite(x_pred)):
                    return _fail(info, f"non-finite state prediction at time index {k}")
                z_pred, P_z, P_xz = predict_measurement(model, x_pred, P_pred, U[k], theta,
                                                        noise.R, ut, cfg.jitter)
                if not np.all(np.isfinite(z_pred)):
                    return _fail(info, f"non-finite measurement prediction at time index {k}")
                log_obs = gaussian_logpdf(Z[k], z_pred, P_z)
                ll = predictive_log_likelihood(ens.weights, z_pred, P_z, Z[k])
                if not np.isfinite(ll):
                    return _fail(info, f"filter collapse at time index {k}")
                total += ll
                x_tilde, P_post = kalman_update_particle(x_pred, P_pred, z_pred, P_z, P_xz, Z[k])
                means = implicit_sample(x_tilde, P_post, cfg.alpha_implicit, rng, cfg.jitter)
                w = update_weights(ens.weights, log_obs, k)
                ens = ParticleEnsemble(means, P_post, w, k + 1)
                resampled = resample(ens, cfg.ess_fraction, rng)
                if info is not None and resampled is not ens:
                    info["resamples"] += 1
                ens = resampled
    except _FAILURES as exc:
        return _fail(info, type(exc).__name__, exc)
    if not np.isfinite(total):
        return _fail(info, "non-finite log-likelihood")
    return float(total)


def apf_log_likelihood(model: ModelInterface, theta, dataset: Dataset, noise: NoiseSpec,
                       n_particles: int = 100, seed=None, init_cov: float = 1e-6,
                       info: dict | None = None) -> float:
    """Auxiliary particle filter estimate of the log-likelihood.

    First-stage weights use the measurement density at the predicted mean of
    each particle; the second stage corrects by the ratio of the densities
    at the propagated particle and at that mean.
    """
    _check_dt(model, dataset)
    if info is not None:
        info.clear()
        info["reason"] = "ok"
    rng = np.random.default_rng(seed)
    theta = _as_theta(theta)
    N = int(n_particles)
    if N < 1:
        raise ValueError("n_particles must be at least 1")
    try:
        with np.errstate(all="ignore"):
            x0 = _initial_mean(model, dataset, theta)
            n = len(x0)
            Lq = _psd_factor(noise.Q)
            x = x0 + np.sqrt(init_cov) * rng.standard_normal((N, n))
            logw = np.full(N, -np.log(N))
            total = 0.0
            U, Z = dataset.inputs, dataset.measurements
            for k in range(dataset.T):
                mu = model.transition(x, U[k], theta)
                zmu = model.measurement(mu, U[k], theta)
                g1 = gaussian_logpdf(Z[k], zmu, noise.R)
                first = np.where(np.isnan(g1), -np.inf, logw + g1)
                lse1 = logsumexp(first)
                if not np.isfinite(lse1):
                    return _fail(info, f"filter collapse at time index {k}")
                lam = np.exp(first - lse1)
                idx = systematic_indices(lam, rng)
                x = mu[idx] + rng.standard_normal((N, n)) @ Lq.T
                g2 = gaussian_logpdf(Z[k], model.measurement(x, U[k], theta), noise.R)
                second = np.where(np.isnan(g2), -np.inf, g2 - g1[idx])
                lse2 = logsumexp(second)
                if not np.isfinite(lse2):
                    return _fail(info, f"filter collapse at time index {k}")
                total += lse1 + lse2 - np.log(N)
                logw = second - lse2
    except _FAILURES as exc:
        return _fail(info, type(exc).__name__, exc)
    if not np.isfinite(total):
        return _fail(info, "non-finite log-likelihood")
    return float(total)


def _psd_factor(Q):
    try:
        return np.linalg.cholesky(Q)
    except np.linalg.LinAlgError:
        w, V = np.linalg.eigh(Q)
        return V * np.sqrt(np.clip(w, 0.0, None))


def deterministic_log_likelihood(model: ModelInterface, theta, dataset: Dataset, R,
                                 seed=None, info: dict | None = None) -> float:
    """Log-likelihood of a model with noise-free dynamics.

    The state trajectory is simulated once and the measurement residuals are
    scored under ``N(0, R)``.  ``seed`` is accepted for interface symmetry.
    """
    _check_dt(model, dataset)
    if info is not None:
        info.clear()
        info["reason"] = "ok"
    theta = _as_theta(theta)
    R = np.atleast_2d(np.asarray(R, dtype=float))
    try:
        with np.errstate(all="ignore"):
            x0 = _initial_mean(model, dataset, theta)
            fast = getattr(model, "simulate_deterministic", None)
            if fast is not None:
                _, zhat = fast(x0, dataset.inputs, theta)
            else:
                _, zhat = simulate(model, x0, dataset.inputs, theta)
            if not np.all(np.isfinite(zhat)):
                return _fail(info, "non-finite simulated measurement")
            L = np.linalg.cholesky(R)
            r = dataset.measurements - zhat
            y = np.linalg.solve(L, r.T)
            d = R.shape[0]
            per_step = -0.5 * (d * _LOG2PI + 2.0 * np.sum(np.log(np.diag(L))))
            total = dataset.T * per_step - 0.5 * float(np.sum(y * y))
    except _FAILURES as exc:
        return _fail(info, type(exc).__name__, exc)
    if not np.isfinite(total):
        return _fail(info, "non-finite log-likelihood")
    return float(total)


METHODS = ("uipf", "apf", "deterministic")


def log_likelihood(model, theta, dataset, noise: NoiseSpec, method: str = "uipf",
                   cfg: LikelihoodConfig = LikelihoodConfig(), ut: UtParams = UtParams(),
                   seed=None, info: dict | None = None) -> float:
    """Dispatch to one of the evaluators by name."""
    if method == "uipf":
        return uipf_log_likelihood(model, theta, dataset, noise, cfg, ut, seed, info)
    if method == "apf":
        return apf_log_likelihood(model, theta, dataset, noise, cfg.n_particles, seed,
                                  cfg.init_cov, info)
    if method == "deterministic":
        return deterministic_log_likelihood(model, theta, dataset, noise.R, seed, info)
    raise ValueError(f"unknown likelihood method {method!r}; choose from {METHODS}")


def total_log_likelihood(model, theta, datasets, noise: NoiseSpec, method: str = "uipf",
                         cfg: LikelihoodConfig = LikelihoodConfig(), ut: UtParams = UtParams(),
                         seed=None, info: dict | None = None) -> float:
    """Sum of per-dataset log-likelihoods; every dataset is filtered with ``seed``."""
    datasets = list(datasets)
    if not datasets:
        raise ValueError("at least one dataset is required")
    total = 0.0
    if info is not None:
        info.clear()
        info["reason"] = "ok"
    for ds in datasets:
        sub = {}
        ll = log_likelihood(model, theta, ds, noise, method, cfg, ut, seed, sub)
        if not np.isfinite(ll):
            if info is not None:
                info["reason"] = sub.get("reason", "infeasible")
                info["dataset"] = ds.label
            return -np.inf
        total += ll
    return float(total)


def with_particles(cfg: LikelihoodConfig, n: int) -> LikelihoodConfig:
    return replace(cfg, n_particles=n)
