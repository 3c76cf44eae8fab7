"""Discrete-time nonlinear state-space models and their simulation.

A model maps ``x_{k} = f(x_{k-1}, u_k, theta) + w_k`` and
``z_k = h(x_k, u_k, theta) + v_k``.  The input ``u_k`` is held constant over
the sampling interval that ends at sample ``k`` (zero-order hold), so a
dataset of ``T`` input/measurement pairs produces ``T`` states after the
initial state ``x_0``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np


class ModelError(ValueError):
    """Raised when a model produces non-finite values."""


class ModelInterface:
    """Base class for discrete-time state-space models.

    Subclasses set ``state_dim``, ``input_dim`` and ``meas_dim`` and implement
    :meth:`transition` and :meth:`measurement`.  Both must accept a batch of
    states with shape ``(..., state_dim)`` and return arrays with the same
    leading shape, so that sigma points and particles can be pushed through
    in one call.
    """

    state_dim: int
    input_dim: int
    meas_dim: int
    dt: float | None = None
    param_names: tuple[str, ...] = ()

    def transition(self, x, u, theta):
        raise NotImplementedError

    def measurement(self, x, u, theta):
        raise NotImplementedError

    def initial_state(self, u0, theta):
        """Rest state used when a dataset carries no initial state."""
        return np.zeros(self.state_dim)


class FunctionModel(ModelInterface):
    """Wrap plain callables ``f(x, u, theta)`` and ``h(x, u, theta)``."""

    def __init__(self, f, h, state_dim, input_dim, meas_dim, x0=None, dt=None):
        self.f = f
        self.h = h
        self.state_dim = int(state_dim)
        self.input_dim = int(input_dim)
        self.meas_dim = int(meas_dim)
        self.x0 = None if x0 is None else np.atleast_1d(np.asarray(x0, float))
        self.dt = dt

    def transition(self, x, u, theta):
        return self.f(x, u, theta)

    def measurement(self, x, u, theta):
        return self.h(x, u, theta)

    def initial_state(self, u0, theta):
        if self.x0 is None:
            return np.zeros(self.state_dim)
        return self.x0.copy()


@dataclass(frozen=True)
class NoiseSpec:
    """Additive Gaussian process noise ``Q`` and measurement noise ``R``."""

    Q: np.ndarray
    R: np.ndarray

    def __post_init__(self):
        Q = np.atleast_2d(np.asarray(self.Q, dtype=float))
        R = np.atleast_2d(np.asarray(self.R, dtype=float))
        for name, M in (("Q", Q), ("R", R)):
            if M.shape[0] != M.shape[1]:
                raise ValueError(f"{name} must be square, got shape {M.shape}")
            if not np.allclose(M, M.T, atol=1e-14, rtol=0):
                raise ValueError(f"{name} must be symmetric")
        if np.linalg.eigvalsh(Q).min() < -1e-12 * max(1.0, np.abs(Q).max()):
            raise ValueError("Q must be positive semidefinite")
        try:
            np.linalg.cholesky(R)
        except np.linalg.LinAlgError:
            raise ValueError("R must be positive definite") from None
        object.__setattr__(self, "Q", Q)
        object.__setattr__(self, "R", R)

    @classmethod
    def diagonal(cls, q, r):
        return cls(np.diag(np.atleast_1d(np.asarray(q, float))),
                   np.diag(np.atleast_1d(np.asarray(r, float))))


@dataclass(frozen=True)
class Dataset:
    """Input and measurement sequences ``u_{1:T}``, ``z_{1:T}``."""

    inputs: np.ndarray
    measurements: np.ndarray
    dt: float
    label: str = ""
    initial_state: np.ndarray | None = None

    def __post_init__(self):
        u = np.asarray(self.inputs, dtype=float)
        z = np.asarray(self.measurements, dtype=float)
        if u.ndim == 1:
            u = u[:, None]
        if z.ndim == 1:
            z = z[:, None]
        if len(u) != len(z):
            raise ValueError(
                f"inputs and measurements differ in length ({len(u)} vs {len(z)})")
        if len(u) < 1:
            raise ValueError("dataset must contain at least one sample")
        if not self.dt > 0:
            raise ValueError(f"dt must be positive, got {self.dt}")
        u.setflags(write=False)
        z.setflags(write=False)
        object.__setattr__(self, "inputs", u)
        object.__setattr__(self, "measurements", z)
        object.__setattr__(self, "dt", float(self.dt))
        if self.initial_state is not None:
            x0 = np.atleast_1d(np.asarray(self.initial_state, dtype=float))
            object.__setattr__(self, "initial_state", x0)

    def __len__(self):
        return len(self.inputs)

    @property
    def T(self) -> int:
        return len(self.inputs)


@dataclass(frozen=True)
class ParameterSpace:
    """Named, box-bounded parameter vector."""

    names: tuple[str, ...]
    lower: np.ndarray
    upper: np.ndarray
    units: tuple[str, ...] = field(default=())

    def __post_init__(self):
        names = tuple(self.names)
        lo = np.asarray(self.lower, dtype=float).ravel()
        hi = np.asarray(self.upper, dtype=float).ravel()
        units = tuple(self.units) if self.units else ("",) * len(names)
        if not (len(names) == len(lo) == len(hi) == len(units)):
            raise ValueError("names, lower, upper and units must share a length")
        if len(set(names)) != len(names):
            raise ValueError("parameter names must be unique")
        bad = np.flatnonzero(~(lo < hi))
        if bad.size:
            raise ValueError(f"lower < upper violated for {[names[i] for i in bad]}")
        lo.setflags(write=False)
        hi.setflags(write=False)
        object.__setattr__(self, "names", names)
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)
        object.__setattr__(self, "units", units)

    @property
    def dim(self) -> int:
        return len(self.names)

    @property
    def width(self) -> np.ndarray:
        return self.upper - self.lower

    def to_unit(self, theta):
        return (np.asarray(theta, dtype=float) - self.lower) / self.width

    def from_unit(self, v):
        return self.lower + np.asarray(v, dtype=float) * self.width

    def clip(self, theta):
        return np.clip(theta, self.lower, self.upper)

    def contains(self, theta) -> bool:
        theta = np.asarray(theta, dtype=float)
        return bool(np.all(theta >= self.lower) and np.all(theta <= self.upper))

    def as_dict(self, theta) -> dict[str, float]:
        return {n: float(v) for n, v in zip(self.names, np.asarray(theta).ravel())}


def rk4_step(derivative: Callable, x, u, theta, dt: float):
    """One classical Runge-Kutta step with the input held over the step.

    ``derivative(x, u, theta)`` returns ``dx/dt`` and may be batched over
    leading axes of ``x``.
    """
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    x = np.asarray(x, dtype=float)
    k1 = _checked(derivative(x, u, theta), "k1")
    k2 = _checked(derivative(x + 0.5 * dt * k1, u, theta), "k2")
    k3 = _checked(derivative(x + 0.5 * dt * k2, u, theta), "k3")
    k4 = _checked(derivative(x + dt * k3, u, theta), "k4")
    return x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def _checked(dx, stage):
    dx = np.asarray(dx, dtype=float)
    bad = ~np.isfinite(dx)
    if bad.any():
        comp = np.argwhere(bad)[0][-1]
        raise ModelError(f"non-finite derivative in state component {comp} (stage {stage})")
    return dx


def simulate(model: ModelInterface, x0, inputs, theta, noise: NoiseSpec | None = None,
             seed=None):
    """Run the model forward over ``inputs``.

    Returns ``(states, measurements)`` with ``T`` rows each; ``states[k]`` is
    the state after applying ``inputs[k]``.  With ``noise`` given, process and
    measurement noise are drawn from a generator seeded by ``seed``.
    """
    u = np.asarray(inputs, dtype=float)
    if u.ndim == 1:
        u = u[:, None]
    x = np.atleast_1d(np.asarray(x0, dtype=float)).copy()
    if not np.all(np.isfinite(x)):
        raise ModelError("initial state is not finite")
    T = len(u)
    states = np.empty((T, model.state_dim))
    meas = np.empty((T, model.meas_dim))
    rng = np.random.default_rng(seed) if noise is not None else None
    if noise is not None:
        Lq = _psd_factor(noise.Q)
        Lr = np.linalg.cholesky(noise.R)
    for k in range(T):
        x = np.asarray(model.transition(x, u[k], theta), dtype=float)
        if noise is not None:
            x = x + Lq @ rng.standard_normal(model.state_dim)
        if not np.all(np.isfinite(x)):
            raise ModelError(f"non-finite state at time index {k}")
        states[k] = x
        z = np.asarray(model.measurement(x, u[k], theta), dtype=float)
        if noise is not None:
            z = z + Lr @ rng.standard_normal(model.meas_dim)
        meas[k] = z
    return states, meas


def _psd_factor(Q):
    try:
        return np.linalg.cholesky(Q)
    except np.linalg.LinAlgError:
        w, V = np.linalg.eigh(Q)
        return V * np.sqrt(np.clip(w, 0.0, None))


# --- CSV -------------------------------------------------------------------

def _fmt(v: float) -> str:
    return repr(float(v))


def write_dataset_csv(path, dataset: Dataset, input_names: Sequence[str] | None = None,
                      meas_names: Sequence[str] | None = None):
    """Write ``t,<inputs>,<measurements>`` rows; ``t`` starts at ``dt``."""
    nu = dataset.inputs.shape[1]
    nz = dataset.measurements.shape[1]
    input_names = list(input_names or [f"u{i + 1}" for i in range(nu)])
    meas_names = list(meas_names or [f"z{i + 1}" for i in range(nz)])
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", *input_names, *meas_names])
        for k in range(dataset.T):
            t = (k + 1) * dataset.dt
            w.writerow([_fmt(t), *map(_fmt, dataset.inputs[k]),
                        *map(_fmt, dataset.measurements[k])])


def read_dataset_csv(path, n_inputs: int, label: str | None = None,
                     initial_state=None) -> Dataset:
    """Read a CSV written by :func:`write_dataset_csv`.

    The first column is time, the next ``n_inputs`` columns are inputs and
    the remainder are measurements.  ``dt`` is taken from the time column.
    """
    path = Path(path)
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    if header[0] != "t":
        raise ValueError(f"{path}: first column must be 't', got {header[0]!r}")
    if len(header) < 2 + n_inputs:
        raise ValueError(f"{path}: expected at least {n_inputs} inputs and one measurement")
    data = np.array([[float(c) for c in r] for r in body if r], dtype=float)
    t = data[:, 0]
    if len(t) >= 2:
        dts = np.diff(t)
        dt = float(dts[0])
        if not np.allclose(dts, dt, rtol=1e-9, atol=1e-12):
            raise ValueError(f"{path}: sampling interval is not uniform")
    else:
        dt = float(t[0])
    return Dataset(inputs=data[:, 1:1 + n_inputs], measurements=data[:, 1 + n_inputs:],
                   dt=dt, label=label if label is not None else path.stem,
                   initial_state=initial_state)
