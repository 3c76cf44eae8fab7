"""BattX equivalent-circuit model of a lithium-ion cell.

Four coupled sub-circuits: an RC diffusion chain for the electrode (A), a
three-node RC chain for the electrolyte (B), a two-node lumped thermal model
(C) and the terminal-voltage map (D).

State layout: ``[V_s1 .. V_sN, V_e1, V_e2, V_e3, T_core, T_surf]``.
Input: ``[I, T_amb]`` with ``I < 0`` while discharging.
Measurement: ``[V, T_surf]``.

The reference functions in this module (``soc``, ``terminal_voltage``,
``battx_derivatives`` ...) are plain numpy.  :class:`BattXModel` integrates
with a compiled kernel that implements the same equations; the test-suite
checks the two against each other.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields

import numpy as np
from numba import njit
from scipy.interpolate import PchipInterpolator

from .ssm import ModelError, ModelInterface, ParameterSpace, rk4_step

PARAM_NAMES = (
    "C_s1", "R_s1", "C_e", "R_e", "C_core", "C_surf", "R_core", "R_surf",
    "beta1", "beta2", "gamma1", "gamma2", "gamma3", "kappa1", "kappa2",
    "c1", "c2", "c3",
)
PARAM_UNITS = (
    "F", "Ohm", "F", "Ohm", "J/K", "J/K", "K/W", "K/W",
    "-", "-", "Ohm", "Ohm", "Ohm", "K", "K",
    "V/K", "V/K", "V/K",
)
# Nominal cell and identification search box (18650 NCA/graphite cell).
NOMINAL = (4521.0, 0.114, 3691.0, 0.007, 40.0, 10.0, 2.0, 3.0,
           0.789, 0.317, 0.046, -0.035, 0.029, 30.0, 70.0,
           -0.0004, 0.002, -0.001)
SEARCH_LOWER = (2000.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0,
                0.0, 0.0, 0.0, -0.1, 0.0, 0.0, 0.0,
                -0.001, 0.0, -0.01)
SEARCH_UPPER = (5000.0, 0.5, 5000.0, 0.1, 100.0, 50.0, 10.0, 10.0,
                1.0, 1.0, 0.1, 0.0, 0.1, 100.0, 100.0,
                0.0, 0.01, 0.0)

# Synthetic monotone OCV curve used for all simulated experiments.
DEFAULT_OCV_KNOTS = (
    (0.00, 2.50), (0.05, 3.20), (0.10, 3.40), (0.20, 3.50), (0.30, 3.58),
    (0.40, 3.64), (0.50, 3.70), (0.60, 3.78), (0.70, 3.87), (0.80, 3.96),
    (0.90, 4.06), (1.00, 4.20),
)


class BattXDomainError(ModelError):
    """A BattX sub-model was evaluated outside its mathematical domain."""


@dataclass(frozen=True)
class BattXParams:
    C_s1: float
    R_s1: float
    C_e: float
    R_e: float
    C_core: float
    C_surf: float
    R_core: float
    R_surf: float
    beta1: float
    beta2: float
    gamma1: float
    gamma2: float
    gamma3: float
    kappa1: float
    kappa2: float
    c1: float
    c2: float
    c3: float

    @classmethod
    def from_vector(cls, theta) -> "BattXParams":
        theta = np.asarray(theta, dtype=float).ravel()
        if theta.size != len(PARAM_NAMES):
            raise ValueError(f"BattX needs {len(PARAM_NAMES)} parameters, got {theta.size}")
        return cls(*map(float, theta))

    @classmethod
    def nominal(cls) -> "BattXParams":
        return cls(*NOMINAL)

    def to_vector(self) -> np.ndarray:
        return np.array([getattr(self, f.name) for f in fields(self)])

    def validate(self):
        for name in ("C_s1", "R_s1", "C_e", "R_e", "C_core", "C_surf", "R_core", "R_surf"):
            if not getattr(self, name) > 0:
                raise BattXDomainError(f"{name} must be strictly positive")


def as_params(theta) -> BattXParams:
    return theta if isinstance(theta, BattXParams) else BattXParams.from_vector(theta)


def search_space() -> ParameterSpace:
    return ParameterSpace(PARAM_NAMES, SEARCH_LOWER, SEARCH_UPPER, PARAM_UNITS)


@dataclass(frozen=True)
class OcvCurve:
    """Open-circuit voltage as a monotone cubic through ``(soc, volt)`` knots."""

    knots: tuple = DEFAULT_OCV_KNOTS

    def __post_init__(self):
        k = np.asarray(self.knots, dtype=float)
        if k.ndim != 2 or k.shape[1] != 2 or len(k) < 2:
            raise ValueError("OCV knots must be a sequence of (soc, voltage) pairs")
        if np.any(np.diff(k[:, 0]) <= 0):
            raise ValueError("OCV knots must be strictly increasing in SoC")
        if np.any(np.diff(k[:, 1]) < 0):
            raise ValueError("OCV voltage must be non-decreasing in SoC")
        if k[0, 0] > 0.0 or k[-1, 0] < 1.0:
            raise ValueError("OCV knots must cover SoC in [0, 1]")
        object.__setattr__(self, "knots", tuple(map(tuple, k.tolist())))
        interp = PchipInterpolator(k[:, 0], k[:, 1], extrapolate=True)
        object.__setattr__(self, "_interp", interp)

    def __call__(self, soc):
        return self._interp(soc)

    @property
    def breakpoints(self) -> np.ndarray:
        return np.ascontiguousarray(self._interp.x)

    @property
    def coefficients(self) -> np.ndarray:
        # rows: cubic, quadratic, linear, constant
        return np.ascontiguousarray(self._interp.c)


@dataclass(frozen=True)
class BattXConfig:
    N: int = 5
    eta: tuple | None = None
    sigma_ratio: tuple | None = None
    T_ref: float = 298.0
    ocv: OcvCurve = field(default_factory=OcvCurve)
    soc0: float = 1.0
    capacity_ah: float | None = None

    def __post_init__(self):
        N = int(self.N)
        if N < 2:
            raise ValueError("chain length N must be at least 2")
        eta = np.ones(N) if self.eta is None else np.asarray(self.eta, float)
        sig = np.ones(N - 1) if self.sigma_ratio is None else np.asarray(self.sigma_ratio, float)
        if eta.shape != (N,) or sig.shape != (N - 1,):
            raise ValueError(f"eta needs {N} entries and sigma_ratio needs {N - 1}")
        if eta[0] != 1.0 or sig[0] != 1.0:
            raise ValueError("eta_1 and sigma_1 must equal 1")
        if np.any(eta <= 0) or np.any(sig <= 0):
            raise ValueError("capacitance and resistance ratios must be positive")
        if not self.T_ref > 0:
            raise ValueError("T_ref must be positive")
        if not 0.0 <= self.soc0 <= 1.0:
            raise ValueError("soc0 must lie in [0, 1]")
        object.__setattr__(self, "N", N)
        object.__setattr__(self, "eta", tuple(eta.tolist()))
        object.__setattr__(self, "sigma_ratio", tuple(sig.tolist()))

    @property
    def state_dim(self) -> int:
        return self.N + 5


@dataclass(frozen=True)
class BattXState:
    V_s: np.ndarray
    V_e: np.ndarray
    T_core: float
    T_surf: float

    @classmethod
    def from_vector(cls, x, N: int) -> "BattXState":
        x = np.asarray(x, dtype=float)
        return cls(x[..., :N], x[..., N:N + 3], x[..., N + 3], x[..., N + 4])

    def to_vector(self) -> np.ndarray:
        return np.concatenate([np.atleast_1d(self.V_s), np.atleast_1d(self.V_e),
                               [self.T_core, self.T_surf]])


def rest_state(cfg: BattXConfig, T_amb: float, soc0: float | None = None) -> BattXState:
    s = cfg.soc0 if soc0 is None else soc0
    return BattXState(np.full(cfg.N, float(s)), np.zeros(3), float(T_amb), float(T_amb))


# --- sub-model functions (reference implementation) -------------------------

def soc(state: BattXState, cfg: BattXConfig, theta) -> float:
    """Capacitance-weighted mean of the electrode node voltages."""
    # C_s1 cancels in the ratio
    eta = np.asarray(cfg.eta)
    return np.sum(eta * np.asarray(state.V_s), axis=-1) / eta.sum()


def _arrhenius(kappa, T_core, T_ref):
    T_core = np.asarray(T_core, dtype=float)
    if np.any(T_core <= 0):
        raise BattXDomainError("core temperature must be positive kelvin")
    return np.exp(kappa * (1.0 / T_core - 1.0 / T_ref))


def diffusion_resistance(i: int, T_core, theta, cfg: BattXConfig):
    """Temperature-dependent resistance between electrode nodes ``i`` and ``i+1``."""
    if not 1 <= i <= cfg.N - 1:
        raise ValueError(f"chain index must be in [1, {cfg.N - 1}], got {i}")
    p = as_params(theta)
    return cfg.sigma_ratio[i - 1] * p.R_s1 * _arrhenius(p.kappa2, T_core, cfg.T_ref)


def internal_resistance(soc_value, T_core, theta, cfg: BattXConfig):
    p = as_params(theta)
    base = p.gamma1 + p.gamma2 * soc_value + p.gamma3 * np.square(soc_value)
    if np.any(np.asarray(base) <= 0):
        raise BattXDomainError(f"internal resistance polynomial non-positive at soc={soc_value}")
    return base * _arrhenius(p.kappa1, T_core, cfg.T_ref)


def entropic_coefficient(soc_value, theta):
    p = as_params(theta)
    return p.c1 + p.c2 * soc_value + p.c3 * np.square(soc_value)


def electrolyte_overpotential(V_e1, V_e3, theta):
    p = as_params(theta)
    a = np.asarray(V_e1) + p.beta2
    b = np.asarray(V_e3) + p.beta2
    if np.any(a <= 0) or np.any(b <= 0):
        raise BattXDomainError("electrolyte overpotential: log argument non-positive "
                               "(beta2 too small for the electrolyte state)")
    return p.beta1 * np.log(a / b)


def terminal_voltage(state: BattXState, I, theta, cfg: BattXConfig):
    s = soc(state, cfg, theta)
    V_e = np.asarray(state.V_e)
    return (cfg.ocv(state.V_s[..., 0])
            + electrolyte_overpotential(V_e[..., 0], V_e[..., 2], theta)
            + internal_resistance(s, state.T_core, theta, cfg) * I)


def heat_rate(state: BattXState, I, theta, cfg: BattXConfig):
    s = soc(state, cfg, theta)
    V = terminal_voltage(state, I, theta, cfg)
    return I * (V - cfg.ocv(s)) + I * state.T_core * entropic_coefficient(s, theta)


def battx_derivatives(state: BattXState, u, theta, cfg: BattXConfig) -> BattXState:
    """Right-hand side of the BattX ODEs for a single state."""
    p = as_params(theta)
    p.validate()
    I, T_amb = float(u[0]), float(u[1])
    N = cfg.N
    C = p.C_s1 * np.asarray(cfg.eta)
    Vs = np.asarray(state.V_s, dtype=float)
    R = np.array([diffusion_resistance(i, state.T_core, p, cfg) for i in range(1, N)])
    flow = (Vs[1:] - Vs[:-1]) / R  # current from node i+1 into node i
    dVs = np.zeros(N)
    dVs[:-1] += flow
    dVs[1:] -= flow
    dVs[0] += I
    dVs /= C

    Ve = np.asarray(state.V_e, dtype=float)
    tau_e = p.C_e * p.R_e
    dVe = np.array([
        (Ve[1] - Ve[0]) / tau_e + I / p.C_e,
        (Ve[0] - 2.0 * Ve[1] + Ve[2]) / tau_e,
        (Ve[1] - Ve[2]) / tau_e - I / p.C_e,
    ])

    Q = heat_rate(state, I, p, cfg)
    dTc = Q / p.C_core + (state.T_surf - state.T_core) / (p.R_core * p.C_core)
    dTs = ((T_amb - state.T_surf) / (p.R_surf * p.C_surf)
           - (state.T_surf - state.T_core) / (p.R_core * p.C_surf))
    return BattXState(dVs, dVe, float(dTc), float(dTs))


# --- compiled kernel ---------------------------------------------------------

@njit(cache=True)
def _pchip(s, xk, c):
    m = xk.shape[0] - 1
    i = np.searchsorted(xk, s, side="right") - 1
    if i < 0:
        i = 0
    elif i > m - 1:
        i = m - 1
    d = s - xk[i]
    return ((c[0, i] * d + c[1, i]) * d + c[2, i]) * d + c[3, i]


@njit(cache=True)
def _rhs(x, I, T_amb, p, eta, sig, inv_Tref, xk, c, out):
    N = eta.shape[0]
    C1 = p[0]
    Tc = x[N + 3]
    Ts = x[N + 4]
    if not (Tc > 0.0):
        out[:] = np.nan
        return np.nan
    arr2 = np.exp(p[14] * (1.0 / Tc - inv_Tref))
    for i in range(N):
        out[i] = 0.0
    for i in range(N - 1):
        f = (x[i + 1] - x[i]) / (sig[i] * p[1] * arr2)
        out[i] += f
        out[i + 1] -= f
    out[0] += I
    num = 0.0
    den = 0.0
    for i in range(N):
        out[i] /= eta[i] * C1
        num += eta[i] * x[i]
        den += eta[i]
    s = num / den

    Ce = p[2]
    tau = Ce * p[3]
    Ve1 = x[N]
    Ve2 = x[N + 1]
    Ve3 = x[N + 2]
    out[N] = (Ve2 - Ve1) / tau + I / Ce
    out[N + 1] = (Ve1 - 2.0 * Ve2 + Ve3) / tau
    out[N + 2] = (Ve2 - Ve3) / tau - I / Ce

    a = Ve1 + p[9]
    b = Ve3 + p[9]
    R0 = p[10] + p[11] * s + p[12] * s * s
    if not (a > 0.0 and b > 0.0 and R0 > 0.0):
        out[:] = np.nan
        return np.nan
    V = (_pchip(x[0], xk, c) + p[8] * np.log(a / b)
         + R0 * np.exp(p[13] * (1.0 / Tc - inv_Tref)) * I)
    dUdT = p[15] + p[16] * s + p[17] * s * s
    Q = I * (V - _pchip(s, xk, c)) + I * Tc * dUdT
    Cc = p[4]
    Cs = p[5]
    Rc = p[6]
    Rs = p[7]
    out[N + 3] = Q / Cc + (Ts - Tc) / (Rc * Cc)
    out[N + 4] = (T_amb - Ts) / (Rs * Cs) - (Ts - Tc) / (Rc * Cs)
    return V


@njit(cache=True)
def _step_batch(X, I, T_amb, dt, p, eta, sig, inv_Tref, xk, c, clamp):
    M, n = X.shape
    N = eta.shape[0]
    out = np.empty_like(X)
    k1 = np.empty(n)
    k2 = np.empty(n)
    k3 = np.empty(n)
    k4 = np.empty(n)
    tmp = np.empty(n)
    for j in range(M):
        x = X[j]
        _rhs(x, I, T_amb, p, eta, sig, inv_Tref, xk, c, k1)
        for i in range(n):
            tmp[i] = x[i] + 0.5 * dt * k1[i]
        _rhs(tmp, I, T_amb, p, eta, sig, inv_Tref, xk, c, k2)
        for i in range(n):
            tmp[i] = x[i] + 0.5 * dt * k2[i]
        _rhs(tmp, I, T_amb, p, eta, sig, inv_Tref, xk, c, k3)
        for i in range(n):
            tmp[i] = x[i] + dt * k3[i]
        _rhs(tmp, I, T_amb, p, eta, sig, inv_Tref, xk, c, k4)
        for i in range(n):
            out[j, i] = x[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])
        if not clamp:
            continue
        for i in range(N):
            v = out[j, i]
            if v < 0.0:
                out[j, i] = 0.0
            elif v > 1.0:
                out[j, i] = 1.0
    return out


@njit(cache=True)
def _measure_batch(X, I, p, eta, inv_Tref, xk, c):
    M = X.shape[0]
    N = eta.shape[0]
    out = np.empty((M, 2))
    for j in range(M):
        x = X[j]
        num = 0.0
        den = 0.0
        for i in range(N):
            num += eta[i] * x[i]
            den += eta[i]
        s = num / den
        Tc = x[N + 3]
        a = x[N] + p[9]
        b = x[N + 2] + p[9]
        R0 = p[10] + p[11] * s + p[12] * s * s
        if not (a > 0.0 and b > 0.0 and R0 > 0.0 and Tc > 0.0):
            out[j, 0] = np.nan
        else:
            out[j, 0] = (_pchip(x[0], xk, c) + p[8] * np.log(a / b)
                         + R0 * np.exp(p[13] * (1.0 / Tc - inv_Tref)) * I)
        out[j, 1] = x[N + 4]
    return out


@njit(cache=True)
def _simulate_det(x0, U, dt, p, eta, sig, inv_Tref, xk, c, clamp):
    T = U.shape[0]
    n = x0.shape[0]
    X = np.empty((T, n))
    Z = np.empty((T, 2))
    cur = np.empty((1, n))
    cur[0] = x0
    for k in range(T):
        cur = _step_batch(cur, U[k, 0], U[k, 1], dt, p, eta, sig, inv_Tref, xk, c, clamp)
        X[k] = cur[0]
        Z[k] = _measure_batch(cur, U[k, 0], p, eta, inv_Tref, xk, c)[0]
    return X, Z


class BattXModel(ModelInterface):
    """BattX as a discrete-time model: one RK4 step over ``dt`` per sample.

    Parameters
    ----------
    config : BattXConfig, optional
    dt : float
        Sampling interval in seconds.
    compiled : bool
        Use the compiled kernel (default).  ``False`` integrates the numpy
        reference equations with :func:`ssmid.ssm.rk4_step`.
    clamp : bool
        Clamp the electrode node voltages to [0, 1] after every step.  Use
        ``False`` inside sigma-point filters: the clamp is a kink, and a
        small-spread unscented transform reads a kink as enormous curvature.
    """

    input_dim = 2
    meas_dim = 2
    param_names = PARAM_NAMES

    def __init__(self, config: BattXConfig | None = None, dt: float = 1.0, compiled: bool = True,
                 clamp: bool = True):
        self.config = config or BattXConfig()
        self.clamp = bool(clamp)
        self.dt = float(dt)
        self.compiled = compiled
        self.state_dim = self.config.state_dim
        self._eta = np.asarray(self.config.eta, dtype=float)
        self._sig = np.asarray(self.config.sigma_ratio, dtype=float)
        self._inv_Tref = 1.0 / self.config.T_ref
        self._xk = self.config.ocv.breakpoints
        self._c = self.config.ocv.coefficients

    def _p(self, theta):
        if isinstance(theta, BattXParams):
            return theta.to_vector()
        return np.ascontiguousarray(theta, dtype=float).ravel()

    def transition(self, x, u, theta):
        x = np.asarray(x, dtype=float)
        if not self.compiled:
            return self._transition_reference(x, u, theta)
        X = np.ascontiguousarray(x.reshape(-1, self.state_dim))
        out = _step_batch(X, float(u[0]), float(u[1]), self.dt, self._p(theta),
                          self._eta, self._sig, self._inv_Tref, self._xk, self._c, self.clamp)
        return out.reshape(x.shape)

    def measurement(self, x, u, theta):
        x = np.asarray(x, dtype=float)
        if not self.compiled:
            return self._measurement_reference(x, u, theta)
        X = np.ascontiguousarray(x.reshape(-1, self.state_dim))
        out = _measure_batch(X, float(u[0]), self._p(theta), self._eta, self._inv_Tref,
                             self._xk, self._c)
        return out.reshape(x.shape[:-1] + (2,))

    def initial_state(self, u0, theta=None):
        return rest_state(self.config, float(u0[1])).to_vector()

    def simulate_deterministic(self, x0, inputs, theta):
        """Noise-free trajectory using the compiled kernel in a single call."""
        U = np.ascontiguousarray(inputs, dtype=float)
        return _simulate_det(np.ascontiguousarray(x0, dtype=float), U, self.dt, self._p(theta),
                             self._eta, self._sig, self._inv_Tref, self._xk, self._c, self.clamp)

    def unclamped(self) -> "BattXModel":
        return BattXModel(self.config, self.dt, self.compiled, clamp=False)

    def saturated(self, states) -> np.ndarray:
        """Per-row flag: some electrode node sits on the [0, 1] clamp."""
        Vs = np.asarray(states)[..., :self.config.N]
        return np.any((Vs <= 0.0) | (Vs >= 1.0), axis=-1)

    # reference path ---------------------------------------------------------

    def _transition_reference(self, x, u, theta):
        cfg = self.config

        def deriv(xx, uu, th):
            d = battx_derivatives(BattXState.from_vector(xx, cfg.N), uu, th, cfg)
            return d.to_vector()

        flat = x.reshape(-1, self.state_dim)
        out = np.array([rk4_step(deriv, row, u, theta, self.dt) for row in flat])
        if self.clamp:
            out[:, :cfg.N] = np.clip(out[:, :cfg.N], 0.0, 1.0)
        return out.reshape(x.shape)

    def _measurement_reference(self, x, u, theta):
        cfg = self.config
        flat = x.reshape(-1, self.state_dim)
        out = np.empty((len(flat), 2))
        for j, row in enumerate(flat):
            st = BattXState.from_vector(row, cfg.N)
            out[j] = terminal_voltage(st, float(u[0]), theta, cfg), st.T_surf
        return out.reshape(x.shape[:-1] + (2,))
