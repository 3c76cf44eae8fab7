"""Input sequences for synthetic datasets.

Battery profiles produce rows ``(current_A, ambient_K)`` with discharge
current negative; the generic ``uniform`` profile produces one input column.
"""

from __future__ import annotations

import numpy as np

from .config import ConstantCRate, RandomWalkCRate, UniformInput


def _steps(duration: float, dt: float) -> int:
    n = int(round(duration / dt))
    if n < 1:
        raise ValueError(f"duration {duration} s is shorter than one sample of {dt} s")
    return n


def constant_crate(spec: ConstantCRate, capacity_ah: float, dt: float = 1.0) -> np.ndarray:
    n = _steps(spec.duration, dt)
    current = -spec.c_rate * capacity_ah
    return np.column_stack([np.full(n, current), np.full(n, spec.ambient)])


def random_walk(spec: RandomWalkCRate, capacity_ah: float, dt: float = 1.0,
                seed=None) -> np.ndarray:
    """Seeded Gaussian random walk in C-rate, moving-average smoothed and clipped.

    The walk starts at the middle of ``[c_rate_min, c_rate_max]`` and
    reflects off the bounds, so the current stays a discharge within range.
    """
    n = _steps(spec.duration, dt)
    rng = np.random.default_rng(spec.seed if spec.seed is not None else seed)
    lo, hi = spec.c_rate_min, spec.c_rate_max
    c = np.empty(n)
    level = 0.5 * (lo + hi)
    for k in range(n):
        level += spec.step_std * rng.standard_normal()
        if level > hi:
            level = 2 * hi - level
        if level < lo:
            level = 2 * lo - level
        level = min(max(level, lo), hi)
        c[k] = level
    w = spec.smoothing
    if w > 1:
        padded = np.concatenate([np.full(w - 1, c[0]), c])
        c = np.convolve(padded, np.ones(w) / w, mode="valid")
    c = np.clip(c, lo, hi)
    return np.column_stack([-c * capacity_ah, np.full(n, spec.ambient)])


def uniform(spec: UniformInput, seed=None) -> np.ndarray:
    rng = np.random.default_rng(spec.seed if spec.seed is not None else seed)
    return rng.uniform(spec.low, spec.high, size=(spec.steps, 1))


def generate_profile(spec, capacity_ah: float | None = None, dt: float = 1.0,
                     seed=None) -> np.ndarray:
    """Input rows for a profile block; ``seed`` is used when the block carries none."""
    if spec.kind in ("constant_crate", "random_walk"):
        if capacity_ah is None or not capacity_ah > 0:
            raise ValueError("a positive nominal capacity (Ah) is needed to convert C-rates")
        if spec.kind == "constant_crate":
            return constant_crate(spec, capacity_ah, dt)
        return random_walk(spec, capacity_ah, dt, seed)
    if spec.kind == "uniform":
        return uniform(spec, seed)
    raise ValueError(f"unknown profile kind {spec.kind!r}")
