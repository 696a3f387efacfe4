"""Fluid-limit ODEs for the fraction of bins with load at least i.

    dx_i/dt = x_{i-1}^d - x_i^d,   x_0 = 1,   x_i(0) = 0 for i >= 1

solved with fixed-step classical RK4. Level i only feeds level i + 1, so
truncating at i_max loses nothing for the levels that are kept.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .core import ConsistencyError

FAULT_TOL = 1e-12


@dataclass
class FluidSolution:
    d: int
    i_max: int
    dt: float
    t: np.ndarray
    grid: np.ndarray  # shape (len(t), i_max + 1); column 0 is x_0 == 1
    perturb_n: Optional[int] = None

    @property
    def T(self) -> float:
        return float(self.t[-1])

    def at(self, i: int, t: float) -> float:
        return fluid_fraction_at(self, i, t)

    def final(self) -> np.ndarray:
        return self.grid[-1]


def _rhs(x: np.ndarray, d: int, eps: float) -> np.ndarray:
    """Derivative of levels 1..i_max given x with x[0] == 1."""
    xd = x ** d
    out = np.empty_like(x)
    out[0] = 0.0
    out[1:] = xd[:-1] - xd[1:]
    if eps:
        out[1:] = (1.0 - eps) * out[1:] + eps * (x[:-1] - x[1:])
    return out


def solve_fluid(d: int, T: float, i_max: int = 20, dt: float = 1e-4,
                perturb_n: Optional[int] = None) -> FluidSolution:
    """Integrate the system on [0, T].

    With ``perturb_n`` set, uses the drift of the modified process, where a
    fraction n^-0.4 of balls go to a single uniform bin.
    """
    if i_max < 1:
        raise ValueError("i_max must be >= 1")
    if T <= 0 or dt <= 0:
        raise ValueError("T and dt must be positive")
    if dt > T:
        raise ValueError(f"dt={dt} is larger than T={T}")
    if d < 1:
        raise ValueError("d must be >= 1")
    eps = float(perturb_n) ** -0.4 if perturb_n else 0.0

    steps = int(round(T / dt))
    # last step absorbs any rounding so the grid ends exactly at T
    t = np.arange(steps + 1, dtype=np.float64) * dt
    t[-1] = T
    grid = np.empty((steps + 1, i_max + 1))
    x = np.zeros(i_max + 1)
    x[0] = 1.0
    grid[0] = x
    for k in range(steps):
        h = t[k + 1] - t[k]
        k1 = _rhs(x, d, eps)
        k2 = _rhs(x + 0.5 * h * k1, d, eps)
        k3 = _rhs(x + 0.5 * h * k2, d, eps)
        k4 = _rhs(x + h * k3, d, eps)
        x = x + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        if x.min() < -FAULT_TOL or x.max() > 1 + FAULT_TOL or (np.diff(x) > FAULT_TOL).any():
            raise ConsistencyError(f"fluid solver left [0,1] or lost ordering at t={t[k + 1]}")
        x = np.clip(x, 0.0, 1.0)
        grid[k + 1] = x
    return FluidSolution(d, i_max, dt, t, grid, perturb_n)


def fluid_fraction_at(sol: FluidSolution, i: int, t: float) -> float:
    """x_i(t), linearly interpolated on the time grid."""
    if not 0 <= i <= sol.i_max:
        raise ValueError(f"level {i} outside [0, {sol.i_max}]")
    if not 0 <= t <= sol.T + 1e-12:
        raise ValueError(f"time {t} outside [0, {sol.T}]")
    return float(np.interp(t, sol.t, sol.grid[:, i]))


def solution_rows(sol: FluidSolution):
    for k in range(len(sol.t)):
        yield [float(sol.t[k])] + [float(v) for v in sol.grid[k, 1:]]


def reference_fractions(d: int, T: float, levels: int, dt: float = 1e-4) -> np.ndarray:
    """x_i(T) for i = 0..levels; used as the oracle for simulations."""
    if T == 0:
        out = np.zeros(levels + 1)
        out[0] = 1.0
        return out
    sol = solve_fluid(d, T, i_max=max(levels, 1), dt=min(dt, T))
    return sol.final()[: levels + 1]


def max_load_reference(n: int, d: int) -> float:
    """log log n / log d for d >= 2; log n / log log n for a single choice."""
    if d >= 2:
        return math.log(math.log(n)) / math.log(d)
    return math.log(n) / math.log(math.log(n))
