"""Propagation of modular exciton densities.

Three integrators share the ``Trajectory`` output type:

* ``propagate_convolution`` solves the time-nonlocal master equation
  dp_n/dt = sum_m int_0^t [K_{m->n}(t-s) p_m(s) - K_{n->m}(t-s) p_n(s)] ds
  with a second-order predictor-corrector on the trapezoid convolution.
* ``propagate_time_local`` replaces the convolution by instantaneous rates
  R(t) = int_0^t K(s) ds and integrates with classical RK4.
* ``propagate_pauli`` exponentiates a constant rate generator exactly.

All three conserve total population to roundoff because every right-hand
side is a column-sum-zero generator applied to p.  Populations are stored
unclamped; tiny negative integration excursions are recorded in metadata and
clamped only when writing output.
"""

from dataclasses import dataclass, field
from typing import Dict, Optional

import numpy as np
from scipy.linalg import expm

from .errors import ValidationError
from .kernels import KernelTable, RateMatrix, running_rates

_CONSERVATION_ATOL = 1e-8


@dataclass(frozen=True)
class Trajectory:
    """Time series of module populations (and, for HEOM runs, site ones).

    ``populations[k, n]`` is module n at time ``grid[k]``.  Total population
    is conserved to 1e-8 at every stored point; construction fails otherwise.
    """

    grid: np.ndarray
    populations: np.ndarray
    site_populations: Optional[np.ndarray] = None
    metadata: Dict = field(default_factory=dict)

    def __post_init__(self):
        grid = np.asarray(self.grid, dtype=float)
        pops = np.asarray(self.populations, dtype=float)
        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "populations", pops)
        if pops.shape[0] != grid.size:
            raise ValidationError("populations and grid lengths disagree")
        totals = pops.sum(axis=1)
        drift = float(np.max(np.abs(totals - totals[0])))
        if drift > _CONSERVATION_ATOL:
            raise ValidationError(
                f"total population drifts by {drift:.3g} (> {_CONSERVATION_ATOL})"
            )
        meta = dict(self.metadata)
        meta.setdefault("conservation_drift", drift)
        meta.setdefault("max_negative_excursion", float(max(0.0, -pops.min())))
        object.__setattr__(self, "metadata", meta)

    @property
    def n_modules(self) -> int:
        return self.populations.shape[1]

    def clamped(self) -> np.ndarray:
        """Populations clipped to [0, 1] for output."""
        return np.clip(self.populations, 0.0, 1.0)

    def resample(self, grid) -> np.ndarray:
        """Linear interpolation of module populations onto another grid."""
        grid = np.asarray(grid, dtype=float)
        out = np.empty((grid.size, self.n_modules))
        for n in range(self.n_modules):
            out[:, n] = np.interp(grid, self.grid, self.populations[:, n])
        return out


def _validate_p0(p0, n_modules) -> np.ndarray:
    p0 = np.asarray(p0, dtype=float)
    if p0.shape != (n_modules,):
        raise ValidationError(f"initial populations must have shape ({n_modules},)")
    if np.any(p0 < 0):
        raise ValidationError("initial populations must be non-negative")
    if abs(p0.sum() - 1.0) > 1e-9:
        raise ValidationError(f"initial populations sum to {p0.sum()}, expected 1")
    return p0


def _propagation_grid(table: KernelTable, grid) -> tuple:
    grid = np.asarray(grid, dtype=float)
    if grid.ndim != 1 or grid.size < 2 or grid[0] != 0.0:
        raise ValidationError("propagation grid must start at 0 with >= 2 points")
    steps = np.diff(grid)
    if np.any(steps <= 0) or not np.allclose(steps, steps[0], rtol=1e-9, atol=0):
        raise ValidationError("propagation grid must be uniform and increasing")
    if grid[-1] > table.grid[-1] * (1 + 1e-9):
        raise ValidationError(
            f"kernel grid ends at {table.grid[-1]} ps, shorter than the "
            f"propagation horizon {grid[-1]} ps"
        )
    ratio = steps[0] / table.dt
    stride = round(ratio)
    if stride < 1 or abs(ratio - stride) > 1e-6:
        raise ValidationError(
            f"propagation step {steps[0]} ps must be an integer multiple of "
            f"the kernel grid step {table.dt} ps"
        )
    return grid, int(stride)


def _generator_table(table: KernelTable) -> np.ndarray:
    """W(t) with dp/dt = int W(t-s) p(s) ds; columns sum to zero."""
    n_mod = table.n_modules
    w = np.zeros((table.grid.size, n_mod, n_mod))
    for (n, m), values in table.values.items():
        w[:, m, n] += values        # gain of m from n
        w[:, n, n] -= values        # loss of n to m
    return w


def propagate_convolution(table: KernelTable, p0, grid) -> Trajectory:
    """Integrate the time-nonlocal master equation.

    The convolution integral is discretized with trapezoid weights on the
    propagation grid and advanced with a Heun predictor-corrector, second
    order in the step.
    """
    grid, stride = _propagation_grid(table, grid)
    p0 = _validate_p0(p0, table.n_modules)
    w = _generator_table(table)[::stride]
    dt = float(grid[1] - grid[0])
    n_t = grid.size

    p = np.empty((n_t, table.n_modules))
    p[0] = p0

    def convolution(k: int, p_end: np.ndarray) -> np.ndarray:
        """dt-weighted trapezoid of W(t_k - s) p(s) over s in [0, t_k]."""
        if k == 0:
            return np.zeros(table.n_modules)
        total = 0.5 * (w[k] @ p[0]) + 0.5 * (w[0] @ p_end)
        if k > 1:
            total += np.einsum("jab,jb->a", w[k - 1:0:-1], p[1:k])
        return dt * total

    for k in range(n_t - 1):
        f_k = convolution(k, p[k])
        predicted = p[k] + dt * f_k
        f_next = convolution(k + 1, predicted)
        p[k + 1] = p[k] + 0.5 * dt * (f_k + f_next)

    return Trajectory(grid=grid, populations=p, metadata={"method": "convolution"})


def propagate_time_local(table: KernelTable, p0, grid) -> Trajectory:
    """Integrate the time-local master equation with classical RK4.

    The instantaneous generator uses running kernel integrals R(t)
    interpolated linearly between kernel grid points.
    """
    grid, _ = _propagation_grid(table, grid)
    p0 = _validate_p0(p0, table.n_modules)
    rates = running_rates(table)  # (n_k, N, N)
    n_mod = table.n_modules

    def generator_at(t: float) -> np.ndarray:
        x = t / table.dt
        i = min(int(x), rates.shape[0] - 2)
        frac = x - i
        r = (1.0 - frac) * rates[i] + frac * rates[i + 1]
        g = r.T.copy()
        np.fill_diagonal(g, g.diagonal() - r.sum(axis=1))
        return g

    dt = float(grid[1] - grid[0])
    p = np.empty((grid.size, n_mod))
    p[0] = p0
    for k in range(grid.size - 1):
        t = grid[k]
        g1 = generator_at(t)
        g2 = generator_at(t + 0.5 * dt)
        g4 = generator_at(t + dt)
        k1 = g1 @ p[k]
        k2 = g2 @ (p[k] + 0.5 * dt * k1)
        k3 = g2 @ (p[k] + 0.5 * dt * k2)
        k4 = g4 @ (p[k] + dt * k3)
        p[k + 1] = p[k] + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)

    return Trajectory(grid=grid, populations=p, metadata={"method": "timelocal"})


def propagate_pauli(rates: RateMatrix, p0, grid) -> Trajectory:
    """Constant-rate master equation via the matrix exponential (exact)."""
    grid = np.asarray(grid, dtype=float)
    if grid.ndim != 1 or grid.size < 1 or grid[0] != 0.0:
        raise ValidationError("propagation grid must start at 0")
    if grid.size > 1:
        steps = np.diff(grid)
        if np.any(steps <= 0) or not np.allclose(steps, steps[0], rtol=1e-9, atol=0):
            raise ValidationError("propagation grid must be uniform and increasing")
    p0 = _validate_p0(p0, rates.n_modules)

    p = np.empty((grid.size, rates.n_modules))
    p[0] = p0
    if grid.size > 1:
        step = expm(rates.generator() * float(grid[1] - grid[0]))
        for k in range(grid.size - 1):
            p[k + 1] = step @ p[k]
    return Trajectory(grid=grid, populations=p, metadata={"method": "pauli"})
