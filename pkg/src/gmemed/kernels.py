"""Inter-module transfer kernels, Markovian rates and their MC-FRET check.

The memory kernel between modules n and m in the exciton-basis diagonal
approximation is (hbar = 1, internal units)

    K_{n->m}(t) = 2 Re sum_{p,q} w_p |Jt_{pq}|^2
                  * exp[-g_{lam_p}(t) - g_{lam_q}(t) + i(e~_p - e~_q) t]

where p runs over excitons of the donor module n with thermal weights w_p,
q over excitons of the acceptor module m, Jt is the rotated coupling block
and e~ the reorganization-shifted energies.  Because g is linear in the
reorganization energy, the per-exciton lineshapes are exact rescalings of a
single grid evaluation, g_{lam_p}(t) = (lam_p/lam) * g_lam(t).

Integrating the kernel over time gives the Markovian rate.  The same rate is
recomputed independently in the frequency domain as an overlap of donor
emission and acceptor absorption lineshapes,

    I_q(w) = 2 Re int_0^inf dt exp[ i(w - e~_q) t - g_{lam_q}(t)]
    E_p(w) = 2 Re int_0^inf dt exp[-i(w - e~_p) t - g_{lam_p}(t)]
    Kt_{n->m} = (1/2 pi) sum_{p,q} w_p |Jt_{pq}|^2 int dw E_p(w) I_q(w)

which matches the time-domain integral by Parseval's identity and serves as a
cross-method consistency check.
"""

from dataclasses import dataclass
from typing import Dict, Tuple

import numpy as np
from scipy.integrate import cumulative_trapezoid, simpson

from .errors import CoarseGridError, UndecayedKernelError, ValidationError
from .lineshape import LineshapeEval
from .model import ExcitonBasis
from .units import from_angfreq, to_angfreq

_MIN_POINTS_PER_PERIOD = 10
_DECAY_REQUIREMENT = 1e-6
_AREA_RTOL = 1e-2


def _check_units_match(basis: ExcitonBasis, lineshape: LineshapeEval):
    from .units import thermal_beta

    bath = basis.bath
    ok = (
        np.isclose(lineshape.reorganization, to_angfreq(bath.reorganization_energy), rtol=1e-9)
        and np.isclose(lineshape.cutoff, to_angfreq(bath.cutoff_frequency), rtol=1e-9)
        and np.isclose(lineshape.beta, thermal_beta(bath.temperature), rtol=1e-9)
    )
    if not ok:
        raise ValidationError(
            "lineshape evaluator parameters do not match the basis bath; "
            "build it with LineshapeEval.from_wavenumbers(bath...)"
        )


def _validate_grid(grid) -> np.ndarray:
    grid = np.asarray(grid, dtype=float)
    if grid.ndim != 1 or grid.size < 2:
        raise ValidationError("kernel grid must contain at least two points")
    if grid[0] != 0.0:
        raise ValidationError("kernel grid must start at t = 0")
    steps = np.diff(grid)
    if np.any(steps <= 0) or not np.allclose(steps, steps[0], rtol=1e-9, atol=0):
        raise ValidationError("kernel grid must be uniform and increasing")
    return grid


@dataclass(frozen=True)
class KernelTable:
    """K_{n->m}(t) for all ordered module pairs on a shared uniform grid.

    ``values[(n, m)]`` is the real kernel in 1/ps^2; pairs without any
    connecting coupling hold identically zero vectors.
    """

    grid: np.ndarray
    values: Dict[Tuple[int, int], np.ndarray]
    n_modules: int

    @property
    def dt(self) -> float:
        return float(self.grid[1] - self.grid[0])

    def pairs(self):
        return sorted(self.values.keys())

    def peak(self) -> float:
        """Largest |K| over all pairs and times."""
        return max((float(np.max(np.abs(v))) for v in self.values.values()), default=0.0)

    def decay_time(self, fraction: float = 1e-4) -> float:
        """First time after which every |K_{n->m}| stays below fraction*peak."""
        peak = self.peak()
        if peak == 0.0:
            return 0.0
        alive = np.zeros(self.grid.size, dtype=bool)
        for v in self.values.values():
            alive |= np.abs(v) >= fraction * peak
        idx = np.nonzero(alive)[0]
        return float(self.grid[idx[-1]]) if idx.size else 0.0

    def scaled(self, factor: float) -> "KernelTable":
        """Kernel table with every value multiplied by ``factor``."""
        return KernelTable(
            grid=self.grid,
            values={k: factor * v for k, v in self.values.items()},
            n_modules=self.n_modules,
        )


@dataclass(frozen=True)
class RateMatrix:
    """Constant transfer rates; ``rates[n, m]`` is the n -> m rate in 1/ps."""

    rates: np.ndarray

    def __post_init__(self):
        rates = np.array(self.rates, dtype=float)
        rates.setflags(write=False)
        object.__setattr__(self, "rates", rates)
        if rates.ndim != 2 or rates.shape[0] != rates.shape[1]:
            raise ValidationError("rate matrix must be square")
        if np.any(np.diag(rates) != 0.0):
            raise ValidationError("rate matrix diagonal must be zero")
        if not np.all(np.isfinite(rates)) or np.any(rates < 0):
            raise ValidationError("rates must be finite and non-negative")

    @property
    def n_modules(self) -> int:
        return self.rates.shape[0]

    def generator(self) -> np.ndarray:
        """Column-stochastic generator G with dp/dt = G p."""
        g = self.rates.T.copy()
        np.fill_diagonal(g, -self.rates.sum(axis=1))
        return g


def _exciton_phase_tables(basis: ExcitonBasis, lineshape: LineshapeEval, grid):
    """exp(-g_p(t) +/- i e~_p t) per module, as (donor, acceptor) arrays."""
    lam = lineshape.reorganization
    g_base = lineshape.eval_g_grid(grid)
    donors = []
    acceptors = []
    for n in range(basis.n_modules):
        lam_p = to_angfreq(basis.exciton_reorganization[n])
        eps_t = to_angfreq(basis.shifted_energies[n])
        g_p = np.outer(lam_p / lam, g_base)  # g linear in lambda
        phase = np.outer(eps_t, grid)
        donors.append(np.exp(-g_p + 1j * phase))
        acceptors.append(np.exp(-g_p - 1j * phase))
    return donors, acceptors


def kernel_med1(basis: ExcitonBasis, lineshape: LineshapeEval, grid,
                allow_coarse_grid: bool = False) -> KernelTable:
    """Assemble the diagonal-approximation memory kernel on a time grid.

    The grid must resolve the fastest phase oscillation
    max|e~_p - e~_q| with at least 10 points per period; pass
    ``allow_coarse_grid=True`` to downgrade that error to a best-effort run.
    """
    _check_units_match(basis, lineshape)
    grid = _validate_grid(grid)

    max_gap = 0.0
    for (n, m) in basis.effective_couplings:
        en = to_angfreq(basis.shifted_energies[n])
        em = to_angfreq(basis.shifted_energies[m])
        if np.any(basis.effective_couplings[(n, m)] != 0.0):
            max_gap = max(max_gap, float(np.max(np.abs(en[:, None] - em[None, :]))))
    if max_gap > 0.0:
        period = 2.0 * np.pi / max_gap
        dt = grid[1] - grid[0]
        if dt > period / _MIN_POINTS_PER_PERIOD and not allow_coarse_grid:
            raise CoarseGridError(
                f"grid step {dt:.3g} ps gives fewer than {_MIN_POINTS_PER_PERIOD} "
                f"points per fastest kernel oscillation (period {period:.3g} ps); "
                "refine the grid or pass allow_coarse_grid=True"
            )

    donors, acceptors = _exciton_phase_tables(basis, lineshape, grid)

    values = {}
    for (n, m), jt in basis.effective_couplings.items():
        amp = basis.boltzmann_weights[n][:, None] * to_angfreq(jt) ** 2
        if not np.any(amp):
            values[(n, m)] = np.zeros_like(grid)
            continue
        # Re is part of the kernel definition, not a discarded residue
        total = np.einsum("pq,pt,qt->t", amp, donors[n], acceptors[m])
        values[(n, m)] = 2.0 * np.real(total)
    return KernelTable(grid=grid, values=values, n_modules=basis.n_modules)


def markovian_rates(table: KernelTable) -> RateMatrix:
    """Time-integrated kernel rates; requires the kernel to have decayed."""
    peak = table.peak()
    rates = np.zeros((table.n_modules, table.n_modules))
    for (n, m), values in table.values.items():
        if peak > 0.0 and abs(values[-1]) >= _DECAY_REQUIREMENT * peak:
            raise UndecayedKernelError(
                f"kernel {n}->{m} has not decayed at the end of its grid "
                f"(|K(T)| = {abs(values[-1]):.3g} vs peak {peak:.3g}); "
                "extend the grid horizon"
            )
        rate = float(simpson(values, x=table.grid))
        if rate < 0.0:
            if rate < -1e-12 * max(peak * table.grid[-1], 1.0):
                raise UndecayedKernelError(
                    f"kernel {n}->{m} integrates to a negative rate {rate:.3g}; "
                    "the grid under-resolves an oscillatory kernel"
                )
            rate = 0.0
        rates[n, m] = rate
    return RateMatrix(rates=rates)


def default_frequency_grid(basis: ExcitonBasis, lineshape: LineshapeEval,
                           margin_cm1: float = 2500.0, step_cm1: float = 2.0):
    """Uniform cm^-1 grid spanning all shifted energies plus a wing margin.

    The wings of the Drude lineshape decay as 1/w^3, so a ~2500 cm^-1 margin
    keeps the missing spectral area well below the 1% normalization check.
    """
    eps = np.concatenate([np.asarray(e) for e in basis.shifted_energies])
    lo = eps.min() - margin_cm1
    hi = eps.max() + margin_cm1
    n = int(np.ceil((hi - lo) / step_cm1)) + 1
    return np.linspace(lo, hi, n)


def _transform_time_grid(basis: ExcitonBasis, lineshape: LineshapeEval, omega_grid):
    """Time grid resolving exp(i(w - e~)t) and covering the envelope decay."""
    lam = lineshape.reorganization
    lam_scale = min(
        float(np.min(np.asarray(l))) for l in basis.exciton_reorganization
    ) / from_angfreq(lam)
    slowest = 2.0 * lam_scale * lineshape.asymptotic_slope
    t_end = 30.0 / slowest + 5.0 / lineshape.cutoff

    eps = to_angfreq(np.concatenate([np.asarray(e) for e in basis.shifted_energies]))
    w = to_angfreq(np.asarray(omega_grid))
    max_detuning = max(abs(w[0] - eps).max(), abs(w[-1] - eps).max())
    dt = min(5e-4, 0.2 / max_detuning) if max_detuning > 0 else 5e-4
    n = int(np.ceil(t_end / dt))
    n += n % 2  # even interval count for Simpson weights
    return np.linspace(0.0, n * dt, n + 1)


def _half_fourier(decay: np.ndarray, detuning: np.ndarray, t: np.ndarray) -> np.ndarray:
    """2 Re int_0^T exp(i*detuning*t) * decay(t) dt by Simpson quadrature."""
    n = t.size
    weights = np.ones(n)
    weights[1:-1:2] = 4.0
    weights[2:-1:2] = 2.0
    weights *= (t[1] - t[0]) / 3.0
    wd = decay * weights
    out = np.empty(detuning.size)
    block = 256
    for i in range(0, detuning.size, block):
        d = detuning[i:i + block]
        out[i:i + block] = 2.0 * np.real(np.exp(1j * np.outer(d, t)) @ wd)
    return out


def mcfret_rates_frequency(basis: ExcitonBasis, lineshape: LineshapeEval,
                           omega_grid) -> RateMatrix:
    """Markovian rates from the frequency-domain lineshape overlap.

    ``omega_grid`` is a uniform grid in cm^-1 spanning every shifted exciton
    energy plus several dephasing widths.  Each absorption lineshape must
    integrate to 2*pi on the grid (to 1%); a violation signals either a
    transform-convention bug or an inadequate grid and raises.
    """
    _check_units_match(basis, lineshape)
    omega_grid = np.asarray(omega_grid, dtype=float)
    if omega_grid.ndim != 1 or omega_grid.size < 8:
        raise ValidationError("frequency grid must be a 1-d grid of reasonable size")
    steps = np.diff(omega_grid)
    if np.any(steps <= 0) or not np.allclose(steps, steps[0], rtol=1e-9, atol=0):
        raise ValidationError("frequency grid must be uniform and increasing")

    w = to_angfreq(omega_grid)
    t = _transform_time_grid(basis, lineshape, omega_grid)
    lam = lineshape.reorganization
    g_base = lineshape.eval_g_grid(t)

    emission = []   # E_p(w) per module, rows = excitons
    absorption = []  # I_q(w)
    for n in range(basis.n_modules):
        lam_p = to_angfreq(basis.exciton_reorganization[n])
        eps_t = to_angfreq(basis.shifted_energies[n])
        e_rows = np.empty((eps_t.size, w.size))
        i_rows = np.empty((eps_t.size, w.size))
        for p in range(eps_t.size):
            decay = np.exp(-(lam_p[p] / lam) * g_base)
            i_rows[p] = _half_fourier(decay, w - eps_t[p], t)
            e_rows[p] = _half_fourier(decay, eps_t[p] - w, t)
            area = np.trapezoid(i_rows[p], w)
            if abs(area / (2.0 * np.pi) - 1.0) > _AREA_RTOL:
                raise ValidationError(
                    f"absorption lineshape of module {n} exciton {p} integrates "
                    f"to {area:.6g} instead of 2*pi; frequency grid is inadequate "
                    "or the transform convention is broken"
                )
        emission.append(e_rows)
        absorption.append(i_rows)

    rates = np.zeros((basis.n_modules, basis.n_modules))
    for (n, m), jt in basis.effective_couplings.items():
        amp = basis.boltzmann_weights[n][:, None] * to_angfreq(jt) ** 2
        overlap = np.trapezoid(emission[n][:, None, :] * absorption[m][None, :, :], w, axis=2)
        rates[n, m] = max(float(np.sum(amp * overlap)) / (2.0 * np.pi), 0.0)
    return RateMatrix(rates=rates)


def running_rates(table: KernelTable) -> np.ndarray:
    """R_{n->m}(t) = int_0^t K_{n->m}(s) ds on the kernel grid.

    Returned as an array of shape (n_t, N, N) with the n -> m rate at
    [:, n, m]; this is the time-local master-equation coefficient and it
    approaches the Markovian rate once the kernel has decayed.
    """
    n_mod = table.n_modules
    out = np.zeros((table.grid.size, n_mod, n_mod))
    for (n, m), values in table.values.items():
        out[:, n, m] = cumulative_trapezoid(values, table.grid, initial=0.0)
    return out


def detailed_balance_report(rates: RateMatrix, basis: ExcitonBasis,
                            tolerance: float = 0.2):
    """Compare forward/backward rate ratios with module free-energy ratios.

    The diagonal-lineshape kernel satisfies detailed balance only
    approximately, so this is a diagnostic: each connected pair reports the
    ratio Kt_{n->m}/Kt_{m->n}, the Boltzmann expectation from module free
    energies F_n = -kT ln sum_p exp(-beta e~_p), and a flag when they
    disagree by more than ``tolerance`` (relative).
    """
    from .units import thermal_beta_wavenumber

    beta = thermal_beta_wavenumber(basis.bath.temperature)
    free = np.array([
        -np.logaddexp.reduce(-beta * np.asarray(e)) / beta
        for e in basis.shifted_energies
    ])
    rows = []
    for n in range(rates.n_modules):
        for m in range(n + 1, rates.n_modules):
            fwd, back = rates.rates[n, m], rates.rates[m, n]
            if fwd == 0.0 and back == 0.0:
                continue
            ratio = fwd / back if back > 0 else np.inf
            expected = float(np.exp(-beta * (free[m] - free[n])))
            deviation = abs(ratio / expected - 1.0) if np.isfinite(ratio) else np.inf
            rows.append({
                "pair": (n, m),
                "ratio": ratio,
                "boltzmann": expected,
                "deviation": deviation,
                "flagged": bool(deviation > tolerance),
            })
    return rows
