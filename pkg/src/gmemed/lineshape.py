"""Drude-Lorentz lineshape function g(t) with controlled Matsubara truncation.

For a bath with spectral density J(w) = 2*lambda*w*w_c/(w^2 + w_c^2) the
second-cumulant lineshape evaluated here is (hbar = 1)

    g(t) = 2*lam/(beta*w_c) * t
         + lam/w_c * cot(beta*w_c/2) * (exp(-w_c*t) - 1)
         + 4*lam*w_c/beta * sum_{l>=1} (exp(-w_l*t) - 1) / (w_l*(w_l^2 - w_c^2))
         + i * lam/w_c * (1 - exp(-w_c*t))

with Matsubara frequencies w_l = 2*pi*l/beta.  The convention carries no
linear Stokes drift in the imaginary part; transfer kernels account for the
Stokes shift through reorganization-shifted exciton energies instead.  The
whole expression equals the spectral-density integral
(1/pi) * int dw J(w)/w^2 * [coth(beta*w/2)*(1 - cos(w*t)) + i*sin(w*t)].

The Matsubara series is summed until an integral bound on the remainder
(terms decay as 1/w_l^3) falls below ``tail_tolerance`` or ``matsubara_terms``
is reached.  The truncated tail is not dropped: it is replaced by the midpoint
integral continuation of the summand, expressed through exponential integrals
E_n, which keeps the truncation error at the tolerance scale for all t.
"""

from dataclasses import dataclass

import numpy as np
from scipy.special import expn

from .errors import ValidationError
from .units import thermal_beta, to_angfreq

_POLE_ATOL = 1e-9


@dataclass(frozen=True)
class LineshapeEval:
    """Evaluator of g(t) for one (lambda, w_c, beta) triple, internal units.

    Parameters
    ----------
    reorganization : float
        Reorganization energy lambda in rad/ps.
    cutoff : float
        Drude cutoff w_c in rad/ps.
    beta : float
        Inverse thermal energy in ps (1/(k_B T) with hbar = 1).
    matsubara_terms : int
        Hard cap on the number of explicitly summed Matsubara terms.
    tail_tolerance : float
        Additive accuracy target for the truncated Matsubara series.
    """

    reorganization: float
    cutoff: float
    beta: float
    matsubara_terms: int = 64
    tail_tolerance: float = 1e-10

    def __post_init__(self):
        lam, wc, beta = self.reorganization, self.cutoff, self.beta
        if lam <= 0 or wc <= 0 or beta <= 0:
            raise ValidationError(
                f"lineshape parameters must be positive, got lambda={lam}, "
                f"w_c={wc}, beta={beta}"
            )
        if self.matsubara_terms < 1:
            raise ValidationError("matsubara_terms must be >= 1")
        if self.tail_tolerance <= 0:
            raise ValidationError("tail_tolerance must be positive")

        x = beta * wc
        k = round(x / (2.0 * np.pi))
        if k >= 1 and abs(x - 2.0 * np.pi * k) < _POLE_ATOL:
            raise ValidationError(
                f"beta*w_c = {x} sits within {_POLE_ATOL} of the cot pole at "
                f"2*pi*{k}; the printed series is singular there.  Shift the "
                "temperature/cutoff or reformulate the Matsubara resummation."
            )

        nu1 = 2.0 * np.pi / beta
        c = wc / nu1  # beta*w_c / (2*pi), non-integer by the pole check
        prefactor = 4.0 * lam * wc / beta

        # sum explicitly until the post-continuation error estimate is small;
        # the continuation needs the first omitted index to exceed c
        n_min = int(np.ceil(c)) + 1
        if self.matsubara_terms < n_min:
            raise ValidationError(
                f"matsubara_terms={self.matsubara_terms} is below the "
                f"{n_min} terms needed at beta*w_c = {x:.3g}; raise the cap"
            )
        terms = []
        freqs = []
        n_used = 0
        for l in range(1, self.matsubara_terms + 1):
            wl = nu1 * l
            terms.append(prefactor / (wl * (wl**2 - wc**2)))
            freqs.append(wl)
            n_used = l
            if l >= n_min:
                err = prefactor * 0.3 / (nu1**3 * (l + 0.5) ** 4)
                if err < 0.5 * self.tail_tolerance:
                    break

        object.__setattr__(self, "_mats_freqs", np.array(freqs))
        object.__setattr__(self, "_mats_coeffs", np.array(terms))
        object.__setattr__(self, "_n_used", n_used)
        object.__setattr__(self, "_tail_x0", n_used + 0.5)
        object.__setattr__(self, "_tail_c2", c**2)
        object.__setattr__(self, "_tail_amp", prefactor / nu1**3)
        object.__setattr__(self, "_tail_rate", nu1)
        object.__setattr__(self, "_linear_slope", 2.0 * lam / (beta * wc))
        object.__setattr__(self, "_cot_coeff", (lam / wc) / np.tan(0.5 * x))
        object.__setattr__(self, "_imag_amp", lam / wc)

    @classmethod
    def from_wavenumbers(cls, reorganization_cm1, cutoff_cm1, temperature,
                         matsubara_terms=64, tail_tolerance=1e-10):
        """Build an evaluator from cm^-1 energies and a kelvin temperature."""
        return cls(
            reorganization=float(to_angfreq(reorganization_cm1)),
            cutoff=float(to_angfreq(cutoff_cm1)),
            beta=thermal_beta(temperature),
            matsubara_terms=matsubara_terms,
            tail_tolerance=tail_tolerance,
        )

    @property
    def matsubara_terms_used(self) -> int:
        """Number of explicitly summed Matsubara terms."""
        return self._n_used

    @property
    def asymptotic_slope(self) -> float:
        """Long-time growth rate of Re g, 2*lambda/(beta*w_c), in 1/ps."""
        return self._linear_slope

    @property
    def imag_saturation(self) -> float:
        """Long-time limit of Im g, lambda/w_c."""
        return self._imag_amp

    def _tail(self, t: np.ndarray) -> np.ndarray:
        """Midpoint continuation of the truncated Matsubara series.

        sum_{l>L} (exp(-nu1*l*t) - 1)/(nu1^3 l (l^2 - c^2)) is approximated by
        the integral over [L+1/2, inf) after expanding the denominator in
        c^2/l^2; each order reduces to an E_n exponential integral, with
        E_n(0) = 1/(n-1) giving the exact t -> inf constants.  The first
        Euler-Maclaurin derivative term corrects the midpoint rule.
        """
        x0 = self._tail_x0
        c2 = self._tail_c2
        z = self._tail_rate * x0 * t
        r = c2 / x0**2
        out = (expn(3, z) - 0.5) / x0**2
        out += r * (expn(5, z) - 0.25) / x0**2
        out += r**2 * (expn(7, z) - 1.0 / 6.0) / x0**2
        # f'(x0)/24 for f(x) = (exp(-a*x) - 1)/(x*(x^2 - c^2))
        ez = np.exp(-z)
        h0 = 1.0 / (x0 * (x0**2 - c2))
        dh0 = -(3.0 * x0**2 - c2) * h0**2
        out += (-self._tail_rate * t * ez * h0 + (ez - 1.0) * dh0) / 24.0
        return self._tail_amp * out

    def _values(self, t: np.ndarray) -> np.ndarray:
        exp_wc = np.exp(-self.cutoff * t)
        re = self._linear_slope * t + self._cot_coeff * (exp_wc - 1.0)
        re = re + self._mats_coeffs @ (np.exp(-np.outer(self._mats_freqs, t)) - 1.0)
        re = re + self._tail(t)
        return re + 1j * self._imag_amp * (1.0 - exp_wc)

    def eval_g(self, t: float) -> complex:
        """g(t) at a single time t >= 0 (ps)."""
        if t < 0:
            raise ValidationError(f"g(t) is evaluated for t >= 0 only, got t={t}")
        return complex(self._values(np.array([float(t)]))[0])

    def eval_g_grid(self, grid) -> np.ndarray:
        """g(t) on a time grid starting at 0 and strictly increasing."""
        grid = np.asarray(grid, dtype=float)
        if grid.ndim != 1 or grid.size == 0:
            raise ValidationError("time grid must be a non-empty 1-d array")
        if grid[0] != 0.0:
            raise ValidationError("time grid must start at t = 0")
        if grid.size > 1 and np.any(np.diff(grid) <= 0):
            raise ValidationError("time grid must be strictly increasing")
        return self._values(grid)
