"""Unit conventions and conversion constants.

All public interfaces take energies in wavenumbers (cm^-1) and temperatures
in kelvin.  Internally everything runs in angular frequency units with
hbar = 1: energies become rad/ps through omega = 2*pi*c*nu, times are in ps,
and rates in 1/ps.  The conversion happens exactly once, at the boundary of
each module, so no formula below this layer carries unit factors.
"""

import numpy as np

# speed of light in cm/ps
C_CM_PER_PS = 2.99792458e-2

# 1 cm^-1 expressed as angular frequency in rad/ps
WAVENUMBER_TO_ANGFREQ = 2.0 * np.pi * C_CM_PER_PS

# Boltzmann constant in cm^-1 per kelvin
KB_WAVENUMBER = 0.695035


def to_angfreq(energy_cm1):
    """Convert an energy in cm^-1 to angular frequency in rad/ps."""
    return np.asarray(energy_cm1, dtype=float) * WAVENUMBER_TO_ANGFREQ


def from_angfreq(omega):
    """Convert an angular frequency in rad/ps back to cm^-1."""
    return np.asarray(omega, dtype=float) / WAVENUMBER_TO_ANGFREQ


def thermal_beta(temperature):
    """Inverse thermal energy 1/(k_B T) in internal units (ps/rad).

    With hbar = 1, beta carries inverse angular-frequency units so that
    beta * omega is dimensionless.
    """
    if temperature <= 0:
        raise ValueError(f"temperature must be positive, got {temperature}")
    return 1.0 / (KB_WAVENUMBER * temperature * WAVENUMBER_TO_ANGFREQ)


def thermal_beta_wavenumber(temperature):
    """Inverse thermal energy 1/(k_B T) in 1/cm^-1, for Boltzmann ratios."""
    if temperature <= 0:
        raise ValueError(f"temperature must be positive, got {temperature}")
    return 1.0 / (KB_WAVENUMBER * temperature)
