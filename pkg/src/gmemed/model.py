"""System definition and per-module exciton analysis.

A system is a collection of chromophore modules: strong couplings live inside
a module, weak couplings connect sites of different modules, and every site
feels its own identical Drude bath.  ``build_exciton_basis`` diagonalizes each
module and precomputes everything the transfer kernels need: exciton energies,
state-dependent reorganization energies, reorganization-shifted energies with
their Boltzmann weights, and inter-module couplings rotated into the exciton
basis.

All energies here are in cm^-1; downstream modules convert once to internal
angular-frequency units.  Every type is an immutable dataclass, so instances
can be shared freely across threads.
"""

from dataclasses import dataclass, field
from typing import Dict, Mapping, Tuple

import numpy as np

from .errors import ValidationError
from .units import thermal_beta_wavenumber

SiteIndex = Tuple[int, int]  # (module index, site index), 0-based

_SYMMETRY_ATOL = 1e-9


def _readonly(a):
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class BathSpec:
    """Site-local Drude bath, identical for every chromophore.

    Parameters
    ----------
    reorganization_energy : float
        Reorganization energy lambda in cm^-1.
    cutoff_frequency : float
        Drude cutoff hbar*omega_c in cm^-1.
    temperature : float
        Bath temperature in kelvin.
    """

    reorganization_energy: float
    cutoff_frequency: float
    temperature: float

    def __post_init__(self):
        for name in ("reorganization_energy", "cutoff_frequency", "temperature"):
            value = getattr(self, name)
            if not np.isfinite(value) or value <= 0:
                raise ValidationError(f"bath {name} must be positive, got {value}")


@dataclass(frozen=True, eq=False)
class ModuleSpec:
    """One module: site energies plus the symmetric intra-module couplings."""

    label: str
    site_energies: np.ndarray
    intra_couplings: np.ndarray

    def __eq__(self, other):
        if not isinstance(other, ModuleSpec):
            return NotImplemented
        return (self.label == other.label
                and np.array_equal(self.site_energies, other.site_energies)
                and np.array_equal(self.intra_couplings, other.intra_couplings))

    def __hash__(self):
        return hash((self.label, self.site_energies.tobytes(),
                     self.intra_couplings.tobytes()))

    def __post_init__(self):
        energies = _readonly(np.atleast_1d(self.site_energies))
        couplings = _readonly(np.atleast_2d(self.intra_couplings))
        object.__setattr__(self, "site_energies", energies)
        object.__setattr__(self, "intra_couplings", couplings)
        n = energies.shape[0]
        if energies.ndim != 1 or n == 0:
            raise ValidationError(f"module {self.label!r}: site_energies must be a non-empty vector")
        if couplings.shape != (n, n):
            raise ValidationError(
                f"module {self.label!r}: intra_couplings shape {couplings.shape} "
                f"does not match {n} sites"
            )
        if not np.allclose(couplings, couplings.T, atol=_SYMMETRY_ATOL, rtol=0):
            raise ValidationError(f"module {self.label!r}: intra_couplings must be symmetric")
        if np.any(np.abs(np.diag(couplings)) > _SYMMETRY_ATOL):
            raise ValidationError(f"module {self.label!r}: intra_couplings diagonal must be zero")

    @property
    def n_sites(self) -> int:
        return self.site_energies.shape[0]

    def hamiltonian(self) -> np.ndarray:
        """Single-exciton Hamiltonian of the module, in cm^-1."""
        return np.diag(self.site_energies) + self.intra_couplings


@dataclass(frozen=True)
class SystemSpec:
    """Full problem definition: modules, inter-module couplings and bath.

    ``inter_couplings`` maps ((n, j), (m, k)) site pairs to coupling energies
    in cm^-1.  Couplings are real and symmetric under pair exchange and must
    connect *different* modules; both orderings of a pair may be supplied as
    long as they agree.
    """

    modules: Tuple[ModuleSpec, ...]
    inter_couplings: Mapping[Tuple[SiteIndex, SiteIndex], float]
    bath: BathSpec

    def __post_init__(self):
        object.__setattr__(self, "modules", tuple(self.modules))
        if len(self.modules) == 0:
            raise ValidationError("system must contain at least one module")
        canonical: Dict[Tuple[SiteIndex, SiteIndex], float] = {}
        for (a, b), value in dict(self.inter_couplings).items():
            a = (int(a[0]), int(a[1]))
            b = (int(b[0]), int(b[1]))
            value = float(value)
            if not np.isfinite(value):
                raise ValidationError(f"inter-coupling {a}<->{b} is not finite")
            for n, j in (a, b):
                if not 0 <= n < len(self.modules):
                    raise ValidationError(f"inter-coupling references unknown module {n}")
                if not 0 <= j < self.modules[n].n_sites:
                    raise ValidationError(
                        f"inter-coupling references unknown site {j} of module {n}"
                    )
            if a[0] == b[0]:
                raise ValidationError(
                    f"inter-coupling {a}<->{b} connects sites of the same module; "
                    "intra-module couplings belong in the module definition"
                )
            key = (a, b) if a <= b else (b, a)
            if key in canonical and abs(canonical[key] - value) > _SYMMETRY_ATOL:
                raise ValidationError(
                    f"inter-coupling {key} given twice with conflicting values "
                    f"{canonical[key]} and {value}; J must be symmetric"
                )
            canonical[key] = value
        object.__setattr__(self, "inter_couplings", canonical)

    @property
    def n_modules(self) -> int:
        return len(self.modules)

    @property
    def n_sites_total(self) -> int:
        return sum(m.n_sites for m in self.modules)

    def coupling(self, a: SiteIndex, b: SiteIndex) -> float:
        """J between two (module, site) indices; zero if absent."""
        key = (a, b) if a <= b else (b, a)
        return self.inter_couplings.get(key, 0.0)

    def coupling_block(self, n: int, m: int) -> np.ndarray:
        """Matrix J[j, k] between sites j of module n and k of module m."""
        block = np.zeros((self.modules[n].n_sites, self.modules[m].n_sites))
        for ((an, aj), (bn, bj)), value in self.inter_couplings.items():
            if (an, bn) == (n, m):
                block[aj, bj] = value
            elif (an, bn) == (m, n):
                block[bj, aj] = value
        return block

    def site_labels(self):
        """Flat (module, site) pairs in global site order."""
        return [(n, j) for n, mod in enumerate(self.modules) for j in range(mod.n_sites)]

    def full_hamiltonian(self) -> np.ndarray:
        """One-exciton Hamiltonian of the entire system, in cm^-1."""
        n_tot = self.n_sites_total
        h = np.zeros((n_tot, n_tot))
        offsets = np.cumsum([0] + [m.n_sites for m in self.modules])
        for n, mod in enumerate(self.modules):
            sl = slice(offsets[n], offsets[n + 1])
            h[sl, sl] = mod.hamiltonian()
        for n in range(self.n_modules):
            for m in range(self.n_modules):
                if m <= n:
                    continue
                block = self.coupling_block(n, m)
                h[offsets[n]:offsets[n + 1], offsets[m]:offsets[m + 1]] = block
                h[offsets[m]:offsets[m + 1], offsets[n]:offsets[n + 1]] = block.T
        return h


def diagonalize_module(module: ModuleSpec):
    """Eigendecompose a module Hamiltonian.

    Returns ``(eigenvalues, transform)`` with eigenvalues ascending and
    ``transform[j, p]`` the amplitude of site j in exciton p.  Each
    eigenvector is sign-fixed so its largest-magnitude component is positive,
    which pins the (physically irrelevant) signs of the rotated couplings.
    """
    h = module.hamiltonian()
    if not np.allclose(h, h.T, atol=_SYMMETRY_ATOL, rtol=0):
        raise ValidationError(f"module {module.label!r}: Hamiltonian is not symmetric")
    eigenvalues, transform = np.linalg.eigh(h)
    transform = transform.copy()
    for p in range(transform.shape[1]):
        lead = np.argmax(np.abs(transform[:, p]))
        if transform[lead, p] < 0:
            transform[:, p] = -transform[:, p]
    return eigenvalues, transform


@dataclass(frozen=True)
class ExcitonBasis:
    """Per-module exciton analysis plus rotated inter-module couplings.

    For module n with transform U, exciton p carries a state-dependent
    reorganization energy lambda_p = lambda * sum_j U[j,p]**4, a shifted
    energy eps~_p = eps_p - lambda_p, and a thermal weight
    w_p = exp(-beta*eps~_p) normalized within the module.  The coupling block
    between modules n and m becomes Jt = U_n^T J U_m in the exciton basis.

    All energies in cm^-1; ``effective_couplings`` holds every ordered module
    pair (n, m) with n != m.
    """

    bath: BathSpec
    eigenvalues: Tuple[np.ndarray, ...]
    transforms: Tuple[np.ndarray, ...]
    exciton_reorganization: Tuple[np.ndarray, ...]
    shifted_energies: Tuple[np.ndarray, ...]
    boltzmann_weights: Tuple[np.ndarray, ...]
    effective_couplings: Dict[Tuple[int, int], np.ndarray] = field(repr=False)

    @property
    def n_modules(self) -> int:
        return len(self.eigenvalues)

    def module_sizes(self):
        return tuple(len(e) for e in self.eigenvalues)

    def validate(self, system: SystemSpec):
        """Check the construction invariants against the originating system."""
        lam = self.bath.reorganization_energy
        for n, (u, w, lam_p) in enumerate(
            zip(self.transforms, self.boltzmann_weights, self.exciton_reorganization)
        ):
            gram = u.T @ u
            if not np.allclose(gram, np.eye(u.shape[1]), atol=1e-12, rtol=0):
                raise ValidationError(f"module {n}: transform is not orthogonal")
            if abs(w.sum() - 1.0) > 1e-12:
                raise ValidationError(f"module {n}: Boltzmann weights do not sum to 1")
            if np.any(lam_p <= 0) or np.any(lam_p > lam * (1 + 1e-12)):
                raise ValidationError(f"module {n}: exciton reorganization outside (0, lambda]")
        for (n, m), jt in self.effective_couplings.items():
            back = self.transforms[n] @ jt @ self.transforms[m].T
            if not np.allclose(back, system.coupling_block(n, m), atol=1e-10, rtol=0):
                raise ValidationError(f"pair ({n},{m}): rotated couplings do not invert to J")


def build_exciton_basis(system: SystemSpec) -> ExcitonBasis:
    """Diagonalize every module and assemble the exciton-basis quantities."""
    lam = system.bath.reorganization_energy
    beta = thermal_beta_wavenumber(system.bath.temperature)

    eigenvalues = []
    transforms = []
    reorganizations = []
    shifted = []
    weights = []
    for module in system.modules:
        eps, u = diagonalize_module(module)
        lam_p = lam * np.sum(u**4, axis=0)
        eps_t = eps - lam_p
        # subtract the per-module minimum before exponentiating (overflow guard)
        x = -beta * (eps_t - eps_t.min())
        w = np.exp(x)
        w /= w.sum()
        eigenvalues.append(_readonly(eps))
        transforms.append(_readonly(u))
        reorganizations.append(_readonly(lam_p))
        shifted.append(_readonly(eps_t))
        weights.append(_readonly(w))

    effective = {}
    for n in range(system.n_modules):
        for m in range(system.n_modules):
            if n == m:
                continue
            block = system.coupling_block(n, m)
            effective[(n, m)] = _readonly(transforms[n].T @ block @ transforms[m])

    basis = ExcitonBasis(
        bath=system.bath,
        eigenvalues=tuple(eigenvalues),
        transforms=tuple(transforms),
        exciton_reorganization=tuple(reorganizations),
        shifted_energies=tuple(shifted),
        boltzmann_weights=tuple(weights),
        effective_couplings=effective,
    )
    basis.validate(system)
    return basis
