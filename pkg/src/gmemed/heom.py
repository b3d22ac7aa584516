"""Hierarchical equations of motion: exact reference dynamics.

Propagates the full N-site exciton Hamiltonian with independent site-local
Drude baths, using the high-temperature Drude expansion of the bath
correlation function

    C(t) = c_0 exp(-w_c t) + sum_{k=1}^{K} c_k exp(-nu_k t)
    c_0  = lam*w_c*(cot(beta*w_c/2) - i),  nu_k = 2*pi*k/beta
    c_k  = (4*lam*w_c/beta) * nu_k/(nu_k^2 - w_c^2)

with K explicit Matsubara modes.  Auxiliary density operators (ADOs) are
kept in the scaled (normalized) form, indexed by multi-indices over
(site, mode) with total depth <= L, and advanced with classical RK4 on a
sparse assembly of the full hierarchy generator.

Terminators close the hierarchy at depth L:

* ``ishizaki_tanimura`` adds the delta-correlated compensation term
  -Delta_K * [V_j, [V_j, .]] on every ADO, with Delta_K the exactly known
  integral of the neglected Matsubara tail.  This keeps small-K hierarchies
  accurate at lower temperatures.
* ``markovian_closure`` truncates deeper tiers to zero and relies on depth
  alone, assuming the unresolved bath memory is irrelevant.
"""

import math
from dataclasses import dataclass, replace

import numpy as np
import scipy.sparse as sp
from scipy.special import gammaln

from .errors import ConvergenceError, NumericsError, ValidationError
from .model import SystemSpec
from .propagate import Trajectory
from .units import thermal_beta, to_angfreq

TERMINATORS = ("ishizaki_tanimura", "markovian_closure")

_TRACE_ATOL = 1e-8
_HERM_ATOL = 1e-10
_RK4_STABILITY = 2.5


@dataclass(frozen=True)
class HeomConfig:
    """Numerical controls for one hierarchy propagation.

    ``hierarchy_depth`` is the total-quantum cutoff L, ``matsubara_count``
    the number K of explicit Matsubara modes per site.  ``time_step`` is a
    target: it is reduced automatically when the stiffest hierarchy damping
    would destabilize RK4, and snapped so an integer number of steps covers
    the horizon.
    """

    hierarchy_depth: int
    matsubara_count: int = 0
    terminator: str = "ishizaki_tanimura"
    time_step: float = 5e-4
    horizon: float = 2.0
    memory_budget_bytes: int = 2 * 1024**3

    def __post_init__(self):
        if self.hierarchy_depth < 1:
            raise ValidationError("hierarchy_depth must be >= 1")
        if self.matsubara_count < 0:
            raise ValidationError("matsubara_count must be >= 0")
        if self.terminator not in TERMINATORS:
            raise ValidationError(f"terminator must be one of {TERMINATORS}")
        if self.time_step <= 0 or self.horizon <= 0:
            raise ValidationError("time_step and horizon must be positive")

    def n_modes(self, n_sites: int) -> int:
        return n_sites * (self.matsubara_count + 1)

    def ado_count(self, n_sites: int) -> int:
        m = self.n_modes(n_sites)
        return math.comb(self.hierarchy_depth + m, m)

    def memory_estimate(self, n_sites: int) -> int:
        """Rough bytes needed: RK4 state vectors plus the sparse generator."""
        n_ado = self.ado_count(n_sites)
        dim = n_sites**2
        state = n_ado * dim * 16 * 8
        nnz = n_ado * (2 * n_sites * dim + dim + self.n_modes(n_sites) * 4 * n_sites)
        return state + nnz * 24

    def check_budget(self, n_sites: int):
        need = self.memory_estimate(n_sites)
        if need > self.memory_budget_bytes:
            raise ValidationError(
                f"hierarchy with L={self.hierarchy_depth}, K={self.matsubara_count} "
                f"needs ~{need / 1e9:.2f} GB for {self.ado_count(n_sites)} ADOs, "
                f"over the {self.memory_budget_bytes / 1e9:.2f} GB budget"
            )


def _bath_expansion(system: SystemSpec, n_matsubara: int):
    """Exponential expansion coefficients and the truncated-tail constant."""
    bath = system.bath
    lam = float(to_angfreq(bath.reorganization_energy))
    wc = float(to_angfreq(bath.cutoff_frequency))
    beta = thermal_beta(bath.temperature)
    x = beta * wc
    cot = 1.0 / np.tan(0.5 * x)

    freqs = [wc]
    coeffs = [lam * wc * (cot - 1j)]
    for k in range(1, n_matsubara + 1):
        nu = 2.0 * np.pi * k / beta
        freqs.append(nu)
        coeffs.append((4.0 * lam * wc / beta) * nu / (nu**2 - wc**2) + 0.0j)

    # int_0^inf of the dropped Matsubara tail: exact total minus kept terms
    delta = 2.0 * lam / (beta * wc) - lam * cot
    for k in range(1, n_matsubara + 1):
        nu = 2.0 * np.pi * k / beta
        delta -= (4.0 * lam * wc / beta) / (nu**2 - wc**2)
    return np.array(freqs), np.array(coeffs), float(delta)


def _multi_indices(n_modes: int, depth: int) -> np.ndarray:
    """All multi-indices with total <= depth, index 0 first."""
    rows = []

    def rec(prefix, budget, slots):
        if slots == 0:
            rows.append(tuple(prefix))
            return
        for v in range(budget + 1):
            rec(prefix + [v], budget - v, slots - 1)

    rec([], depth, n_modes)
    rows.sort(key=lambda r: (sum(r), r))
    return np.array(rows, dtype=np.int32)


class ADOHierarchy:
    """Scaled auxiliary-density-operator stack and its sparse generator.

    ``indices[i]`` is the multi-index of ADO i over (site, mode) slots in
    site-major order; ``states`` holds every ADO as an N x N complex matrix,
    with the physical reduced density matrix at index 0; ``scaling[i]`` is
    the normalization sqrt(prod n! |c|^n) relating scaled to bare ADOs.
    """

    def __init__(self, system: SystemSpec, config: HeomConfig):
        config.check_budget(system.n_sites_total)
        self.system = system
        self.config = config
        n = system.n_sites_total
        self.n_sites = n
        n_mats = config.matsubara_count

        freqs, coeffs, delta = _bath_expansion(system, n_mats)
        if config.terminator != "ishizaki_tanimura":
            delta = 0.0
        self.mode_freqs = np.tile(freqs, n)          # site-major (site, k)
        self.mode_coeffs = np.tile(coeffs, n)
        self.mode_sites = np.repeat(np.arange(n), n_mats + 1)
        self.tail_delta = delta

        self.indices = _multi_indices(self.mode_freqs.size, config.hierarchy_depth)
        self.n_ado = self.indices.shape[0]
        log_scale = 0.5 * (
            gammaln(self.indices + 1.0).sum(axis=1)
            + self.indices @ np.log(np.abs(self.mode_coeffs))
        )
        self.scaling = np.exp(log_scale)

        self.states = np.zeros((self.n_ado, n, n), dtype=complex)
        self._generator = self._assemble()

    # -- assembly -----------------------------------------------------------

    def _assemble(self) -> sp.csr_matrix:
        n = self.n_sites
        dim = n * n
        idx = self.indices
        n_ado = self.n_ado
        modes = self.mode_freqs.size

        lookup = {tuple(row): i for i, row in enumerate(idx)}
        depth = idx.sum(axis=1)
        up_pos = np.full((n_ado, modes), -1, dtype=np.int64)
        down_pos = np.full((n_ado, modes), -1, dtype=np.int64)
        for i, row in enumerate(idx):
            for mk in range(modes):
                if depth[i] < self.config.hierarchy_depth:
                    key = tuple(row + np.eye(modes, dtype=np.int32)[mk])
                    up_pos[i, mk] = lookup.get(key, -1)
                if row[mk] > 0:
                    key = tuple(row - np.eye(modes, dtype=np.int32)[mk])
                    down_pos[i, mk] = lookup[key]

        rows, cols, vals = [], [], []

        # Hamiltonian commutator, identical on every ADO; a constant shift of
        # the diagonal is removed first (it cancels in the commutator exactly
        # but would otherwise dominate the phases numerically)
        h = to_angfreq(self.system.full_hamiltonian())
        h = h - np.mean(np.diag(h)) * np.eye(n)
        comm = -1j * (np.kron(h, np.eye(n)) - np.kron(np.eye(n), h.T))
        comm_coo = sp.coo_matrix(comm)
        base = np.arange(n_ado, dtype=np.int64) * dim
        rows.append((base[:, None] + comm_coo.row[None, :]).ravel())
        cols.append((base[:, None] + comm_coo.col[None, :]).ravel())
        vals.append(np.tile(comm_coo.data, n_ado))

        # damping + terminator correction: diagonal in the vec basis
        a_of = np.repeat(np.arange(n), n)
        b_of = np.tile(np.arange(n), n)
        gamma = (idx @ self.mode_freqs).astype(float)
        it_diag = np.zeros(dim)
        for j in range(n):
            aj = (a_of == j).astype(float)
            bj = (b_of == j).astype(float)
            it_diag += aj + bj - 2.0 * aj * bj
        diag = -(gamma[:, None] + self.tail_delta * it_diag[None, :])
        flat = np.arange(n_ado * dim, dtype=np.int64)
        rows.append(flat)
        cols.append(flat)
        vals.append(diag.ravel().astype(complex))

        # hierarchy couplings: [V_j, .] and its one-sided variant are
        # diagonal in the vec basis because V_j is a projector
        for mk in range(modes):
            j = self.mode_sites[mk]
            c = self.mode_coeffs[mk]
            ac = abs(c)
            v_entries = np.nonzero((a_of == j) | (b_of == j))[0]
            up_vals = (a_of[v_entries] == j).astype(complex) - (b_of[v_entries] == j)
            dn_vals = c * (a_of[v_entries] == j) - np.conj(c) * (b_of[v_entries] == j)

            src = np.nonzero(up_pos[:, mk] >= 0)[0]
            if src.size:
                coeff = -1j * np.sqrt((idx[src, mk] + 1.0) * ac)
                rows.append((src[:, None] * dim + v_entries[None, :]).ravel())
                cols.append((up_pos[src, mk][:, None] * dim + v_entries[None, :]).ravel())
                vals.append((coeff[:, None] * up_vals[None, :]).ravel())

            src = np.nonzero(down_pos[:, mk] >= 0)[0]
            if src.size:
                coeff = -1j * np.sqrt(idx[src, mk] / ac)
                rows.append((src[:, None] * dim + v_entries[None, :]).ravel())
                cols.append((down_pos[src, mk][:, None] * dim + v_entries[None, :]).ravel())
                vals.append((coeff[:, None] * dn_vals[None, :]).ravel())

        full_dim = n_ado * dim
        gen = sp.coo_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
            shape=(full_dim, full_dim),
        ).tocsr()
        # Gershgorin bound on the spectral radius, for the RK4 step limit
        magnitudes = gen.copy()
        magnitudes.data = np.abs(magnitudes.data)
        self._radius = float(magnitudes.sum(axis=1).max()) if gen.nnz else 0.0
        return gen

    # -- propagation --------------------------------------------------------

    def stable_step(self) -> float:
        """Largest RK4 step the stiffest hierarchy scales tolerate."""
        if self._radius == 0.0:
            return np.inf
        return _RK4_STABILITY / self._radius

    def set_initial_site(self, global_site: int):
        self.states[:] = 0.0
        self.states[0, global_site, global_site] = 1.0

    def propagate(self, dt: float, n_steps: int, output_stride: int = 1):
        """RK4 time stepping; returns (times, site population history)."""
        a = self._generator
        y = self.states.reshape(-1)
        n = self.n_sites
        dim = n * n

        n_out = n_steps // output_stride + 1
        times = np.empty(n_out)
        site_pops = np.empty((n_out, n))
        herm_drift = 0.0

        def record(k_out, step):
            rho = y[:dim].reshape(n, n)
            times[k_out] = step * dt
            site_pops[k_out] = np.real(np.diag(rho))

        record(0, 0)
        k_out = 1
        for step in range(1, n_steps + 1):
            k1 = a @ y
            k2 = a @ (y + (0.5 * dt) * k1)
            k3 = a @ (y + (0.5 * dt) * k2)
            k4 = a @ (y + dt * k3)
            y += (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            if step % output_stride == 0:
                record(k_out, step)
                k_out += 1
            if step % 200 == 0 or step == n_steps:
                rho = y[:dim].reshape(n, n)
                trace_err = abs(np.trace(rho).real - 1.0) + abs(np.trace(rho).imag)
                herm = float(np.max(np.abs(rho - rho.conj().T)))
                herm_drift = max(herm_drift, herm)
                if not np.isfinite(trace_err) or trace_err > _TRACE_ATOL:
                    raise NumericsError(
                        f"HEOM propagation lost unit trace at step {step} "
                        f"(error {trace_err:.3g}); reduce the time step"
                    )
                if herm > _HERM_ATOL:
                    raise NumericsError(
                        f"HEOM reduced density matrix lost hermiticity at "
                        f"step {step} (residual {herm:.3g}); reduce the time step"
                    )
        self.states = y.reshape(self.n_ado, n, n)
        return times, site_pops, herm_drift


def _module_offsets(system: SystemSpec):
    sizes = [m.n_sites for m in system.modules]
    return np.cumsum([0] + sizes)


def heom_propagate(system: SystemSpec, config: HeomConfig,
                   initial_site) -> Trajectory:
    """Exact dynamics from a single initially excited site.

    ``initial_site`` is a (module, site) pair.  Returns a trajectory whose
    module populations are the site populations summed within each module;
    the per-site populations are kept alongside.
    """
    module, site = initial_site
    if not (0 <= module < system.n_modules
            and 0 <= site < system.modules[module].n_sites):
        raise ValidationError(f"initial site {initial_site} does not exist")
    offsets = _module_offsets(system)
    global_site = int(offsets[module] + site)

    hierarchy = ADOHierarchy(system, config)
    dt_stab = hierarchy.stable_step()
    dt = min(config.time_step, dt_stab)
    n_steps = max(1, int(np.ceil(config.horizon / dt - 1e-12)))
    output_stride = max(1, int(np.ceil(n_steps / 4000)))
    n_steps = output_stride * int(np.ceil(n_steps / output_stride))
    dt = config.horizon / n_steps

    hierarchy.set_initial_site(global_site)
    times, site_pops, herm_drift = hierarchy.propagate(dt, n_steps, output_stride)

    med = np.empty((times.size, system.n_modules))
    for nmod in range(system.n_modules):
        med[:, nmod] = site_pops[:, offsets[nmod]:offsets[nmod + 1]].sum(axis=1)

    return Trajectory(
        grid=times,
        populations=med,
        site_populations=site_pops,
        metadata={
            "method": "heom",
            "initial_site": (int(module), int(site)),
            "hierarchy_depth": config.hierarchy_depth,
            "matsubara_count": config.matsubara_count,
            "terminator": config.terminator,
            "time_step": dt,
            "hermiticity_drift": herm_drift,
            "converged": None,
        },
    )


def heom_converge(system: SystemSpec, base_config: HeomConfig, initial_site,
                  tolerance: float = 1e-3, depth_increment: int = 2,
                  low_temperature_threshold: float = 0.7) -> HeomConfig:
    """Deepen the hierarchy until the MED stops changing.

    The depth L is raised in steps of ``depth_increment`` until the maximal
    module-population change between successive levels drops below
    ``tolerance``.  At low temperature (beta*hbar*w_c above the threshold)
    the Matsubara count is then verified the same way and raised if needed.
    Raises ConvergenceError with the last observed change when the memory
    budget runs out first.
    """
    compare = np.linspace(0.0, base_config.horizon, 401)

    def run(config):
        traj = heom_propagate(system, config, initial_site)
        return traj.resample(compare)

    def converge_depth(config, reference=None):
        current = config
        med = run(current) if reference is None else reference
        delta = np.inf
        while True:
            deeper = replace(current, hierarchy_depth=current.hierarchy_depth + depth_increment)
            try:
                deeper.check_budget(system.n_sites_total)
            except ValidationError as exc:
                raise ConvergenceError(
                    f"memory budget exhausted before depth convergence; "
                    f"last MED change {delta:.3g} at L={current.hierarchy_depth}"
                ) from exc
            med_deep = run(deeper)
            delta = float(np.max(np.abs(med_deep - med)))
            if delta < tolerance:
                return current, med
            current, med = deeper, med_deep

    config, med = converge_depth(base_config)

    beta_wc = thermal_beta(system.bath.temperature) * float(
        to_angfreq(system.bath.cutoff_frequency)
    )
    if beta_wc > low_temperature_threshold:
        while True:
            richer = replace(config, matsubara_count=config.matsubara_count + 1)
            try:
                richer.check_budget(system.n_sites_total)
            except ValidationError as exc:
                raise ConvergenceError(
                    "memory budget exhausted while verifying the Matsubara "
                    f"count at K={config.matsubara_count}"
                ) from exc
            med_rich = run(richer)
            delta = float(np.max(np.abs(med_rich - med)))
            if delta < tolerance:
                return config
            config, med = converge_depth(richer, med_rich)
    return config
