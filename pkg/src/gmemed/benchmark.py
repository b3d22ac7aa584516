"""Cross-method benchmark: HEOM reference vs kernel master equations.

``run_benchmark`` reproduces the standard four-site demonstration: for each
requested temperature and each initial excitation within the first module it
propagates converged HEOM, the time-local kernel master equation and the
Pauli equation, writes every trajectory as CSV and collects per-run deviation
statistics into a ``ComparisonReport``.
"""

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from .config_io import parse_config, with_temperature
from .errors import GmeMedError
from .heom import HeomConfig, heom_converge, heom_propagate
from .kernels import detailed_balance_report, kernel_med1, markovian_rates
from .lineshape import LineshapeEval
from .model import SystemSpec, build_exciton_basis
from .propagate import propagate_pauli, propagate_time_local
from .units import thermal_beta, to_angfreq

DEFAULT_TEMPERATURES = (300.0, 150.0)


def matsubara_rule(system: SystemSpec, threshold: float = 0.7) -> int:
    """Explicit Matsubara modes to carry: 1 below the crossover, else 0.

    The Ishizaki-Tanimura correction absorbs the fast tail either way; one
    explicit mode is kept once beta*hbar*w_c grows past ``threshold``.
    """
    beta_wc = thermal_beta(system.bath.temperature) * float(
        to_angfreq(system.bath.cutoff_frequency)
    )
    return 1 if beta_wc > threshold else 0


@dataclass
class BenchmarkRun:
    """Deviation statistics for one (temperature, initial site) case."""

    temperature: float
    initial_site: tuple
    max_abs_deviation: Optional[float] = None
    deviation_at_end: Optional[float] = None
    kernel_decay_time: Optional[float] = None
    rates: Optional[np.ndarray] = None
    heom_depth: Optional[int] = None
    heom_matsubara: Optional[int] = None
    failure: Optional[str] = None


@dataclass
class ComparisonReport:
    """All benchmark runs plus shared grid metadata."""

    horizon: float
    runs: List[BenchmarkRun] = field(default_factory=list)

    def to_rows(self):
        header = [
            "temperature_K", "initial_module", "initial_site",
            "max_abs_deviation", "deviation_at_end", "kernel_decay_time_ps",
            "heom_depth", "heom_matsubara", "status",
        ]
        rows = [header]
        for run in self.runs:
            rows.append([
                run.temperature, run.initial_site[0], run.initial_site[1],
                run.max_abs_deviation, run.deviation_at_end,
                run.kernel_decay_time, run.heom_depth, run.heom_matsubara,
                run.failure or "ok",
            ])
        return rows


def _write_csv(path, header, columns):
    columns = [np.asarray(c) for c in columns]
    with open(path, "w") as handle:
        handle.write(",".join(header) + "\n")
        for k in range(columns[0].size):
            handle.write(",".join(f"{c[k]:.9g}" for c in columns) + "\n")


def _trajectory_csv(path, trajectory, site_labels=None):
    header = ["t_ps"] + [f"p_{n + 1}" for n in range(trajectory.n_modules)]
    cols = [trajectory.grid] + [
        trajectory.clamped()[:, n] for n in range(trajectory.n_modules)
    ]
    if trajectory.site_populations is not None:
        labels = site_labels or [
            f"site_{j + 1}" for j in range(trajectory.site_populations.shape[1])
        ]
        header += labels
        cols += [np.clip(trajectory.site_populations[:, j], 0.0, 1.0)
                 for j in range(trajectory.site_populations.shape[1])]
    _write_csv(path, header, cols)


def run_benchmark(config_path, temperatures=DEFAULT_TEMPERATURES, horizon=2.0,
                  out_dir=None, dt=1e-3, heom_tolerance=1e-3,
                  max_workers=None) -> ComparisonReport:
    """Run the full method comparison on a configuration file.

    For every temperature: converge HEOM once, then propagate it from each
    site of module 0, propagate the time-local kernel equation and the Pauli
    equation from the matching coarse initial condition, and record maximal
    and final module-0 population deviations on a shared resampled grid.
    Individual failures are recorded in the report instead of aborting.
    """
    base_system = parse_config(config_path)
    if any(t <= 0 for t in temperatures):
        raise GmeMedError("temperatures must be positive")
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)

    report = ComparisonReport(horizon=float(horizon))
    compare = np.linspace(0.0, float(horizon), 401)
    initial_sites = [(0, j) for j in range(base_system.modules[0].n_sites)]

    if max_workers is None:
        max_workers = int(os.environ.get("GMEMED_THREADS", "1"))

    site_labels = [
        f"site_{n + 1}_{j + 1}" for n, mod in enumerate(base_system.modules)
        for j in range(mod.n_sites)
    ]

    def run_temperature(temperature):
        runs = []
        system = with_temperature(base_system, temperature)
        tag = f"T{temperature:g}"
        try:
            basis = build_exciton_basis(system)
            lineshape = LineshapeEval.from_wavenumbers(
                system.bath.reorganization_energy,
                system.bath.cutoff_frequency,
                temperature,
            )
            grid = np.arange(0.0, horizon + 0.5 * dt, dt)
            table = kernel_med1(basis, lineshape, grid)
            rates = markovian_rates(table)
            decay = table.decay_time()
            p0 = np.zeros(system.n_modules)
            p0[0] = 1.0
            gme = propagate_time_local(table, p0, grid)
            pauli = propagate_pauli(rates, p0, grid)
            if out_dir:
                _trajectory_csv(os.path.join(out_dir, f"gme_timelocal_{tag}.csv"), gme)
                _trajectory_csv(os.path.join(out_dir, f"pauli_{tag}.csv"), pauli)
            gme_resampled = gme.resample(compare)
        except GmeMedError as exc:
            for site in initial_sites:
                runs.append(BenchmarkRun(temperature, site, failure=f"kernel: {exc}"))
            return runs

        base_config = HeomConfig(
            hierarchy_depth=2,
            matsubara_count=matsubara_rule(system),
            horizon=float(horizon),
        )
        try:
            converged = heom_converge(system, base_config, initial_sites[0],
                                      tolerance=heom_tolerance)
        except GmeMedError as exc:
            for site in initial_sites:
                runs.append(BenchmarkRun(temperature, site, failure=f"heom: {exc}"))
            return runs

        for site in initial_sites:
            run = BenchmarkRun(
                temperature, site,
                kernel_decay_time=decay,
                rates=rates.rates,
                heom_depth=converged.hierarchy_depth,
                heom_matsubara=converged.matsubara_count,
            )
            try:
                heom = heom_propagate(system, converged, site)
                if out_dir:
                    name = f"heom_{tag}_init{site[0] + 1}_{site[1] + 1}.csv"
                    _trajectory_csv(os.path.join(out_dir, name), heom, site_labels)
                dev = np.abs(gme_resampled[:, 0] - heom.resample(compare)[:, 0])
                run.max_abs_deviation = float(dev.max())
                run.deviation_at_end = float(dev[-1])
            except GmeMedError as exc:
                run.failure = f"heom: {exc}"
            runs.append(run)

        if out_dir:
            balance = detailed_balance_report(rates, basis)
            with open(os.path.join(out_dir, f"rates_{tag}.csv"), "w") as handle:
                handle.write("from_module,to_module,rate_per_ps\n")
                n_mod = rates.n_modules
                for n in range(n_mod):
                    for m in range(n_mod):
                        if n != m:
                            handle.write(f"{n + 1},{m + 1},{rates.rates[n, m]:.9g}\n")
                for row in balance:
                    n, m = row["pair"]
                    handle.write(
                        f"# balance {n + 1}<->{m + 1}: ratio {row['ratio']:.6g} vs "
                        f"Boltzmann {row['boltzmann']:.6g}"
                        f"{' (flagged)' if row['flagged'] else ''}\n"
                    )
        return runs

    if max_workers > 1:
        with ThreadPoolExecutor(max_workers=max_workers) as pool:
            for runs in pool.map(run_temperature, temperatures):
                report.runs.extend(runs)
    else:
        for temperature in temperatures:
            report.runs.extend(run_temperature(temperature))

    if out_dir:
        with open(os.path.join(out_dir, "report.csv"), "w") as handle:
            for row in report.to_rows():
                handle.write(",".join(
                    f"{x:.9g}" if isinstance(x, float) else str(x) for x in row
                ) + "\n")
    return report
