"""Command-line interface.

Every subcommand reads a system configuration file (default: the bundled
four-site demo) and writes CSV, either to stdout or into ``--out DIR``.
Time arguments are femtoseconds for steps and picoseconds for horizons;
module and site indices are 0-based, matching the configuration format.

Exit codes: 0 success, 1 invalid input or configuration, 2 numerical
non-convergence.
"""

import argparse
import os
import sys

import numpy as np

from . import __version__
from .benchmark import matsubara_rule, run_benchmark
from .config_io import bundled_config_path, parse_config, with_temperature
from .errors import NumericsError, ValidationError
from .heom import HeomConfig, heom_propagate
from .kernels import (default_frequency_grid, kernel_med1, markovian_rates,
                      mcfret_rates_frequency)
from .lineshape import LineshapeEval
from .model import build_exciton_basis
from .propagate import (propagate_convolution, propagate_pauli,
                        propagate_time_local)


def _write_table(args, name, header, columns):
    columns = [np.asarray(c, dtype=float) for c in columns]
    lines = [",".join(header)]
    for k in range(columns[0].size):
        lines.append(",".join(f"{c[k]:.9g}" for c in columns))
    text = "\n".join(lines) + "\n"
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        path = os.path.join(args.out, name)
        with open(path, "w") as handle:
            handle.write(text)
        print(path)
    else:
        sys.stdout.write(text)


def _load_system(args):
    system = parse_config(args.config)
    if args.temperature is not None:
        system = with_temperature(system, args.temperature)
    return system


def _lineshape_for(system):
    return LineshapeEval.from_wavenumbers(
        system.bath.reorganization_energy,
        system.bath.cutoff_frequency,
        system.bath.temperature,
    )


def _time_grid(args):
    dt = args.dt * 1e-3  # fs -> ps
    n = int(round(args.horizon / dt))
    return np.linspace(0.0, n * dt, n + 1)


def cmd_lineshape(args):
    system = _load_system(args)
    ev = _lineshape_for(system)
    grid = _time_grid(args)
    g = ev.eval_g_grid(grid)
    _write_table(args, "lineshape.csv", ["t_ps", "re_g", "im_g"],
                 [grid, g.real, g.imag])
    return 0


def cmd_kernel(args):
    system = _load_system(args)
    basis = build_exciton_basis(system)
    table = kernel_med1(basis, _lineshape_for(system), _time_grid(args))
    header = ["t_ps"]
    columns = [table.grid]
    for (n, m) in table.pairs():
        header.append(f"K_{n + 1}to{m + 1}")
        columns.append(table.values[(n, m)])
    _write_table(args, "kernel.csv", header, columns)
    return 0


def cmd_rates(args):
    system = _load_system(args)
    basis = build_exciton_basis(system)
    lineshape = _lineshape_for(system)
    table = kernel_med1(basis, lineshape, _time_grid(args))
    rates = markovian_rates(table)
    rows = ["from_module,to_module,rate_per_ps,mcfret_rate_per_ps"]
    if args.mcfret:
        freq = mcfret_rates_frequency(
            basis, lineshape, default_frequency_grid(basis, lineshape))
        fr = freq.rates
    else:
        fr = np.full_like(rates.rates, np.nan)
    for n in range(rates.n_modules):
        for m in range(rates.n_modules):
            if n != m:
                rows.append(f"{n + 1},{m + 1},{rates.rates[n, m]:.9g},{fr[n, m]:.9g}")
    text = "\n".join(rows) + "\n"
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        path = os.path.join(args.out, "rates.csv")
        with open(path, "w") as handle:
            handle.write(text)
        print(path)
    else:
        sys.stdout.write(text)
    return 0


def cmd_propagate(args):
    system = _load_system(args)
    basis = build_exciton_basis(system)
    grid = _time_grid(args)
    if not 0 <= args.initial_module < system.n_modules:
        raise ValidationError(f"initial module {args.initial_module} does not exist")
    p0 = np.zeros(system.n_modules)
    p0[args.initial_module] = 1.0
    table = kernel_med1(basis, _lineshape_for(system), grid)
    if args.method == "timelocal":
        trajectory = propagate_time_local(table, p0, grid)
    elif args.method == "convolution":
        trajectory = propagate_convolution(table, p0, grid)
    else:
        trajectory = propagate_pauli(markovian_rates(table), p0, grid)
    header = ["t_ps"] + [f"p_{n + 1}" for n in range(system.n_modules)]
    columns = [trajectory.grid] + [trajectory.clamped()[:, n]
                                   for n in range(system.n_modules)]
    _write_table(args, f"populations_{args.method}.csv", header, columns)
    return 0


def cmd_heom(args):
    system = _load_system(args)
    module, site = args.initial_site
    matsubara = args.matsubara if args.matsubara >= 0 else matsubara_rule(system)
    config = HeomConfig(
        hierarchy_depth=args.depth,
        matsubara_count=matsubara,
        terminator=args.terminator,
        time_step=args.dt * 1e-3,
        horizon=args.horizon,
    )
    trajectory = heom_propagate(system, config, (module, site))
    header = ["t_ps"]
    columns = [trajectory.grid]
    for n, mod in enumerate(system.modules):
        for j in range(mod.n_sites):
            header.append(f"site_{n + 1}_{j + 1}")
    for j in range(trajectory.site_populations.shape[1]):
        columns.append(np.clip(trajectory.site_populations[:, j], 0.0, 1.0))
    for n in range(system.n_modules):
        header.append(f"med_{n + 1}")
        columns.append(trajectory.clamped()[:, n])
    _write_table(args, "heom.csv", header, columns)
    return 0


def cmd_benchmark(args):
    temperatures = [float(x) for x in args.temperatures.split(",") if x]
    out_dir = args.out or "benchmark_out"
    report = run_benchmark(
        args.config, temperatures=temperatures, horizon=args.horizon,
        out_dir=out_dir, dt=args.dt * 1e-3,
    )
    for row in report.to_rows():
        print(",".join(f"{x:.9g}" if isinstance(x, float) else str(x) for x in row))
    failures = [r for r in report.runs if r.failure]
    return 2 if failures else 0


def _site_pair(text):
    parts = text.split(",")
    if len(parts) != 2:
        raise argparse.ArgumentTypeError("expected MODULE,SITE (0-based)")
    return int(parts[0]), int(parts[1])


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gmemed",
        description="Inter-module exciton transfer: kernels, rates, master "
                    "equations and an exact HEOM reference.",
    )
    parser.add_argument("--version", action="version", version=__version__)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=bundled_config_path(),
                        help="system configuration file (default: bundled fmo4.cfg)")
    common.add_argument("--temperature", type=float, default=None,
                        help="override the bath temperature (K)")
    common.add_argument("--dt", type=float, default=1.0,
                        help="time step in fs (default 1)")
    common.add_argument("--horizon", type=float, default=2.0,
                        help="propagation horizon in ps (default 2)")
    common.add_argument("--out", default=None,
                        help="output directory (default: CSV to stdout)")

    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("lineshape", parents=[common],
                       help="lineshape function g(t) on a time grid")
    p.set_defaults(func=cmd_lineshape)

    p = sub.add_parser("kernel", parents=[common],
                       help="memory kernels K_{n->m}(t) for all module pairs")
    p.set_defaults(func=cmd_kernel)

    p = sub.add_parser("rates", parents=[common],
                       help="Markovian transfer rates (time-domain integral)")
    p.add_argument("--mcfret", action="store_true",
                   help="also compute frequency-domain overlap rates")
    p.set_defaults(func=cmd_rates)

    p = sub.add_parser("propagate", parents=[common],
                       help="module populations from a kernel master equation")
    p.add_argument("--method", choices=("timelocal", "convolution", "pauli"),
                   default="timelocal")
    p.add_argument("--initial-module", type=int, default=0,
                   help="0-based module holding the initial excitation")
    p.set_defaults(func=cmd_propagate)

    p = sub.add_parser("heom", parents=[common],
                       help="exact site/module populations from HEOM")
    p.add_argument("--depth", type=int, default=6, help="hierarchy depth L")
    p.add_argument("--matsubara", type=int, default=-1,
                   help="explicit Matsubara modes K (default: by temperature)")
    p.add_argument("--terminator", default="ishizaki_tanimura",
                   choices=("ishizaki_tanimura", "markovian_closure"))
    p.add_argument("--initial-site", type=_site_pair, default=(0, 0),
                   metavar="MODULE,SITE", help="0-based initial excitation")
    p.set_defaults(func=cmd_heom)

    p = sub.add_parser("benchmark", parents=[common],
                       help="full method comparison at several temperatures")
    p.add_argument("--temperatures", default="300,150",
                   help="comma-separated kelvin list (default 300,150)")
    p.set_defaults(func=cmd_benchmark)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except NumericsError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
