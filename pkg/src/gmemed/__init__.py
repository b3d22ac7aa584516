"""Modular exciton density transfer for weakly coupled chromophore groups.

The package computes inter-module excitation transfer from a closed-form
memory kernel built on exciton-basis Drude-Lorentz lineshapes, integrates the
resulting master equations (time-nonlocal, time-local and Pauli limits),
cross-checks the Markovian rates against frequency-domain donor-acceptor
lineshape overlaps, and validates everything against a numerically exact
hierarchical-equations-of-motion reference solver.
"""

__version__ = "0.1.0"

from .config_io import (bundled_config_path, parse_config, serialize_config,
                        with_temperature)
from .errors import (ConfigError, ConvergenceError, CoarseGridError,
                     GmeMedError, NumericsError, UndecayedKernelError,
                     ValidationError)
from .heom import ADOHierarchy, HeomConfig, heom_converge, heom_propagate
from .kernels import (KernelTable, RateMatrix, default_frequency_grid,
                      detailed_balance_report, kernel_med1, markovian_rates,
                      mcfret_rates_frequency, running_rates)
from .lineshape import LineshapeEval
from .model import (BathSpec, ExcitonBasis, ModuleSpec, SystemSpec,
                    build_exciton_basis, diagonalize_module)
from .propagate import (Trajectory, propagate_convolution, propagate_pauli,
                        propagate_time_local)
from .benchmark import ComparisonReport, matsubara_rule, run_benchmark

__all__ = [
    "ADOHierarchy", "BathSpec", "CoarseGridError", "ComparisonReport",
    "ConfigError", "ConvergenceError", "ExcitonBasis", "GmeMedError",
    "HeomConfig", "KernelTable", "LineshapeEval", "ModuleSpec",
    "NumericsError", "RateMatrix", "SystemSpec", "Trajectory",
    "UndecayedKernelError", "ValidationError", "build_exciton_basis",
    "bundled_config_path", "default_frequency_grid", "detailed_balance_report",
    "diagonalize_module", "heom_converge", "heom_propagate", "kernel_med1",
    "markovian_rates", "matsubara_rule", "mcfret_rates_frequency",
    "parse_config", "propagate_convolution", "propagate_pauli",
    "propagate_time_local", "run_benchmark", "running_rates",
    "serialize_config", "with_temperature",
]
