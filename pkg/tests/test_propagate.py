import numpy as np
import pytest
from scipy.linalg import null_space

from gmemed.errors import ValidationError
from gmemed.kernels import (KernelTable, RateMatrix, kernel_med1,
                            markovian_rates, running_rates)
from gmemed.lineshape import LineshapeEval
from gmemed.model import SystemSpec, build_exciton_basis
from gmemed.propagate import (Trajectory, propagate_convolution,
                              propagate_pauli, propagate_time_local)

from conftest import random_system
from oracles import pauli_closed_form_two_modules


def zero_table(n_modules=2, horizon=1.0, n=501):
    grid = np.linspace(0.0, horizon, n)
    values = {(n_, m): np.zeros(n) for n_ in range(n_modules)
              for m in range(n_modules) if n_ != m}
    return KernelTable(grid=grid, values=values, n_modules=n_modules)


def symmetric_table(k_peak=16.0, decay=20.0, horizon=2.0, n=2001):
    grid = np.linspace(0.0, horizon, n)
    pulse = k_peak * np.exp(-decay * grid)
    values = {(0, 1): pulse, (1, 0): pulse.copy()}
    return KernelTable(grid=grid, values=values, n_modules=2)


GRID = np.linspace(0.0, 1.0, 501)
P0 = np.array([1.0, 0.0])


class TestTrajectoryType:
    def test_conservation_enforced(self):
        grid = np.linspace(0.0, 1.0, 5)
        bad = np.ones((5, 2)) * 0.5
        bad[3, 0] = 0.7
        with pytest.raises(ValidationError, match="drifts"):
            Trajectory(grid=grid, populations=bad)

    def test_metadata_records_negatives(self):
        grid = np.linspace(0.0, 1.0, 3)
        pops = np.array([[1.0, 0.0], [1.0 + 5e-11, -5e-11], [1.0, 0.0]])
        trajectory = Trajectory(grid=grid, populations=pops)
        assert trajectory.metadata["max_negative_excursion"] == pytest.approx(5e-11)
        assert np.all(trajectory.clamped() >= 0.0)


class TestZeroKernel:
    def test_convolution_constant(self):
        trajectory = propagate_convolution(zero_table(), P0, GRID)
        assert np.allclose(trajectory.populations, P0, atol=0)

    def test_time_local_constant(self):
        trajectory = propagate_time_local(zero_table(), P0, GRID)
        assert np.allclose(trajectory.populations, P0, atol=0)

    def test_pauli_constant(self):
        rates = RateMatrix(np.zeros((2, 2)))
        trajectory = propagate_pauli(rates, P0, GRID)
        assert np.allclose(trajectory.populations, P0, atol=0)


class TestSymmetricPair:
    def test_conserved_and_monotone_toward_half(self):
        table = symmetric_table()
        for propagate in (propagate_convolution, propagate_time_local):
            trajectory = propagate(table, P0, np.linspace(0.0, 2.0, 1001))
            p = trajectory.populations
            assert np.allclose(p.sum(axis=1), 1.0, atol=1e-12)
            assert np.all(np.diff(p[:, 0]) <= 1e-12)
            assert 0.3 <= p[-1, 0] <= 0.7

    def test_pauli_closed_form(self):
        k = 0.8
        rates = RateMatrix(np.array([[0.0, k], [k, 0.0]]))
        grid = np.linspace(0.0, 3.0, 301)
        trajectory = propagate_pauli(rates, P0, grid)
        expected = pauli_closed_form_two_modules(k, 1.0, grid)
        assert np.allclose(trajectory.populations[:, 0], expected, atol=1e-12)

    def test_pauli_stationary_matches_null_space(self):
        rates = RateMatrix(np.array([
            [0.0, 0.7, 0.1],
            [0.2, 0.0, 0.4],
            [0.3, 0.2, 0.0],
        ]))
        generator = rates.generator()
        stationary = null_space(generator)[:, 0]
        stationary = stationary / stationary.sum()
        horizon = 20.0 / rates.rates[rates.rates > 0].min()
        grid = np.linspace(0.0, horizon, 2001)
        trajectory = propagate_pauli(rates, np.array([1.0, 0.0, 0.0]), grid)
        assert np.allclose(trajectory.populations[-1], stationary, atol=1e-10)


class TestAgainstKernels:
    def test_time_local_rates_reach_markovian_limit(self, fmo_bundle):
        _, _, _, table = fmo_bundle(300.0)
        rates = markovian_rates(table).rates
        running = running_rates(table)
        tail = table.grid >= 4.0 * table.decay_time()
        for (n, m) in table.pairs():
            if rates[n, m] > 0:
                rel = np.abs(running[tail, n, m] - rates[n, m]) / rates[n, m]
                assert rel.max() < 1e-3

    def test_step_halving(self, fmo_bundle):
        _, _, _, table = fmo_bundle(300.0)
        fine = np.linspace(0.0, 2.0, 2001)
        coarse = np.linspace(0.0, 2.0, 1001)
        for propagate in (propagate_time_local, propagate_convolution):
            a = propagate(table, P0, fine)
            b = propagate(table, P0, coarse)
            diff = np.max(np.abs(a.populations[::2] - b.populations))
            assert diff < 1e-4

    def test_methods_agree_for_fast_kernels(self, fmo_bundle):
        # weak-coupling regime: transfer much slower than kernel decay
        system, _, lineshape, _ = fmo_bundle(300.0)
        weak = SystemSpec(
            system.modules,
            {k: 0.2 * v for k, v in system.inter_couplings.items()},
            system.bath,
        )
        basis = build_exciton_basis(weak)
        grid = np.linspace(0.0, 2.0, 2001)
        table = kernel_med1(basis, lineshape, grid)
        rates = markovian_rates(table)
        assert rates.rates.max() * table.decay_time() < 0.05
        a = propagate_time_local(table, P0, grid).populations
        b = propagate_convolution(table, P0, grid).populations
        c = propagate_pauli(rates, P0, grid).populations
        assert np.max(np.abs(a - b)) < 0.01
        assert np.max(np.abs(a - c)) < 0.01

    def test_conservation_on_random_systems(self):
        rng = np.random.default_rng(11)
        for _ in range(10):
            system = random_system(rng)
            basis = build_exciton_basis(system)
            lineshape = LineshapeEval.from_wavenumbers(
                system.bath.reorganization_energy,
                system.bath.cutoff_frequency,
                system.bath.temperature,
            )
            grid = np.linspace(0.0, 0.4, 201)
            table = kernel_med1(basis, lineshape, grid, allow_coarse_grid=True)
            p0 = rng.uniform(0.1, 1.0, system.n_modules)
            p0 /= p0.sum()
            for propagate in (propagate_time_local, propagate_convolution):
                trajectory = propagate(table, p0, grid)
                assert trajectory.metadata["conservation_drift"] < 1e-8


class TestErrorPaths:
    def test_kernel_shorter_than_horizon(self):
        table = zero_table(horizon=0.5)
        with pytest.raises(ValidationError, match="shorter"):
            propagate_convolution(table, P0, np.linspace(0.0, 1.0, 101))
        with pytest.raises(ValidationError, match="shorter"):
            propagate_time_local(table, P0, np.linspace(0.0, 1.0, 101))

    def test_step_must_be_multiple_of_kernel_step(self):
        table = zero_table(horizon=1.0, n=501)  # dt = 2 fs
        odd = np.linspace(0.0, 0.9, 301)        # dt = 3 fs
        with pytest.raises(ValidationError, match="multiple"):
            propagate_convolution(table, P0, odd)

    def test_initial_condition_must_normalize(self):
        table = zero_table()
        with pytest.raises(ValidationError, match="sum"):
            propagate_time_local(table, np.array([0.9, 0.0]), GRID)
        with pytest.raises(ValidationError):
            propagate_time_local(table, np.array([1.5, -0.5]), GRID)
        with pytest.raises(ValidationError, match="shape"):
            propagate_time_local(table, np.array([1.0, 0.0, 0.0]), GRID)
