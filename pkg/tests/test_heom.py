import numpy as np
import pytest

from gmemed.errors import ConvergenceError, ValidationError
from gmemed.heom import ADOHierarchy, HeomConfig, heom_converge, heom_propagate
from gmemed.model import BathSpec, ModuleSpec, SystemSpec

from oracles import unitary_site_populations


def fmo4(temperature, lam=35.0, couplings=True):
    bath = BathSpec(lam, 106.0, temperature)
    m1 = ModuleSpec("m1", [12400.0, 12520.0], [[0.0, -87.0], [-87.0, 0.0]])
    m2 = ModuleSpec("m2", [12200.0, 12310.0], [[0.0, -53.0], [-53.0, 0.0]])
    inter = {
        ((0, 0), (1, 0)): 5.0,
        ((0, 0), (1, 1)): -5.0,
        ((0, 1), (1, 0)): 30.0,
        ((0, 1), (1, 1)): 8.0,
    } if couplings else {}
    return SystemSpec((m1, m2), inter, bath)


class TestConfig:
    def test_validation(self):
        with pytest.raises(ValidationError):
            HeomConfig(hierarchy_depth=0)
        with pytest.raises(ValidationError):
            HeomConfig(hierarchy_depth=4, matsubara_count=-1)
        with pytest.raises(ValidationError):
            HeomConfig(hierarchy_depth=4, terminator="pade")
        with pytest.raises(ValidationError):
            HeomConfig(hierarchy_depth=4, time_step=-1.0)

    def test_ado_count(self):
        config = HeomConfig(hierarchy_depth=8, matsubara_count=1)
        assert config.n_modes(4) == 8
        assert config.ado_count(4) == 12870  # C(16, 8)

    def test_budget_enforced(self):
        config = HeomConfig(hierarchy_depth=12, matsubara_count=3,
                            memory_budget_bytes=10**6)
        with pytest.raises(ValidationError, match="budget"):
            config.check_budget(4)


class TestDynamics:
    def test_uncoupled_sites_stay_put(self):
        system = SystemSpec(
            (ModuleSpec("a", [12400.0], [[0.0]]), ModuleSpec("b", [12300.0], [[0.0]])),
            {}, BathSpec(35.0, 106.0, 300.0))
        config = HeomConfig(hierarchy_depth=3, horizon=0.5, time_step=1e-3)
        trajectory = heom_propagate(system, config, (0, 0))
        assert np.allclose(trajectory.populations[:, 0], 1.0, atol=1e-12)
        assert np.allclose(trajectory.populations[:, 1], 0.0, atol=1e-12)

    def test_vanishing_bath_matches_unitary_evolution(self):
        system = fmo4(300.0, lam=1e-6)
        config = HeomConfig(hierarchy_depth=2, horizon=1.0, time_step=1e-3)
        trajectory = heom_propagate(system, config, (0, 0))
        sample = slice(0, trajectory.grid.size, 100)
        expected = unitary_site_populations(
            system.full_hamiltonian(), 0, trajectory.grid[sample])
        assert np.max(np.abs(trajectory.site_populations[sample] - expected)) < 1e-4

    def test_trace_and_hermiticity_drift(self):
        system = fmo4(300.0)
        config = HeomConfig(hierarchy_depth=4, horizon=1.0, time_step=1e-3)
        trajectory = heom_propagate(system, config, (0, 0))
        assert trajectory.metadata["conservation_drift"] < 1e-8
        assert trajectory.metadata["hermiticity_drift"] < 1e-10

    def test_med_sums_sites(self):
        system = fmo4(300.0)
        config = HeomConfig(hierarchy_depth=4, horizon=0.5, time_step=1e-3)
        trajectory = heom_propagate(system, config, (0, 1))
        med = trajectory.site_populations[:, :2].sum(axis=1)
        assert np.allclose(med, trajectory.populations[:, 0], atol=1e-12)
        assert trajectory.populations[0, 0] == pytest.approx(1.0)

    def test_invalid_initial_site(self):
        system = fmo4(300.0)
        config = HeomConfig(hierarchy_depth=2)
        with pytest.raises(ValidationError, match="initial site"):
            heom_propagate(system, config, (0, 5))
        with pytest.raises(ValidationError, match="initial site"):
            heom_propagate(system, config, (3, 0))

    def test_site_oscillations_module_monotone(self):
        system = fmo4(300.0)
        config = HeomConfig(hierarchy_depth=4, horizon=1.0, time_step=1e-3)
        trajectory = heom_propagate(system, config, (0, 0))
        site1 = trajectory.site_populations[:, 0]
        changes = np.diff(np.sign(np.diff(site1[:400])))
        assert np.count_nonzero(changes) >= 3
        med = trajectory.populations[:, 0]
        after = trajectory.grid > 0.05
        assert np.all(np.diff(med[after]) < 1e-6)


class TestHierarchyStructure:
    def test_scaling_constants(self):
        system = fmo4(300.0)
        config = HeomConfig(hierarchy_depth=2, matsubara_count=0)
        hierarchy = ADOHierarchy(system, config)
        assert hierarchy.n_ado == config.ado_count(4)
        zero = np.all(hierarchy.indices == 0, axis=1)
        assert zero[0] and zero.sum() == 1
        assert hierarchy.scaling[0] == pytest.approx(1.0)
        assert np.all(hierarchy.scaling > 0)

    def test_terminator_consistency(self):
        # the tail correction at K=1 reproduces explicit K=2 modes
        system = fmo4(150.0)
        compare = np.linspace(0.0, 1.0, 101)
        meds = {}
        for matsubara in (1, 2):
            config = HeomConfig(hierarchy_depth=4, matsubara_count=matsubara,
                                horizon=1.0, time_step=1e-3)
            meds[matsubara] = heom_propagate(system, config, (0, 0)).resample(compare)
        assert np.max(np.abs(meds[1] - meds[2])) < 1.5e-3

    def test_markovian_closure_differs_without_tail(self):
        system = fmo4(150.0)
        compare = np.linspace(0.0, 1.0, 101)
        results = {}
        for terminator in ("ishizaki_tanimura", "markovian_closure"):
            config = HeomConfig(hierarchy_depth=4, matsubara_count=0,
                                terminator=terminator, horizon=1.0, time_step=1e-3)
            results[terminator] = heom_propagate(system, config, (0, 0)).resample(compare)
        gap = np.max(np.abs(results["ishizaki_tanimura"] - results["markovian_closure"]))
        assert gap > 1e-3  # the correction visibly matters at 150 K


class TestConvergence:
    def test_uncoupled_converges_at_minimum_depth(self):
        system = fmo4(300.0, couplings=False)
        base = HeomConfig(hierarchy_depth=1, horizon=0.2, time_step=1e-3)
        config = heom_converge(system, base, (0, 0))
        assert config.hierarchy_depth == 1

    def test_budget_exhaustion_reports_delta(self):
        system = fmo4(300.0)
        base = HeomConfig(hierarchy_depth=2, horizon=0.2, time_step=1e-3,
                          memory_budget_bytes=200_000)
        with pytest.raises(ConvergenceError, match="budget"):
            heom_converge(system, base, (0, 0))

    def test_fmo_convergence_depth(self):
        system = fmo4(300.0)
        base = HeomConfig(hierarchy_depth=2, matsubara_count=0, horizon=1.0,
                          time_step=1e-3)
        config = heom_converge(system, base, (0, 0))
        assert 2 <= config.hierarchy_depth <= 10
        assert config.matsubara_count == 0
