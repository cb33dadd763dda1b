"""Element-pruning tests: Gram construction, LP step, refinement loop."""

import numpy as np
import pytest

from irsma import channel as ch
from irsma import scenario as sc
from irsma.config import SolverConfig
from irsma.costmin import run_costmin
from irsma.feasibility import run_feasibility, square_lower_bound
from irsma.pruning import build_q, run_pruning
from conftest import make_tiny_scenario


@pytest.fixture(scope="module")
def solved_default():
    scenario = sc.default_scenario()
    channels = ch.build_channels(scenario)
    config = SolverConfig()
    init = run_feasibility(scenario, config, channels=channels)
    plan = run_costmin(scenario, config, init=init, channels=channels)
    return scenario, channels, config, plan


class TestBuildQ:
    def test_all_ones_reproduces_audited_snr(self, solved_default):
        scenario, channels, config, plan = solved_default
        for j in (0, 1):
            for smp in (0, 17, 35):
                q = build_q(scenario, channels, plan, j, smp)
                ones = np.ones(channels.n_total)
                quad = scenario.radio.pbar * float(np.real(ones @ q @ ones))
                assert quad == pytest.approx(plan.snr_audit[j][smp], rel=1e-9)

    def test_unselected_site_rows_are_zero(self, solved_default):
        scenario, channels, config, plan = solved_default
        q = build_q(scenario, channels, plan, 0, 3)
        start = 0
        for i, site in enumerate(scenario.sites):
            n = site.max_elements
            block = q[start:start + n]
            if plan.z[i] == 0:
                assert np.allclose(block, 0.0)
                assert np.allclose(q[:, start:start + n], 0.0)
            start += n

    def test_hermitian_with_nonnegative_diagonal(self, solved_default):
        scenario, channels, config, plan = solved_default
        q = build_q(scenario, channels, plan, 1, 11)
        assert np.allclose(q, np.conj(q.T))
        assert np.all(np.diag(q).real >= -1e-18)


class TestPruneLoop:
    def test_indicator_surrogate_sound(self):
        rng = np.random.default_rng(0)
        vals = rng.uniform(0, 1, 2000)
        refs = rng.uniform(0, 1, 2000)
        assert np.all(square_lower_bound(vals, refs) <= vals ** 2 + 1e-12)
        assert np.allclose(square_lower_bound(refs, refs), refs ** 2)

    def test_zero_threshold_removes_everything(self):
        rng = np.random.default_rng(1)
        scenario = make_tiny_scenario(rng, threshold_fraction=0.2)
        channels = ch.build_channels(scenario)
        config = SolverConfig()
        plan = run_costmin(scenario, config, channels=channels)
        area = scenario.areas[0]
        relaxed = sc.TargetArea(index=0, corner=area.corner, extent=area.extent,
                                resolution=area.resolution, snr_threshold=0.0)
        scen0 = scenario.with_areas([relaxed])
        chan0 = ch.build_channels(scen0)
        pruned = run_pruning(plan, scen0, config, channels=chan0)
        assert pruned.y.sum() == 0
        fixed = (scen0.cost.ma_unit * plan.x.sum(axis=0).max()
                 + sum(plan.z[i] * s.install_cost for i, s in enumerate(scen0.sites)))
        assert pruned.cost == pytest.approx(fixed)

    def test_large_margins_remove_elements(self):
        # plan sized for a target 10 dB higher, then audited at the lower one:
        # plenty of slack, so elements must go on at least one selected site
        scenario = sc.default_scenario(snr_threshold_db=15.0)
        channels = ch.build_channels(scenario)
        config = SolverConfig()
        plan = run_costmin(scenario, config, channels=channels)
        relaxed_areas = [sc.TargetArea(index=a.index, corner=a.corner,
                                       extent=a.extent, resolution=a.resolution,
                                       snr_threshold=a.snr_threshold / 10.0)
                         for a in scenario.areas]
        scen_low = scenario.with_areas(relaxed_areas)
        chan_low = ch.build_channels(scen_low)
        pruned = run_pruning(plan, scen_low, config, channels=chan_low)
        assert pruned.feasible
        per_site_installed = []
        start = 0
        for site in scen_low.sites:
            n = site.max_elements
            per_site_installed.append(int(pruned.y[start:start + n].sum()))
            start += n
        selected = [i for i, zi in enumerate(plan.z) if zi > 0.5]
        assert any(per_site_installed[i] < scen_low.sites[i].max_elements
                   for i in selected)
        assert pruned.cost < plan.cost

    def test_tight_plan_left_unchanged(self):
        rng = np.random.default_rng(2)
        scenario = make_tiny_scenario(rng, elements=((1, 2),),
                                      threshold_fraction=0.45)
        channels = ch.build_channels(scenario)
        config = SolverConfig()
        plan = run_costmin(scenario, config, channels=channels)
        # leave-one-out: confirm every installed element is load-bearing
        pruned = run_pruning(plan, scenario, config, channels=channels)
        z_mask = channels.element_mask(plan.z)
        removable = []
        for k in np.flatnonzero(plan.y > 0.5):
            y_try = plan.y.copy()
            y_try[k] = 0.0
            audit = ch.audit_snr_table(scenario, plan.x, plan.z, plan.v, y=y_try)
            ok = all(audit[j].min() >= a.snr_threshold * (1 - 1e-6)
                     for j, a in enumerate(scenario.areas))
            if ok:
                removable.append(k)
        if not removable:
            assert pruned.cost == plan.cost
            assert np.array_equal(pruned.y, plan.y)

    def test_monotone_cost_and_audit_safety(self, solved_default):
        scenario, channels, config, plan = solved_default
        pruned = run_pruning(plan, scenario, config, channels=channels)
        assert pruned.cost <= plan.cost
        assert pruned.feasible
        # safety: audit of the exact binary indicators with the true quadratic
        for j, area in enumerate(scenario.areas):
            assert pruned.snr_audit[j].min() >= area.snr_threshold * (1 - 1e-6)
        assert np.all((pruned.y == 0) | (pruned.y == 1))
        # indicators respect site selection exactly
        assert np.all(pruned.y <= channels.element_mask(pruned.z) + 1e-12)
