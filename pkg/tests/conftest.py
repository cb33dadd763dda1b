"""Shared fixtures and independent brute-force oracles for the test suite.

The oracles deliberately avoid the library's fast paths: maximum independent
sets are found by bitmask branch and bound, SNR optima by exhaustive
enumeration over binary configurations with quantized phase grids.
"""

from __future__ import annotations

import math

import numpy as np
import pytest

from irsma import channel as ch
from irsma import scenario as sc
from irsma.config import SolverConfig

WAVELENGTH = 0.1


# ---------------------------------------------------------------------------
# brute-force maximum independent set
# ---------------------------------------------------------------------------

def brute_force_mis(n: int, pairs) -> int:
    """Exact maximum-independent-set size by branch and bound on bitmasks."""
    adj = [0] * n
    for a, b in pairs:
        adj[a] |= 1 << b
        adj[b] |= 1 << a
    best = 0

    def rec(avail: int, size: int) -> None:
        nonlocal best
        if size + avail.bit_count() <= best:
            return
        if avail == 0:
            best = max(best, size)
            return
        v = (avail & -avail).bit_length() - 1
        rec(avail & ~((1 << v) | adj[v]), size + 1)
        rec(avail & ~(1 << v), size)

    rec((1 << n) - 1, 0)
    return best


# ---------------------------------------------------------------------------
# quantized-phase exhaustive SNR oracles
# ---------------------------------------------------------------------------

def phase_combos(n: int, levels: int = 16) -> np.ndarray:
    """All unit-modulus vectors with phases on a uniform grid, (levels^n, n)."""
    angles = 2.0 * np.pi * np.arange(levels) / levels
    grids = np.meshgrid(*([angles] * n), indexing="ij")
    return np.exp(1j * np.stack(grids, axis=-1).reshape(-1, n))


def oracle_best_worst_snr(psi_samples, x, z_mask, pbar, levels: int = 16) -> float:
    """Max over quantized phases of the minimum per-sample SNR.

    ``psi_samples`` is (S, N, M); the beamformer is implicit through the
    per-antenna power sum (maximum-ratio combining over selected antennas).
    """
    n = psi_samples.shape[1]
    v_all = phase_combos(n, levels)
    worst = np.full(v_all.shape[0], np.inf)
    for s in range(psi_samples.shape[0]):
        a = np.conj(v_all) @ (z_mask[:, None] * psi_samples[s])
        snrs = pbar * (np.abs(a) ** 2 @ x)
        worst = np.minimum(worst, snrs)
    return float(worst.max())


def feasible_x_columns(scenario: sc.Scenario):
    """All binary occupancy columns satisfying conflicts and the packing cap."""
    m = scenario.grid.count
    for mask in range(1 << m):
        col = np.array([(mask >> i) & 1 for i in range(m)], dtype=float)
        if col.sum() > scenario.max_ma:
            continue
        if any(col[a] and col[b] for a, b in scenario.conflicts.pairs):
            continue
        yield col


def oracle_costmin(scenario: sc.Scenario, channels, levels: int = 16) -> float:
    """Exhaustive minimum cost over binary (z, x) with quantized phases.

    Single-area scenarios only; phases for each site subset are enumerated
    jointly over every element of the selected sites.
    """
    assert len(scenario.areas) == 1
    area = scenario.areas[0]
    cost = scenario.cost
    psi = channels.psi[0]
    best = math.inf
    x_cols = list(feasible_x_columns(scenario))
    for z_mask_bits in range(1, 1 << len(scenario.sites)):
        z = np.array([(z_mask_bits >> i) & 1 for i in range(len(scenario.sites))],
                     dtype=float)
        z_cost = sum(z[i] * (s.install_cost + cost.element_unit * s.max_elements)
                     for i, s in enumerate(scenario.sites))
        if z_cost >= best:
            continue
        zm = channels.element_mask(z)
        v_all = phase_combos(channels.n_total, levels)
        gains = []
        for s in range(psi.shape[0]):
            a = np.conj(v_all) @ (zm[:, None] * psi[s])
            gains.append(np.abs(a) ** 2)
        for col in x_cols:
            if col.sum() == 0:
                continue
            config_cost = cost.ma_unit * col.sum() + z_cost
            if config_cost >= best:
                continue
            worst = np.inf
            for g in gains:
                worst = min(worst, float((g @ col).max()))
                if scenario.radio.pbar * worst < area.snr_threshold:
                    break
            if scenario.radio.pbar * worst >= area.snr_threshold * (1.0 - 1e-9):
                best = config_cost
    return best


# ---------------------------------------------------------------------------
# tiny scenario builders
# ---------------------------------------------------------------------------

def tiny_grid(m_side: int = 2, step: float = WAVELENGTH / 2) -> sc.MaGrid:
    return sc.build_ma_grid((m_side - 1) * step if m_side > 1 else step, step)


def make_tiny_scenario(rng: np.random.Generator | None = None, *,
                       n_sites: int = 1, elements: tuple = ((1, 4),),
                       threshold: float | None = None,
                       threshold_fraction: float = 0.3,
                       ma_unit: float = 3.0,
                       site_costs: tuple | None = None,
                       phase_levels: int = 16) -> sc.Scenario:
    """Small single-area scenario with a single sample point.

    When ``threshold`` is None it is set to ``threshold_fraction`` times the
    full-configuration quantized-phase optimum so instances stay feasible but
    non-trivial.
    """
    rng = rng or np.random.default_rng(0)
    radio = sc.RadioConstants(wavelength=WAVELENGTH, transmit_power=0.1,
                              noise_power=1e-12)
    grid = tiny_grid()
    conflicts = sc.conflict_set(grid, WAVELENGTH / 2)
    if site_costs is None:
        site_costs = tuple(float(rng.integers(4, 9)) for _ in range(n_sites))
    sites = []
    for i in range(n_sites):
        pos = np.array([rng.uniform(3.0, 10.0), rng.uniform(-8.0, 8.0),
                        rng.uniform(3.0, 10.0)])
        rows, cols = elements[i % len(elements)]
        sites.append(sc.IrsSite(index=i, position=pos, orientation="vertical",
                                rows=rows, cols=cols, spacing=WAVELENGTH / 2,
                                install_cost=site_costs[i],
                                facing_azimuth=rng.uniform(-0.5, 0.5)))
    corner = np.array([rng.uniform(20.0, 40.0), rng.uniform(-10.0, 10.0)])
    area = sc.TargetArea(index=0, corner=corner, extent=1.0, resolution=2.0,
                         snr_threshold=1.0)
    scenario = sc.Scenario(radio=radio, grid=grid, conflicts=conflicts,
                           sites=tuple(sites), areas=(area,),
                           cost=sc.CostModel(ma_unit=ma_unit, element_unit=1.0))
    if threshold is None:
        channels = ch.build_channels(scenario)
        z_mask = np.ones(channels.n_total)
        x_full = np.ones(scenario.grid.count)
        smax = oracle_best_worst_snr(channels.psi[0], x_full, z_mask,
                                     radio.pbar, phase_levels)
        threshold = threshold_fraction * smax
    area = sc.TargetArea(index=0, corner=corner, extent=1.0, resolution=2.0,
                         snr_threshold=threshold)
    return scenario.with_areas([area])


@pytest.fixture(scope="session")
def default_scenario_small():
    """Default geometry with fixed areas, shared across fast tests."""
    return sc.default_scenario()


@pytest.fixture(scope="session")
def default_channels(default_scenario_small):
    return ch.build_channels(default_scenario_small)


@pytest.fixture(scope="session")
def quick_config():
    return SolverConfig()
