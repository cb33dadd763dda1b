"""Comparison schemes and the budget-constrained worst-case-SNR variant.

Every scheme reuses the feasibility / cost-minimization machinery and ends
with an independent SNR re-audit of its raw binaries and phases.  Worst-case
SNR reported per area is the minimum over that area's samples, in dB.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import channel as ch
from .config import SolverConfig
from .costmin import (MarginState, DeploymentState, Plan, _aligned_block,
                      _greedy_trim, _polish_phases, deployment_subproblem,
                      run_costmin)
from .feasibility import (FeasibilityState, aligned_phases, initial_layout,
                          normalized_floor, phase_subproblem, run_feasibility)
from .scenario import (CostModel, DeploymentSolution, Scenario, linear_to_db,
                       total_cost)


@dataclass
class SchemeResult:
    scheme: str
    cost: float
    worst_snr_db: np.ndarray          # per area
    ma_count: int                     # shared hardware: max over areas
    ma_counts: np.ndarray             # per area
    site_count: int
    element_count: int
    feasible: bool
    x: np.ndarray | None = None       # raw binaries for independent re-audit
    z: np.ndarray | None = None
    v: list | None = None
    y: np.ndarray | None = None
    notes: dict = field(default_factory=dict)


def _result_from_plan(scheme: str, plan: Plan, scenario: Scenario) -> SchemeResult:
    return SchemeResult(scheme=scheme, cost=plan.cost,
                        worst_snr_db=plan.worst_snr_db(),
                        ma_count=int(plan.x.sum(axis=0).max()),
                        ma_counts=plan.x.sum(axis=0).astype(int),
                        site_count=int(plan.z.sum()),
                        element_count=int(plan.y.sum()),
                        feasible=plan.feasible,
                        x=plan.x, z=plan.z, v=plan.v, y=plan.y)


def _infeasible(scheme: str, scenario: Scenario, **notes) -> SchemeResult:
    n_areas = len(scenario.areas)
    return SchemeResult(scheme=scheme, cost=np.inf,
                        worst_snr_db=np.full(n_areas, -np.inf),
                        ma_count=0, ma_counts=np.zeros(n_areas, dtype=int),
                        site_count=0, element_count=0, feasible=False,
                        notes=dict(notes))


# ---------------------------------------------------------------------------
# per-area union
# ---------------------------------------------------------------------------

def per_area_union(scenario: Scenario, config: SolverConfig | None = None) -> SchemeResult:
    """Optimize each area independently; charge the union of the hardware.

    Deployment cost uses the union of the selected sites and the maximum MA
    count over the per-area plans.  Serving an area activates every deployed
    site, so the audit extends each per-area phase solution coherently over
    the extra sites and re-polishes when needed.
    """
    config = config or SolverConfig()
    plans = []
    for j, area in enumerate(scenario.areas):
        single = scenario.with_areas([area])
        chs = ch.build_channels(single)
        report = run_feasibility(single, config, channels=chs)
        if not report.feasible:
            return _infeasible("per-area-union", scenario, failed_area=j)
        plans.append((single, chs, run_costmin(single, config, init=report, channels=chs)))

    z_union = np.zeros(len(scenario.sites))
    for _, _, plan in plans:
        z_union = np.maximum(z_union, plan.z)
    ma_counts = np.array([int(p.x.sum(axis=0).max()) for _, _, p in plans])
    ma_count = int(ma_counts.max())
    cost = scenario.cost.ma_unit * ma_count + sum(
        z_union[i] * (s.install_cost + scenario.cost.element_unit * s.max_elements)
        for i, s in enumerate(scenario.sites))

    # audit each area against the full union deployment
    worst_db = np.empty(len(scenario.areas))
    feasible = True
    x_cols, v_cols = [], []
    for j, (single, chs, plan) in enumerate(plans):
        x_col = plan.x[:, :1]
        v_j = plan.v[0].copy()
        sls = chs.site_slices()
        for l in range(len(scenario.sites)):
            if z_union[l] > 0.5 and plan.z[l] < 0.5:
                v_j[sls[l]] = _aligned_block(single, chs, 0, l, x_col[:, 0], v_j, plan.z)
        floor, _ = normalized_floor(chs, single, x_col, [v_j], z_union)
        if floor < 1.0 - config.audit_rel_tol:
            polish = MarginState(v=[v_j], beta=np.zeros(1), delta=[None],
                                 xi=1.0 / max(config.penalty_init_scale, 1e-6))
            _polish_phases(polish, chs, single, config, x_col, z_union, passes=3)
            v_j = polish.v[0]
        audit = ch.audit_snr_table(single, x_col, z_union, [v_j])[0]
        worst_db[j] = linear_to_db(audit.min())
        feasible &= bool(audit.min() >= single.areas[0].snr_threshold
                         * (1.0 - config.audit_rel_tol))
        x_cols.append(x_col[:, 0])
        v_cols.append(v_j)

    return SchemeResult(scheme="per-area-union", cost=float(cost),
                        worst_snr_db=worst_db, ma_count=ma_count,
                        ma_counts=ma_counts, site_count=int(z_union.sum()),
                        element_count=int(sum(z_union[i] * s.max_elements
                                              for i, s in enumerate(scenario.sites))),
                        feasible=feasible,
                        x=np.stack(x_cols, axis=1), z=z_union, v=v_cols,
                        y=np.repeat(z_union, [s.max_elements for s in scenario.sites]))


# ---------------------------------------------------------------------------
# all sites deployed
# ---------------------------------------------------------------------------

def all_irs(scenario: Scenario, config: SolverConfig | None = None) -> SchemeResult:
    """Deploy every candidate site; optimize only MA occupancy and phases."""
    config = config or SolverConfig()
    chs = ch.build_channels(scenario)
    report = run_feasibility(scenario, config, channels=chs)
    if not report.feasible:
        return _infeasible("all-irs", scenario)
    plan = run_costmin(scenario, config, init=report, channels=chs, freeze_z=True)
    return _result_from_plan("all-irs", plan, scenario)


# ---------------------------------------------------------------------------
# fixed-position antennas
# ---------------------------------------------------------------------------

def _fpa_scenario(scenario: Scenario, kappa: float | None) -> Scenario:
    kappa = scenario.cost.fpa_ratio if kappa is None else kappa
    cost = CostModel(ma_unit=kappa * scenario.cost.ma_unit,
                     element_unit=scenario.cost.element_unit, fpa_ratio=kappa)
    return replace(scenario, cost=cost)


def fpa_layout(scenario: Scenario) -> np.ndarray:
    """Fully populated packing-limit layout replicated across areas."""
    return initial_layout(scenario)


def fpa_irs(scenario: Scenario, config: SolverConfig | None = None,
            kappa: float | None = None) -> SchemeResult:
    """Antennas at every packing-limit grid point; sites and phases optimized."""
    config = config or SolverConfig()
    scen = _fpa_scenario(scenario, kappa)
    x_frozen = fpa_layout(scen)
    chs = ch.build_channels(scen)
    report = run_feasibility(scen, config, channels=chs, frozen_x=x_frozen)
    if not report.feasible:
        return _infeasible("fpa-irs", scenario)
    plan = run_costmin(scen, config, init=report, channels=chs, frozen_x=x_frozen)
    res = _result_from_plan("fpa-irs", plan, scen)
    res.notes["kappa"] = scen.cost.fpa_ratio
    return res


# ---------------------------------------------------------------------------
# budget-constrained worst-case SNR maximization
# ---------------------------------------------------------------------------

def min_feasible_budget(scenario: Scenario, fixed_antennas: bool = False) -> float:
    """Cheapest hardware able to deliver any nonzero SNR to every area.

    One MA (reused across areas) or the full fixed layout, plus the cheapest
    site bundle.  ``scenario.cost.ma_unit`` must already carry the
    fixed-antenna unit price when ``fixed_antennas`` is set.
    """
    site_min = min(s.install_cost + scenario.cost.element_unit * s.max_elements
                   for s in scenario.sites)
    antennas = scenario.max_ma if fixed_antennas else 1
    return scenario.cost.ma_unit * antennas + site_min


def _config_cost(x, z, scenario):
    return (scenario.cost.ma_unit * x.sum(axis=0).max()
            + sum(z[i] * (s.install_cost + scenario.cost.element_unit * s.max_elements)
                  for i, s in enumerate(scenario.sites)))


def _budget_candidate(x, z, v, budget, channels, scenario, config, frozen_x):
    """Greedy budget-respecting construction around the rounded iterate.

    Drops the weakest hardware until affordable, then spends leftover budget
    on the best floor-gain additions.
    """
    sls = channels.site_slices()
    x = x.copy()
    z = z.copy()
    v = [vj.copy() for vj in v]
    # enforce affordability: shed antennas, then sites, weakest first
    while _config_cost(x, z, scenario) > budget + 1e-9:
        if frozen_x is None and x.sum() > len(scenario.areas):
            counts = x.sum(axis=0)
            for j in np.flatnonzero(counts >= counts.max() - 1e-9):
                sel = np.flatnonzero(x[:, j] > 0.5)
                if sel.size > 1:
                    z_mask = channels.element_mask(z)
                    gains = np.abs(np.einsum("snm,n->sm", channels.psi[j],
                                             np.conj(v[j]) * z_mask)) ** 2
                    weakest = min(sel, key=lambda mm: (gains[:, mm].sum(), mm))
                    x[weakest, j] = 0.0
            continue
        on = np.flatnonzero(z > 0.5)
        if on.size == 0:
            break
        weakest = min(on, key=lambda l: (scenario.sites[l].install_cost, l))
        z[weakest] = 0.0
    if np.flatnonzero(z > 0.5).size == 0:
        cheapest = min(range(len(scenario.sites)),
                       key=lambda l: (scenario.sites[l].install_cost
                                      + scenario.cost.element_unit
                                      * scenario.sites[l].max_elements, l))
        z_try = z.copy()
        z_try[cheapest] = 1.0
        if _config_cost(x, z_try, scenario) <= budget + 1e-9:
            z = z_try
            for j in range(len(scenario.areas)):
                v[j][sls[cheapest]] = _aligned_block(scenario, channels, j, cheapest,
                                                     x[:, j], v[j], z)
    # spend leftover budget greedily on the best floor gain per move
    for _ in range(scenario.grid.count * len(scenario.areas) + len(scenario.sites)):
        floor, _ = normalized_floor(channels, scenario, x, v, z)
        moves = []
        if frozen_x is None:
            z_mask = channels.element_mask(z)
            for j in range(len(scenario.areas)):
                sel = x[:, j] > 0.5
                blocked = set()
                for (a, b) in scenario.conflicts.pairs:
                    if sel[a]:
                        blocked.add(b)
                    if sel[b]:
                        blocked.add(a)
                if sel.sum() >= scenario.max_ma:
                    continue
                gains = np.abs(np.einsum("snm,n->sm", channels.psi[j],
                                         np.conj(v[j]) * z_mask)) ** 2
                worst = int(np.argmin(gains @ x[:, j]))
                cands = [m for m in range(scenario.grid.count)
                         if not sel[m] and m not in blocked]
                if not cands:
                    continue
                best = max(cands, key=lambda m: (gains[worst, m], -m))
                x_try = x.copy()
                x_try[best, j] = 1.0
                if _config_cost(x_try, z, scenario) <= budget + 1e-9:
                    f_try, _ = normalized_floor(channels, scenario, x_try, v, z)
                    moves.append((f_try, "x", (best, j)))
        for l in range(len(scenario.sites)):
            if z[l] > 0.5:
                continue
            z_try = z.copy()
            z_try[l] = 1.0
            if _config_cost(x, z_try, scenario) > budget + 1e-9:
                continue
            v_try = [vj.copy() for vj in v]
            for j in range(len(scenario.areas)):
                v_try[j][sls[l]] = _aligned_block(scenario, channels, j, l,
                                                  x[:, j], v_try[j], z)
            f_try, _ = normalized_floor(channels, scenario, x, v_try, z_try)
            moves.append((f_try, "z", (l, v_try)))
        moves = [mv for mv in moves if mv[0] > floor * (1.0 + 1e-9)]
        if not moves:
            break
        moves.sort(key=lambda mv: (-mv[0], mv[1]))
        _, kind, payload = moves[0]
        if kind == "x":
            mm, j = payload
            x[mm, j] = 1.0
        else:
            l, v_try = payload
            z[l] = 1.0
            v = v_try
    return x, z, v


def budget_snr_max(scenario: Scenario, config: SolverConfig | None = None,
                   budget: float = 0.0, fixed_antennas: bool = False,
                   kappa: float | None = None,
                   warm: tuple | None = None) -> SchemeResult:
    """Maximize the worst-case normalized SNR under a total-cost allowance.

    ``fixed_antennas`` prices and pins the fully populated layout.  ``warm``
    may carry (x, z, v) from a smaller budget; the result never falls below
    the warm configuration's floor, which makes budget sweeps monotone.
    """
    config = config or SolverConfig()
    scen = _fpa_scenario(scenario, kappa) if fixed_antennas else scenario
    frozen_x = fpa_layout(scen) if fixed_antennas else None
    scheme = "fpa-budget" if fixed_antennas else "ma-budget"

    floor_budget = min_feasible_budget(scen, fixed_antennas=fixed_antennas)
    if budget + 1e-9 < floor_budget:
        res = _infeasible(scheme, scen, budget=budget, min_feasible_budget=floor_budget)
        return res

    chs = ch.build_channels(scen)
    full_x = initial_layout(scen) if frozen_x is None else frozen_x
    full_cost = _config_cost(full_x, np.ones(len(scen.sites)), scen)
    if budget + 1e-9 >= full_cost:
        # allowance covers everything: identical to the plain feasibility check
        report = run_feasibility(scen, config, channels=chs, frozen_x=frozen_x)
        res = SchemeResult(scheme=scheme, cost=float(full_cost),
                           worst_snr_db=report.worst_snr_db,
                           ma_count=int(report.x.sum(axis=0).max()),
                           ma_counts=report.ma_counts,
                           site_count=len(scen.sites),
                           element_count=scen.num_elements,
                           feasible=True, x=report.x,
                           z=np.ones(len(scen.sites)), v=report.v,
                           y=np.ones(scen.num_elements),
                           notes={"budget": budget, "eta": report.eta})
        return res

    # start from a greedy affordable configuration
    x0 = full_x.copy() if frozen_x is None else frozen_x.copy()
    v0 = [aligned_phases(scen, x0[:, j], j) for j in range(len(scen.areas))]
    x0, z0, v0 = _budget_candidate(x0, np.ones(len(scen.sites)), v0, budget,
                                   chs, scen, config, frozen_x)
    if warm is not None:
        wx, wz, wv = warm
        f_warm, _ = normalized_floor(chs, scen, wx, wv, wz)
        f_init, _ = normalized_floor(chs, scen, x0, v0, z0)
        if _config_cost(wx, wz, scen) <= budget + 1e-9 and f_warm > f_init:
            x0, z0, v0 = wx.copy(), wz.copy(), [vj.copy() for vj in wv]

    gamma_scale = max(max(a.snr_threshold for a in scen.areas), 1e-6)
    state = DeploymentState(x=x0.copy(), z=z0.copy(), s=None,
                            t=float(x0.sum(axis=0).max()),
                            zeta=config.penalty_init_scale * max(budget, 1.0))
    fstate = FeasibilityState(x=x0.copy(), v=[vj.copy() for vj in v0],
                              eta=0.0, delta=np.zeros((len(scen.areas), chs.n_total)),
                              rho=config.penalty_init_scale * gamma_scale,
                              lam=config.penalty_init_scale * gamma_scale)
    margin = MarginState(v=fstate.v, beta=np.zeros(len(scen.areas)),
                         delta=[None] * len(scen.areas), xi=fstate.lam)

    best = (x0, z0, v0)
    best_floor, _ = normalized_floor(chs, scen, x0, v0, z0)
    for outer in range(max(2, config.max_outer // 2)):
        for inner in range(config.max_inner):
            status = deployment_subproblem(state, chs, scen, config, margin,
                                           frozen_x=frozen_x, budget=budget,
                                           maximize_floor=True)
            if status != "optimal":
                break
            fstate.x = state.x
            phase_subproblem(fstate, chs, scen, config, z=state.z)
            margin.v = fstate.v
            margin.v_ref = [vj.copy() for vj in fstate.v]
            if inner >= 1:
                break
        x_c, z_c, v_c = _budget_candidate(state.x.round(), state.z.round(),
                                          margin.v, budget, chs, scen, config, frozen_x)
        polish = MarginState(v=[vj.copy() for vj in v_c],
                             beta=np.zeros(len(scen.areas)),
                             delta=[None] * len(scen.areas), xi=margin.xi)
        _polish_phases(polish, chs, scen, config, x_c, z_c, passes=2)
        f_c, _ = normalized_floor(chs, scen, x_c, polish.v, z_c)
        f_raw, _ = normalized_floor(chs, scen, x_c, v_c, z_c)
        if f_raw > f_c:
            polish.v = v_c
            f_c = f_raw
        if f_c > best_floor:
            best = (x_c, z_c, polish.v)
            best_floor = f_c
        state.zeta *= config.penalty_growth
        fstate.lam *= config.penalty_growth
        margin.xi = fstate.lam
        state.x_ref = x_c.copy()
        state.z_ref = z_c.copy()

    x_b, z_b, v_b = best
    audit = ch.audit_snr_table(scen, x_b, z_b, v_b)
    worst = np.array([linear_to_db(a.min()) for a in audit])
    cost = _config_cost(x_b, z_b, scen)
    return SchemeResult(scheme=scheme, cost=float(cost), worst_snr_db=worst,
                        ma_count=int(x_b.sum(axis=0).max()),
                        ma_counts=x_b.sum(axis=0).astype(int),
                        site_count=int(z_b.sum()),
                        element_count=int(sum(z_b[i] * s.max_elements
                                              for i, s in enumerate(scen.sites))),
                        feasible=bool(np.all(np.isfinite(worst)) and z_b.sum() > 0),
                        x=x_b, z=z_b, v=v_b,
                        y=np.repeat(z_b, [s.max_elements for s in scen.sites]),
                        notes={"budget": budget,
                               "min_feasible_budget": floor_budget})


# ---------------------------------------------------------------------------
# joint schemes, for symmetric reporting
# ---------------------------------------------------------------------------

def joint_ma_irs(scenario: Scenario, config: SolverConfig | None = None) -> SchemeResult:
    """The main joint design: feasibility init, then cost minimization."""
    config = config or SolverConfig()
    chs = ch.build_channels(scenario)
    report = run_feasibility(scenario, config, channels=chs)
    if not report.feasible:
        return _infeasible("joint", scenario)
    plan = run_costmin(scenario, config, init=report, channels=chs)
    return _result_from_plan("joint", plan, scenario)


def pruned_joint(scenario: Scenario, config: SolverConfig | None = None) -> SchemeResult:
    """Joint design followed by element pruning."""
    from .pruning import run_pruning

    config = config or SolverConfig()
    chs = ch.build_channels(scenario)
    report = run_feasibility(scenario, config, channels=chs)
    if not report.feasible:
        return _infeasible("pruned", scenario)
    plan = run_costmin(scenario, config, init=report, channels=chs)
    pruned = run_pruning(plan, scenario, config, channels=chs)
    return _result_from_plan("pruned", pruned, scenario)
