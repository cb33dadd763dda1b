"""Element-level refinement: drop redundant IRS elements from a feasible plan.

Holds the plan's MA occupancy, site selection and phases fixed and shrinks
the per-element installation indicators through a penalized SCA loop on the
element-quadratic SNR form, followed by rounding, a true-quadratic audit,
greedy re-adding when a sample falls short, and a leave-one-out trim.  The
acceptance gate always uses the true quadratic form: the first-order
surrogate under-estimates it, so a configuration that passes the surrogate
could still fail the truth.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import channel as ch
from . import conic
from .config import SolverConfig
from .costmin import Plan
from .feasibility import SubproblemError, TraceRecord
from .scenario import DeploymentSolution, Scenario, cost_breakdown, total_cost


@dataclass
class PruneState:
    """SCA iterates for the installation indicators."""

    y: np.ndarray                  # (N,) in [0, 1], 0 on unselected sites
    y_ref: np.ndarray
    nu: float
    c_fixed: float                 # MA cost plus per-site install costs


def build_q(scenario: Scenario, channels: ch.ChannelSet, plan: Plan,
            area: int, sample: int) -> np.ndarray:
    """Hermitian element Gram matrix at one sample for the plan's config."""
    z_mask = channels.element_mask(plan.z)
    return ch.element_gram(channels.psi[area][sample], plan.x[:, area],
                           z_mask, plan.v[area])


def _cascades(scenario: Scenario, channels: ch.ChannelSet, plan: Plan) -> list:
    """Per-area stacks of element cascade rows, (S, N, M)."""
    z_mask = channels.element_mask(plan.z)
    out = []
    for j in range(len(scenario.areas)):
        c = np.stack([ch.element_cascade(channels.psi[j][s], plan.x[:, j],
                                         z_mask, plan.v[j])
                      for s in range(channels.psi[j].shape[0])])
        out.append(c)
    return out


def _true_snrs(cascades: list, y: np.ndarray, pbar: float) -> list:
    """Per-area per-sample SNR of the exact quadratic form."""
    out = []
    for c in cascades:
        a = np.einsum("snm,n->sm", c, y)
        out.append(pbar * np.sum(np.abs(a) ** 2, axis=1))
    return out


def _floor(cascades, y, scenario):
    vals = _true_snrs(cascades, y, scenario.radio.pbar)
    return min(v.min() / max(a.snr_threshold, 1e-300)
               for v, a in zip(vals, scenario.areas)) if vals else np.inf


def prune_subproblem(state: PruneState, cascades: list, scenario: Scenario,
                     config: SolverConfig, allowed: np.ndarray) -> None:
    """One LP step shrinking the indicators under the linearized SNR rows.

    ``allowed`` marks elements of selected sites; the rest stay pinned at 0.
    """
    n = state.y.size
    pbar = scenario.radio.pbar
    spec = conic.LinearProgramSpec.empty(n)
    spec.upper[:] = allowed.astype(float)
    spec.objective[:] = -scenario.cost.element_unit
    spec.objective -= state.nu * (1.0 - 2.0 * state.y_ref)

    for j, area in enumerate(scenario.areas):
        c = cascades[j]
        t = np.einsum("snm,n->sm", np.conj(c), state.y_ref)
        w = np.real(np.einsum("snm,sm->sn", c, t))         # Re(Q y_ref)
        quad_ref = np.sum(np.abs(t) ** 2, axis=1)
        all_idx = np.arange(n)
        for s in range(c.shape[0]):
            spec.add_row(all_idx, -2.0 * pbar * w[s],
                         -area.snr_threshold - pbar * quad_ref[s])

    out = conic.solve_lp(spec, config.solver_tol)
    if out.status == "infeasible":
        raise SubproblemError("pruning LP infeasible despite feasible expansion point")
    if not out.ok:
        raise SubproblemError(f"pruning LP came back {out.status}")
    state.y = np.clip(out.x, 0.0, 1.0)
    state.y_ref = state.y.copy()


def _greedy_readd(cascades, y, allowed, scenario, config):
    """Re-add the element with the largest worst-sample marginal gain."""
    target = 1.0 - config.audit_rel_tol
    order_pool = np.flatnonzero(allowed & (y < 0.5))
    for _ in range(order_pool.size + 1):
        if _floor(cascades, y, scenario) >= target:
            return y, True
        pool = np.flatnonzero(allowed & (y < 0.5))
        if pool.size == 0:
            return y, False
        # worst (area, sample) under the current indicators
        pbar = scenario.radio.pbar
        worst = None
        for j, area in enumerate(scenario.areas):
            snrs = _true_snrs([cascades[j]], y, pbar)[0]
            ratio = snrs / max(area.snr_threshold, 1e-300)
            s = int(np.argmin(ratio))
            if worst is None or ratio[s] < worst[0]:
                worst = (ratio[s], j, s)
        _, j, s = worst
        c = cascades[j][s]
        a = y @ c
        gains = np.abs(a[None, :] + c[pool]) ** 2
        delta = gains.sum(axis=1) - np.sum(np.abs(a) ** 2)
        pick = pool[int(np.argmax(delta))]
        y = y.copy()
        y[pick] = 1.0
    return y, _floor(cascades, y, scenario) >= target


def _leave_one_out_trim(cascades, y, scenario, config):
    """Drop installed elements while the true quadratic stays above threshold."""
    target = 1.0 - config.audit_rel_tol
    pbar = scenario.radio.pbar
    y = y.copy()
    while True:
        installed = np.flatnonzero(y > 0.5)
        if installed.size == 0:
            break
        # floor after removing each installed element, via |a - c_n|^2
        floors = np.full(installed.size, np.inf)
        for j, area in enumerate(scenario.areas):
            c = cascades[j]
            a = np.einsum("snm,n->sm", c, y)
            base = np.sum(np.abs(a) ** 2, axis=1)
            cand = c[:, installed, :]
            cross = 2.0 * np.real(np.einsum("sm,skm->sk", np.conj(a), cand))
            selfsq = np.sum(np.abs(cand) ** 2, axis=2)
            snr_wo = pbar * (base[:, None] - cross + selfsq)
            floors = np.minimum(floors, snr_wo.min(axis=0)
                                / max(area.snr_threshold, 1e-300))
        best = int(np.argmax(floors))
        if floors[best] < target:
            break
        y[installed[best]] = 0.0
    return y


def run_pruning(plan: Plan, scenario: Scenario, config: SolverConfig | None = None,
                channels: ch.ChannelSet | None = None) -> Plan:
    """Penalized SCA loop over the indicators, then round, audit, repair, trim."""
    config = config or SolverConfig()
    channels = channels or ch.build_channels(scenario)
    cascades = _cascades(scenario, channels, plan)
    allowed = channels.element_mask(plan.z) > 0.5

    sol_in = DeploymentSolution(x=plan.x, z=plan.z, v=plan.v, y=plan.y)
    input_cost = total_cost(sol_in, scenario.cost, list(scenario.sites))
    c_fixed = input_cost - scenario.cost.element_unit * float(plan.y.sum())

    y0 = allowed.astype(float)
    state = PruneState(y=y0.copy(), y_ref=y0.copy(),
                       nu=config.penalty_init_scale * max(scenario.cost.element_unit, 1.0),
                       c_fixed=c_fixed)
    trace = []
    converged = False
    for outer in range(config.max_outer):
        prev = None
        for inner in range(config.max_inner):
            prune_subproblem(state, cascades, scenario, config, allowed)
            cost_now = (c_fixed + scenario.cost.element_unit * state.y.sum()
                        + state.nu * np.sum(state.y * (1.0 - state.y)))
            viol = float(np.max(state.y * (1.0 - state.y))) if state.y.size else 0.0
            trace.append(TraceRecord(outer, inner, state.nu, 0.0, cost_now, viol))
            if prev is not None and abs(cost_now - prev) <= config.inner_tol * max(1.0, abs(prev)):
                break
            prev = cost_now
        viol = float(np.max(state.y * (1.0 - state.y))) if state.y.size else 0.0
        if viol < config.binary_tol:
            converged = True
            break
        state.nu *= config.penalty_growth
        # expansion at the rounded, repaired pattern keeps the next LP anchored
        y_round = (state.y >= config.rounding_threshold).astype(float) * allowed
        y_round, ok = _greedy_readd(cascades, y_round, allowed, scenario, config)
        if ok:
            state.y_ref = y_round

    y_final = (state.y >= config.rounding_threshold).astype(float) * allowed
    y_final, ok = _greedy_readd(cascades, y_final, allowed, scenario, config)
    if not ok:
        y_final = allowed.astype(float)
    y_final = _leave_one_out_trim(cascades, y_final, scenario, config)

    sol = DeploymentSolution(x=plan.x, z=plan.z, v=plan.v, y=y_final)
    pruned_cost = total_cost(sol, scenario.cost, list(scenario.sites))
    if pruned_cost > input_cost:
        y_final = plan.y.copy()
        sol = DeploymentSolution(x=plan.x, z=plan.z, v=plan.v, y=y_final)
        pruned_cost = input_cost

    audit = ch.audit_snr_table(scenario, plan.x, plan.z, plan.v, y=y_final)
    feasible = all(audit[j].min() >= a.snr_threshold * (1.0 - config.audit_rel_tol)
                   for j, a in enumerate(scenario.areas))
    return Plan(x=plan.x.copy(), z=plan.z.copy(), v=[vj.copy() for vj in plan.v],
                y=y_final, cost=pruned_cost,
                breakdown=cost_breakdown(sol, scenario.cost, list(scenario.sites)),
                snr_audit=audit, feasible=feasible, converged=converged,
                trace=trace)
