"""Deployment-cost minimization under per-area SNR requirements.

Alternates a penalized deployment LP over MA occupancy, site selection and
the convex-hull-linearized trilinear products with a per-area SNR-margin
SOCP over the phases, inside the same outer penalty escalation used by the
feasibility check.  The feasibility solution initializes the loop; terminal
rounding is followed by an independent audit and, when needed, a greedy
restore of the cheapest useful hardware.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import channel as ch
from . import conic
from .config import SolverConfig
from .feasibility import (FeasibilityReport, SubproblemError, TraceRecord,
                          aligned_phases, binary_violation, modulus_violation,
                          normalized_floor, round_occupancy)
from .scenario import (DeploymentSolution, Scenario, cost_breakdown,
                       linear_to_db, total_cost)

Z_ACTIVE_TOL = 1e-6


class PlanInfeasibleError(RuntimeError):
    """The SNR requirements cannot be met, so no plan exists."""


@dataclass
class DeploymentState:
    """Deployment-LP iterates: occupancy, selection, linearized products."""

    x: np.ndarray                  # (M, J)
    z: np.ndarray                  # (L,)
    s: np.ndarray | None           # (P, M, J) products for site pairs l <= l'
    t: float                       # epigraph of the max MA count
    zeta: float
    eta: float = 0.0               # normalized floor, budget mode only
    x_ref: np.ndarray = None
    z_ref: np.ndarray = None

    def __post_init__(self):
        if self.x_ref is None:
            self.x_ref = self.x.copy()
        if self.z_ref is None:
            self.z_ref = self.z.copy()


@dataclass
class MarginState:
    """Phase-step iterates: per-area phases, margins and hinge slacks."""

    v: list
    beta: np.ndarray
    delta: list
    xi: float
    v_ref: list = None

    def __post_init__(self):
        if self.v_ref is None:
            self.v_ref = [vj.copy() for vj in self.v]


@dataclass
class Plan:
    """A complete audited deployment."""

    x: np.ndarray
    z: np.ndarray
    v: list
    y: np.ndarray                  # per-element installation indicators
    cost: float
    breakdown: dict
    snr_audit: list                # per area, reference SNR at every sample
    feasible: bool
    converged: bool
    trace: list = field(default_factory=list)

    def worst_snr_db(self) -> np.ndarray:
        return np.array([linear_to_db(a.min()) for a in self.snr_audit])

    def margins_db(self, scenario: Scenario) -> list:
        out = []
        for j, area in enumerate(scenario.areas):
            thr = max(area.snr_threshold, 1e-300)
            out.append(10.0 * np.log10(np.maximum(self.snr_audit[j] / thr, 1e-300)))
        return out


def site_pairs(n_sites: int) -> list:
    return [(l, lp) for l in range(n_sites) for lp in range(l, n_sites)]


# ---------------------------------------------------------------------------
# deployment subproblem
# ---------------------------------------------------------------------------

def deployment_subproblem(state: DeploymentState, channels: ch.ChannelSet,
                          scenario: Scenario, config: SolverConfig,
                          margin: MarginState, *, freeze_z: bool = False,
                          frozen_x: np.ndarray | None = None,
                          budget: float | None = None,
                          maximize_floor: bool = False) -> str:
    """One LP update of (x, z, s) with phases fixed.

    Returns the solve status.  ``freeze_z`` pins every site on (products
    collapse onto the occupancy variables); ``frozen_x`` pins the occupancy
    (products collapse onto one variable per site pair); ``maximize_floor``
    switches the objective to the normalized-SNR floor, used with ``budget``.
    """
    m = scenario.grid.count
    n_areas = len(scenario.areas)
    n_sites = len(scenario.sites)
    pbar = scenario.radio.pbar
    cost = scenario.cost
    site_cost = np.array([s.install_cost + cost.element_unit * s.max_elements
                          for s in scenario.sites])

    pairs = site_pairs(n_sites)
    n_pairs = len(pairs)
    has_x = frozen_x is None
    has_z = not freeze_z

    idx = 0
    x_base = idx if has_x else None
    idx += m * n_areas if has_x else 0
    z_base = idx if has_z else None
    idx += n_sites if has_z else 0
    if has_x and has_z:
        s_base = idx
        idx += n_pairs * m * n_areas
    elif has_z:
        s_base = idx            # collapsed: one product variable per pair
        idx += n_pairs
    else:
        s_base = None
    t_i = idx if has_x else None
    idx += 1 if has_x else 0
    eta_i = idx if maximize_floor else None
    idx += 1 if maximize_floor else 0
    spec = conic.LinearProgramSpec.empty(idx)
    spec.upper[:] = 1.0
    if t_i is not None:
        spec.upper[t_i] = float(scenario.max_ma)
    if eta_i is not None:
        spec.upper[eta_i] = config.eta_cap

    def s_index(p, mm, j):
        if has_x and has_z:
            return s_base + (p * n_areas + j) * m + mm
        return s_base + p

    # objective (conic layer maximizes, so costs enter negated)
    if maximize_floor:
        spec.objective[eta_i] = 1.0
        if has_x:
            spec.objective[x_base:x_base + m * n_areas] = \
                -state.zeta * (1.0 - 2.0 * state.x_ref.T.ravel())
        if has_z:
            spec.objective[z_base:z_base + n_sites] += \
                -state.zeta * (1.0 - 2.0 * state.z_ref)
    else:
        if t_i is not None:
            spec.objective[t_i] = -cost.ma_unit
        if has_z:
            spec.objective[z_base:z_base + n_sites] = -site_cost \
                - state.zeta * (1.0 - 2.0 * state.z_ref)
        if has_x:
            spec.objective[x_base:x_base + m * n_areas] = \
                -state.zeta * (1.0 - 2.0 * state.x_ref.T.ravel())

    # budget row: MA hardware + selected sites within the allowance
    if budget is not None:
        fixed = 0.0
        row_idx, row_coef = [], []
        if has_x:
            row_idx.append(t_i)
            row_coef.append(cost.ma_unit)
        else:
            # fixed-antenna mode: the caller prices ma_unit per installed FPA
            fixed = cost.ma_unit * float(np.asarray(frozen_x)[:, 0].sum())
        if has_z:
            row_idx.extend(range(z_base, z_base + n_sites))
            row_coef.extend(site_cost)
        spec.add_row(row_idx, row_coef, budget - fixed)

    # SNR rows
    x_fixed = None if has_x else np.asarray(frozen_x, dtype=float)
    for j, area in enumerate(scenario.areas):
        thr = area.snr_threshold
        if maximize_floor:
            scale = pbar / max(thr, 1e-300)
            rhs_const = 0.0
        else:
            scale = pbar
            rhs_const = thr
        slices = channels.site_slices()
        for smp in range(channels.psi[j].shape[0]):
            _, prod = ch.site_pair_products(channels.psi[j][smp], slices, margin.v[j])
            coef = np.real(prod)                      # (P, M)
            for p, (l, lp) in enumerate(pairs):
                if l != lp:
                    coef[p] *= 2.0
            if has_z:
                if has_x:
                    cols = np.concatenate([s_index(p, np.arange(m), j)
                                           for p in range(n_pairs)])
                    vals = -scale * coef.ravel()
                else:
                    cols = s_base + np.arange(n_pairs)
                    vals = -scale * (coef @ x_fixed[:, j])
            else:
                # all sites on: products collapse to the per-antenna gains
                cols = x_base + j * m + np.arange(m)
                vals = -scale * coef.sum(axis=0)
            if maximize_floor:
                cols = np.concatenate([cols, [eta_i]])
                vals = np.concatenate([vals, [1.0]])
            spec.add_row(cols, vals, -rhs_const)

    # convex-hull rows for the products s = z_l z_l' x
    if has_z and s_base is not None and has_x:
        for p, (l, lp) in enumerate(pairs):
            for j in range(n_areas):
                cols_s = s_index(p, np.arange(m), j)
                for mm in range(m):
                    si = cols_s[mm]
                    xi_ = x_base + j * m + mm
                    spec.add_row([si, z_base + l], [1.0, -1.0], 0.0)
                    if lp != l:
                        spec.add_row([si, z_base + lp], [1.0, -1.0], 0.0)
                    spec.add_row([si, xi_], [1.0, -1.0], 0.0)
                    if lp != l:
                        spec.add_row([si, z_base + l, z_base + lp, xi_],
                                     [-1.0, 1.0, 1.0, 1.0], 2.0)
                    else:
                        spec.add_row([si, z_base + l, xi_], [-1.0, 2.0, 1.0], 2.0)
    elif has_z and not has_x:
        for p, (l, lp) in enumerate(pairs):
            si = s_base + p
            spec.add_row([si, z_base + l], [1.0, -1.0], 0.0)
            if lp != l:
                spec.add_row([si, z_base + lp], [1.0, -1.0], 0.0)
                spec.add_row([si, z_base + l, z_base + lp], [-1.0, 1.0, 1.0], 1.0)
            else:
                spec.add_row([si, z_base + l], [-1.0, 2.0], 1.0)

    if has_x:
        for j in range(n_areas):
            base = x_base + j * m
            spec.add_row(np.concatenate([base + np.arange(m), [t_i]]),
                         np.concatenate([np.ones(m), [-1.0]]), 0.0)
            for (a, b) in scenario.conflicts.pairs:
                spec.add_row([base + a, base + b], [1.0, 1.0], 1.0)
            spec.add_row(base + np.arange(m), np.ones(m), float(scenario.max_ma))
    if has_z:
        spec.add_row(z_base + np.arange(n_sites), np.ones(n_sites), float(n_sites))

    out = conic.solve_lp(spec, config.solver_tol)
    if out.status != "optimal":
        return out.status

    if has_x:
        state.x = out.x[x_base:x_base + m * n_areas].reshape(n_areas, m).T.copy()
        state.t = float(out.x[t_i])
        state.x_ref = state.x.copy()
    else:
        state.x = x_fixed.copy()
        state.t = float(x_fixed[:, 0].sum())
    if has_z:
        state.z = out.x[z_base:z_base + n_sites].copy()
        state.z_ref = state.z.copy()
        if has_x:
            state.s = out.x[s_base:s_base + n_pairs * m * n_areas].reshape(
                n_pairs, n_areas, m).transpose(0, 2, 1).copy()
    if eta_i is not None:
        state.eta = float(out.x[eta_i])
    return "optimal"


# ---------------------------------------------------------------------------
# margin subproblem
# ---------------------------------------------------------------------------

def margin_subproblem(margin: MarginState, channels: ch.ChannelSet,
                      scenario: Scenario, config: SolverConfig,
                      x: np.ndarray, z: np.ndarray) -> bool:
    """Per-area SOCP maximizing SNR margins over the deployed elements.

    Sites with negligible selection weight keep their phases; element rows
    of partially selected sites are weighted by the current z.  Returns
    False when no site is active while a positive threshold remains.
    """
    pbar = scenario.radio.pbar
    active = np.flatnonzero(np.asarray(z) > Z_ACTIVE_TOL)
    if active.size == 0:
        return all(a.snr_threshold <= 0 for a in scenario.areas)
    slices = channels.site_slices()
    sel = np.concatenate([np.arange(slices[l].start, slices[l].stop) for l in active])
    z_mask = channels.element_mask(z)[sel]

    for j, area in enumerate(scenario.areas):
        n_act = sel.size
        lift = conic.ComplexLift(n_act, base=0)
        beta_i = 2 * n_act
        delta_base = beta_i + 1
        num_vars = delta_base + n_act
        spec = conic.LinearProgramSpec.empty(num_vars)
        spec.lower[:beta_i] = -np.inf
        spec.upper[:] = np.inf
        # fractional selections mid-loop can leave no non-negative margin;
        # letting beta dip to -threshold keeps the step feasible while still
        # rewarding margin growth (non-negative again once selections settle)
        spec.lower[beta_i] = -area.snr_threshold
        spec.objective[beta_i] = 1.0
        spec.objective[delta_base:] = -margin.xi
        cone = conic.ConeProgramSpec(lp=spec)

        v_ref = margin.v_ref[j][sel]
        col_w = np.sqrt(np.clip(x[:, j], 0.0, None))
        px = channels.psi[j][:, sel, :] * col_w[None, None, :] * z_mask[None, :, None]
        t = np.einsum("snm,n->sm", np.conj(px), v_ref)
        w = np.einsum("snm,sm->sn", px, t)
        quad_ref = np.sum(np.abs(t) ** 2, axis=1)
        for smp in range(px.shape[0]):
            idx, coef = lift.real_inner(w[smp])
            spec.add_row(np.concatenate([idx, [beta_i]]),
                         np.concatenate([-2.0 * pbar * coef, [1.0]]),
                         -pbar * quad_ref[smp] - area.snr_threshold)
        for e in range(n_act):
            spec.add_row([lift.re_index(e), lift.im_index(e), delta_base + e],
                         [-2.0 * v_ref[e].real, -2.0 * v_ref[e].imag, -1.0],
                         -1.0 - abs(v_ref[e]) ** 2)
            cone.add_cone(*lift.unit_disc(e))

        out = conic.solve_socp(cone, config.solver_tol)
        if out.status == "infeasible":
            return False
        if not out.ok:
            raise SubproblemError(f"margin SOCP came back {out.status} for area {j}")
        vj = margin.v[j].copy()
        vj[sel] = lift.unpack(out.x)
        margin.v[j] = vj
        margin.beta[j] = float(out.x[beta_i])
        margin.delta[j] = out.x[delta_base:]
        margin.v_ref[j] = vj.copy()
    return True


# ---------------------------------------------------------------------------
# main loop
# ---------------------------------------------------------------------------

def _penalized_cost(state: DeploymentState, scenario: Scenario) -> float:
    cost = scenario.cost
    site_cost = np.array([s.install_cost + cost.element_unit * s.max_elements
                          for s in scenario.sites])
    raw = cost.ma_unit * state.x.sum(axis=0).max() + float(site_cost @ state.z)
    pen = state.zeta * (np.sum(state.x * (1.0 - state.x))
                        + np.sum(state.z * (1.0 - state.z)))
    return raw + pen


def run_costmin(scenario: Scenario, config: SolverConfig | None = None,
                init: FeasibilityReport | None = None,
                channels: ch.ChannelSet | None = None,
                freeze_z: bool = False,
                frozen_x: np.ndarray | None = None) -> Plan:
    """Minimize deployment cost subject to every sample meeting its threshold.

    ``init`` must be a feasible report from the feasibility check (it is
    computed on the fly when omitted).  ``freeze_z`` keeps every candidate
    site deployed; ``frozen_x`` pins the MA occupancy (fixed-antenna mode).
    """
    from .feasibility import run_feasibility

    config = config or SolverConfig()
    channels = channels or ch.build_channels(scenario)
    if init is None:
        init = run_feasibility(scenario, config, channels=channels,
                               frozen_x=frozen_x)
    if not init.feasible:
        raise PlanInfeasibleError(
            "SNR requirements unreachable even with all sites and the packing-limit MA count")

    n_areas = len(scenario.areas)
    n_sites = len(scenario.sites)
    x = init.x.copy() if frozen_x is None else np.asarray(frozen_x, dtype=float)
    z = np.ones(n_sites)
    gamma_scale = max(max(a.snr_threshold for a in scenario.areas), 1e-6)
    sol0 = DeploymentSolution(x=x, z=z, v=init.v)
    init_cost = total_cost(sol0, scenario.cost, list(scenario.sites))

    state = DeploymentState(x=x.copy(), z=z.copy(), s=None, t=float(x.sum(axis=0).max()),
                            zeta=config.penalty_init_scale * max(init_cost, 1.0))
    margin = MarginState(v=[vj.copy() for vj in init.v], beta=np.zeros(n_areas),
                         delta=[None] * n_areas,
                         xi=config.penalty_init_scale * gamma_scale)

    trace = []
    converged = False
    best = _snapshot(state, margin)
    last_candidate = None
    for outer in range(config.max_outer):
        prev = _penalized_cost(state, scenario)
        for inner in range(config.max_inner):
            status = deployment_subproblem(state, channels, scenario, config, margin,
                                           freeze_z=freeze_z, frozen_x=frozen_x)
            if status == "infeasible":
                # incumbent phases cannot support the thresholds: restore the
                # last deployable iterate and widen the margins once more
                _restore(state, margin, best)
                margin_subproblem(margin, channels, scenario, config, state.x, state.z)
                status = deployment_subproblem(state, channels, scenario, config, margin,
                                               freeze_z=freeze_z, frozen_x=frozen_x)
                if status != "optimal":
                    break
            elif status != "optimal":
                raise SubproblemError(f"deployment LP came back {status}")
            if not margin_subproblem(margin, channels, scenario, config, state.x, state.z):
                _restore(state, margin, best)
                break
            best = _snapshot(state, margin)
            current = _penalized_cost(state, scenario)
            viol = _violation(state, margin, freeze_z)
            trace.append(TraceRecord(outer, inner, state.zeta, margin.xi, current, viol))
            if abs(current - prev) <= config.inner_tol * max(1.0, abs(prev)):
                break
            prev = current
        viol = _violation(state, margin, freeze_z)
        if viol < config.binary_tol:
            converged = True
            break
        state.zeta *= config.penalty_growth
        margin.xi *= config.penalty_growth
        candidate = _recenter_cost(state, margin, channels, scenario, config,
                                   freeze_z, frozen_x)
        if candidate is not None and last_candidate is not None \
                and np.array_equal(candidate[0], last_candidate[0]) \
                and np.array_equal(candidate[1], last_candidate[1]):
            # guidance is stable; further escalation only reconfirms it
            break
        last_candidate = candidate

    plan = _finalize_plan(state, margin, channels, scenario, config, init,
                          converged, trace, freeze_z=freeze_z, frozen_x=frozen_x,
                          init_cost=init_cost)
    return plan


def _snapshot(state, margin):
    return (state.x.copy(), state.z.copy(), [v.copy() for v in margin.v])


def _restore(state, margin, snap):
    state.x = snap[0].copy()
    state.z = snap[1].copy()
    state.x_ref = state.x.copy()
    state.z_ref = state.z.copy()
    margin.v = [v.copy() for v in snap[2]]
    margin.v_ref = [v.copy() for v in snap[2]]


def _violation(state, margin, freeze_z):
    viol = binary_violation(state.x)
    if not freeze_z:
        viol = max(viol, binary_violation(state.z))
    active = np.flatnonzero(state.z > 0.5)
    if active.size:
        viol = max(viol, modulus_violation([vj for vj in margin.v]))
    return viol


def _recenter_cost(state, margin, channels, scenario, config, freeze_z, frozen_x):
    """Re-anchor the expansion points at a constructively rounded candidate.

    The convex-hull relaxation is loose at fractional points, so the LP can
    satisfy the SNR rows with selection mass spread thinly across sites; the
    linear penalty then has no reason to concentrate it.  Expanding at a
    feasible binary candidate gives the escalated penalty a concrete
    attractor.  Returns the candidate, or None when construction failed.
    """
    x_c, z_c, v_c, ok = _constructive_candidate(
        state.x, state.z, margin.v, channels, scenario, config,
        frozen_x=frozen_x, freeze_z=freeze_z)
    if not ok:
        for j, vj in enumerate(margin.v_ref):
            mags = np.abs(vj)
            margin.v_ref[j] = np.where(mags > 1e-12, vj / np.where(mags > 1e-12, mags, 1.0), 1.0)
        return None
    state.x = x_c.copy()
    state.z = z_c.copy()
    state.x_ref = x_c.copy()
    state.z_ref = z_c.copy()
    margin.v = [vj.copy() for vj in v_c]
    margin.v_ref = [vj.copy() for vj in v_c]
    return x_c, z_c


# ---------------------------------------------------------------------------
# rounding, audit and repair
# ---------------------------------------------------------------------------

def _polish_phases(margin, channels, scenario, config, x, z, passes=2):
    for _ in range(passes):
        if not margin_subproblem(margin, channels, scenario, config, x, z):
            return
    for j, vj in enumerate(margin.v):
        mags = np.abs(vj)
        margin.v[j] = np.where(mags > 1e-12, vj / np.where(mags > 1e-12, mags, 1.0), 1.0)
        margin.v_ref[j] = margin.v[j].copy()


def _audit_pass(scenario, audit, rel_tol):
    for j, area in enumerate(scenario.areas):
        if audit[j].min() < area.snr_threshold * (1.0 - rel_tol):
            return False
    return True


def _greedy_restore(x, z, v, channels, scenario, config, frozen_x, forbid=()):
    """Restore single variables with the best worst-sample gain per unit cost.

    Sites listed in ``forbid`` are not considered for re-adding.
    """
    cost = scenario.cost
    z_mask = channels.element_mask(z)
    for _ in range(scenario.grid.count * len(scenario.areas) + len(scenario.sites)):
        floor, _ = normalized_floor(channels, scenario, x, v, z)
        if floor >= 1.0 - config.audit_rel_tol:
            return x, z, v, True
        # locate the worst (area, sample)
        worst = None
        for j, area in enumerate(scenario.areas):
            gains = np.abs(np.einsum("snm,n->sm", channels.psi[j],
                                     np.conj(v[j]) * z_mask)) ** 2
            snrs = scenario.radio.pbar * (gains @ x[:, j])
            ratio = snrs / max(area.snr_threshold, 1e-300)
            smp = int(np.argmin(ratio))
            if worst is None or ratio[smp] < worst[0]:
                worst = (ratio[smp], j, smp, gains)
        _, j, smp, gains = worst
        candidates = []
        if frozen_x is None:
            sel = x[:, j] > 0.5
            blocked = set()
            for (a, b) in scenario.conflicts.pairs:
                if sel[a]:
                    blocked.add(b)
                if sel[b]:
                    blocked.add(a)
            if sel.sum() < scenario.max_ma:
                thr = max(scenario.areas[j].snr_threshold, 1e-300)
                for mm in range(scenario.grid.count):
                    if sel[mm] or mm in blocked:
                        continue
                    new_count = x[:, j].sum() + 1
                    extra = cost.ma_unit if new_count > x.sum(axis=0).max() else 0.0
                    # normalized units, commensurate with the site floor gains
                    gain = scenario.radio.pbar * gains[smp, mm] / thr
                    candidates.append((gain / max(extra, 1e-9), "x", (mm, j), gain))
        sls = channels.site_slices()
        for l, site in enumerate(scenario.sites):
            if z[l] > 0.5 or l in forbid:
                continue
            z_try = z.copy()
            z_try[l] = 1.0
            v_try = [vj.copy() for vj in v]
            for jj in range(len(scenario.areas)):
                v_try[jj][sls[l]] = _aligned_block(scenario, channels, jj, l,
                                                   x[:, jj], v_try[jj], z)
            floor_try, _ = normalized_floor(channels, scenario, x, v_try, z_try)
            gain = floor_try - floor
            extra = site.install_cost + cost.element_unit * site.max_elements
            candidates.append((gain / extra, "z", (l, v_try), gain))
        candidates = [c for c in candidates if c[3] > 0]
        if not candidates:
            return x, z, v, False
        candidates.sort(key=lambda c: (-c[0], c[1], str(c[2][0])))
        _, kind, payload, _ = candidates[0]
        if kind == "x":
            mm, jj = payload
            x[mm, jj] = 1.0
        else:
            l, v_try = payload
            z[l] = 1.0
            v = v_try
            z_mask = channels.element_mask(z)
    return x, z, v, False


def _greedy_trim(x, z, v, channels, scenario, config, frozen_x, freeze_z,
                 protect=()):
    """Drop hardware whose removal keeps every sample above its threshold.

    Sites are tried most expensive first; the shared MA count is lowered one
    unit at a time by shedding the weakest antenna of every area currently
    at the maximum.  Sites in ``protect`` are never removed.
    """
    target = 1.0 - config.audit_rel_tol
    cost = scenario.cost
    if not freeze_z:
        order = sorted(range(len(scenario.sites)),
                       key=lambda l: (-(scenario.sites[l].install_cost
                                        + cost.element_unit * scenario.sites[l].max_elements), l))
        for l in order:
            if l in protect or z[l] < 0.5 or z.sum() <= 1:
                continue
            z_try = z.copy()
            z_try[l] = 0.0
            floor, _ = normalized_floor(channels, scenario, x, v, z_try)
            if floor >= target:
                z = z_try
    if frozen_x is None:
        z_mask = channels.element_mask(z)
        while True:
            counts = x.sum(axis=0)
            cmax = counts.max()
            if cmax <= 1:
                break
            x_try = x.copy()
            for j in np.flatnonzero(counts >= cmax - 1e-9):
                gains = np.abs(np.einsum("snm,n->sm", channels.psi[j],
                                         np.conj(v[j]) * z_mask)) ** 2
                sel = np.flatnonzero(x_try[:, j] > 0.5)
                weakest = min(sel, key=lambda mm: (gains[:, mm].sum(), mm))
                x_try[weakest, j] = 0.0
            floor, _ = normalized_floor(channels, scenario, x_try, v, z)
            if floor >= target:
                x = x_try
            else:
                break
    return x, z, v


def _aligned_block(scenario, channels, j, l, x_col, v_j, z):
    """Centroid-aligned phases for site ``l``, rotated coherent with the
    incumbent sites' field at the area centroid."""
    radio = scenario.radio
    target = scenario.areas[j].centroid()
    sls = channels.site_slices()
    sel = np.flatnonzero(x_col > 0.5)
    if sel.size == 0:
        sel = np.arange(scenario.grid.count)
    center = scenario.grid.points.mean(axis=0)
    ref = sel[np.argmin(np.linalg.norm(scenario.grid.points[sel] - center, axis=1))]

    def centroid_column(site):
        return (ch.irs_user_channel(site, target, radio)
                * ch.bs_irs_channel(site, scenario.grid, radio)[:, ref])

    col = centroid_column(scenario.sites[l])
    mags = np.abs(col)
    blk = np.where(mags > 0, col / np.where(mags > 0, mags, 1.0), 1.0)
    a_inc = 0.0 + 0.0j
    for i, site in enumerate(scenario.sites):
        if i == l or z[i] <= 0.5:
            continue
        a_inc += np.sum(np.conj(v_j[sls[i]]) * centroid_column(site))
    if abs(a_inc) > 0:
        blk = blk * np.exp(-1j * np.angle(a_inc))
    return blk


def _plan_cost_of(x, z, scenario):
    cost = scenario.cost
    site_cost = np.array([s.install_cost + cost.element_unit * s.max_elements
                          for s in scenario.sites])
    return cost.ma_unit * x.sum(axis=0).max() + float(site_cost @ z)


def _exchange_pass(x, z, v, channels, scenario, config, frozen_x, freeze_z):
    """Cost-driven site add/remove moves with antenna re-trim / restore.

    Adding a site can pay for itself by letting several antennas go; removing
    one can be compensated by cheap antennas.  Moves are accepted only when
    the audited floor survives and the total cost strictly drops.
    """
    if freeze_z or frozen_x is not None:
        return x, z, v
    target = 1.0 - config.audit_rel_tol
    sls = channels.site_slices()
    for _ in range(2 * len(scenario.sites)):
        base_cost = _plan_cost_of(x, z, scenario)
        moves = []
        for l in range(len(scenario.sites)):
            protect = ()
            if z[l] > 0.5:
                if z.sum() <= 1:
                    continue
                z_try = z.copy()
                z_try[l] = 0.0
                x_t, z_t, v_t, ok = _greedy_restore(
                    x.copy(), z_try, [vj.copy() for vj in v],
                    channels, scenario, config, frozen_x, forbid=(l,))
                if not ok:
                    continue
            else:
                z_t = z.copy()
                z_t[l] = 1.0
                v_t = [vj.copy() for vj in v]
                for jj in range(len(scenario.areas)):
                    v_t[jj][sls[l]] = _aligned_block(scenario, channels, jj, l,
                                                     x[:, jj], v_t[jj], z)
                x_t = x.copy()
                protect = (l,)
            polish = MarginState(v=[vj.copy() for vj in v_t],
                                 beta=np.zeros(len(scenario.areas)),
                                 delta=[None] * len(scenario.areas),
                                 xi=1.0 / max(config.penalty_init_scale, 1e-6))
            _polish_phases(polish, channels, scenario, config, x_t, z_t, passes=1)
            floor, _ = normalized_floor(channels, scenario, x_t, polish.v, z_t)
            if floor >= target:
                v_t = polish.v
            x_t, z_t, v_t = _greedy_trim(x_t, z_t, v_t, channels, scenario,
                                         config, frozen_x, freeze_z, protect=protect)
            floor, _ = normalized_floor(channels, scenario, x_t, v_t, z_t)
            if floor < target:
                continue
            new_cost = _plan_cost_of(x_t, z_t, scenario)
            if new_cost < base_cost - 1e-9:
                moves.append((new_cost, l, x_t, z_t, v_t))
        if not moves:
            break
        moves.sort(key=lambda mv: (mv[0], mv[1]))
        _, _, x, z, v = moves[0]
    return x, z, v


def _constructive_candidate(x_frac, z_frac, v, channels, scenario, config,
                            frozen_x, freeze_z):
    """Round, greedily restore feasibility, then trim redundant hardware."""
    z_round = np.ones(len(scenario.sites)) if freeze_z \
        else (np.asarray(z_frac) >= config.rounding_threshold).astype(float)
    v_round = []
    for vj in v:
        mags = np.abs(vj)
        v_round.append(np.where(mags > 1e-12, vj / np.where(mags > 1e-12, mags, 1.0), 1.0))
    if frozen_x is not None:
        x_round = np.asarray(frozen_x, dtype=float).copy()
    else:
        z_eval = z_round if z_round.sum() else np.ones_like(z_round)
        z_mask = channels.element_mask(z_eval)
        x_round = np.zeros_like(x_frac)
        for j in range(len(scenario.areas)):
            gains = np.abs(np.einsum("snm,n->sm", channels.psi[j],
                                     np.conj(v_round[j]) * z_mask)) ** 2
            x_round[:, j] = round_occupancy(x_frac[:, j], scenario,
                                            gains.sum(axis=0), config.rounding_threshold)
            if x_round[:, j].sum() == 0:
                x_round[int(np.argmax(gains.sum(axis=0))), j] = 1.0
    x_c, z_c, v_c, ok = _greedy_restore(x_round, z_round, v_round, channels,
                                        scenario, config, frozen_x)
    if not ok:
        return x_c, z_c, v_c, False
    x_c, z_c, v_c = _greedy_trim(x_c, z_c, v_c, channels, scenario, config,
                                 frozen_x, freeze_z)
    return x_c, z_c, v_c, True


def _finalize_plan(state, margin, channels, scenario, config, init, converged,
                   trace, *, freeze_z, frozen_x, init_cost) -> Plan:
    x_round, z_round, v_round, repaired = _constructive_candidate(
        state.x, state.z, margin.v, channels, scenario, config,
        frozen_x=frozen_x, freeze_z=freeze_z)

    v_final = v_round
    if repaired:
        # alternate margin polishing with trimming: wider margins after the
        # polish often free further hardware; then try cost-driven site swaps
        for _ in range(2):
            polish = MarginState(v=[vj.copy() for vj in v_final],
                                 beta=np.zeros(len(scenario.areas)),
                                 delta=[None] * len(scenario.areas), xi=margin.xi)
            _polish_phases(polish, channels, scenario, config, x_round, z_round)
            floor, _ = normalized_floor(channels, scenario, x_round, polish.v, z_round)
            if floor >= 1.0 - config.audit_rel_tol:
                v_final = polish.v
            x_new, z_new, v_new = _greedy_trim(x_round, z_round, v_final, channels,
                                               scenario, config, frozen_x, freeze_z)
            if np.array_equal(x_new, x_round) and np.array_equal(z_new, z_round):
                break
            x_round, z_round, v_final = x_new, z_new, v_new
        if config.repair:
            x_round, z_round, v_final = _exchange_pass(
                x_round, z_round, v_final, channels, scenario, config,
                frozen_x, freeze_z)
            polish = MarginState(v=[vj.copy() for vj in v_final],
                                 beta=np.zeros(len(scenario.areas)),
                                 delta=[None] * len(scenario.areas), xi=margin.xi)
            _polish_phases(polish, channels, scenario, config, x_round, z_round)
            floor, _ = normalized_floor(channels, scenario, x_round, polish.v, z_round)
            if floor >= 1.0 - config.audit_rel_tol:
                v_final = polish.v
            x_round, z_round, v_final = _greedy_trim(x_round, z_round, v_final, channels,
                                                     scenario, config, frozen_x, freeze_z)
        floor, _ = normalized_floor(channels, scenario, x_round, v_final, z_round)
        repaired = floor >= 1.0 - config.audit_rel_tol
    if not repaired:
        # fall back to the audited feasibility configuration
        x_round = init.x.copy() if frozen_x is None else np.asarray(frozen_x, dtype=float)
        z_round = np.ones(len(scenario.sites))
        v_final = [vj.copy() for vj in init.v]

    sol = DeploymentSolution(x=x_round, z=z_round, v=v_final)
    plan_cost = total_cost(sol, scenario.cost, list(scenario.sites))
    if plan_cost > init_cost:
        x_round = init.x.copy() if frozen_x is None else np.asarray(frozen_x, dtype=float)
        z_round = np.ones(len(scenario.sites))
        v_final = [vj.copy() for vj in init.v]
        sol = DeploymentSolution(x=x_round, z=z_round, v=v_final)
        plan_cost = total_cost(sol, scenario.cost, list(scenario.sites))

    audit = ch.audit_snr_table(scenario, x_round, z_round, v_final)
    feasible = _audit_pass(scenario, audit, config.audit_rel_tol)
    y = channels.element_mask(z_round)
    return Plan(x=x_round, z=z_round, v=v_final, y=y, cost=plan_cost,
                breakdown=cost_breakdown(sol, scenario.cost, list(scenario.sites)),
                snr_audit=audit, feasible=feasible,
                converged=converged or (repaired and feasible), trace=trace)


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------

def plan_to_dict(plan: Plan, scenario: Scenario) -> dict:
    return {
        "cost": plan.cost,
        "breakdown": {"ma_count": plan.breakdown["ma_count"],
                      "ma_term": plan.breakdown["ma_term"],
                      "site_terms": {str(k): v for k, v in plan.breakdown["site_terms"].items()}},
        "x": plan.x.astype(int).tolist(),
        "z": plan.z.astype(int).tolist(),
        "y": plan.y.astype(int).tolist(),
        "phases_rad": [np.angle(vj).tolist() for vj in plan.v],
        "margins_db": [m.tolist() for m in plan.margins_db(scenario)],
        "feasible": plan.feasible,
        "converged": plan.converged,
    }


def write_plan(plan: Plan, scenario: Scenario, path) -> None:
    import json
    with open(path, "w") as fh:
        json.dump(plan_to_dict(plan, scenario), fh, indent=1)
