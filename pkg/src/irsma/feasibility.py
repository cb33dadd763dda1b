"""Feasibility check: maximize the worst-case normalized SNR with all IRSs on.

Every candidate IRS is active and up to the packing limit of MAs may be used
per area.  The normalized-SNR floor eta is driven up by a double loop: an
inner alternation between an MA-occupancy LP and a phase-update SOCP (both
carrying SCA surrogates of the binary / unit-modulus constraints as
penalties), and an outer loop that escalates the penalty factors until the
relaxations are tight.  A floor of at least one means the configured SNR
thresholds are achievable; the rounded solution also serves as the
initializer for cost minimization.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import channel as ch
from . import conic
from .config import SolverConfig
from .scenario import Scenario, linear_to_db, packing_layout


class SubproblemError(RuntimeError):
    """A subproblem solve failed in a way the penalty loop cannot absorb."""


@dataclass
class TraceRecord:
    outer: int
    inner: int
    rho: float
    lam: float
    objective: float      # true penalized objective at the iterate
    violation: float      # max binary / unit-modulus violation


@dataclass
class FeasibilityState:
    """Iterates of the double loop; expansion points track the last iterate."""

    x: np.ndarray                 # (M, J) in [0, 1]
    v: list                       # per area, (N,) complex
    eta: float
    delta: np.ndarray             # (J, N) hinge slacks
    rho: float
    lam: float
    x_ref: np.ndarray = None
    v_ref: list = None

    def __post_init__(self):
        if self.x_ref is None:
            self.x_ref = self.x.copy()
        if self.v_ref is None:
            self.v_ref = [v.copy() for v in self.v]


@dataclass
class FeasibilityReport:
    eta: float                    # worst normalized SNR, post-rounding
    worst_snr_db: np.ndarray      # per area, dB
    x: np.ndarray                 # (M, J) exact binary
    v: list                       # per area, unit modulus
    feasible: bool                # eta >= 1
    converged: bool
    trace: list = field(default_factory=list)

    @property
    def ma_counts(self) -> np.ndarray:
        return self.x.sum(axis=0).astype(int)


# ---------------------------------------------------------------------------
# surrogates
# ---------------------------------------------------------------------------

def square_lower_bound(value, ref):
    """First-order bound on value^2 at ref: 2 ref value - ref^2, tight at ref."""
    return 2.0 * ref * value - ref ** 2


def modulus_lower_bound(value, ref):
    """First-order bound on |value|^2 at complex ref, tight at ref."""
    return 2.0 * np.real(np.conj(ref) * value) - np.abs(ref) ** 2


def quad_lower_bound(v, v_ref, gram):
    """First-order bound on v^H R v at v_ref for Hermitian PSD R."""
    w = gram @ v_ref
    return 2.0 * np.real(np.conj(w) @ v) - np.real(np.conj(v_ref) @ w)


# ---------------------------------------------------------------------------
# initialization
# ---------------------------------------------------------------------------

def initial_layout(scenario: Scenario) -> np.ndarray:
    """Packing-limit MA layout replicated for every area, (M, J)."""
    idx = packing_layout(scenario.grid, scenario.conflicts)
    x = np.zeros((scenario.grid.count, len(scenario.areas)))
    x[idx, :] = 1.0
    return x


def aligned_phases(scenario: Scenario, x_col: np.ndarray, area_index: int) -> np.ndarray:
    """Phase vector aligning each element's cascade to the area centroid.

    Uses the selected antenna nearest the aperture center as the phase
    reference, which makes the per-element contributions at the centroid sum
    coherently.
    """
    radio = scenario.radio
    target = scenario.areas[area_index].centroid()
    sel = np.flatnonzero(x_col > 0.5)
    if sel.size == 0:
        sel = np.arange(scenario.grid.count)
    center = scenario.grid.points.mean(axis=0)
    ref_antenna = sel[np.argmin(np.linalg.norm(scenario.grid.points[sel] - center, axis=1))]
    v = np.empty(scenario.num_elements, dtype=complex)
    start = 0
    for site in scenario.sites:
        col = (ch.irs_user_channel(site, target, radio)
               * ch.bs_irs_channel(site, scenario.grid, radio)[:, ref_antenna])
        mags = np.abs(col)
        v[start:start + site.max_elements] = np.where(mags > 0, col / np.where(mags > 0, mags, 1.0), 1.0)
        start += site.max_elements
    return v


# ---------------------------------------------------------------------------
# evaluation helpers
# ---------------------------------------------------------------------------

def normalized_floor(channels: ch.ChannelSet, scenario: Scenario, x: np.ndarray,
                     v: list, z: np.ndarray | None = None):
    """Worst normalized SNR over all samples, plus the per-area raw minima."""
    pbar = scenario.radio.pbar
    z_mask = channels.element_mask(np.ones(len(scenario.sites)) if z is None else z)
    floor = np.inf
    worst_raw = np.empty(len(scenario.areas))
    for j, area in enumerate(scenario.areas):
        gains = np.einsum("snm,n->sm", channels.psi[j],
                          np.conj(v[j]) * z_mask)
        snrs = pbar * (np.abs(gains) ** 2 @ x[:, j])
        worst_raw[j] = snrs.min()
        floor = min(floor, worst_raw[j] / max(area.snr_threshold, 1e-300))
    return floor, worst_raw


def _true_penalized_objective(channels, scenario, state, z=None) -> float:
    floor, _ = normalized_floor(channels, scenario, state.x, state.v, z)
    pen_x = float(np.sum(state.x * (1.0 - state.x)))
    pen_v = sum(float(np.sum(np.maximum(0.0, 1.0 - np.abs(vj) ** 2))) for vj in state.v)
    return min(floor, 1e18) - state.rho * pen_x - state.lam * pen_v


def binary_violation(x: np.ndarray) -> float:
    return float(np.max(x * (1.0 - x))) if x.size else 0.0


def modulus_violation(v: list) -> float:
    return max(float(np.max(np.abs(1.0 - np.abs(vj)))) for vj in v)


# ---------------------------------------------------------------------------
# subproblems
# ---------------------------------------------------------------------------

def ma_subproblem(state: FeasibilityState, channels: ch.ChannelSet,
                  scenario: Scenario, config: SolverConfig,
                  z: np.ndarray | None = None) -> None:
    """One LP update of the MA occupancy with phases fixed."""
    m = scenario.grid.count
    n_areas = len(scenario.areas)
    pbar = scenario.radio.pbar
    z_mask = channels.element_mask(np.ones(len(scenario.sites)) if z is None else z)

    num_vars = m * n_areas + 1
    eta_i = m * n_areas
    spec = conic.LinearProgramSpec.empty(num_vars)
    spec.upper[:eta_i] = 1.0
    spec.upper[eta_i] = config.eta_cap
    spec.objective[eta_i] = 1.0
    # penalty: rho * sum(x - (2 x_ref x - x_ref^2)) collapses to linear terms
    spec.objective[:eta_i] = -state.rho * (1.0 - 2.0 * state.x_ref.T.ravel())

    for j, area in enumerate(scenario.areas):
        base = j * m
        scale = pbar / area.snr_threshold
        gains = np.abs(np.einsum("snm,n->sm", channels.psi[j],
                                 np.conj(state.v[j]) * z_mask)) ** 2
        idx = np.concatenate([base + np.arange(m), [eta_i]])
        for s in range(gains.shape[0]):
            spec.add_row(idx, np.concatenate([-scale * gains[s], [1.0]]), 0.0)
        for (a, b) in scenario.conflicts.pairs:
            spec.add_row([base + a, base + b], [1.0, 1.0], 1.0)
        spec.add_row(base + np.arange(m), np.ones(m), float(scenario.max_ma))

    out = conic.solve_lp(spec, config.solver_tol)
    if not out.ok:
        raise SubproblemError(f"MA occupancy LP came back {out.status}")
    state.x = out.x[:eta_i].reshape(n_areas, m).T.copy()
    state.eta = float(out.x[eta_i])
    state.x_ref = state.x.copy()


def phase_subproblem(state: FeasibilityState, channels: ch.ChannelSet,
                     scenario: Scenario, config: SolverConfig,
                     z: np.ndarray | None = None) -> None:
    """One SOCP update of all phase vectors with the MA occupancy fixed."""
    n = channels.n_total
    n_areas = len(scenario.areas)
    pbar = scenario.radio.pbar
    z_mask = channels.element_mask(np.ones(len(scenario.sites)) if z is None else z)

    lifts = [conic.ComplexLift(n, base=2 * n * j) for j in range(n_areas)]
    delta_base = 2 * n * n_areas
    eta_i = delta_base + n * n_areas
    num_vars = eta_i + 1
    spec = conic.LinearProgramSpec.empty(num_vars)
    spec.lower[:delta_base] = -np.inf
    spec.upper[:delta_base] = np.inf
    spec.upper[delta_base:eta_i] = np.inf
    spec.upper[eta_i] = config.eta_cap
    spec.objective[eta_i] = 1.0
    spec.objective[delta_base:eta_i] = -state.lam
    cone = conic.ConeProgramSpec(lp=spec)

    for j, area in enumerate(scenario.areas):
        lift = lifts[j]
        scale = pbar / area.snr_threshold
        v_ref = state.v_ref[j]
        # idempotent extension of the occupancy weighting: diag(x) rather than
        # diag(x)^2, so fractional iterates bound the same SNR form as the LP
        col_w = np.sqrt(np.clip(state.x[:, j], 0.0, None))
        px = channels.psi[j] * col_w[None, None, :] * z_mask[None, :, None]
        t = np.einsum("snm,n->sm", np.conj(px), v_ref)
        w = np.einsum("snm,sm->sn", px, t)            # R(u) v_ref per sample
        quad_ref = np.sum(np.abs(t) ** 2, axis=1)     # v_ref^H R(u) v_ref
        for s in range(px.shape[0]):
            idx, coef = lift.real_inner(w[s])
            spec.add_row(np.concatenate([idx, [eta_i]]),
                         np.concatenate([-2.0 * scale * coef, [1.0]]),
                         -scale * quad_ref[s])
        for e in range(n):
            # hinge slack: 1 - delta <= 2 Re{v_ref* v} - |v_ref|^2
            spec.add_row([lift.re_index(e), lift.im_index(e), delta_base + j * n + e],
                         [-2.0 * v_ref[e].real, -2.0 * v_ref[e].imag, -1.0],
                         -1.0 - abs(v_ref[e]) ** 2)
            cone.add_cone(*lift.unit_disc(e))

    out = conic.solve_socp(cone, config.solver_tol)
    if not out.ok:
        raise SubproblemError(f"phase SOCP came back {out.status}")
    state.v = [lifts[j].unpack(out.x) for j in range(n_areas)]
    state.delta = out.x[delta_base:eta_i].reshape(n_areas, n)
    state.eta = float(out.x[eta_i])
    state.v_ref = [vj.copy() for vj in state.v]


# ---------------------------------------------------------------------------
# rounding and repair
# ---------------------------------------------------------------------------

def round_occupancy(x_col: np.ndarray, scenario: Scenario, gain: np.ndarray,
                    threshold: float) -> np.ndarray:
    """Threshold one area's occupancy, then enforce conflicts and cardinality.

    ``gain`` ranks antennas when something must be dropped; ties keep the
    lexicographically smallest index.
    """
    sel = x_col >= threshold
    for (a, b) in scenario.conflicts.pairs:
        if sel[a] and sel[b]:
            drop = b if gain[a] >= gain[b] else a
            sel[drop] = False
    if sel.sum() > scenario.max_ma:
        chosen = np.flatnonzero(sel)
        order = sorted(chosen, key=lambda i: (-gain[i], i))
        sel = np.zeros_like(sel)
        sel[order[:scenario.max_ma]] = True
    return sel.astype(float)


def greedy_fill(x_col: np.ndarray, scenario: Scenario, gains: np.ndarray) -> np.ndarray:
    """Add conflict-compatible antennas up to the packing limit.

    ``gains`` is (S, M): per-sample per-antenna gain; each step adds the
    antenna with the best gain at the current worst sample.
    """
    x_col = x_col.copy()
    blocked = {a: [] for a in range(scenario.grid.count)}
    for (a, b) in scenario.conflicts.pairs:
        blocked[a].append(b)
        blocked[b].append(a)
    while x_col.sum() < scenario.max_ma:
        sel = x_col > 0.5
        compatible = [m for m in range(scenario.grid.count)
                      if not sel[m] and not any(sel[q] for q in blocked[m])]
        if not compatible:
            break
        worst = int(np.argmin(gains @ x_col))
        best = max(compatible, key=lambda m: (gains[worst, m], -m))
        x_col[best] = 1.0
    return x_col


# ---------------------------------------------------------------------------
# main loop
# ---------------------------------------------------------------------------

def run_feasibility(scenario: Scenario, config: SolverConfig | None = None,
                    channels: ch.ChannelSet | None = None,
                    frozen_x: np.ndarray | None = None) -> FeasibilityReport:
    """Penalty-based double loop maximizing the worst-case normalized SNR.

    When ``frozen_x`` is given the MA occupancy is held fixed (used by the
    fixed-antenna baseline) and only phases are optimized.
    """
    config = config or SolverConfig()
    channels = channels or ch.build_channels(scenario)
    n_areas = len(scenario.areas)

    x0 = initial_layout(scenario) if frozen_x is None else np.asarray(frozen_x, dtype=float)
    v0 = [aligned_phases(scenario, x0[:, j], j) for j in range(n_areas)]
    eta0, _ = normalized_floor(channels, scenario, x0, v0)
    if eta0 >= config.eta_cap:
        # thresholds are negligibly small: any nonzero link suffices and the
        # normalized floor would only hit its ceiling
        state = FeasibilityState(x=x0, v=v0, eta=eta0,
                                 delta=np.zeros((n_areas, channels.n_total)),
                                 rho=0.0, lam=0.0)
        return _finalize(state, channels, scenario, config, True, [])
    pen0 = config.penalty_init_scale * max(eta0, 1e-6)

    state = FeasibilityState(x=x0, v=v0, eta=eta0,
                             delta=np.zeros((n_areas, channels.n_total)),
                             rho=pen0, lam=pen0)
    trace = []
    converged = False
    for outer in range(config.max_outer):
        prev = _true_penalized_objective(channels, scenario, state)
        for inner in range(config.max_inner):
            if frozen_x is None:
                ma_subproblem(state, channels, scenario, config)
            phase_subproblem(state, channels, scenario, config)
            current = _true_penalized_objective(channels, scenario, state)
            violation = max(binary_violation(state.x), modulus_violation(state.v))
            trace.append(TraceRecord(outer, inner, state.rho, state.lam, current, violation))
            if abs(current - prev) <= config.inner_tol * max(1.0, abs(prev)):
                break
            prev = current
        violation = max(binary_violation(state.x), modulus_violation(state.v))
        if violation < config.binary_tol:
            converged = True
            break
        state.rho *= config.penalty_growth
        state.lam *= config.penalty_growth
        _recenter(state, channels, scenario, config)

    return _finalize(state, channels, scenario, config, converged, trace)


def _recenter(state, channels, scenario, config, z=None) -> None:
    """Move the expansion points to a feasible binary / unit-modulus pattern.

    The surrogate penalty has zero gradient at 0.5-valued entries (common at
    fractional LP vertices on conflict triangles), so escalating the penalty
    alone cannot leave them; expanding at the rounded pattern restores a
    useful descent direction while keeping the surrogates tight there.
    """
    z_mask = channels.element_mask(np.ones(len(scenario.sites)) if z is None else z)
    for j in range(len(scenario.areas)):
        mags = np.abs(state.v_ref[j])
        state.v_ref[j] = np.where(mags > 1e-12, state.v_ref[j] / np.where(mags > 1e-12, mags, 1.0), 1.0)
        gains = np.abs(np.einsum("snm,n->sm", channels.psi[j],
                                 np.conj(state.v_ref[j]) * z_mask)) ** 2
        state.x_ref[:, j] = round_occupancy(state.x[:, j], scenario, gains.sum(axis=0),
                                            config.rounding_threshold)


def _finalize(state, channels, scenario, config, converged, trace) -> FeasibilityReport:
    pbar = scenario.radio.pbar
    z_mask = channels.element_mask(np.ones(len(scenario.sites)))
    v_round = []
    for vj in state.v:
        mags = np.abs(vj)
        v_round.append(np.where(mags > 1e-12, vj / np.where(mags > 1e-12, mags, 1.0), 1.0))

    x_round = np.zeros_like(state.x)
    for j in range(len(scenario.areas)):
        gains = np.abs(np.einsum("snm,n->sm", channels.psi[j],
                                 np.conj(v_round[j]) * z_mask)) ** 2
        col = round_occupancy(state.x[:, j], scenario, gains.sum(axis=0),
                              config.rounding_threshold)
        if config.repair:
            col = greedy_fill(col, scenario, gains)
        x_round[:, j] = col

    eta_star, worst_raw = normalized_floor(channels, scenario, x_round, v_round)
    eta_star = min(eta_star, config.eta_cap)
    return FeasibilityReport(eta=eta_star,
                             worst_snr_db=np.array([linear_to_db(w) for w in worst_raw]),
                             x=x_round, v=v_round,
                             feasible=bool(eta_star >= 1.0),
                             converged=converged, trace=trace)


def write_trace(report: FeasibilityReport, path) -> None:
    """Convergence trace as JSON lines (outer, inner, penalties, objective)."""
    import json
    with open(path, "w") as fh:
        for rec in report.trace:
            fh.write(json.dumps({"outer": rec.outer, "inner": rec.inner,
                                 "rho": rec.rho, "lambda": rec.lam,
                                 "objective": rec.objective,
                                 "violation": rec.violation}) + "\n")
