"""Line-of-sight channel synthesis and the gain structures the solvers consume.

Direction angles are never materialized: every steering phase is computed
from unit LoS direction vectors, which equal the normalized wave vectors by
construction.  Channels are synthesized once per scenario into a
:class:`ChannelSet` holding, for every target-area sample, the stacked
IRS-to-user row, the stacked BS-to-IRS matrix and their cascade.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .scenario import GeometryError, IrsSite, MaGrid, RadioConstants, Scenario


class NoLinkError(ValueError):
    """Raised when the effective channel for a beamformer is identically zero."""


def unit_direction(src, dst) -> np.ndarray:
    """Unit vector pointing from ``src`` to ``dst``."""
    src = np.asarray(src, dtype=float)
    dst = np.asarray(dst, dtype=float)
    diff = dst - src
    norm = np.linalg.norm(diff)
    if norm == 0.0:
        raise GeometryError("coincident points have no direction")
    return diff / norm


def _steering(offsets: np.ndarray, direction: np.ndarray, wavelength: float) -> np.ndarray:
    """Unit-modulus steering phases exp(+j 2pi/lambda offsets . direction)."""
    return np.exp(2j * np.pi / wavelength * (offsets @ direction))


def bs_irs_channel(site: IrsSite, grid: MaGrid, radio: RadioConstants) -> np.ndarray:
    """Rank-one BS-to-IRS channel over all candidate MA positions, (N_l, M).

    The element steering vector carries the negative exponent (conjugated
    bracket convention); the BS-side vector the positive one.
    """
    a_dir = unit_direction(np.zeros(3), site.position)
    offsets = site.element_positions() - site.position
    e = np.conj(_steering(offsets, a_dir, radio.wavelength))
    g_h = _steering(grid.points, a_dir, radio.wavelength)
    scale = np.sqrt(radio.c0) / site.distance_to_bs
    return scale * np.outer(e, g_h)


def irs_user_channel(site: IrsSite, location, radio: RadioConstants) -> np.ndarray:
    """IRS-to-user row vector h^H at ``location``, shape (N_l,)."""
    location = np.asarray(location, dtype=float)
    a_dep = unit_direction(site.position, location)
    offsets = site.element_positions() - site.position
    dist = np.linalg.norm(location - site.position)
    return np.sqrt(radio.c0) / dist * _steering(offsets, a_dep, radio.wavelength)


# ---------------------------------------------------------------------------
# precomputed channel set
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SteeringContext:
    """Unit LoS directions and hop distances underlying a ChannelSet."""

    bs_to_site: np.ndarray       # (L, 3) propagation direction BS -> site
    site_distances: np.ndarray   # (L,)
    departures: tuple            # per area: (S, L, 3) site -> sample directions
    sample_distances: tuple      # per area: (S, L)


@dataclass(frozen=True)
class ChannelSet:
    """All per-sample channel objects for one scenario."""

    site_sizes: tuple            # N_l per site
    n_total: int
    num_antennas: int
    gbar: np.ndarray             # (N, M) stacked BS-to-IRS channel
    h: tuple                     # per area: (S, N) stacked IRS-to-user rows
    psi: tuple                   # per area: (S, N, M) cascaded channels
    samples: tuple               # per area: (S, 3) sample locations
    context: SteeringContext

    def site_slices(self) -> list:
        out, start = [], 0
        for n in self.site_sizes:
            out.append(slice(start, start + n))
            start += n
        return out

    def element_mask(self, z: np.ndarray) -> np.ndarray:
        """Per-element weights obtained by repeating per-site values."""
        return np.repeat(np.asarray(z, dtype=float), self.site_sizes)


def build_channels(scenario: Scenario) -> ChannelSet:
    """Synthesize every per-sample channel object for the scenario."""
    radio = scenario.radio
    sites = scenario.sites
    sizes = tuple(s.max_elements for s in sites)
    gbar = np.vstack([bs_irs_channel(s, scenario.grid, radio) for s in sites])

    bs_dirs = np.array([unit_direction(np.zeros(3), s.position) for s in sites])
    site_dist = np.array([s.distance_to_bs for s in sites])

    h_all, psi_all, samples_all, dep_all, sdist_all = [], [], [], [], []
    for area in scenario.areas:
        pts = area.sample_grid()
        n_samples = pts.shape[0]
        h_area = np.empty((n_samples, sum(sizes)), dtype=complex)
        dep = np.empty((n_samples, len(sites), 3))
        sdist = np.empty((n_samples, len(sites)))
        start = 0
        for i, site in enumerate(sites):
            offsets = site.element_positions() - site.position
            diff = pts - site.position
            dist = np.linalg.norm(diff, axis=1)
            if np.any(dist == 0.0):
                raise GeometryError(f"sample coincides with site {site.index} reference")
            dirs = diff / dist[:, None]
            phases = np.exp(2j * np.pi / radio.wavelength * (dirs @ offsets.T))
            h_area[:, start:start + site.max_elements] = \
                (np.sqrt(radio.c0) / dist)[:, None] * phases
            dep[:, i, :] = dirs
            sdist[:, i] = dist
            start += site.max_elements
        psi_area = h_area[:, :, None] * gbar[None, :, :]
        h_all.append(h_area)
        psi_all.append(psi_area)
        samples_all.append(pts)
        dep_all.append(dep)
        sdist_all.append(sdist)

    ctx = SteeringContext(bs_to_site=bs_dirs, site_distances=site_dist,
                          departures=tuple(dep_all), sample_distances=tuple(sdist_all))
    return ChannelSet(site_sizes=sizes, n_total=sum(sizes),
                      num_antennas=scenario.grid.count, gbar=gbar,
                      h=tuple(h_all), psi=tuple(psi_all),
                      samples=tuple(samples_all), context=ctx)


# ---------------------------------------------------------------------------
# SNR, beamformers, derived gain structures
# ---------------------------------------------------------------------------

def effective_row(psi_u: np.ndarray, z_mask: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Effective BS-to-user row over antennas: v^H diag(z) Psi(u), shape (M,)."""
    return (np.conj(v) * z_mask) @ psi_u


def snr(channels: ChannelSet, area: int, sample: int, x: np.ndarray,
        z: np.ndarray, v: np.ndarray, w: np.ndarray, radio: RadioConstants) -> float:
    """Received SNR (linear) at one sample for the given configuration."""
    psi_u = channels.psi[area][sample]
    if x.shape[0] != psi_u.shape[1] or v.shape[0] != psi_u.shape[0]:
        raise ValueError("dimension mismatch between configuration and channels")
    a = effective_row(psi_u, channels.element_mask(z), v)
    return radio.pbar * abs(a @ (np.asarray(x) * w)) ** 2


def mrt(channels: ChannelSet, area: int, sample: int, x: np.ndarray,
        z: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Maximum-ratio beamformer for one sample; unit norm on the occupied entries."""
    psi_u = channels.psi[area][sample]
    a = effective_row(psi_u, channels.element_mask(z), v)
    w = np.asarray(x) * np.conj(a)
    norm = np.linalg.norm(w)
    if norm == 0.0:
        raise NoLinkError("effective channel is zero for the selected antennas")
    return w / norm


def antenna_gains(psi_u: np.ndarray, z_mask: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Per-antenna squared gains |v^H diag(z) Psi(u)[:, m]|^2, shape (M,)."""
    return np.abs(effective_row(psi_u, z_mask, v)) ** 2


def site_rows(psi_u: np.ndarray, site_slices: list, v: np.ndarray) -> np.ndarray:
    """Per-site effective rows b[l, m] = v_l^H Psi_l(u)[:, m], shape (L, M)."""
    out = np.empty((len(site_slices), psi_u.shape[1]), dtype=complex)
    for i, sl in enumerate(site_slices):
        out[i] = np.conj(v[sl]) @ psi_u[sl]
    return out


def site_pair_products(psi_u: np.ndarray, site_slices: list, v: np.ndarray):
    """Upper-triangular site-pair products B[l, l', m] = b_l b_{l'}^*.

    Returns (pairs, products) where ``pairs`` lists (l, l') with l <= l' and
    ``products`` is (P, M) complex.  Contracting against a symmetric real
    weight uses the diagonal once and twice the real part off the diagonal.
    """
    b = site_rows(psi_u, site_slices, v)
    n_sites = b.shape[0]
    pairs = [(l, lp) for l in range(n_sites) for lp in range(l, n_sites)]
    products = np.stack([b[l] * np.conj(b[lp]) for l, lp in pairs])
    return pairs, products


def phase_gram(psi_u: np.ndarray, x: np.ndarray, z_mask: np.ndarray | None = None) -> np.ndarray:
    """Hermitian PSD Gram matrix of the antenna-selected cascade, (N, N)."""
    eff = psi_u * np.asarray(x)[None, :]
    if z_mask is not None:
        eff = z_mask[:, None] * eff
    return eff @ np.conj(eff.T)


def element_cascade(psi_u: np.ndarray, x: np.ndarray, z_mask: np.ndarray,
                    v: np.ndarray) -> np.ndarray:
    """Per-element cascade rows c_n over antennas, (N, M); sums to the effective row."""
    return (z_mask * np.conj(v))[:, None] * psi_u * np.asarray(x)[None, :]


def element_gram(psi_u: np.ndarray, x: np.ndarray, z_mask: np.ndarray,
                 v: np.ndarray) -> np.ndarray:
    """Hermitian Gram matrix over element indicators: Q = C C^H, (N, N)."""
    c = element_cascade(psi_u, x, z_mask, v)
    return c @ np.conj(c.T)


# ---------------------------------------------------------------------------
# independent audit path
# ---------------------------------------------------------------------------

def reference_snr(scenario: Scenario, area_index: int, location, x: np.ndarray,
                  z: np.ndarray, v: np.ndarray, w: np.ndarray | None = None,
                  y: np.ndarray | None = None) -> float:
    """SNR at an arbitrary location, re-derived per site from raw geometry.

    Deliberately avoids the precomputed ChannelSet and the stacked fast path:
    channels are synthesized afresh, the diagonal phase matrix is applied
    explicitly per site, and the antenna selection is applied twice as in the
    defining expression.  Used to audit solver output.
    """
    radio = scenario.radio
    x = np.asarray(x, dtype=float)
    row = np.zeros(scenario.grid.count, dtype=complex)
    start = 0
    for i, site in enumerate(scenario.sites):
        n = site.max_elements
        h_row = irs_user_channel(site, location, radio)
        if y is not None:
            h_row = h_row * np.asarray(y[start:start + n], dtype=float)
        theta = np.diag(np.conj(v[start:start + n]))
        row = row + z[i] * (h_row @ theta @ bs_irs_channel(site, scenario.grid, radio))
        start += n
    row = row @ np.diag(x)
    if w is None:
        sel = x * np.conj(row)
        norm = np.linalg.norm(sel)
        if norm == 0.0:
            return 0.0
        w = sel / norm
    return radio.pbar * abs(row @ (x * w)) ** 2


def audit_snr_table(scenario: Scenario, x: np.ndarray, z: np.ndarray, v: list,
                    y: np.ndarray | None = None) -> list:
    """Reference SNR of every sample of every area, one array per area."""
    out = []
    for j, area in enumerate(scenario.areas):
        pts = area.sample_grid()
        vals = np.array([reference_snr(scenario, j, pts[s], x[:, j], z, v[j], y=y)
                        for s in range(pts.shape[0])])
        out.append(vals)
    return out


def dump_channels(channels: ChannelSet, path) -> None:
    """Write per-sample channel magnitudes and phases as JSON lines, for audits."""
    with open(path, "w") as fh:
        for j, h_area in enumerate(channels.h):
            for s in range(h_area.shape[0]):
                rec = {"area": j, "sample": s,
                       "location": channels.samples[j][s].tolist(),
                       "magnitude": np.abs(h_area[s]).tolist(),
                       "phase": np.angle(h_area[s]).tolist()}
                fh.write(json.dumps(rec) + "\n")
