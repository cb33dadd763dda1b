"""Deployment geometry and cost structures.

Coordinate frame: the base-station reference point sits at the origin, the
movable-antenna (MA) region lies in the y-z plane (x = 0), and target areas
lie on the ground plane z = 0.  All positions are in meters, all costs in
normalized cost units, all SNR quantities linear unless a name says dB.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import optimize, sparse


class GeometryError(ValueError):
    """Raised for degenerate or non-positive geometric inputs."""


class AuditError(ValueError):
    """Raised when a quantity that must be exactly binary is fractional."""


# ---------------------------------------------------------------------------
# radio constants
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RadioConstants:
    """Carrier wavelength, transmit power and noise power.

    The reference channel gain at 1 m and the transmit-power-to-noise ratio
    are derived, never stored.
    """

    wavelength: float       # meters
    transmit_power: float   # watts
    noise_power: float      # watts

    def __post_init__(self):
        if self.wavelength <= 0 or self.transmit_power <= 0 or self.noise_power <= 0:
            raise GeometryError("wavelength, transmit power and noise power must be positive")

    @property
    def pbar(self) -> float:
        """Transmit power over noise power."""
        return self.transmit_power / self.noise_power

    @property
    def c0(self) -> float:
        """Reference channel gain at 1 m, (wavelength / 4pi)^2."""
        return (self.wavelength / (4.0 * math.pi)) ** 2


# ---------------------------------------------------------------------------
# MA grid and conflict structure
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MaGrid:
    """Uniform square lattice of candidate MA positions in the y-z plane."""

    aperture: float          # side length of the placement region (m)
    step: float              # lattice spacing (m)
    points: np.ndarray       # (M, 3) positions, row-major in (iy, iz), x = 0
    side: int                # points per side
    count: int               # M = side**2

    def index_offsets(self) -> np.ndarray:
        """Integer (iy, iz) lattice indices for each point, shape (M, 2)."""
        iy, iz = np.divmod(np.arange(self.count), self.side)
        return np.stack([iy, iz], axis=1)


def build_ma_grid(aperture: float, step: float) -> MaGrid:
    """Lay out the candidate MA lattice spanning [0, A]^2 in y-z at x = 0."""
    if aperture <= 0 or step <= 0:
        raise GeometryError(f"aperture and step must be positive, got A={aperture}, d={step}")
    if step > aperture:
        raise GeometryError(f"step {step} exceeds aperture {aperture}")
    side = int(math.floor(aperture / step + 1e-9)) + 1
    coords = np.arange(side) * step
    yy, zz = np.meshgrid(coords, coords, indexing="ij")
    points = np.column_stack([np.zeros(side * side), yy.ravel(), zz.ravel()])
    return MaGrid(aperture=aperture, step=step, points=points, side=side, count=side * side)


@dataclass(frozen=True)
class ConflictSet:
    """Pairs (m, q), m < q, of grid points strictly closer than min_distance."""

    pairs: tuple
    min_distance: float

    def __len__(self) -> int:
        return len(self.pairs)


def conflict_set(grid: MaGrid, min_distance: float) -> ConflictSet:
    """All grid-point pairs with Euclidean distance strictly below ``min_distance``.

    Distances are evaluated on the integer lattice so that pairs at exactly
    the minimum distance stay compatible regardless of float rounding.
    """
    if min_distance <= 0:
        raise GeometryError("min_distance must be positive")
    idx = grid.index_offsets()
    ratio2 = (min_distance / grid.step) ** 2
    # snap near-integer thresholds so the strict inequality is exact there
    if abs(ratio2 - round(ratio2)) < 1e-9 * max(1.0, ratio2):
        ratio2 = round(ratio2)
    pairs = []
    for m in range(grid.count):
        d2 = np.sum((idx[m + 1:] - idx[m]) ** 2, axis=1)
        for off, dist2 in enumerate(d2):
            if dist2 < ratio2:
                pairs.append((m, m + 1 + off))
    return ConflictSet(pairs=tuple(pairs), min_distance=min_distance)


def _stride_is_optimal(grid: MaGrid, min_distance: float) -> bool:
    # stride packing is provably optimal when every k x k index block is a
    # clique of the conflict graph (block diameter below the spacing limit)
    k = int(math.ceil(min_distance / grid.step - 1e-12))
    block = min(k, grid.side)
    return (block - 1) * grid.step * math.sqrt(2.0) < min_distance


def packing_layout(grid: MaGrid, conflicts: ConflictSet) -> np.ndarray:
    """Indices of a maximum-cardinality conflict-free subset of the grid.

    Uses stride packing when the block-clique argument proves it optimal,
    otherwise solves the maximum-independent-set problem exactly as a small
    integer program.  Ties are broken toward lexicographically smallest
    index sets.
    """
    if not conflicts.pairs:
        return np.arange(grid.count)
    if _stride_is_optimal(grid, conflicts.min_distance):
        k = int(math.ceil(conflicts.min_distance / grid.step - 1e-12))
        keep = np.arange(0, grid.side, k)
        iy, iz = np.meshgrid(keep, keep, indexing="ij")
        return (iy * grid.side + iz).ravel()
    return _exact_independent_set(grid.count, conflicts.pairs)


def _exact_independent_set(n: int, pairs) -> np.ndarray:
    rows = []
    cols = []
    for r, (m, q) in enumerate(pairs):
        rows.extend([r, r])
        cols.extend([m, q])
    a = sparse.csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(len(pairs), n))
    cons = optimize.LinearConstraint(a, -np.inf, 1.0)
    # tiny index-dependent bonus steers HiGHS toward the lexicographically
    # smallest optimum without changing the cardinality
    c = -(1.0 + 1e-9 * (n - np.arange(n)) / n)
    res = optimize.milp(c, constraints=cons, integrality=np.ones(n),
                        bounds=optimize.Bounds(0, 1))
    if not res.success:
        raise RuntimeError(f"independent-set solve failed: {res.message}")
    return np.flatnonzero(np.round(res.x) > 0.5)


def max_deployable(grid: MaGrid, conflicts: ConflictSet) -> int:
    """Maximum number of MAs deployable simultaneously under the spacing rule."""
    return int(len(packing_layout(grid, conflicts)))


# ---------------------------------------------------------------------------
# IRS candidate sites
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class IrsSite:
    """One candidate IRS site: a planar element array plus its install cost.

    ``orientation`` is ``"horizontal"`` (panel in the x-y plane, facing down)
    or ``"vertical"`` (panel contains the z axis; ``facing_azimuth`` gives the
    outward-normal azimuth in the x-y plane, so the in-panel horizontal axis
    is perpendicular to it).
    """

    index: int
    position: np.ndarray        # (3,) reference element position
    orientation: str            # "horizontal" | "vertical"
    rows: int
    cols: int
    spacing: float              # element spacing (m)
    install_cost: float
    facing_azimuth: float = 0.0

    def __post_init__(self):
        if self.orientation not in ("horizontal", "vertical"):
            raise GeometryError(f"unknown orientation {self.orientation!r}")
        if self.rows < 1 or self.cols < 1 or self.spacing <= 0:
            raise GeometryError("element layout must have positive rows, cols and spacing")
        object.__setattr__(self, "position", np.asarray(self.position, dtype=float))

    @property
    def max_elements(self) -> int:
        return self.rows * self.cols

    @property
    def distance_to_bs(self) -> float:
        return float(np.linalg.norm(self.position))

    def element_positions(self) -> np.ndarray:
        """All element positions (N, 3), row-major; element 0 is the reference."""
        if self.orientation == "horizontal":
            row_axis = np.array([1.0, 0.0, 0.0])
            col_axis = np.array([0.0, 1.0, 0.0])
        else:
            row_axis = np.array([0.0, 0.0, 1.0])
            col_axis = np.array([-math.sin(self.facing_azimuth),
                                 math.cos(self.facing_azimuth), 0.0])
        r, c = np.divmod(np.arange(self.max_elements), self.cols)
        return (self.position
                + np.outer(r * self.spacing, row_axis)
                + np.outer(c * self.spacing, col_axis))


# ---------------------------------------------------------------------------
# target areas
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TargetArea:
    """Square coverage area on the ground plane with its SNR requirement."""

    index: int
    corner: np.ndarray          # (2,) x-y of the lower corner, z = 0
    extent: float               # side length (m)
    resolution: float           # sample spacing (m)
    snr_threshold: float        # linear

    def __post_init__(self):
        if self.extent <= 0 or self.resolution <= 0:
            raise GeometryError("extent and resolution must be positive")
        if self.snr_threshold < 0:
            raise GeometryError("snr_threshold must be non-negative")
        object.__setattr__(self, "corner", np.asarray(self.corner, dtype=float))

    def sample_grid(self) -> np.ndarray:
        """Sample points (S, 3) covering the area inclusively at the resolution."""
        n = int(math.floor(self.extent / self.resolution + 1e-9)) + 1
        offs = np.arange(n) * self.resolution
        xx, yy = np.meshgrid(self.corner[0] + offs, self.corner[1] + offs, indexing="ij")
        return np.column_stack([xx.ravel(), yy.ravel(), np.zeros(n * n)])

    def centroid(self) -> np.ndarray:
        c = self.corner + self.extent / 2.0
        return np.array([c[0], c[1], 0.0])


# ---------------------------------------------------------------------------
# cost model and deployment accounting
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CostModel:
    """Unit costs: per MA, per IRS element, plus the FPA-to-MA cost ratio."""

    ma_unit: float
    element_unit: float
    fpa_ratio: float = 1.0 / 3.0

    def __post_init__(self):
        if self.ma_unit < 0 or self.element_unit < 0 or self.fpa_ratio < 0:
            raise GeometryError("costs must be non-negative")


@dataclass
class DeploymentSolution:
    """Raw decision variables of one deployment: occupancy, selection, phases.

    ``x`` is (M, J) MA occupancy, ``z`` is (L,) site selection, ``v`` holds
    one stacked unit-modulus phase vector per area, and ``y`` the per-element
    installation indicators (defaults to every element of a selected site).
    """

    x: np.ndarray
    z: np.ndarray
    v: list
    y: np.ndarray | None = None


def _require_binary(arr: np.ndarray, name: str) -> np.ndarray:
    arr = np.asarray(arr, dtype=float)
    if arr.size and not np.all((arr == 0.0) | (arr == 1.0)):
        raise AuditError(f"{name} must be exactly binary")
    return arr


def total_cost(sol: DeploymentSolution, cost: CostModel, sites: list) -> float:
    """Total deployment cost: shared MA hardware plus per-site install and elements."""
    x = _require_binary(sol.x, "x")
    z = _require_binary(sol.z, "z")
    ma_term = cost.ma_unit * (x.sum(axis=0).max() if x.size else 0.0)
    if sol.y is None:
        counts = np.array([s.max_elements for s in sites], dtype=float)
    else:
        y = _require_binary(sol.y, "y")
        counts = np.zeros(len(sites))
        start = 0
        for i, s in enumerate(sites):
            counts[i] = y[start:start + s.max_elements].sum()
            start += s.max_elements
    site_term = sum(z[i] * (s.install_cost + cost.element_unit * counts[i])
                    for i, s in enumerate(sites))
    return float(ma_term + site_term)


def cost_breakdown(sol: DeploymentSolution, cost: CostModel, sites: list) -> dict:
    """Cost split into the MA term and per-site terms, for reports."""
    x = _require_binary(sol.x, "x")
    z = _require_binary(sol.z, "z")
    ma_count = int(x.sum(axis=0).max()) if x.size else 0
    per_site = {}
    start = 0
    for i, s in enumerate(sites):
        n_inst = s.max_elements if sol.y is None else int(sol.y[start:start + s.max_elements].sum())
        start += s.max_elements
        if z[i]:
            per_site[s.index] = s.install_cost + cost.element_unit * n_inst
    return {"ma_count": ma_count, "ma_term": cost.ma_unit * ma_count, "site_terms": per_site}


# ---------------------------------------------------------------------------
# scenario bundle
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Scenario:
    """Immutable bundle of everything a planning run needs."""

    radio: RadioConstants
    grid: MaGrid
    conflicts: ConflictSet
    sites: tuple
    areas: tuple
    cost: CostModel
    max_ma: int = field(default=0)

    def __post_init__(self):
        if self.max_ma == 0:
            object.__setattr__(self, "max_ma", max_deployable(self.grid, self.conflicts))

    @property
    def num_elements(self) -> int:
        return sum(s.max_elements for s in self.sites)

    def site_slices(self) -> list:
        out, start = [], 0
        for s in self.sites:
            out.append(slice(start, start + s.max_elements))
            start += s.max_elements
        return out

    def with_areas(self, areas) -> "Scenario":
        return replace(self, areas=tuple(areas))


DEFAULT_SITE_POSITIONS = (
    (5.0, 0.0, 12.0),
    (0.0, 12.0, 5.0),
    (0.0, -12.0, 5.0),
    (10.0, 25.0, 5.0),
    (10.0, -25.0, 5.0),
)
DEFAULT_SITE_COSTS = (30.0, 20.0, 20.0, 10.0, 10.0)


def default_scenario(areas=None, *, wavelength=0.1, transmit_power_dbm=20.0,
                     noise_power_dbm=-90.0, aperture=None, step=None,
                     min_spacing=None, ma_unit=30.0, element_unit=1.0,
                     fpa_ratio=1.0 / 3.0, snr_threshold_db=10.0,
                     panel_rows=5, panel_cols=10,
                     site_positions=DEFAULT_SITE_POSITIONS,
                     site_costs=DEFAULT_SITE_COSTS) -> Scenario:
    """Build the standard evaluation scenario, overridable field by field.

    ``areas`` may be a list of TargetArea or of (x, y) corners for 5 m x 5 m
    squares; defaults to two areas straddling the x axis.
    """
    radio = RadioConstants(wavelength=wavelength,
                           transmit_power=db_to_linear(transmit_power_dbm) * 1e-3,
                           noise_power=db_to_linear(noise_power_dbm) * 1e-3)
    aperture = 3.0 * wavelength if aperture is None else aperture
    step = 0.5 * wavelength if step is None else step
    min_spacing = 0.5 * wavelength if min_spacing is None else min_spacing
    grid = build_ma_grid(aperture, step)
    conflicts = conflict_set(grid, min_spacing)

    gamma = db_to_linear(snr_threshold_db)
    if areas is None:
        areas = [(55.0, 5.0), (55.0, -15.0)]
    built = []
    for j, a in enumerate(areas):
        if isinstance(a, TargetArea):
            built.append(replace(a, index=j))
        else:
            built.append(TargetArea(index=j, corner=np.asarray(a, dtype=float),
                                    extent=5.0, resolution=1.0, snr_threshold=gamma))

    centroid = np.mean([a.centroid() for a in built], axis=0)
    sites = []
    for i, (pos, c) in enumerate(zip(site_positions, site_costs)):
        pos = np.asarray(pos, dtype=float)
        if i == 0:
            orient, azim = "horizontal", 0.0
        else:
            orient = "vertical"
            azim = math.atan2(centroid[1] - pos[1], centroid[0] - pos[0])
        sites.append(IrsSite(index=i, position=pos, orientation=orient,
                             rows=panel_rows, cols=panel_cols,
                             spacing=wavelength / 2.0, install_cost=c,
                             facing_azimuth=azim))

    return Scenario(radio=radio, grid=grid, conflicts=conflicts,
                    sites=tuple(sites), areas=tuple(built),
                    cost=CostModel(ma_unit=ma_unit, element_unit=element_unit,
                                   fpa_ratio=fpa_ratio))


def db_to_linear(value_db: float) -> float:
    return 10.0 ** (value_db / 10.0)


def linear_to_db(value: float) -> float:
    if value <= 0:
        return -math.inf
    return 10.0 * math.log10(value)
