"""Uniform 2-D grids, scalar fields, discrete energies, and the Dirichlet machinery.

Fields are stored as float64 arrays of shape ``(nx, ny)`` indexed ``[i, j]``
with node ``(i, j)`` at physical position ``(ox + i*h, oy + j*h)``.  Row-major
serialization therefore walks ``j`` fastest.  Fields are treated as immutable
values: operations return new fields and never mutate their inputs.

The Dirichlet norm used throughout is the forward-difference sum over all
grid edges whose two endpoints both belong to the region (closure).  With
that convention the 5-point harmonic extension is the exact orthogonal
projector onto boundary data, which the projection identities below rely on.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import TYPE_CHECKING

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import ConfigurationError, ConvergenceError

if TYPE_CHECKING:
    from .medium import Medium

DEFAULT_HARMONIC_TOL = 1e-10


@dataclass(frozen=True)
class Grid:
    """Uniform isotropic grid: nx-by-ny nodes, spacing h, lower-left corner at origin."""

    nx: int
    ny: int
    h: float
    origin: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        if self.nx < 3 or self.ny < 3:
            raise ConfigurationError(f"grid needs at least 3x3 nodes, got {self.nx}x{self.ny}")
        if not self.h > 0:
            raise ConfigurationError(f"grid spacing must be positive, got {self.h}")
        object.__setattr__(self, "origin", (float(self.origin[0]), float(self.origin[1])))

    @property
    def shape(self) -> tuple[int, int]:
        return (self.nx, self.ny)

    @property
    def xs(self) -> np.ndarray:
        return self.origin[0] + self.h * np.arange(self.nx)

    @property
    def ys(self) -> np.ndarray:
        return self.origin[1] + self.h * np.arange(self.ny)

    @property
    def bounds(self) -> tuple[float, float, float, float]:
        """(xmin, xmax, ymin, ymax) of the node lattice."""
        ox, oy = self.origin
        return (ox, ox + (self.nx - 1) * self.h, oy, oy + (self.ny - 1) * self.h)

    def meshgrid(self) -> tuple[np.ndarray, np.ndarray]:
        return np.meshgrid(self.xs, self.ys, indexing="ij")

    def node_position(self, i: int, j: int) -> tuple[float, float]:
        return (self.origin[0] + i * self.h, self.origin[1] + j * self.h)

    def contains_point(self, x: float, y: float) -> bool:
        xmin, xmax, ymin, ymax = self.bounds
        return xmin <= x <= xmax and ymin <= y <= ymax

    def nearest_node(self, x: float, y: float) -> tuple[int, int]:
        i = int(round((x - self.origin[0]) / self.h))
        j = int(round((y - self.origin[1]) / self.h))
        return (min(max(i, 0), self.nx - 1), min(max(j, 0), self.ny - 1))


@dataclass(eq=False)
class ScalarField:
    """Real-valued function sampled on a grid."""

    grid: Grid
    data: np.ndarray

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.shape != self.grid.shape:
            raise ConfigurationError(
                f"field data shape {self.data.shape} does not match grid {self.grid.shape}"
            )

    @classmethod
    def zeros(cls, grid: Grid) -> "ScalarField":
        return cls(grid, np.zeros(grid.shape))

    @classmethod
    def from_function(cls, grid: Grid, fn) -> "ScalarField":
        xx, yy = grid.meshgrid()
        return cls(grid, np.asarray(fn(xx, yy), dtype=np.float64))

    def copy(self) -> "ScalarField":
        return ScalarField(self.grid, self.data.copy())

    def max_abs(self) -> float:
        return float(np.max(np.abs(self.data))) if self.data.size else 0.0

    def __add__(self, other: "ScalarField") -> "ScalarField":
        self._check_same_grid(other)
        return ScalarField(self.grid, self.data + other.data)

    def __sub__(self, other: "ScalarField") -> "ScalarField":
        self._check_same_grid(other)
        return ScalarField(self.grid, self.data - other.data)

    def __mul__(self, scalar: float) -> "ScalarField":
        return ScalarField(self.grid, self.data * float(scalar))

    __rmul__ = __mul__

    def _check_same_grid(self, other: "ScalarField"):
        if self.grid != other.grid:
            raise ConfigurationError("fields live on different grids")


@dataclass(eq=False)
class WaveState:
    """Pair [u, u_t] at one time level."""

    u: ScalarField
    ut: ScalarField

    def __post_init__(self):
        if self.u.grid != self.ut.grid:
            raise ConfigurationError("WaveState components live on different grids")

    @property
    def grid(self) -> Grid:
        return self.u.grid

    @classmethod
    def zeros(cls, grid: Grid) -> "WaveState":
        return cls(ScalarField.zeros(grid), ScalarField.zeros(grid))


class Region:
    """Node subset of a grid: an index-aligned rectangle or a rasterized disk.

    Exposes disjoint interior/boundary node sets.  For disks the boundary is
    the set of nodes within h/2 of the circle and the interior the nodes at
    radius < R - h/2, so every neighbor of an interior node lies in the
    region closure.  Boundary nodes carry a deterministic ordering (perimeter
    walk for rectangles, increasing angle for disks) used by boundary traces
    and harmonic extensions.
    """

    def __init__(self, grid: Grid, kind: str, interior_mask: np.ndarray,
                 boundary_nodes: tuple[np.ndarray, np.ndarray], params: dict):
        self.grid = grid
        self.kind = kind
        self.params = params
        self.interior_mask = interior_mask
        self.boundary_nodes = boundary_nodes
        self.boundary_mask = np.zeros(grid.shape, dtype=bool)
        self.boundary_mask[boundary_nodes] = True
        if not self.boundary_mask.any():
            raise ConfigurationError("region has an empty boundary node set")
        if not self.interior_mask.any():
            raise ConfigurationError("region has an empty interior node set")
        if (self.interior_mask & self.boundary_mask).any():
            raise ConfigurationError("region interior and boundary overlap")
        ring = np.zeros(grid.shape, dtype=bool)
        ring[0, :] = ring[-1, :] = ring[:, 0] = ring[:, -1] = True
        if ((self.interior_mask | self.boundary_mask) & ring).any():
            raise ConfigurationError("region touches the outermost grid ring")
        self.mask = self.interior_mask | self.boundary_mask
        self._harmonic_system = None  # assembled lazily, cached per region

    # -- constructors ------------------------------------------------------

    @classmethod
    def rectangle(cls, grid: Grid, i0: int, i1: int, j0: int, j1: int) -> "Region":
        """Index-aligned rectangle spanning nodes [i0..i1] x [j0..j1] inclusive."""
        if not (0 < i0 < i1 < grid.nx - 1 and 0 < j0 < j1 < grid.ny - 1):
            raise ConfigurationError(
                f"rectangle [{i0}..{i1}]x[{j0}..{j1}] must sit strictly inside the grid"
            )
        if i1 - i0 < 2 or j1 - j0 < 2:
            raise ConfigurationError("rectangle needs at least one interior node per axis")
        interior = np.zeros(grid.shape, dtype=bool)
        interior[i0 + 1:i1, j0 + 1:j1] = True
        # counterclockwise perimeter walk starting at (i0, j0), no duplicates
        bi, bj = [], []
        for i in range(i0, i1 + 1):
            bi.append(i); bj.append(j0)
        for j in range(j0 + 1, j1 + 1):
            bi.append(i1); bj.append(j)
        for i in range(i1 - 1, i0 - 1, -1):
            bi.append(i); bj.append(j1)
        for j in range(j1 - 1, j0, -1):
            bi.append(i0); bj.append(j)
        nodes = (np.asarray(bi), np.asarray(bj))
        params = {"i0": i0, "i1": i1, "j0": j0, "j1": j1}
        return cls(grid, "rectangle", interior, nodes, params)

    @classmethod
    def rectangle_from_physical(cls, grid: Grid, xmin: float, xmax: float,
                                ymin: float, ymax: float) -> "Region":
        """Largest index rectangle contained in the physical box (snapped inward)."""
        ox, oy = grid.origin
        h = grid.h
        i0 = int(np.ceil((xmin - ox) / h - 1e-9))
        i1 = int(np.floor((xmax - ox) / h + 1e-9))
        j0 = int(np.ceil((ymin - oy) / h - 1e-9))
        j1 = int(np.floor((ymax - oy) / h + 1e-9))
        return cls.rectangle(grid, i0, i1, j0, j1)

    @classmethod
    def disk(cls, grid: Grid, center: tuple[float, float], radius: float) -> "Region":
        """Rasterized disk: boundary nodes within h/2 of the circle, interior strictly inside."""
        if radius <= grid.h:
            raise ConfigurationError(f"disk radius {radius} too small for spacing {grid.h}")
        cx, cy = center
        xmin, xmax, ymin, ymax = grid.bounds
        if not (xmin < cx - radius and cx + radius < xmax and ymin < cy - radius and cy + radius < ymax):
            raise ConfigurationError("disk must sit strictly inside the grid")
        xx, yy = grid.meshgrid()
        r = np.hypot(xx - cx, yy - cy)
        boundary = np.abs(r - radius) <= grid.h / 2
        interior = r < radius - grid.h / 2
        ii, jj = np.nonzero(boundary)
        ang = np.arctan2(grid.ys[jj] - cy, grid.xs[ii] - cx)
        order = np.lexsort((r[ii, jj], ang))
        nodes = (ii[order], jj[order])
        params = {"center": (float(cx), float(cy)), "radius": float(radius)}
        return cls(grid, "disk", interior, nodes, params)

    # -- geometry helpers ----------------------------------------------------

    @property
    def boundary_coords(self) -> np.ndarray:
        """(n_boundary, 2) physical coordinates in boundary-node order."""
        ii, jj = self.boundary_nodes
        return np.column_stack((self.grid.xs[ii], self.grid.ys[jj]))

    def boundary_values(self, s: ScalarField) -> np.ndarray:
        self._check_grid(s)
        return s.data[self.boundary_nodes]

    def _check_grid(self, s: ScalarField):
        if s.grid != self.grid:
            raise ConfigurationError("field and region live on different grids")

    # -- harmonic system -----------------------------------------------------

    def _assemble_harmonic(self):
        """Sparse unit-diagonal 5-point system over interior unknowns (cached)."""
        if self._harmonic_system is not None:
            return self._harmonic_system
        nx, ny = self.grid.shape
        idx = -np.ones(self.grid.shape, dtype=np.int64)
        ii, jj = np.nonzero(self.interior_mask)
        n = ii.size
        idx[ii, jj] = np.arange(n)
        bidx = -np.ones(self.grid.shape, dtype=np.int64)
        bi, bj = self.boundary_nodes
        bidx[bi, bj] = np.arange(bi.size)
        rows, cols, vals = [], [], []
        brows, bcols = [], []
        for di, dj in ((1, 0), (-1, 0), (0, 1), (0, -1)):
            ni, nj = ii + di, jj + dj
            nint = idx[ni, nj]
            nbnd = bidx[ni, nj]
            in_int = nint >= 0
            in_bnd = nbnd >= 0
            if not np.all(in_int | in_bnd):
                raise ConfigurationError("interior node has a neighbor outside the region closure")
            rows.append(np.arange(n)[in_int]); cols.append(nint[in_int])
            vals.append(-np.ones(in_int.sum()))
            brows.append(np.arange(n)[in_bnd]); bcols.append(nbnd[in_bnd])
        a = sp.coo_matrix(
            (np.concatenate(vals + [4.0 * np.ones(n)]),
             (np.concatenate(rows + [np.arange(n)]), np.concatenate(cols + [np.arange(n)]))),
            shape=(n, n)).tocsr()
        # boundary coupling: rhs = B @ boundary_values
        b = sp.coo_matrix(
            (np.ones(sum(len(r) for r in brows)),
             (np.concatenate(brows), np.concatenate(bcols))),
            shape=(n, bi.size)).tocsr()
        self._harmonic_system = (a, b, (ii, jj))
        return self._harmonic_system


# -- discrete operators -------------------------------------------------------


def laplacian(data: np.ndarray, h: float) -> np.ndarray:
    """5-point Laplacian; zero on the outermost ring."""
    out = np.zeros_like(data)
    out[1:-1, 1:-1] = (
        data[2:, 1:-1] + data[:-2, 1:-1] + data[1:-1, 2:] + data[1:-1, :-2]
        - 4.0 * data[1:-1, 1:-1]
    ) / (h * h)
    return out


def apply_wave_operator(s: ScalarField, m: "Medium") -> ScalarField:
    """c(x)^2 times the 5-point Laplacian of s; zero on the outermost grid ring."""
    if s.grid != m.grid:
        raise ConfigurationError("field and medium live on different grids")
    out = laplacian(s.data, s.grid.h)
    out[1:-1, 1:-1] *= m.c_sq[1:-1, 1:-1]
    return ScalarField(s.grid, out)


def dirichlet_energy(s: ScalarField, r: Region) -> float:
    """Squared Dirichlet norm over r: sum of forward-difference squares on region edges.

    An edge contributes when both endpoints lie in the region closure; with
    the unit 2-D volume element the contribution is just the difference
    squared ((d/h)^2 * h^2).
    """
    r._check_grid(s)
    m = r.mask
    d = s.data
    ex = m[:-1, :] & m[1:, :]
    ey = m[:, :-1] & m[:, 1:]
    dx = (d[1:, :] - d[:-1, :])[ex]
    dy = (d[:, 1:] - d[:, :-1])[ey]
    return float(np.dot(dx, dx) + np.dot(dy, dy))


def hd_norm(s: ScalarField, r: Region) -> float:
    return float(np.sqrt(dirichlet_energy(s, r)))


def l2_norm(s: ScalarField, r: Region) -> float:
    v = s.data[r.mask]
    return float(np.sqrt(np.dot(v, v) * r.grid.h ** 2))


def energy(w: WaveState, r: Region, m: "Medium") -> float:
    """Wave energy over r: Dirichlet part of u plus the c^-2-weighted velocity part."""
    if w.grid != m.grid:
        raise ConfigurationError("state and medium live on different grids")
    ut = w.ut.data[r.mask]
    csq = m.c_sq[r.mask]
    kinetic = float(np.dot(ut / csq, ut) * r.grid.h ** 2)
    return dirichlet_energy(w.u, r) + kinetic


def harmonic_extension(boundary_values: np.ndarray, r: Region,
                       tol: float = DEFAULT_HARMONIC_TOL) -> ScalarField:
    """Discrete harmonic field on r matching the given boundary node values.

    Solves the unit-diagonal 5-point system by conjugate gradient until the
    max-norm residual of the stencil sum (h^2 times the discrete Laplacian)
    is at most tol * max(1, max|boundary_values|).  Zero outside the region.
    """
    if not tol > 0:
        raise ConfigurationError(f"tolerance must be positive, got {tol}")
    g = np.asarray(boundary_values, dtype=np.float64)
    bi, bj = r.boundary_nodes
    if g.shape != (bi.size,):
        raise ConfigurationError(
            f"expected {bi.size} boundary values, got shape {g.shape}")
    if not np.all(np.isfinite(g)):
        raise ConfigurationError("boundary values must be finite")
    a, b, (ii, jj) = r._assemble_harmonic()
    rhs = b @ g
    scale = max(1.0, float(np.max(np.abs(g))) if g.size else 0.0)
    target = tol * scale
    maxiter = 50 * max(r.grid.nx, r.grid.ny)
    x, _ = spla.cg(a, rhs, rtol=0.0, atol=0.2 * target, maxiter=maxiter)
    resid = float(np.max(np.abs(rhs - a @ x))) if x.size else 0.0
    if resid > target:
        raise ConvergenceError(
            f"harmonic solve did not reach residual {target:.3e} in {maxiter} iterations",
            residual=resid)
    out = np.zeros(r.grid.shape)
    out[ii, jj] = x
    out[bi, bj] = g
    return ScalarField(r.grid, out)


def project_HD(s: ScalarField, r: Region, tol: float = DEFAULT_HARMONIC_TOL) -> ScalarField:
    """Dirichlet projection on r: subtract the harmonic extension of the boundary trace.

    The result has exactly zero boundary trace on r and vanishes outside r.
    """
    r._check_grid(s)
    phi = harmonic_extension(r.boundary_values(s), r, tol)
    out = np.zeros(r.grid.shape)
    out[r.mask] = s.data[r.mask] - phi.data[r.mask]
    out[r.boundary_nodes] = 0.0
    return ScalarField(r.grid, out)


# -- phantoms ------------------------------------------------------------------


def _support_cutoff(center: tuple[float, float], sigma: float, support: Region) -> float:
    """Distance from a bump center to the support boundary; must cover 3 sigma."""
    cx, cy = center
    if support.kind == "disk":
        scx, scy = support.params["center"]
        rad = support.params["radius"]
        cut = rad - float(np.hypot(cx - scx, cy - scy))
    else:
        g = support.grid
        i0, i1 = support.params["i0"], support.params["i1"]
        j0, j1 = support.params["j0"], support.params["j1"]
        cut = min(cx - g.xs[i0], g.xs[i1] - cx, cy - g.ys[j0], g.ys[j1] - cy)
    if cut < 3.0 * sigma:
        raise ConfigurationError(
            f"bump at {center} with sigma {sigma} escapes the support region "
            f"(3*sigma = {3 * sigma:.4g} > clearance {cut:.4g})")
    return cut


def make_phantom(kind: str, params: dict, g: Grid, support: Region) -> ScalarField:
    """Nonnegative smooth source supported in the given region.

    ``gaussian_bump`` takes center and sigma; ``sum_of_bumps`` a list of
    (center, sigma) pairs.  Each bump is a Gaussian truncated to exact zero
    at its clearance radius and renormalized to peak 1, so the field is
    identically zero outside the support.
    """
    if support.grid != g:
        raise ConfigurationError("support region lives on a different grid")
    if kind == "gaussian_bump":
        bumps = [(tuple(params["center"]), float(params["sigma"]))]
    elif kind == "sum_of_bumps":
        bumps = [(tuple(c), float(s)) for c, s in params["bumps"]]
    else:
        raise ConfigurationError(f"unknown phantom kind {kind!r}")
    xx, yy = g.meshgrid()
    data = np.zeros(g.shape)
    for center, sigma in bumps:
        if sigma <= 0:
            raise ConfigurationError(f"bump sigma must be positive, got {sigma}")
        cut = _support_cutoff(center, sigma, support)
        r2 = (xx - center[0]) ** 2 + (yy - center[1]) ** 2
        tail = np.exp(-0.5 * (cut / sigma) ** 2)
        bump = (np.exp(-0.5 * r2 / sigma ** 2) - tail) / (1.0 - tail)
        np.maximum(bump, 0.0, out=bump)
        bump[r2 >= cut * cut] = 0.0
        data += bump
    data[~support.mask] = 0.0
    return ScalarField(g, data)
