"""Time-domain solver for (d_tt - c^2 Lap) u = 0 and the boundary operators built on it.

The stepper is the classic leapfrog scheme on the 5-point Laplacian with
homogeneous Dirichlet data on the outermost ring of the computational box.
The box is sized so that, by finite speed of propagation, the ring is never
reached within [0, T] (or an optional cosine-ramp sponge absorbs what would
reach it).

Time-derivative convention: the solver hands back
``u_t(T) = (u^N - u^{N-1})/dt + (dt/2) c^2 Lap u^N``,
which is the exact algebraic inverse of the Taylor seed used to start a
two-level scheme from Cauchy data.  A backward solve fed the full discrete
Cauchy data therefore retraces the forward recurrence exactly (to round-off),
and the reconstruction identities built on these solves hold discretely.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import (
    CompatibilityError,
    ConfigurationError,
    InstabilityError,
)
from .grid_field import Grid, Region, ScalarField, WaveState
from .medium import Medium

SPONGE_NODES = 20
DEFAULT_CFL = 0.4


@dataclass(frozen=True)
class SolverConfig:
    """Time-stepping parameters: step size, step count, CFL number, box padding.

    ``box_margin`` is the declared physical padding of the computational box
    beyond the measurement rectangle; ``None`` means "whatever the grid
    provides", which ``forward`` checks against c_max*T unless the sponge is
    enabled.
    """

    dt: float
    n_steps: int
    cfl: float = DEFAULT_CFL
    box_margin: float | None = None
    sponge: bool = False

    def __post_init__(self):
        if not self.dt > 0:
            raise ConfigurationError(f"dt must be positive, got {self.dt}")
        if self.n_steps < 1:
            raise ConfigurationError(f"n_steps must be at least 1, got {self.n_steps}")
        if not 0 < self.cfl < 1:
            raise ConfigurationError(f"CFL number must lie in (0,1), got {self.cfl}")

    @property
    def T(self) -> float:
        return self.dt * self.n_steps

    @classmethod
    def for_time(cls, m: Medium, T: float, cfl: float = DEFAULT_CFL,
                 box_margin: float | None = None, sponge: bool = False) -> "SolverConfig":
        """Largest stable dt that divides T into an integer number of steps."""
        if not T > 0:
            raise ConfigurationError(f"final time must be positive, got {T}")
        dt_max = cfl_dt(m, cfl)
        n = max(1, int(math.ceil(T / dt_max - 1e-12)))
        return cls(dt=T / n, n_steps=n, cfl=cfl, box_margin=box_margin, sponge=sponge)


@dataclass(eq=False)
class BoundaryTrace:
    """Time series of u on ordered detector nodes: shape (n_steps+1, n_det).

    ``points`` holds the detector coordinates; sampling is uniform with step
    ``dt`` starting at t = 0.
    """

    points: np.ndarray
    dt: float
    values: np.ndarray

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64)
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.points.ndim != 2 or self.points.shape[1] != 2:
            raise ConfigurationError("trace points must be an (n_det, 2) array")
        if self.values.ndim != 2 or self.values.shape[1] != self.points.shape[0]:
            raise ConfigurationError(
                f"trace values {self.values.shape} do not match {self.points.shape[0]} detectors")
        if not self.dt > 0:
            raise ConfigurationError(f"trace dt must be positive, got {self.dt}")
        if not np.all(np.isfinite(self.values)):
            raise ConfigurationError("trace values must be finite")

    @property
    def n_steps(self) -> int:
        return self.values.shape[0] - 1

    @property
    def times(self) -> np.ndarray:
        return self.dt * np.arange(self.values.shape[0])

    @property
    def T(self) -> float:
        return self.dt * self.n_steps

    def _check_compatible(self, other: "BoundaryTrace"):
        if self.values.shape != other.values.shape or abs(self.dt - other.dt) > 1e-14 * self.dt \
                or not np.allclose(self.points, other.points):
            raise ConfigurationError("traces have different sampling or detectors")

    def __add__(self, other: "BoundaryTrace") -> "BoundaryTrace":
        self._check_compatible(other)
        return BoundaryTrace(self.points, self.dt, self.values + other.values)

    def __sub__(self, other: "BoundaryTrace") -> "BoundaryTrace":
        self._check_compatible(other)
        return BoundaryTrace(self.points, self.dt, self.values - other.values)

    def __mul__(self, scalar: float) -> "BoundaryTrace":
        return BoundaryTrace(self.points, self.dt, self.values * float(scalar))

    __rmul__ = __mul__


def cfl_dt(m: Medium, cfl: float) -> float:
    """Stable leapfrog step: cfl * h / (c_max * sqrt(2))."""
    if not 0 < cfl < 1:
        raise ConfigurationError(f"CFL number must lie in (0,1), got {cfl}")
    return cfl * m.grid.h / (m.c_max * math.sqrt(2.0))


def _check_cfl(dt: float, m: Medium, cfl: float = 1.0):
    limit = cfl * m.grid.h / (m.c_max * math.sqrt(2.0))
    if dt > limit * (1.0 + 1e-12):
        raise ConfigurationError(
            f"dt {dt:.6g} violates the stability bound {limit:.6g} for this medium")


def step(prev: ScalarField, curr: ScalarField, m: Medium, dt: float,
         step_index: int | None = None) -> ScalarField:
    """One leapfrog step: 2*curr - prev + dt^2 c^2 Lap(curr); ring held at zero."""
    if prev.grid != curr.grid or curr.grid != m.grid:
        raise ConfigurationError("fields and medium live on different grids")
    _check_cfl(dt, m)
    nxt = np.zeros_like(curr.data)
    _leap_into(nxt, prev.data, curr.data, m.c_sq, m.grid.h, dt)
    if not np.all(np.isfinite(nxt)):
        where = f" at step {step_index}" if step_index is not None else ""
        raise InstabilityError(f"non-finite values appeared{where}")
    return ScalarField(curr.grid, nxt)


def _leap_into(out, prev, curr, c_sq, h, dt):
    """Interior leapfrog update written into ``out``; ring rows untouched."""
    lam = (dt * dt) / (h * h)
    out[1:-1, 1:-1] = (
        2.0 * curr[1:-1, 1:-1] - prev[1:-1, 1:-1]
        + lam * c_sq[1:-1, 1:-1] * (
            curr[2:, 1:-1] + curr[:-2, 1:-1] + curr[1:-1, 2:] + curr[1:-1, :-2]
            - 4.0 * curr[1:-1, 1:-1])
    )


def _taylor_second_level(u0, ut0, c_sq, h, dt):
    """u^1 = u^0 + dt u_t^0 + dt^2/2 c^2 Lap u^0, zero ring."""
    u1 = np.zeros_like(u0)
    lam = 0.5 * dt * dt / (h * h)
    u1[1:-1, 1:-1] = (
        u0[1:-1, 1:-1] + dt * ut0[1:-1, 1:-1]
        + lam * c_sq[1:-1, 1:-1] * (
            u0[2:, 1:-1] + u0[:-2, 1:-1] + u0[1:-1, 2:] + u0[1:-1, :-2]
            - 4.0 * u0[1:-1, 1:-1])
    )
    return u1


def _consistent_ut(u_last, u_prev, c_sq, h, dt):
    """Time derivative matching the Taylor seed: (u^N - u^{N-1})/dt + dt/2 c^2 Lap u^N."""
    ut = (u_last - u_prev) / dt
    ut[1:-1, 1:-1] += 0.5 * dt * c_sq[1:-1, 1:-1] * (
        u_last[2:, 1:-1] + u_last[:-2, 1:-1] + u_last[1:-1, 2:] + u_last[1:-1, :-2]
        - 4.0 * u_last[1:-1, 1:-1]) / (h * h)
    return ut


def _sponge_sigma(grid: Grid, c_max: float) -> np.ndarray:
    """Cosine-ramp damping over the outermost SPONGE_NODES ring."""
    n = SPONGE_NODES
    ii = np.minimum.outer(np.minimum(np.arange(grid.nx), np.arange(grid.nx)[::-1]),
                          np.minimum(np.arange(grid.ny), np.arange(grid.ny)[::-1]))
    depth = np.clip((n - ii) / n, 0.0, 1.0)
    sigma_max = 5.0 * c_max / (n * grid.h)
    return sigma_max * 0.5 * (1.0 - np.cos(np.pi * depth))


def _support_inside(f: WaveState, omega: Region):
    nz = (f.u.data != 0.0) | (f.ut.data != 0.0)
    if not nz.any():
        return
    if (nz & ~omega.interior_mask).any():
        raise ConfigurationError(
            "initial data must be supported strictly inside the measurement rectangle")


def _check_box_margin(omega: Region, m: Medium, T: float, cfg: SolverConfig):
    g = m.grid
    xmin, xmax, ymin, ymax = g.bounds
    i0, i1 = omega.params["i0"], omega.params["i1"]
    j0, j1 = omega.params["j0"], omega.params["j1"]
    margin = min(g.xs[i0] - xmin, xmax - g.xs[i1], g.ys[j0] - ymin, ymax - g.ys[j1])
    declared = cfg.box_margin if cfg.box_margin is not None else 0.0
    if cfg.sponge:
        required = max(declared, SPONGE_NODES * g.h)
        reason = "the sponge layer"
    else:
        required = max(declared, m.c_max * T)
        reason = "c_max*T without a sponge"
    if margin + 1e-9 < required:
        raise ConfigurationError(
            f"computational box margin {margin:.4g} is below the required "
            f"{required:.4g} ({reason})")


def evolve(f: WaveState, m: Medium, T: float, cfg: SolverConfig, *,
           pin_zero: Region | None = None, on_sample=None,
           sample_every: int = 1) -> WaveState:
    """Free evolution of Cauchy data over [0, T] without boundary recording.

    ``pin_zero`` holds a region's boundary nodes at zero every level, turning
    that region into a closed Dirichlet box.  ``on_sample(k, state)`` is
    called every ``sample_every`` steps with the state at step k (velocity by
    the consistent two-level formula).  Returns the state at t = T.
    """
    if f.grid != m.grid:
        raise ConfigurationError("state and medium live on different grids")
    if abs(cfg.T - T) > 1e-9 * max(T, 1.0):
        raise ConfigurationError(f"solver config covers T = {cfg.T:.6g}, requested {T:.6g}")
    _check_cfl(cfg.dt, m, cfg.cfl)
    g, dt = m.grid, cfg.dt
    pins = pin_zero.boundary_nodes if pin_zero is not None else None

    def sample(k, curr, prev):
        if on_sample is not None and k % sample_every == 0:
            ut = _consistent_ut(curr, prev, m.c_sq, g.h, dt)
            on_sample(k, WaveState(ScalarField(g, curr.copy()), ScalarField(g, ut)))

    prev = f.u.data.copy()
    if pins is not None:
        prev[pins] = 0.0
    curr = _taylor_second_level(prev, f.ut.data, m.c_sq, g.h, dt)
    if pins is not None:
        curr[pins] = 0.0
    sample(1, curr, prev)
    nxt = np.zeros_like(prev)
    for k in range(2, cfg.n_steps + 1):
        _leap_into(nxt, prev, curr, m.c_sq, g.h, dt)
        if pins is not None:
            nxt[pins] = 0.0
        if not np.all(np.isfinite(nxt)):
            raise InstabilityError(f"non-finite values appeared at step {k}")
        prev, curr, nxt = curr, nxt, prev
        sample(k, curr, prev)
    ut = _consistent_ut(curr, prev, m.c_sq, g.h, dt)
    return WaveState(ScalarField(g, curr.copy()), ScalarField(g, ut))


def forward(f: WaveState, m: Medium, omega: Region, T: float, cfg: SolverConfig,
            *, return_final: bool = False, on_step=None):
    """Evolve Cauchy data f and record u on the rectangle boundary over [0, T].

    Returns the boundary trace; with ``return_final`` also the state at t = T
    (velocity via the consistent two-level formula).  ``on_step(k, n_steps)``
    is called after each step when given.
    """
    if omega.kind != "rectangle":
        raise ConfigurationError("measurement region must be a grid-aligned rectangle")
    if f.grid != m.grid or omega.grid != m.grid:
        raise ConfigurationError("state, medium and region must share one grid")
    if abs(cfg.T - T) > 1e-9 * max(T, 1.0):
        raise ConfigurationError(
            f"solver config covers T = {cfg.T:.6g}, requested {T:.6g}")
    _check_cfl(cfg.dt, m, cfg.cfl)
    _support_inside(f, omega)
    _check_box_margin(omega, m, T, cfg)

    g, dt = m.grid, cfg.dt
    bi, bj = omega.boundary_nodes
    values = np.empty((cfg.n_steps + 1, bi.size))
    sigma = _sponge_sigma(g, m.c_max) if cfg.sponge else None

    prev = f.u.data.copy()
    values[0] = prev[bi, bj]
    curr = _taylor_second_level(prev, f.ut.data, m.c_sq, g.h, dt)
    if sigma is not None:
        curr /= 1.0 + 0.5 * dt * sigma
    values[1] = curr[bi, bj]
    if on_step is not None:
        on_step(1, cfg.n_steps)

    nxt = np.zeros_like(prev)
    for k in range(2, cfg.n_steps + 1):
        _leap_into(nxt, prev, curr, m.c_sq, g.h, dt)
        if sigma is not None:
            nxt[1:-1, 1:-1] += 0.5 * dt * sigma[1:-1, 1:-1] * prev[1:-1, 1:-1]
            nxt[1:-1, 1:-1] /= 1.0 + 0.5 * dt * sigma[1:-1, 1:-1]
        if not np.all(np.isfinite(nxt)):
            raise InstabilityError(f"non-finite values appeared at step {k}")
        prev, curr, nxt = curr, nxt, prev
        values[k] = curr[bi, bj]
        if on_step is not None:
            on_step(k, cfg.n_steps)

    trace = BoundaryTrace(points=omega.boundary_coords, dt=dt, values=values)
    if not return_final:
        return trace
    ut = _consistent_ut(curr, prev, m.c_sq, g.h, dt)
    final = WaveState(ScalarField(g, curr.copy()), ScalarField(g, ut))
    return trace, final


def solve_backward(boundary: BoundaryTrace, cauchy_at_T: WaveState, m: Medium,
                   omega: Region, cfg: SolverConfig, on_step=None) -> WaveState:
    """Solve the mixed problem on [0,T] x omega backwards from t = T.

    Interior nodes follow the leapfrog recurrence; rectangle-boundary nodes
    are pinned to the recorded trace at every level.  Returns [v(0), v_t(0)].
    """
    if omega.kind != "rectangle":
        raise ConfigurationError("backward solve needs a grid-aligned rectangle")
    if cauchy_at_T.grid != m.grid or omega.grid != m.grid:
        raise ConfigurationError("state, medium and region must share one grid")
    if not np.allclose(boundary.points, omega.boundary_coords, atol=1e-9 * m.grid.h):
        raise ConfigurationError("trace detectors do not match the rectangle boundary nodes")
    _check_cfl(boundary.dt, m)

    g, dt = m.grid, boundary.dt
    n = boundary.n_steps
    bi, bj = omega.boundary_nodes
    scale = max(1.0, float(np.max(np.abs(boundary.values))))
    mismatch = float(np.max(np.abs(cauchy_at_T.u.data[bi, bj] - boundary.values[n])))
    if mismatch > 1e-9 * scale:
        raise CompatibilityError(
            f"Cauchy data disagrees with the trace at t = T by {mismatch:.3e} "
            f"(tolerance {1e-9 * scale:.3e})")

    i0, i1 = omega.params["i0"], omega.params["i1"]
    j0, j1 = omega.params["j0"], omega.params["j1"]
    win = (slice(i0, i1 + 1), slice(j0, j1 + 1))
    win_in = (slice(i0 + 1, i1), slice(j0 + 1, j1))
    lam = (dt * dt) / (g.h * g.h)
    c_sq_in = m.c_sq[win_in]

    # two seed levels at t = T and T - dt
    curr = np.zeros(g.shape)       # v^{k+1}
    curr[win] = cauchy_at_T.u.data[win]
    curr[bi, bj] = boundary.values[n]
    prev = np.zeros(g.shape)       # v^k being built, holds v^{N-1} first
    u0, ut0 = cauchy_at_T.u.data, cauchy_at_T.ut.data
    prev[win_in] = (
        u0[win_in] - dt * ut0[win_in]
        + 0.5 * lam * c_sq_in * (
            u0[i0 + 2:i1 + 1, j0 + 1:j1] + u0[i0:i1 - 1, j0 + 1:j1]
            + u0[i0 + 1:i1, j0 + 2:j1 + 1] + u0[i0 + 1:i1, j0:j1 - 1]
            - 4.0 * u0[win_in])
    )
    prev[bi, bj] = boundary.values[n - 1]
    if on_step is not None:
        on_step(1, n)

    nxt = np.zeros(g.shape)
    for k in range(n - 2, -1, -1):  # computes v^k from (v^{k+1}, v^{k+2})
        nxt[win_in] = (
            2.0 * prev[win_in] - curr[win_in]
            + lam * c_sq_in * (
                prev[i0 + 2:i1 + 1, j0 + 1:j1] + prev[i0:i1 - 1, j0 + 1:j1]
                + prev[i0 + 1:i1, j0 + 2:j1 + 1] + prev[i0 + 1:i1, j0:j1 - 1]
                - 4.0 * prev[win_in])
        )
        nxt[bi, bj] = boundary.values[k]
        if not np.all(np.isfinite(nxt[win])):
            raise InstabilityError(f"non-finite values appeared at backward step {k}")
        curr, prev, nxt = prev, nxt, curr
        if on_step is not None:
            on_step(n - k, n)

    # prev = v^0, curr = v^1; invert the forward Taylor seed for v_t(0)
    v0 = np.zeros(g.shape)
    v0[win] = prev[win]
    vt0 = np.zeros(g.shape)
    vt0[win] = (curr[win] - prev[win]) / dt
    vt0[win_in] -= 0.5 * (dt / (g.h * g.h)) * c_sq_in * (
        prev[i0 + 2:i1 + 1, j0 + 1:j1] + prev[i0:i1 - 1, j0 + 1:j1]
        + prev[i0 + 1:i1, j0 + 2:j1 + 1] + prev[i0 + 1:i1, j0:j1 - 1]
        - 4.0 * prev[win_in])
    return WaveState(ScalarField(g, v0), ScalarField(g, vt0))


def _exterior_solve(boundary: BoundaryTrace, omega: Region, cfg: SolverConfig,
                    probe_nodes=None):
    """Unit-speed exterior solve driven by Dirichlet data on the rectangle boundary.

    Zero initial data; the rectangle interior is masked to zero so only the
    exterior nodes evolve.  Records the one-sided exterior normal difference
    quotient on the boundary nodes (axis quotients averaged at corners) and,
    optionally, u at probe nodes.
    """
    if omega.kind != "rectangle":
        raise ConfigurationError("exterior solve needs a grid-aligned rectangle")
    g = omega.grid
    dt = boundary.dt
    if dt > g.h / math.sqrt(2.0) * (1.0 + 1e-12):
        raise ConfigurationError("trace dt violates the unit-speed stability bound")
    if not np.allclose(boundary.points, omega.boundary_coords, atol=1e-9 * g.h):
        raise ConfigurationError("trace detectors do not match the rectangle boundary nodes")

    bi, bj = omega.boundary_nodes
    i0, i1 = omega.params["i0"], omega.params["i1"]
    j0, j1 = omega.params["j0"], omega.params["j1"]
    # outward axis neighbor per boundary node; the four corners carry two and
    # average both axis quotients
    n1i, n1j = bi.copy(), bj.copy()
    n1i[bi == i0] -= 1
    n1i[bi == i1] += 1
    side = (bi != i0) & (bi != i1)
    n1j[side & (bj == j0)] -= 1
    n1j[side & (bj == j1)] += 1
    corner = ((bi == i0) | (bi == i1)) & ((bj == j0) | (bj == j1))
    ci, cj = bi[corner], bj[corner]
    n2i, n2j = ci.copy(), cj.copy()
    n2j[cj == j0] -= 1
    n2j[cj == j1] += 1
    n_steps = boundary.n_steps
    normal = np.zeros((n_steps + 1, bi.size))
    probes = None
    if probe_nodes is not None:
        probes = np.zeros((n_steps + 1, len(probe_nodes)))
        pi = np.asarray([p[0] for p in probe_nodes])
        pj = np.asarray([p[1] for p in probe_nodes])

    ones = np.ones(g.shape)
    interior_win = (slice(i0 + 1, i1), slice(j0 + 1, j1))

    def record(level, arr):
        q = (arr[n1i, n1j] - arr[bi, bj]) / g.h
        q[corner] = 0.5 * (q[corner] + (arr[n2i, n2j] - arr[ci, cj]) / g.h)
        normal[level] = q
        if probes is not None:
            probes[level] = arr[pi, pj]

    prev = np.zeros(g.shape)
    prev[bi, bj] = boundary.values[0]
    prev[interior_win] = 0.0
    record(0, prev)
    curr = _taylor_second_level(prev, np.zeros(g.shape), ones, g.h, dt)
    curr[bi, bj] = boundary.values[1]
    curr[interior_win] = 0.0
    record(1, curr)

    nxt = np.zeros(g.shape)
    for k in range(2, n_steps + 1):
        _leap_into(nxt, prev, curr, ones, g.h, dt)
        nxt[bi, bj] = boundary.values[k]
        nxt[interior_win] = 0.0
        if not np.all(np.isfinite(nxt)):
            raise InstabilityError(f"non-finite values appeared at exterior step {k}")
        prev, curr, nxt = curr, nxt, prev
        record(k, curr)

    return normal, probes


def exterior_neumann(boundary: BoundaryTrace, omega: Region,
                     cfg: SolverConfig) -> BoundaryTrace:
    """Exterior Neumann data generated by the trace: solves the unit-speed
    exterior problem with Dirichlet data = boundary and returns the one-sided
    exterior normal difference quotient on the rectangle boundary per step."""
    normal, _ = _exterior_solve(boundary, omega, cfg)
    return BoundaryTrace(points=omega.boundary_coords, dt=boundary.dt, values=normal)


def exterior_field_probes(boundary: BoundaryTrace, omega: Region, cfg: SolverConfig,
                          points: list[tuple[float, float]]) -> np.ndarray:
    """Time series of the exterior solution at the grid nodes nearest to ``points``."""
    g = omega.grid
    nodes = []
    for (x, y) in points:
        i, j = g.nearest_node(x, y)
        if omega.mask[i, j]:
            raise ConfigurationError(f"probe point {(x, y)} lies inside the rectangle")
        nodes.append((i, j))
    _, probes = _exterior_solve(boundary, omega, cfg, probe_nodes=nodes)
    return probes
