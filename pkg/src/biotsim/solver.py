"""Explicit finite-volume time-domain solver for the coupled wave system.

Fluid region: scalar pressure wave equation with a point source, null
Dirichlet pressure on the outer boundary (realized by pinning the outermost
cell ring to zero).  Bone region: the coupled solid/fluid displacement
system with stress law sigma = [(P-2N)e + Q eps] I + 2N ebar (ebar the
symmetric gradient of the solid displacement) and s = Q e + R eps.

Both regions advance with centered (leapfrog) second differences in time;
the damping term is centered at the current level, which couples the two
displacement fields through a constant 2x2 system solved per cell.  At the
fluid/bone interface the finite-volume face fluxes are closed directly by
the boundary tractions sigma.n = -(1-phi) P n, s = -phi P and, on the
fluid side, by the normal mixture acceleration via Euler's relation:
dP/dn = -rho_f d2/dt2 [(1-phi) Us + phi Uf] . n.

Update order within one step: bone first (uses the current fluid pressure
at the interface), then fluid (uses the bone acceleration centered at the
current level).  Point source and receiver use bilinear cell weights so
that off-center positions retain second-order accuracy; a position exactly
on a cell center degenerates to a single cell.

A solver invocation owns its state and is strictly sequential; any number
of invocations may run concurrently.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, NamedTuple, Optional

import numpy as np

from .material import AdmissibilityError, BiotParams, ElasticConstants, FluidProps, \
    elastic_constants, max_wave_speed
from .domain import Grid, ReceiverSpec, RegionMap, SignalTrace, SourceSpec, \
    _require_fluid_interior, bilinear_weights


class InstabilityError(RuntimeError):
    """Field values became non-finite or grew without bound (CFL violation
    or inadmissible parameters)."""


class Domain(NamedTuple):
    grid: Grid
    region: Optional[RegionMap]
    source: SourceSpec
    receiver: ReceiverSpec


@dataclass(frozen=True)
class StepControl:
    """Time discretization: dt must satisfy the CFL bound and the total
    stepped time must cover the last receiver sample."""

    dt: float
    n_steps: int
    cfl: float = 0.5

    def __post_init__(self):
        if not (self.dt > 0):
            raise ValueError(f"dt must be > 0, got {self.dt}")
        if self.n_steps < 1:
            raise ValueError(f"n_steps must be >= 1, got {self.n_steps}")
        if not (0 < self.cfl <= 1):
            raise ValueError(f"cfl must be in (0, 1], got {self.cfl}")


def stable_dt(grid: Grid, fluid: FluidProps, ec: Optional[ElasticConstants] = None,
              cfl: float = 0.5) -> float:
    """CFL time-step bound from the fastest wave speed in the domain."""
    v_max = fluid.c
    if ec is not None:
        v_max = max(v_max, max_wave_speed(ec))
    return cfl * min(grid.dx, grid.dy) / v_max


def make_step_control(grid: Grid, fluid: FluidProps, receiver: ReceiverSpec,
                      ec: Optional[ElasticConstants] = None, cfl: float = 0.5
                      ) -> StepControl:
    """Pick dt at or below the CFL bound so that uniformly spaced receiver
    sample times land exactly on step boundaries (bit-exact sampling)."""
    dt_max = stable_dt(grid, fluid, ec, cfl)
    t = receiver.times
    dts = np.diff(t)
    uniform = t.size >= 2 and np.allclose(dts, dts[0], rtol=1e-9, atol=0.0)
    if t.size == 1 or uniform:
        interval = float(t[0]) if t.size == 1 else float(dts[0])
        # sample grid must be t_i = i * interval for the exact-divide rule
        if abs(t[0] / interval - round(t[0] / interval)) < 1e-9:
            n_sub = max(1, math.ceil(interval / dt_max - 1e-12))
            dt = interval / n_sub
            n_steps = int(round(t[-1] / dt))
            return StepControl(dt=dt, n_steps=n_steps, cfl=cfl)
    dt = dt_max
    return StepControl(dt=dt, n_steps=math.ceil(t[-1] / dt), cfl=cfl)


@dataclass
class FieldState:
    """Two time levels of every field; pressure lives on the full grid
    (zero on bone cells and the boundary ring), displacements on the bone
    window with component-first layout (2, nbx, nby)."""

    p_prev: np.ndarray
    p_now: np.ndarray
    us_prev: Optional[np.ndarray]
    us_now: Optional[np.ndarray]
    uf_prev: Optional[np.ndarray]
    uf_now: Optional[np.ndarray]
    t_now: float = 0.0
    step: int = 0

    @classmethod
    def zeros(cls, grid: Grid, region: Optional[RegionMap]) -> "FieldState":
        p0 = np.zeros((grid.nx, grid.ny))
        p1 = np.zeros((grid.nx, grid.ny))
        if region is None:
            return cls(p0, p1, None, None, None, None)
        nbx, nby = region.bone_shape
        return cls(p0, p1, np.zeros((2, nbx, nby)), np.zeros((2, nbx, nby)),
                   np.zeros((2, nbx, nby)), np.zeros((2, nbx, nby)))


def _cell_grad(f: np.ndarray, h: float, axis: int) -> np.ndarray:
    """Cell-centered derivative, central inside and one-sided at the edges
    of the bone window; zero when the window is a single cell wide."""
    if f.shape[axis] == 1:
        return np.zeros_like(f)
    return np.gradient(f, h, axis=axis)


def couple_interface(p_now: np.ndarray, region: RegionMap, phi: float) -> dict:
    """Bone-side interface closures from the adjacent fluid pressures.

    For each side of the bone rectangle returns (normal traction, fluid
    force potential) arrays: sigma_nn = -(1-phi) P, s = -phi P, with the
    tangential traction identically zero.
    """
    il, ih, jl, jh = region.i_lo, region.i_hi, region.j_lo, region.j_hi
    out = {}
    for side, p_adj in (("west", p_now[il - 1, jl:jh + 1]),
                        ("east", p_now[ih + 1, jl:jh + 1]),
                        ("south", p_now[il:ih + 1, jl - 1]),
                        ("north", p_now[il:ih + 1, jh + 1])):
        out[side] = (-(1.0 - phi) * p_adj, -phi * p_adj)
    return out


def step_biot(state: FieldState, region: RegionMap, ec: ElasticConstants,
              phi: float, shear: float, dt: float, grid: Grid
              ) -> tuple[np.ndarray, np.ndarray]:
    """One bone update; returns (us_next, uf_next) without mutating state."""
    dx, dy = grid.dx, grid.dy
    usx, usy = state.us_now[0], state.us_now[1]
    ufx, ufy = state.uf_now[0], state.uf_now[1]
    nbx, nby = usx.shape
    cQ, cR, cN = ec.Q, ec.R, shear
    lam = ec.P - 2.0 * cN

    tr = couple_interface(state.p_now, region, phi)
    (sig_w, s_w), (sig_e, s_e) = tr["west"], tr["east"]
    (sig_s, s_s), (sig_n, s_n) = tr["south"], tr["north"]

    gy_usx = _cell_grad(usx, dy, 1)
    gy_usy = _cell_grad(usy, dy, 1)
    gy_ufy = _cell_grad(ufy, dy, 1)
    gx_usx = _cell_grad(usx, dx, 0)
    gx_usy = _cell_grad(usy, dx, 0)
    gx_ufx = _cell_grad(ufx, dx, 0)

    # x-faces: (nbx+1, nby); rows 0 and nbx are the west/east interfaces
    sig_xx = np.empty((nbx + 1, nby))
    sig_xy_x = np.empty((nbx + 1, nby))
    s_x = np.empty((nbx + 1, nby))
    if nbx > 1:
        dusx_dx = np.diff(usx, axis=0) / dx
        dusy_dx = np.diff(usy, axis=0) / dx
        dufx_dx = np.diff(ufx, axis=0) / dx
        dusx_dy = 0.5 * (gy_usx[:-1, :] + gy_usx[1:, :])
        dusy_dy = 0.5 * (gy_usy[:-1, :] + gy_usy[1:, :])
        dufy_dy = 0.5 * (gy_ufy[:-1, :] + gy_ufy[1:, :])
        e = dusx_dx + dusy_dy
        eps = dufx_dx + dufy_dy
        sig_xx[1:-1] = lam * e + cQ * eps + 2.0 * cN * dusx_dx
        sig_xy_x[1:-1] = cN * (dusx_dy + dusy_dx)
        s_x[1:-1] = cQ * e + cR * eps
    sig_xx[0], sig_xy_x[0], s_x[0] = sig_w, 0.0, s_w
    sig_xx[-1], sig_xy_x[-1], s_x[-1] = sig_e, 0.0, s_e

    # y-faces: (nbx, nby+1); columns 0 and nby are the south/north interfaces
    sig_yy = np.empty((nbx, nby + 1))
    sig_xy_y = np.empty((nbx, nby + 1))
    s_y = np.empty((nbx, nby + 1))
    if nby > 1:
        dusy_dy2 = np.diff(usy, axis=1) / dy
        dusx_dy2 = np.diff(usx, axis=1) / dy
        dufy_dy2 = np.diff(ufy, axis=1) / dy
        dusx_dx2 = 0.5 * (gx_usx[:, :-1] + gx_usx[:, 1:])
        dusy_dx2 = 0.5 * (gx_usy[:, :-1] + gx_usy[:, 1:])
        dufx_dx2 = 0.5 * (gx_ufx[:, :-1] + gx_ufx[:, 1:])
        e2 = dusx_dx2 + dusy_dy2
        eps2 = dufx_dx2 + dufy_dy2
        sig_yy[:, 1:-1] = lam * e2 + cQ * eps2 + 2.0 * cN * dusy_dy2
        sig_xy_y[:, 1:-1] = cN * (dusx_dy2 + dusy_dx2)
        s_y[:, 1:-1] = cQ * e2 + cR * eps2
    sig_yy[:, 0], sig_xy_y[:, 0], s_y[:, 0] = sig_s, 0.0, s_s
    sig_yy[:, -1], sig_xy_y[:, -1], s_y[:, -1] = sig_n, 0.0, s_n

    fsx = np.diff(sig_xx, axis=0) / dx + np.diff(sig_xy_y, axis=1) / dy
    fsy = np.diff(sig_xy_x, axis=0) / dx + np.diff(sig_yy, axis=1) / dy
    ffx = np.diff(s_x, axis=0) / dx
    ffy = np.diff(s_y, axis=1) / dy

    mi11, mi12, mi22 = _mass_solve_coeffs(ec, dt)
    usx_p, usy_p = state.us_prev[0], state.us_prev[1]
    ufx_p, ufy_p = state.uf_prev[0], state.uf_prev[1]
    dt2 = dt * dt
    r11, r12, r22, b = ec.rho11, ec.rho12, ec.rho22, ec.b
    us_next = np.empty_like(state.us_now)
    uf_next = np.empty_like(state.uf_now)
    for comp, (fs, ff, un, un_p, vn, vn_p) in enumerate((
            (fsx, ffx, usx, usx_p, ufx, ufx_p),
            (fsy, ffy, usy, usy_p, ufy, ufy_p))):
        rhs_s = fs + (r11 * (2.0 * un - un_p) + r12 * (2.0 * vn - vn_p)) / dt2 \
            + b * (un_p - vn_p) / (2.0 * dt)
        rhs_f = ff + (r12 * (2.0 * un - un_p) + r22 * (2.0 * vn - vn_p)) / dt2 \
            + b * (vn_p - un_p) / (2.0 * dt)
        us_next[comp] = mi11 * rhs_s + mi12 * rhs_f
        uf_next[comp] = mi12 * rhs_s + mi22 * rhs_f
    return us_next, uf_next


def _mass_solve_coeffs(ec: ElasticConstants, dt: float) -> tuple[float, float, float]:
    """Inverse of M = A/dt^2 + b D/(2 dt) with A the density matrix and
    D = [[1,-1],[-1,1]]; constant across cells and components."""
    hb = ec.b / (2.0 * dt)
    dt2 = dt * dt
    m11 = ec.rho11 / dt2 + hb
    m12 = ec.rho12 / dt2 - hb
    m22 = ec.rho22 / dt2 + hb
    det = m11 * m22 - m12 * m12
    if det <= 0:
        raise AdmissibilityError("damped mass system is singular")
    return m22 / det, -m12 / det, m11 / det


def mixture_accel_border(us_prev, us_now, us_next, uf_prev, uf_now, uf_next,
                         phi: float, dt: float
                         ) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Normal mixture acceleration (1-phi) a_s + phi a_f on the four border
    rows/columns of the bone window, centered second differences in time.
    Order: west-x, east-x, south-y, north-y."""
    dt2 = dt * dt
    one = 1.0 - phi

    def acc(comp, sl):
        a_s = (us_next[comp][sl] - 2.0 * us_now[comp][sl] + us_prev[comp][sl]) / dt2
        a_f = (uf_next[comp][sl] - 2.0 * uf_now[comp][sl] + uf_prev[comp][sl]) / dt2
        return one * a_s + phi * a_f

    return (acc(0, np.s_[0, :]), acc(0, np.s_[-1, :]),
            acc(1, np.s_[:, 0]), acc(1, np.s_[:, -1]))


def step_fluid(state: FieldState, grid: Grid, region: Optional[RegionMap],
               c2dt2: float, rho_f: float,
               border_acc: Optional[tuple] = None,
               src_cells: Optional[list] = None, f_val: float = 0.0
               ) -> np.ndarray:
    """One pressure update; returns p_next (boundary ring and bone window
    held at zero).  border_acc carries the interface closure accelerations;
    None with a region present means a motionless (rigid) bone."""
    p, pp = state.p_now, state.p_prev
    dx, dy = grid.dx, grid.dy
    gx = np.diff(p, axis=0) / dx          # gx[i] = x-face between cells i, i+1
    gy = np.diff(p, axis=1) / dy
    if region is not None:
        il, ih, jl, jh = region.i_lo, region.i_hi, region.j_lo, region.j_hi
        ax_w, ax_e, ay_s, ay_n = border_acc if border_acc is not None \
            else (0.0, 0.0, 0.0, 0.0)
        gx[il - 1, jl:jh + 1] = -rho_f * ax_w
        gx[ih, jl:jh + 1] = -rho_f * ax_e
        gy[il:ih + 1, jl - 1] = -rho_f * ay_s
        gy[il:ih + 1, jh] = -rho_f * ay_n
    p_next = np.zeros_like(p)
    p_next[1:-1, 1:-1] = (2.0 * p[1:-1, 1:-1] - pp[1:-1, 1:-1]
                          + c2dt2 * ((gx[1:, 1:-1] - gx[:-1, 1:-1]) / dx
                                     + (gy[1:-1, 1:] - gy[1:-1, :-1]) / dy))
    if src_cells:
        for (i, j), w in src_cells:
            p_next[i, j] += c2dt2 * rho_f * f_val * w
    if region is not None:
        p_next[region.i_lo:region.i_hi + 1, region.j_lo:region.j_hi + 1] = 0.0
    return p_next


STATUS_OK = 0
STATUS_NONFINITE = 1
STATUS_ENERGY_GROWTH = 2


class _NumpyRunner:
    """Reference stepping loop built from the vectorized operators above.
    Same run() contract as the compiled KernelRunner."""

    def __init__(self, grid, region, ec, biot, fluid, dt, src_cells, rigid_bone):
        self.grid, self.region, self.ec = grid, region, ec
        self.fluid, self.dt = fluid, dt
        self.src_cells = src_cells
        self.phi = biot.phi if biot is not None else 0.0
        self.shear = biot.N if biot is not None else 0.0
        self.c2dt2 = fluid.c ** 2 * dt * dt
        self.state = FieldState.zeros(grid, region if ec is not None else None)

    @property
    def p_now(self):
        return self.state.p_now

    def _advance(self, f_val: float) -> float:
        st = self.state
        border = None
        if self.ec is not None:
            us_next, uf_next = step_biot(st, self.region, self.ec, self.phi,
                                         self.shear, self.dt, self.grid)
            border = mixture_accel_border(st.us_prev, st.us_now, us_next,
                                          st.uf_prev, st.uf_now, uf_next,
                                          self.phi, self.dt)
            st.us_prev, st.us_now = st.us_now, us_next
            st.uf_prev, st.uf_now = st.uf_now, uf_next
        p_next = step_fluid(st, self.grid, self.region, self.c2dt2,
                            self.fluid.rho_f, border, self.src_cells, f_val)
        st.p_prev, st.p_now = st.p_now, p_next
        return float(np.max(np.abs(p_next)))

    def run(self, n0, n1, rec, source, rcv_cells, forcing_window, peak_forcing):
        dt = self.dt
        for n in range(n0, n1):
            t_n = n * dt
            ft = source.f_c * t_n
            f_val = source.F_0 * math.exp(-4.0 * (ft - 1.0) ** 2) \
                * math.sin(2.0 * math.pi * ft)
            amax = self._advance(f_val)
            p = self.state.p_now
            rec[n + 1] = sum(w * p[i, j] for (i, j), w in rcv_cells)
            if t_n <= forcing_window:
                peak_forcing = max(peak_forcing, amax)
            elif peak_forcing > 0 and amax > 10.0 * peak_forcing:
                return STATUS_ENERGY_GROWTH, n + 1, peak_forcing
            if not math.isfinite(amax):
                return STATUS_NONFINITE, n + 1, peak_forcing
        return STATUS_OK, n1, peak_forcing


def _make_runner(backend, grid, region, ec, biot, fluid, dt, src_cells, rigid_bone):
    if backend not in ("auto", "numba", "numpy"):
        raise ValueError(f"unknown backend {backend!r}")
    if backend != "numpy":
        try:
            from ._kernels import KernelRunner
            return KernelRunner(grid, region, ec, biot, fluid, dt, src_cells, rigid_bone)
        except ImportError:
            if backend == "numba":
                raise
    return _NumpyRunner(grid, region, ec, biot, fluid, dt, src_cells, rigid_bone)


def forward_map(biot: BiotParams, fluid: FluidProps, dom, ctrl: Optional[StepControl] = None,
                *, b: float = 0.0, cfl: float = 0.5, rigid_bone: bool = False,
                backend: str = "auto",
                snapshot_every: Optional[int] = None,
                on_snapshot: Optional[Callable[[int, float, np.ndarray], None]] = None,
                ) -> SignalTrace:
    """Run the coupled simulation and return the receiver pressure trace.

    dom is (grid, region, source, receiver); region may be None for an
    all-fluid domain.  Deterministic for fixed inputs and fixed dt.
    rigid_bone freezes the displacements at zero (diagnostic mode: the
    interface then behaves as a rigid wall).
    """
    grid, region, source, receiver = dom
    _require_fluid_interior(grid, region, source.x, source.y, "source")
    _require_fluid_interior(grid, region, receiver.x, receiver.y, "receiver")

    live_bone = region is not None and not rigid_bone
    ec = elastic_constants(biot, fluid, b) if live_bone else None
    if ctrl is None:
        ctrl = make_step_control(grid, fluid, receiver, ec, cfl)
    else:
        bound = stable_dt(grid, fluid, ec, ctrl.cfl)
        if ctrl.dt > bound * (1.0 + 1e-9):
            raise ValueError(f"dt={ctrl.dt} exceeds the CFL bound {bound}")
    dt, n_steps = ctrl.dt, ctrl.n_steps
    if n_steps * dt < receiver.times[-1] * (1.0 - 1e-9):
        raise ValueError("n_steps * dt does not cover the last receiver sample")

    area = grid.dx * grid.dy
    src_cells = [((i, j), w / area) for (i, j), w in
                 bilinear_weights(grid, source.x, source.y)]
    rcv_cells = bilinear_weights(grid, receiver.x, receiver.y)

    runner = _make_runner(backend, grid, region, ec,
                          biot if live_bone else None, fluid, dt, src_cells, rigid_bone)
    rec = np.zeros(n_steps + 1)
    forcing_window = 3.0 / source.f_c
    peak = 0.0
    snap = snapshot_every if (snapshot_every and on_snapshot is not None) else None

    if snap:
        on_snapshot(0, 0.0, runner.p_now.copy())
    n = 0
    while n < n_steps:
        n_next = n_steps if not snap else min(n_steps, (n // snap + 1) * snap)
        status, n, peak = runner.run(n, n_next, rec, source, rcv_cells,
                                     forcing_window, peak)
        if status == STATUS_NONFINITE:
            raise InstabilityError(
                f"non-finite pressure at step {n} (t={n * dt:.3e}s); "
                f"check the CFL bound and parameter admissibility")
        if status == STATUS_ENERGY_GROWTH:
            raise InstabilityError(
                f"pressure grew past 10x the forcing-window peak at step {n}")
        if snap and n % snap == 0:
            on_snapshot(n, n * dt, runner.p_now.copy())

    idx = np.rint(receiver.times / dt).astype(int)
    idx = np.clip(idx, 0, n_steps)
    return SignalTrace(times=receiver.times, pressures=rec[idx], provenance="simulated")
