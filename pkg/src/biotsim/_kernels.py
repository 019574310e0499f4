"""Numba-compiled stepping kernels, arithmetically equivalent to the
vectorized reference operators in solver.py up to floating-point
reordering (reciprocal multiplication instead of division, cached
cell-centered gradients).

The ensemble sampler evaluates tens of thousands of forward solves per
inversion, so the whole time loop runs compiled; the Python layer only
drives chunks between snapshot emissions.  No fastmath: results are
deterministic for fixed inputs.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit

# FMA/reassociation only: keeps NaN/Inf semantics so the stability
# checks stay reliable; results are deterministic for a fixed install
FASTMATH = {"contract", "reassoc", "arcp"}

STATUS_OK = 0
STATUS_NONFINITE = 1
STATUS_ENERGY_GROWTH = 2


@njit(cache=True, fastmath=FASTMATH)
def _cell_grads(usx, usy, ufx, ufy, inv_dx, inv_dy,
                gx_usx, gx_usy, gx_ufx, gy_usx, gy_usy, gy_ufy):
    """Cell-centered derivatives, central inside the bone window and
    one-sided at its edges; zero for single-cell windows."""
    nbx, nby = usx.shape
    h = 0.5 * inv_dx
    for b in range(nby):
        if nbx == 1:
            gx_usx[0, b] = 0.0
            gx_usy[0, b] = 0.0
            gx_ufx[0, b] = 0.0
        else:
            gx_usx[0, b] = (usx[1, b] - usx[0, b]) * inv_dx
            gx_usy[0, b] = (usy[1, b] - usy[0, b]) * inv_dx
            gx_ufx[0, b] = (ufx[1, b] - ufx[0, b]) * inv_dx
            gx_usx[nbx - 1, b] = (usx[nbx - 1, b] - usx[nbx - 2, b]) * inv_dx
            gx_usy[nbx - 1, b] = (usy[nbx - 1, b] - usy[nbx - 2, b]) * inv_dx
            gx_ufx[nbx - 1, b] = (ufx[nbx - 1, b] - ufx[nbx - 2, b]) * inv_dx
            for a in range(1, nbx - 1):
                gx_usx[a, b] = (usx[a + 1, b] - usx[a - 1, b]) * h
                gx_usy[a, b] = (usy[a + 1, b] - usy[a - 1, b]) * h
                gx_ufx[a, b] = (ufx[a + 1, b] - ufx[a - 1, b]) * h
    v = 0.5 * inv_dy
    for a in range(nbx):
        if nby == 1:
            gy_usx[a, 0] = 0.0
            gy_usy[a, 0] = 0.0
            gy_ufy[a, 0] = 0.0
        else:
            gy_usx[a, 0] = (usx[a, 1] - usx[a, 0]) * inv_dy
            gy_usy[a, 0] = (usy[a, 1] - usy[a, 0]) * inv_dy
            gy_ufy[a, 0] = (ufy[a, 1] - ufy[a, 0]) * inv_dy
            gy_usx[a, nby - 1] = (usx[a, nby - 1] - usx[a, nby - 2]) * inv_dy
            gy_usy[a, nby - 1] = (usy[a, nby - 1] - usy[a, nby - 2]) * inv_dy
            gy_ufy[a, nby - 1] = (ufy[a, nby - 1] - ufy[a, nby - 2]) * inv_dy
            for b in range(1, nby - 1):
                gy_usx[a, b] = (usx[a, b + 1] - usx[a, b - 1]) * v
                gy_usy[a, b] = (usy[a, b + 1] - usy[a, b - 1]) * v
                gy_ufy[a, b] = (ufy[a, b + 1] - ufy[a, b - 1]) * v


@njit(cache=True, fastmath=FASTMATH)
def _biot_step(p, usx, usy, ufx, ufy, usx_p, usy_p, ufx_p, ufy_p,
               out_usx, out_usy, out_ufx, out_ufy,
               ax_w, ax_e, ay_s, ay_n,
               sig_xx, sig_xy_x, s_x, sig_yy, sig_xy_y, s_y,
               gx_usx, gx_usy, gx_ufx, gy_usx, gy_usy, gy_ufy,
               i_lo, j_lo, dx, dy, dt, phi, lam, cQ, cR, cN, b,
               r11, r12, r22, mi11, mi12, mi22):
    nbx, nby = usx.shape
    one_phi = 1.0 - phi
    inv_dx = 1.0 / dx
    inv_dy = 1.0 / dy
    inv_dt2 = 1.0 / (dt * dt)
    hb = b / (2.0 * dt)
    two_n = 2.0 * cN

    _cell_grads(usx, usy, ufx, ufy, inv_dx, inv_dy,
                gx_usx, gx_usy, gx_ufx, gy_usx, gy_usy, gy_ufy)

    for bb in range(nby):
        pw = p[i_lo - 1, j_lo + bb]
        pe = p[i_lo + nbx, j_lo + bb]
        sig_xx[0, bb] = -one_phi * pw
        sig_xy_x[0, bb] = 0.0
        s_x[0, bb] = -phi * pw
        sig_xx[nbx, bb] = -one_phi * pe
        sig_xy_x[nbx, bb] = 0.0
        s_x[nbx, bb] = -phi * pe
    for a in range(1, nbx):
        for bb in range(nby):
            dusx_dx = (usx[a, bb] - usx[a - 1, bb]) * inv_dx
            dusy_dx = (usy[a, bb] - usy[a - 1, bb]) * inv_dx
            dufx_dx = (ufx[a, bb] - ufx[a - 1, bb]) * inv_dx
            dusx_dy = 0.5 * (gy_usx[a - 1, bb] + gy_usx[a, bb])
            dusy_dy = 0.5 * (gy_usy[a - 1, bb] + gy_usy[a, bb])
            dufy_dy = 0.5 * (gy_ufy[a - 1, bb] + gy_ufy[a, bb])
            e = dusx_dx + dusy_dy
            eps = dufx_dx + dufy_dy
            sig_xx[a, bb] = lam * e + cQ * eps + two_n * dusx_dx
            sig_xy_x[a, bb] = cN * (dusx_dy + dusy_dx)
            s_x[a, bb] = cQ * e + cR * eps

    for a in range(nbx):
        ps = p[i_lo + a, j_lo - 1]
        pn = p[i_lo + a, j_lo + nby]
        sig_yy[a, 0] = -one_phi * ps
        sig_xy_y[a, 0] = 0.0
        s_y[a, 0] = -phi * ps
        sig_yy[a, nby] = -one_phi * pn
        sig_xy_y[a, nby] = 0.0
        s_y[a, nby] = -phi * pn
    for a in range(nbx):
        for bb in range(1, nby):
            dusy_dy = (usy[a, bb] - usy[a, bb - 1]) * inv_dy
            dusx_dy = (usx[a, bb] - usx[a, bb - 1]) * inv_dy
            dufy_dy = (ufy[a, bb] - ufy[a, bb - 1]) * inv_dy
            dusx_dx = 0.5 * (gx_usx[a, bb - 1] + gx_usx[a, bb])
            dusy_dx = 0.5 * (gx_usy[a, bb - 1] + gx_usy[a, bb])
            dufx_dx = 0.5 * (gx_ufx[a, bb - 1] + gx_ufx[a, bb])
            e = dusx_dx + dusy_dy
            eps = dufx_dx + dufy_dy
            sig_yy[a, bb] = lam * e + cQ * eps + two_n * dusy_dy
            sig_xy_y[a, bb] = cN * (dusx_dy + dusy_dx)
            s_y[a, bb] = cQ * e + cR * eps

    for a in range(nbx):
        for bb in range(nby):
            fsx = (sig_xx[a + 1, bb] - sig_xx[a, bb]) * inv_dx \
                + (sig_xy_y[a, bb + 1] - sig_xy_y[a, bb]) * inv_dy
            fsy = (sig_xy_x[a + 1, bb] - sig_xy_x[a, bb]) * inv_dx \
                + (sig_yy[a, bb + 1] - sig_yy[a, bb]) * inv_dy
            ffx = (s_x[a + 1, bb] - s_x[a, bb]) * inv_dx
            ffy = (s_y[a, bb + 1] - s_y[a, bb]) * inv_dy
            du_sx = 2.0 * usx[a, bb] - usx_p[a, bb]
            du_fx = 2.0 * ufx[a, bb] - ufx_p[a, bb]
            du_sy = 2.0 * usy[a, bb] - usy_p[a, bb]
            du_fy = 2.0 * ufy[a, bb] - ufy_p[a, bb]
            rhs_sx = fsx + (r11 * du_sx + r12 * du_fx) * inv_dt2 \
                + hb * (usx_p[a, bb] - ufx_p[a, bb])
            rhs_fx = ffx + (r12 * du_sx + r22 * du_fx) * inv_dt2 \
                + hb * (ufx_p[a, bb] - usx_p[a, bb])
            rhs_sy = fsy + (r11 * du_sy + r12 * du_fy) * inv_dt2 \
                + hb * (usy_p[a, bb] - ufy_p[a, bb])
            rhs_fy = ffy + (r12 * du_sy + r22 * du_fy) * inv_dt2 \
                + hb * (ufy_p[a, bb] - usy_p[a, bb])
            out_usx[a, bb] = mi11 * rhs_sx + mi12 * rhs_fx
            out_ufx[a, bb] = mi12 * rhs_sx + mi22 * rhs_fx
            out_usy[a, bb] = mi11 * rhs_sy + mi12 * rhs_fy
            out_ufy[a, bb] = mi12 * rhs_sy + mi22 * rhs_fy

    for bb in range(nby):
        ax_w[bb] = (one_phi * (out_usx[0, bb] - 2.0 * usx[0, bb] + usx_p[0, bb])
                    + phi * (out_ufx[0, bb] - 2.0 * ufx[0, bb] + ufx_p[0, bb])) * inv_dt2
        ax_e[bb] = (one_phi * (out_usx[nbx - 1, bb] - 2.0 * usx[nbx - 1, bb] + usx_p[nbx - 1, bb])
                    + phi * (out_ufx[nbx - 1, bb] - 2.0 * ufx[nbx - 1, bb] + ufx_p[nbx - 1, bb])) * inv_dt2
    for a in range(nbx):
        ay_s[a] = (one_phi * (out_usy[a, 0] - 2.0 * usy[a, 0] + usy_p[a, 0])
                   + phi * (out_ufy[a, 0] - 2.0 * ufy[a, 0] + ufy_p[a, 0])) * inv_dt2
        ay_n[a] = (one_phi * (out_usy[a, nby - 1] - 2.0 * usy[a, nby - 1] + usy_p[a, nby - 1])
                   + phi * (out_ufy[a, nby - 1] - 2.0 * ufy[a, nby - 1] + ufy_p[a, nby - 1])) * inv_dt2


@njit(cache=True, inline="always", fastmath=FASTMATH)
def _frame_cell(p_prev, p, out_p, i, j, c2dt2, inv_dx, inv_dy,
                i_lo, i_hi, j_lo, j_hi, ax_w, ax_e, ay_s, ay_n, rho_f):
    """Update one fluid cell of the one-cell frame around the bone,
    applying the interface gradient closures where a bone face is shared."""
    gx_e = (p[i + 1, j] - p[i, j]) * inv_dx
    gx_w = (p[i, j] - p[i - 1, j]) * inv_dx
    gy_n = (p[i, j + 1] - p[i, j]) * inv_dy
    gy_s = (p[i, j] - p[i, j - 1]) * inv_dy
    if j_lo <= j <= j_hi:
        if i == i_lo - 1:
            gx_e = -rho_f * ax_w[j - j_lo]
        elif i == i_hi + 1:
            gx_w = -rho_f * ax_e[j - j_lo]
    if i_lo <= i <= i_hi:
        if j == j_lo - 1:
            gy_n = -rho_f * ay_s[i - i_lo]
        elif j == j_hi + 1:
            gy_s = -rho_f * ay_n[i - i_lo]
    v = 2.0 * p[i, j] - p_prev[i, j] \
        + c2dt2 * ((gx_e - gx_w) * inv_dx + (gy_n - gy_s) * inv_dy)
    out_p[i, j] = v
    return abs(v)


@njit(cache=True, fastmath=FASTMATH)
def _fluid_step(p_prev, p, out_p, c2dt2, inv_dx, inv_dy,
                has_bone, i_lo, i_hi, j_lo, j_hi,
                ax_w, ax_e, ay_s, ay_n, rho_f,
                src_i, src_j, src_w, f_val):
    nx, ny = p.shape
    cx = c2dt2 * inv_dx * inv_dx
    cy = c2dt2 * inv_dy * inv_dy
    amax = 0.0
    for i in range(1, nx - 1):
        near_bone_col = has_bone and i_lo - 1 <= i <= i_hi + 1
        for j in range(1, ny - 1):
            if near_bone_col and j_lo - 1 <= j <= j_hi + 1:
                if i_lo <= i <= i_hi and j_lo <= j <= j_hi:
                    out_p[i, j] = 0.0
                # the one-cell frame is updated in the dedicated pass below
                continue
            v = 2.0 * p[i, j] - p_prev[i, j] \
                + cx * (p[i + 1, j] - 2.0 * p[i, j] + p[i - 1, j]) \
                + cy * (p[i, j + 1] - 2.0 * p[i, j] + p[i, j - 1])
            out_p[i, j] = v
            av = abs(v)
            if av > amax:
                amax = av
    if has_bone:
        for j in range(j_lo - 1, j_hi + 2):
            if j < 1 or j > ny - 2:
                continue
            for i in (i_lo - 1, i_hi + 1):
                if i < 1 or i > nx - 2:
                    continue
                av = _frame_cell(p_prev, p, out_p, i, j, c2dt2, inv_dx, inv_dy,
                                 i_lo, i_hi, j_lo, j_hi,
                                 ax_w, ax_e, ay_s, ay_n, rho_f)
                if av > amax:
                    amax = av
        for i in range(i_lo, i_hi + 1):
            if i < 1 or i > nx - 2:
                continue
            for j in (j_lo - 1, j_hi + 1):
                if j < 1 or j > ny - 2:
                    continue
                av = _frame_cell(p_prev, p, out_p, i, j, c2dt2, inv_dx, inv_dy,
                                 i_lo, i_hi, j_lo, j_hi,
                                 ax_w, ax_e, ay_s, ay_n, rho_f)
                if av > amax:
                    amax = av
    for k in range(src_i.shape[0]):
        out_p[src_i[k], src_j[k]] += c2dt2 * rho_f * f_val * src_w[k]
        av = abs(out_p[src_i[k], src_j[k]])
        if av > amax:
            amax = av
    return amax


@njit(cache=True)
def _run_chunk(n0, n1, P, USX, USY, UFX, UFY, rec,
               dt, c2dt2, dx, dy, rho_f,
               live_bone, has_bone, i_lo, i_hi, j_lo, j_hi,
               phi, lam, cQ, cR, cN, b, r11, r12, r22, mi11, mi12, mi22,
               ax_w, ax_e, ay_s, ay_n,
               sig_xx, sig_xy_x, s_x, sig_yy, sig_xy_y, s_y,
               gx_usx, gx_usy, gx_ufx, gy_usx, gy_usy, gy_ufy,
               src_i, src_j, src_w, F0, fc,
               rcv_i, rcv_j, rcv_w,
               forcing_window, peak_forcing):
    """Advance steps n0..n1-1; buffer of time level L is index L % 3.

    Fills rec[n+1] with the receiver pressure and checks stability every
    step.  Returns (status, step_reached, peak_forcing).
    """
    inv_dx = 1.0 / dx
    inv_dy = 1.0 / dy
    for n in range(n0, n1):
        t_n = n * dt
        ip = (n + 2) % 3     # level n-1
        ic = n % 3           # level n
        io = (n + 1) % 3     # level n+1
        if live_bone:
            _biot_step(P[ic], USX[ic], USY[ic], UFX[ic], UFY[ic],
                       USX[ip], USY[ip], UFX[ip], UFY[ip],
                       USX[io], USY[io], UFX[io], UFY[io],
                       ax_w, ax_e, ay_s, ay_n,
                       sig_xx, sig_xy_x, s_x, sig_yy, sig_xy_y, s_y,
                       gx_usx, gx_usy, gx_ufx, gy_usx, gy_usy, gy_ufy,
                       i_lo, j_lo, dx, dy, dt, phi, lam, cQ, cR, cN, b,
                       r11, r12, r22, mi11, mi12, mi22)
        ft = fc * t_n
        f_val = F0 * math.exp(-4.0 * (ft - 1.0) ** 2) * math.sin(2.0 * math.pi * ft)
        amax = _fluid_step(P[ip], P[ic], P[io], c2dt2, inv_dx, inv_dy,
                           has_bone, i_lo, i_hi, j_lo, j_hi,
                           ax_w, ax_e, ay_s, ay_n, rho_f,
                           src_i, src_j, src_w, f_val)
        r = 0.0
        for k in range(rcv_i.shape[0]):
            r += rcv_w[k] * P[io][rcv_i[k], rcv_j[k]]
        rec[n + 1] = r
        if t_n <= forcing_window:
            if amax > peak_forcing:
                peak_forcing = amax
        elif peak_forcing > 0.0 and amax > 10.0 * peak_forcing:
            return STATUS_ENERGY_GROWTH, n + 1, peak_forcing
        if not math.isfinite(amax):
            return STATUS_NONFINITE, n + 1, peak_forcing
    return STATUS_OK, n1, peak_forcing


class KernelRunner:
    """Compiled counterpart of solver._NumpyRunner with a chunked driver.

    ec is None for a rigid or absent bone; region is still needed for the
    rigid-wall interface closure.
    """

    def __init__(self, grid, region, ec, biot, fluid, dt, src_cells, rigid_bone):
        self.grid, self.region = grid, region
        self.ec, self.dt = ec, dt
        self.rho_f = fluid.rho_f
        self.c2dt2 = fluid.c ** 2 * dt * dt
        nx, ny = grid.nx, grid.ny
        self.P = np.zeros((3, nx, ny))
        self.has_bone = region is not None
        self.live_bone = ec is not None
        if self.has_bone:
            self.i_lo, self.i_hi = region.i_lo, region.i_hi
            self.j_lo, self.j_hi = region.j_lo, region.j_hi
            nbx, nby = region.bone_shape
        else:
            self.i_lo = self.i_hi = self.j_lo = self.j_hi = -1
            nbx, nby = 1, 1
        self.ax_w = np.zeros(nby)
        self.ax_e = np.zeros(nby)
        self.ay_s = np.zeros(nbx)
        self.ay_n = np.zeros(nbx)
        self.faces = (np.zeros((nbx + 1, nby)), np.zeros((nbx + 1, nby)),
                      np.zeros((nbx + 1, nby)), np.zeros((nbx, nby + 1)),
                      np.zeros((nbx, nby + 1)), np.zeros((nbx, nby + 1)))
        self.grads = tuple(np.zeros((nbx, nby)) for _ in range(6))
        self.USX = np.zeros((3, nbx, nby))
        self.USY = np.zeros((3, nbx, nby))
        self.UFX = np.zeros((3, nbx, nby))
        self.UFY = np.zeros((3, nbx, nby))
        if self.live_bone:
            self.phi = biot.phi
            self.lam = ec.P - 2.0 * biot.N
            self.cN = biot.N
            self.cQ, self.cR, self.b = ec.Q, ec.R, ec.b
            self.r11, self.r12, self.r22 = ec.rho11, ec.rho12, ec.rho22
            hb = ec.b / (2.0 * dt)
            dt2 = dt * dt
            m11 = ec.rho11 / dt2 + hb
            m12 = ec.rho12 / dt2 - hb
            m22 = ec.rho22 / dt2 + hb
            det = m11 * m22 - m12 * m12
            self.minv = (m22 / det, -m12 / det, m11 / det)
        else:
            self.phi = self.lam = self.cN = self.cQ = self.cR = self.b = 0.0
            self.r11 = self.r12 = self.r22 = 0.0
            self.minv = (0.0, 0.0, 0.0)
        self.src_i = np.array([i for (i, _), _ in src_cells], dtype=np.int64)
        self.src_j = np.array([j for (_, j), _ in src_cells], dtype=np.int64)
        self.src_w = np.array([w for _, w in src_cells], dtype=np.float64)
        self.level = 0

    @property
    def p_now(self):
        return self.P[self.level % 3]

    def run(self, n0, n1, rec, source, rcv_cells, forcing_window, peak_forcing):
        rcv_i = np.array([i for (i, _), _ in rcv_cells], dtype=np.int64)
        rcv_j = np.array([j for (_, j), _ in rcv_cells], dtype=np.int64)
        rcv_w = np.array([w for _, w in rcv_cells], dtype=np.float64)
        status, n_done, peak = _run_chunk(
            n0, n1, self.P, self.USX, self.USY, self.UFX, self.UFY, rec,
            self.dt, self.c2dt2, self.grid.dx, self.grid.dy, self.rho_f,
            self.live_bone, self.has_bone,
            self.i_lo, self.i_hi, self.j_lo, self.j_hi,
            self.phi, self.lam, self.cQ, self.cR, self.cN, self.b,
            self.r11, self.r12, self.r22, *self.minv,
            self.ax_w, self.ax_e, self.ay_s, self.ay_n,
            *self.faces, *self.grads,
            self.src_i, self.src_j, self.src_w, source.F_0, source.f_c,
            rcv_i, rcv_j, rcv_w, forcing_window, peak_forcing)
        self.level = n_done
        return int(status), int(n_done), float(peak)
