"""Computational domain: grid, bone inclusion, source, receiver, traces.

The domain is a rectangular Cartesian grid of square-ish cells filled with
acoustic fluid, containing one axis-aligned rectangular bone region that
must stay strictly inside the grid.  The source sits above the bone, the
receiver below it (through-transmission).  Everything is immutable once
built.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .material import BiotParams, FluidProps, elastic_constants, max_wave_speed

TRACE_PROVENANCE = ("simulated", "synthetic-noisy", "external")


class GeometryError(ValueError):
    """Invalid domain layout (bone touching boundary, source inside bone, ...)."""


@dataclass(frozen=True)
class Grid:
    """Regular cell-centered grid; cell (i, j) has center origin + ((i+1/2)dx, (j+1/2)dy)."""

    nx: int
    ny: int
    dx: float
    dy: float
    origin: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        if self.nx < 4 or self.ny < 4:
            raise GeometryError(f"grid needs nx, ny >= 4, got {self.nx} x {self.ny}")
        if not (self.dx > 0 and self.dy > 0):
            raise GeometryError(f"cell sizes must be positive, got dx={self.dx}, dy={self.dy}")

    @property
    def x_centers(self) -> np.ndarray:
        return self.origin[0] + (np.arange(self.nx) + 0.5) * self.dx

    @property
    def y_centers(self) -> np.ndarray:
        return self.origin[1] + (np.arange(self.ny) + 0.5) * self.dy

    def cell_center(self, i: int, j: int) -> tuple[float, float]:
        return (self.origin[0] + (i + 0.5) * self.dx,
                self.origin[1] + (j + 0.5) * self.dy)

    def cell_containing(self, x: float, y: float) -> tuple[int, int]:
        i = int(math.floor((x - self.origin[0]) / self.dx))
        j = int(math.floor((y - self.origin[1]) / self.dy))
        return i, j

    def contains(self, x: float, y: float) -> bool:
        lx, ly = self.nx * self.dx, self.ny * self.dy
        return (self.origin[0] <= x <= self.origin[0] + lx
                and self.origin[1] <= y <= self.origin[1] + ly)


@dataclass(frozen=True)
class RegionMap:
    """Fluid/bone labeling of the grid.

    A cell is bone iff its center lies in the closed bone rectangle, which
    for an axis-aligned rectangle always yields a contiguous index window
    [i_lo..i_hi] x [j_lo..j_hi].  The window must leave at least one fluid
    cell between the bone and the outer boundary on every side.
    """

    grid: Grid
    bone_x: tuple[float, float]
    bone_y: tuple[float, float]
    i_lo: int = field(init=False)
    i_hi: int = field(init=False)
    j_lo: int = field(init=False)
    j_hi: int = field(init=False)

    def __post_init__(self):
        g = self.grid
        x0, x1 = self.bone_x
        y0, y1 = self.bone_y
        if not (x0 < x1 and y0 < y1):
            raise GeometryError("bone rectangle must have positive extent")
        xc, yc = g.x_centers, g.y_centers
        ix = np.nonzero((xc >= x0) & (xc <= x1))[0]
        jy = np.nonzero((yc >= y0) & (yc <= y1))[0]
        if ix.size == 0 or jy.size == 0:
            raise GeometryError("bone rectangle contains no cell centers")
        i_lo, i_hi = int(ix[0]), int(ix[-1])
        j_lo, j_hi = int(jy[0]), int(jy[-1])
        if i_lo < 1 or j_lo < 1 or i_hi > g.nx - 2 or j_hi > g.ny - 2:
            raise GeometryError(
                "bone must be strictly interior: at least one fluid cell "
                "between bone and outer boundary on every side"
            )
        object.__setattr__(self, "i_lo", i_lo)
        object.__setattr__(self, "i_hi", i_hi)
        object.__setattr__(self, "j_lo", j_lo)
        object.__setattr__(self, "j_hi", j_hi)

    @property
    def bone_shape(self) -> tuple[int, int]:
        return (self.i_hi - self.i_lo + 1, self.j_hi - self.j_lo + 1)

    def labels(self) -> np.ndarray:
        """Boolean (nx, ny) array, True on bone cells."""
        lab = np.zeros((self.grid.nx, self.grid.ny), dtype=bool)
        lab[self.i_lo:self.i_hi + 1, self.j_lo:self.j_hi + 1] = True
        return lab

    def is_bone_cell(self, i: int, j: int) -> bool:
        return self.i_lo <= i <= self.i_hi and self.j_lo <= j <= self.j_hi

    def interface_faces(self) -> list[tuple[tuple[int, int], tuple[int, int]]]:
        """All (fluid cell, bone cell) pairs sharing a face."""
        faces = []
        for j in range(self.j_lo, self.j_hi + 1):
            faces.append(((self.i_lo - 1, j), (self.i_lo, j)))
            faces.append(((self.i_hi + 1, j), (self.i_hi, j)))
        for i in range(self.i_lo, self.i_hi + 1):
            faces.append(((i, self.j_lo - 1), (i, self.j_lo)))
            faces.append(((i, self.j_hi + 1), (i, self.j_hi)))
        return faces


@dataclass(frozen=True)
class SourceSpec:
    """Point source: position, center frequency f_c [Hz], amplitude F_0 [m/s^2]."""

    x: float
    y: float
    f_c: float
    F_0: float

    def __post_init__(self):
        if not (self.f_c > 0):
            raise GeometryError(f"f_c must be > 0, got {self.f_c}")
        if self.F_0 == 0:
            raise GeometryError("F_0 must be nonzero")


@dataclass(frozen=True)
class ReceiverSpec:
    """Recording position and requested sample times (strictly increasing)."""

    x: float
    y: float
    times: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        if t.ndim != 1 or t.size == 0:
            raise GeometryError("receiver needs a nonempty 1-d array of sample times")
        if not np.all(np.diff(t) > 0):
            raise GeometryError("receiver sample times must be strictly increasing")
        object.__setattr__(self, "times", t)


@dataclass(frozen=True)
class SignalTrace:
    """Pressure trace at the receiver; provenance distinguishes clean
    simulation output, seeded synthetic data, and externally supplied data."""

    times: np.ndarray
    pressures: np.ndarray
    provenance: str = "simulated"

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        p = np.asarray(self.pressures, dtype=float)
        if t.shape != p.shape or t.ndim != 1:
            raise ValueError(f"times/pressures must be equal-length 1-d, got {t.shape} vs {p.shape}")
        if t.size > 1 and not np.all(np.diff(t) > 0):
            raise ValueError("trace times must be strictly increasing")
        if self.provenance not in TRACE_PROVENANCE:
            raise ValueError(f"provenance must be one of {TRACE_PROVENANCE}")
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "pressures", p)

    def __len__(self) -> int:
        return self.times.size


def source_amplitude(t, s: SourceSpec):
    """Gaussian-windowed sine pulse F_0 exp(-4 (f_c t - 1)^2) sin(2 pi f_c t).

    Accepts scalars or arrays; zero at t = 0 and at every integer multiple
    of 1/f_c, bounded by |F_0|.
    """
    ft = s.f_c * np.asarray(t, dtype=float)
    out = s.F_0 * np.exp(-4.0 * (ft - 1.0) ** 2) * np.sin(2.0 * np.pi * ft)
    return float(out) if np.isscalar(t) else out


@dataclass(frozen=True)
class DomainGeometry:
    """Through-transmission layout parameters (all lengths in meters).

    bone_length/bone_thickness give the specimen rectangle; the source
    sits source_offset above the top bone face on the bone centerline and
    the receiver mirrors it below.  lateral_pad is the fluid margin left
    and right of the bone, vertical_pad the margin beyond source and
    receiver.  Resolution comes either from an explicit dx or from
    cells_per_wavelength at the pulse center frequency in the slowest
    medium.
    """

    bone_length: float
    bone_thickness: float
    source_offset: float = 2.0e-3
    receiver_offset: Optional[float] = None
    lateral_pad: float = 4.0e-3
    vertical_pad: float = 4.0e-3
    dx: Optional[float] = None
    cells_per_wavelength: float = 20.0
    source_x: Optional[float] = None
    receiver_x: Optional[float] = None

    def __post_init__(self):
        if not (self.bone_length > 0 and self.bone_thickness > 0):
            raise GeometryError("bone dimensions must be positive")
        if not (self.source_offset > 0):
            raise GeometryError("source_offset must be positive")
        if self.receiver_offset is not None and not (self.receiver_offset > 0):
            raise GeometryError("receiver_offset must be positive")
        if not (self.lateral_pad > 0 and self.vertical_pad > 0):
            raise GeometryError("pads must be positive")
        if self.dx is not None and not (self.dx > 0):
            raise GeometryError("dx must be positive")
        if not (self.cells_per_wavelength > 0):
            raise GeometryError("cells_per_wavelength must be positive")


def build_domain(geom: DomainGeometry, fluid: FluidProps, biot: BiotParams,
                 f_c: float, F_0: float, T: float, n_samples: int = 512,
                 b: float = 0.0
                 ) -> tuple[Grid, RegionMap, SourceSpec, ReceiverSpec]:
    """Lay out grid, bone rectangle, source and receiver for one experiment.

    The grid is sized so the bone edges land exactly on cell faces, and
    pads are rounded up to whole cells.  Receiver sample times are
    t_i = i T / n_samples for i = 1..n_samples.
    """
    if not (T > 0):
        raise GeometryError(f"T must be positive, got {T}")
    if n_samples < 1:
        raise GeometryError(f"n_samples must be >= 1, got {n_samples}")

    if geom.dx is not None:
        dx = geom.dx
    else:
        v_bone = max_wave_speed(elastic_constants(biot, fluid, b))
        c_slow = min(fluid.c, v_bone)
        dx = c_slow / (geom.cells_per_wavelength * f_c)
    dy = dx

    nbx = max(1, round(geom.bone_length / dx))
    nby = max(1, round(geom.bone_thickness / dy))
    pad_x = max(2, math.ceil(geom.lateral_pad / dx))
    src_off = geom.source_offset
    rcv_off = geom.receiver_offset if geom.receiver_offset is not None else src_off
    pad_top = max(2, math.ceil((src_off + geom.vertical_pad) / dy))
    pad_bot = max(2, math.ceil((rcv_off + geom.vertical_pad) / dy))

    nx = nbx + 2 * pad_x
    ny = nby + pad_top + pad_bot
    grid = Grid(nx=nx, ny=ny, dx=dx, dy=dy)

    bone_x0 = pad_x * dx
    bone_x1 = bone_x0 + nbx * dx
    bone_y0 = pad_bot * dy
    bone_y1 = bone_y0 + nby * dy
    # shrink the rectangle marginally so only the intended centers are inside
    eps = 0.25 * min(dx, dy)
    region = RegionMap(grid, (bone_x0 + eps, bone_x1 - eps), (bone_y0 + eps, bone_y1 - eps))

    x_mid = 0.5 * (bone_x0 + bone_x1)
    sx = geom.source_x if geom.source_x is not None else x_mid
    rx = geom.receiver_x if geom.receiver_x is not None else x_mid
    sy = bone_y1 + src_off
    ry = bone_y0 - rcv_off

    source = SourceSpec(x=sx, y=sy, f_c=f_c, F_0=F_0)
    times = np.arange(1, n_samples + 1) * (T / n_samples)
    receiver = ReceiverSpec(x=rx, y=ry, times=times)

    for label, (px, py) in (("source", (sx, sy)), ("receiver", (rx, ry))):
        _require_fluid_interior(grid, region, px, py, label)
    return grid, region, source, receiver


def _require_fluid_interior(grid: Grid, region: Optional[RegionMap],
                            x: float, y: float, label: str) -> None:
    """The point and its bilinear 2x2 cell cloud must be fluid, non-boundary."""
    if not grid.contains(x, y):
        raise GeometryError(f"{label} at ({x}, {y}) lies outside the domain")
    for (i, j), w in bilinear_weights(grid, x, y):
        if w <= 0.0:
            continue
        if i <= 0 or j <= 0 or i >= grid.nx - 1 or j >= grid.ny - 1:
            raise GeometryError(f"{label} at ({x}, {y}) touches the outer boundary cells")
        if region is not None and region.is_bone_cell(i, j):
            raise GeometryError(f"{label} at ({x}, {y}) lies inside the bone")


def bilinear_weights(grid: Grid, x: float, y: float
                     ) -> list[tuple[tuple[int, int], float]]:
    """Cell-center bilinear weights of a point; at most four entries, sum 1.

    A point exactly on a cell center gets a single unit weight, which keeps
    point sources and receivers placed on centers strictly single-cell.
    """
    fx = (x - grid.origin[0]) / grid.dx - 0.5
    fy = (y - grid.origin[1]) / grid.dy - 0.5
    i0 = int(math.floor(fx))
    j0 = int(math.floor(fy))
    ax = fx - i0
    ay = fy - j0
    out = []
    for (i, wx) in ((i0, 1.0 - ax), (i0 + 1, ax)):
        for (j, wy) in ((j0, 1.0 - ay), (j0 + 1, ay)):
            w = wx * wy
            if w > 0.0 and 0 <= i < grid.nx and 0 <= j < grid.ny:
                out.append(((i, j), w))
    return out
