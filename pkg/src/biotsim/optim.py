"""Derivative-free maximum-a-posteriori estimation.

Simplex minimization of the regularized misfit
``||y - G(u)||^2 - sigma_reg * log prior(u)``: reflection, expansion,
contraction and shrink of an (n+1)-vertex simplex, with the worst vertex L
transformed through the centroid of the remaining n vertices.  Under a
Gaussian prior (and a linear forward map) the minimizer coincides with the
Tikhonov-regularized least-squares solution with weight (gamma/sigma)^2.

Vertices are kept ordered by objective value; ties break by stable prior
index, so runs are fully deterministic.  Out-of-support vertices get +inf
objective and lose every comparison, which keeps the simplex inside the
prior support without projections.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .material import AdmissibilityError, BiotParams, PARAM_NAMES
from .domain import SignalTrace
from .inference import GaussianPrior, UniformPrior, trace_residual
from .solver import InstabilityError


@dataclass
class NMConfig:
    """Simplex coefficients and termination controls.

    tau_r > 0 reflects, tau_e > max(1, tau_r) expands, tau_c in (0,1)
    contracts, tau_s in (0,1) shrinks.  size_tol is relative to the initial
    simplex diameter; f_tol is the absolute best-worst objective spread.
    """

    tau_r: float = 1.0
    tau_e: float = 2.0
    tau_c: float = 0.5
    tau_s: float = 0.5
    max_iters: int = 2000
    size_tol: float = 1e-8
    f_tol: float = 1e-10

    def __post_init__(self):
        if not (self.tau_r > 0):
            raise ValueError(f"tau_r must be > 0, got {self.tau_r}")
        if not (self.tau_e > max(1.0, self.tau_r)):
            raise ValueError(f"tau_e must exceed max(1, tau_r), got {self.tau_e}")
        if not (0 < self.tau_c < 1):
            raise ValueError(f"tau_c must be in (0, 1), got {self.tau_c}")
        if not (0 < self.tau_s < 1):
            raise ValueError(f"tau_s must be in (0, 1), got {self.tau_s}")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")


@dataclass
class Simplex:
    """n+1 vertices in n dimensions with cached objective values, kept
    sorted ascending (vertex 0 is the best S, vertex n the worst L)."""

    vertices: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=float)
        f = np.asarray(self.values, dtype=float)
        n1, n = v.shape
        if n1 != n + 1:
            raise ValueError(f"simplex needs n+1 vertices in n dims, got {v.shape}")
        if f.shape != (n1,):
            raise ValueError("one objective value per vertex required")
        edges = v[1:] - v[0]
        if np.linalg.matrix_rank(edges) < n:
            raise ValueError("initial simplex is degenerate (vertices affinely dependent)")
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "values", f)

    def order(self) -> None:
        idx = np.argsort(self.values, kind="stable")
        self.vertices = self.vertices[idx]
        self.values = self.values[idx]

    def diameter(self) -> float:
        """Largest vertex distance from the best vertex S."""
        return float(np.max(np.linalg.norm(self.vertices[1:] - self.vertices[0], axis=1)))


@dataclass
class NMLogRow:
    iteration: int
    operation: str
    f_best: float
    f_worst: float
    diameter: float


@dataclass
class NMResult:
    x: np.ndarray
    fx: float
    iterations: int
    reason: str
    n_evals: int
    log: list[NMLogRow] = field(default_factory=list)
    simplex: Optional[Simplex] = None


def nelder_mead(f: Callable[[np.ndarray], float], init, cfg: Optional[NMConfig] = None
                ) -> NMResult:
    """Minimize f from an initial simplex (array of n+1 points, or a Simplex).

    One iteration: order vertices; form the centroid vbar of the best n;
    with v(tau) = vbar + tau (vbar - L):
      reflection R=v(tau_r) replaces L if f(S) < f(R) < f(L);
      else expansion when f(R) < f(S): E=v(tau_e) replaces L if f(E) < f(S),
        otherwise R does;
      else contraction when f(v_i) < f(R) for all i <= n: C=v(tau_c)
        replaces L if f(C) < min(f(L), f(R));
      otherwise every vertex but S shrinks toward S by tau_s.
    """
    cfg = cfg or NMConfig()
    n_evals = 0

    def call(x):
        nonlocal n_evals
        n_evals += 1
        return float(f(x))

    if isinstance(init, Simplex):
        sx = Simplex(init.vertices.copy(), init.values.copy())
    else:
        pts = np.asarray(init, dtype=float)
        vals = np.array([call(p) for p in pts])
        sx = Simplex(pts.copy(), vals)
    if not np.all(np.isfinite(sx.values)):
        raise ValueError("objective must be finite on every initial vertex")

    sx.order()
    d0 = sx.diameter()
    n = sx.vertices.shape[1]
    log: list[NMLogRow] = []
    reason = "max_iters"
    it = 0
    for it in range(1, cfg.max_iters + 1):
        vbar = sx.vertices[:n].mean(axis=0)
        worst = sx.vertices[n]
        f_s, f_l = sx.values[0], sx.values[n]

        def point(tau):
            return vbar + tau * (vbar - worst)

        r_pt = point(cfg.tau_r)
        f_r = call(r_pt)
        if f_s < f_r < f_l:
            sx.vertices[n], sx.values[n] = r_pt, f_r
            op = "reflect"
        elif f_r < f_s:
            e_pt = point(cfg.tau_e)
            f_e = call(e_pt)
            if f_e < f_s:
                sx.vertices[n], sx.values[n] = e_pt, f_e
            else:
                sx.vertices[n], sx.values[n] = r_pt, f_r
            op = "expand"
        else:
            contract_gate = bool(np.all(sx.values[:n] < f_r))
            did_contract = False
            if contract_gate:
                c_pt = point(cfg.tau_c)
                f_c = call(c_pt)
                if f_c < min(f_l, f_r):
                    sx.vertices[n], sx.values[n] = c_pt, f_c
                    did_contract = True
            if did_contract:
                op = "contract"
            else:
                best = sx.vertices[0]
                for i in range(1, n + 1):
                    sx.vertices[i] = best + cfg.tau_s * (sx.vertices[i] - best)
                    sx.values[i] = call(sx.vertices[i])
                op = "shrink"

        sx.order()
        diam = sx.diameter()
        log.append(NMLogRow(it, op, float(sx.values[0]), float(sx.values[n]), diam))
        if diam < cfg.size_tol * d0:
            reason = "size_tol"
            break
        if abs(sx.values[n] - sx.values[0]) < cfg.f_tol:
            reason = "f_tol"
            break
    else:
        reason = "max_iters"

    return NMResult(x=sx.vertices[0].copy(), fx=float(sx.values[0]),
                    iterations=it, reason=reason, n_evals=n_evals,
                    log=log, simplex=sx)


def map_objective(u, y, prior, sigma_reg: float, fwd) -> float:
    """||y - G(u)||^2 - sigma_reg * log prior(u); +inf outside the prior
    support or when the forward solve rejects u."""
    lp = prior.log_density(u)
    if lp == -math.inf:
        return math.inf
    try:
        g = fwd(u)
    except (AdmissibilityError, InstabilityError):
        return math.inf
    r = trace_residual(y, g)
    return float(r @ r) - sigma_reg * lp


@dataclass
class MAPResult:
    params: BiotParams
    free: tuple
    u_free: np.ndarray
    objective: float
    iterations: int
    reason: str
    n_evals: int
    log: list[NMLogRow]


def initial_simplex_from_prior(prior, *, free_idx: Optional[np.ndarray] = None,
                               support: Optional[Callable[[np.ndarray], bool]] = None
                               ) -> np.ndarray:
    """Vertex 0 at the prior mean (Gaussian) or interval midpoint (uniform);
    vertex i offsets coordinate i by one prior std or 10% of the interval
    width, flipping the offset sign if it would leave the support."""
    if isinstance(prior, GaussianPrior):
        center, scale = prior.mean, prior.std
    elif isinstance(prior, UniformPrior):
        center = 0.5 * (prior.lo + prior.hi)
        scale = 0.1 * (prior.hi - prior.lo)
    else:
        raise TypeError(f"unsupported prior type {type(prior).__name__}")
    if free_idx is not None:
        center, scale = center[free_idx], scale[free_idx]
    n = center.size
    pts = np.tile(center, (n + 1, 1))
    for i in range(n):
        pts[i + 1, i] += scale[i]
        if support is not None and not support(pts[i + 1]):
            pts[i + 1, i] = center[i] - scale[i]
            if not support(pts[i + 1]):
                raise ValueError(f"cannot seed simplex inside the support "
                                 f"(coordinate {i})")
    return pts


def estimate_map(y: SignalTrace, prior, fwd, *, cfg: Optional[NMConfig] = None,
                 free: Sequence[str] = PARAM_NAMES, fixed=None,
                 sigma_reg: float = 1.0) -> MAPResult:
    """Build the initial simplex from the prior and minimize map_objective
    over the free parameter subset; fixed holds the full six-vector whose
    non-free entries stay pinned."""
    bad = [nm for nm in free if nm not in PARAM_NAMES]
    if bad:
        raise ValueError(f"unknown parameter names: {bad}")
    free = tuple(sorted(set(free), key=PARAM_NAMES.index))
    if len(free) == 0:
        raise ValueError("empty parameter subset")
    free_idx = np.array([PARAM_NAMES.index(nm) for nm in free])
    if fixed is None:
        if len(free) < len(PARAM_NAMES):
            raise ValueError("fixed values are required when a subset is free")
        fixed = np.zeros(6)
    fixed = np.asarray(fixed, dtype=float)

    def embed(v):
        u = fixed.copy()
        u[free_idx] = v
        return u

    def objective(v):
        u = embed(v)
        try:
            params = BiotParams.from_array(u)
        except AdmissibilityError:
            return math.inf
        return map_objective(params, y, prior, sigma_reg, fwd)

    pts = initial_simplex_from_prior(
        prior, free_idx=free_idx,
        support=lambda v: prior.log_density(embed(v)) > -math.inf)
    res = nelder_mead(objective, pts, cfg)
    params = BiotParams.from_array(embed(res.x))
    return MAPResult(params=params, free=free, u_free=res.x.copy(),
                     objective=res.fx, iterations=res.iterations,
                     reason=res.reason, n_evals=res.n_evals, log=res.log)
