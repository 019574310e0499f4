"""Bayesian machinery: priors, Gaussian likelihood, affine-invariant
ensemble sampler, conditional-mean estimate and credible intervals.

The sampler is the stretch-move ensemble scheme with a split-half parallel
update: each half of the ensemble proposes against the frozen complementary
half, so proposal evaluations within a half are independent and may run in
a worker pool.  All random draws come from one seeded generator and are
consumed in a fixed documented order (per step: partners, stretch factors,
acceptance uniforms for the first half, then the same for the second half),
so runs are exactly reproducible regardless of evaluation parallelism.
"""

from __future__ import annotations

import math
import multiprocessing
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .material import AdmissibilityError, BiotParams, PARAM_NAMES, check_hard_bounds
from .domain import SignalTrace
from .solver import InstabilityError, forward_map


class DimensionMismatch(ValueError):
    """Data trace and forward-map trace are not on the same sample grid."""


class InitializationError(ValueError):
    """Ensemble cannot start: bad walker count or infeasible positions."""


def _as_vector(u) -> np.ndarray:
    if isinstance(u, BiotParams):
        return u.to_array()
    return np.asarray(u, dtype=float)


@dataclass(frozen=True)
class GaussianPrior:
    """Independent Gaussian components, optionally truncated to a hard
    physical support (log-density is -inf outside it; normalization
    constants are dropped throughout)."""

    mean: np.ndarray
    std: np.ndarray
    support: Optional[Callable[[np.ndarray], bool]] = None

    def __post_init__(self):
        m = np.asarray(self.mean, dtype=float)
        s = np.asarray(self.std, dtype=float)
        if m.shape != s.shape or m.ndim != 1:
            raise ValueError("mean and std must be equal-length 1-d arrays")
        if not np.all(s > 0):
            raise ValueError("all prior standard deviations must be > 0")
        object.__setattr__(self, "mean", m)
        object.__setattr__(self, "std", s)

    @property
    def dim(self) -> int:
        return self.mean.size

    def log_density(self, u) -> float:
        u = _as_vector(u)
        if self.support is not None and not self.support(u):
            return -math.inf
        z = (u - self.mean) / self.std
        return -0.5 * float(z @ z)

    def sample(self, rng: np.random.Generator, max_tries: int = 1000) -> np.ndarray:
        for _ in range(max_tries):
            u = self.mean + self.std * rng.standard_normal(self.dim)
            if self.support is None or self.support(u):
                return u
        raise InitializationError("could not draw a prior sample inside the support")


@dataclass(frozen=True)
class UniformPrior:
    """Box-uniform prior on [lo_i, hi_i], optionally intersected with a
    hard physical support."""

    lo: np.ndarray
    hi: np.ndarray
    support: Optional[Callable[[np.ndarray], bool]] = None

    def __post_init__(self):
        lo = np.asarray(self.lo, dtype=float)
        hi = np.asarray(self.hi, dtype=float)
        if lo.shape != hi.shape or lo.ndim != 1:
            raise ValueError("lo and hi must be equal-length 1-d arrays")
        if not np.all(np.isfinite(lo)) or not np.all(np.isfinite(hi)):
            raise ValueError("uniform prior bounds must be finite")
        if not np.all(lo < hi):
            raise ValueError("uniform prior needs lo < hi in every coordinate")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @property
    def dim(self) -> int:
        return self.lo.size

    def log_density(self, u) -> float:
        u = _as_vector(u)
        if np.any(u < self.lo) or np.any(u > self.hi):
            return -math.inf
        if self.support is not None and not self.support(u):
            return -math.inf
        return 0.0

    def sample(self, rng: np.random.Generator, max_tries: int = 1000) -> np.ndarray:
        for _ in range(max_tries):
            u = rng.uniform(self.lo, self.hi)
            if self.support is None or self.support(u):
                return u
        raise InitializationError("could not draw a prior sample inside the support")


@dataclass(frozen=True)
class NoiseModel:
    """Additive i.i.d. Gaussian measurement noise with std gamma [Pa]."""

    gamma: float

    def __post_init__(self):
        if not (self.gamma > 0):
            raise ValueError(f"gamma must be > 0, got {self.gamma}")


def trace_residual(y, g) -> np.ndarray:
    """y - g with sample-grid checks; accepts SignalTrace or plain arrays."""
    gp = g.pressures if isinstance(g, SignalTrace) else np.asarray(g, dtype=float)
    yp = y.pressures if isinstance(y, SignalTrace) else np.asarray(y, dtype=float)
    if gp.shape != yp.shape:
        raise DimensionMismatch(
            f"data has {yp.shape} samples but the forward map produced {gp.shape}")
    if isinstance(g, SignalTrace) and isinstance(y, SignalTrace) \
            and not np.array_equal(g.times, y.times):
        raise DimensionMismatch("data and forward-map traces use different sample times")
    return yp - gp


def log_likelihood(u, y: SignalTrace, nm: NoiseModel, fwd) -> float:
    """-||y - G(u)||^2 / (2 gamma^2); -inf when the forward solve rejects
    the parameters (inadmissible or unstable)."""
    try:
        g = fwd(u)
    except (AdmissibilityError, InstabilityError):
        return -math.inf
    r = trace_residual(y, g)
    return -0.5 * float(r @ r) / (nm.gamma * nm.gamma)


def log_prior(u, p) -> float:
    return p.log_density(_as_vector(u))


def log_posterior(u, y: SignalTrace, p, nm: NoiseModel, fwd) -> float:
    """Unnormalized log-posterior; out-of-support points short-circuit the
    forward solve (the PDE is never run for them)."""
    lp = log_prior(u, p)
    if lp == -math.inf:
        return -math.inf
    return lp + log_likelihood(u, y, nm, fwd)


@dataclass
class PosteriorSamples:
    """Ensemble chain in walker x step x parameter layout plus run metadata."""

    chain: np.ndarray
    log_post: np.ndarray
    accepted: np.ndarray
    burn_in: int
    seed: int
    stretch: float = 2.0
    names: Optional[tuple] = None

    def __post_init__(self):
        k, s, d = self.chain.shape
        if k < 2 * d + 2:
            raise InitializationError(
                f"need at least {2 * d + 2} walkers for dimension {d}, got {k}")
        if not (0 <= self.burn_in < s):
            raise ValueError(f"burn_in must be in [0, n_steps), got {self.burn_in}")
        if not np.all(np.isfinite(self.log_post)):
            raise ValueError("every stored sample must have finite log-posterior")

    @property
    def n_walkers(self) -> int:
        return self.chain.shape[0]

    @property
    def n_steps(self) -> int:
        return self.chain.shape[1]

    @property
    def dim(self) -> int:
        return self.chain.shape[2]

    @property
    def accept_rate(self) -> np.ndarray:
        return self.accepted.mean(axis=1)

    def flat(self, burn_in: Optional[int] = None) -> np.ndarray:
        """(n_kept, dim) post-burn-in samples, walkers interleaved by step."""
        b = self.burn_in if burn_in is None else burn_in
        return self.chain[:, b:, :].reshape(-1, self.dim)


# worker-pool plumbing: the posterior handle is installed in the parent
# before fork so children inherit it without pickling
_POSTERIOR = None


def _pool_eval(x):
    return _POSTERIOR(x)


def ensemble_sample(log_post: Callable[[np.ndarray], float], init, n_steps: int,
                    *, stretch: float = 2.0, seed: int, burn_in: Optional[int] = None,
                    n_workers: int = 1, names: Optional[Sequence[str]] = None
                    ) -> PosteriorSamples:
    """Affine-invariant stretch-move ensemble sampling.

    Per step and per walker k in the active half: draw a partner j
    uniformly from the complementary half, draw z with density ~ 1/sqrt(z)
    on [1/a, a], propose Y = X_j + z (X_k - X_j) and accept with
    probability min(1, z^(d-1) exp(logpi(Y) - logpi(X_k))).
    """
    init = np.array(init, dtype=float)
    if init.ndim != 2:
        raise InitializationError("init must be (n_walkers, dim)")
    n_walk, dim = init.shape
    if n_walk < 2 * dim + 2:
        raise InitializationError(
            f"need at least {2 * dim + 2} walkers for dimension {dim}, got {n_walk}")
    if n_walk % 2:
        raise InitializationError("walker count must be even (split-half update)")
    if np.unique(init, axis=0).shape[0] != n_walk:
        raise InitializationError("initial walkers must be pairwise distinct")
    if not (stretch > 1):
        raise ValueError(f"stretch scale must be > 1, got {stretch}")
    if n_steps < 1:
        raise ValueError("n_steps must be >= 1")
    if burn_in is None:
        burn_in = n_steps // 5
    if not (0 <= burn_in < n_steps):
        raise ValueError(f"burn_in must be in [0, n_steps), got {burn_in}")

    pool = None
    if n_workers > 1:
        global _POSTERIOR
        _POSTERIOR = log_post
        pool = multiprocessing.get_context("fork").Pool(processes=n_workers)
        evaluate = lambda pts: np.array(pool.map(_pool_eval, list(pts)))
    else:
        evaluate = lambda pts: np.array([log_post(p) for p in pts])

    try:
        lp = evaluate(init)
        if not np.all(np.isfinite(lp)):
            bad = int(np.nonzero(~np.isfinite(lp))[0][0])
            raise InitializationError(
                f"initial walker {bad} has non-finite log-posterior")

        rng = np.random.default_rng(seed)
        x = init.copy()
        chain = np.empty((n_walk, n_steps, dim))
        logp = np.empty((n_walk, n_steps))
        accepted = np.zeros((n_walk, n_steps), dtype=bool)
        half = n_walk // 2
        halves = (np.arange(half), np.arange(half, n_walk))

        for step in range(n_steps):
            for active, other in ((halves[0], halves[1]), (halves[1], halves[0])):
                n_act = active.size
                partners = other[rng.integers(0, other.size, size=n_act)]
                z = ((stretch - 1.0) * rng.random(n_act) + 1.0) ** 2 / stretch
                u = rng.random(n_act)
                prop = x[partners] + z[:, None] * (x[active] - x[partners])
                lp_prop = evaluate(prop)
                with np.errstate(divide="ignore"):
                    log_ratio = (dim - 1.0) * np.log(z) + lp_prop - lp[active]
                    acc = np.log(u) < log_ratio
                idx = active[acc]
                x[idx] = prop[acc]
                lp[idx] = lp_prop[acc]
                accepted[idx, step] = True
            chain[:, step, :] = x
            logp[:, step] = lp
    finally:
        if pool is not None:
            pool.close()
            pool.join()
            _POSTERIOR = None

    return PosteriorSamples(chain=chain, log_post=logp, accepted=accepted,
                            burn_in=burn_in, seed=seed, stretch=stretch,
                            names=tuple(names) if names is not None else None)


def conditional_mean(s: PosteriorSamples) -> np.ndarray:
    """Arithmetic mean over all post-burn-in samples, per parameter."""
    flat = s.flat()
    if flat.shape[0] < 100:
        raise ValueError(f"need >= 100 post-burn-in samples, have {flat.shape[0]}")
    return flat.mean(axis=0)


def credible_interval(s: PosteriorSamples, index: int, level: float = 0.9
                      ) -> tuple[float, float]:
    """Central interval: empirical (1-level)/2 and (1+level)/2 quantiles of
    the marginal chain, linear interpolation between order statistics."""
    if not (0 < level < 1):
        raise ValueError(f"level must be in (0, 1), got {level}")
    flat = s.flat()
    if flat.shape[0] < 100:
        raise ValueError(f"need >= 100 post-burn-in samples, have {flat.shape[0]}")
    lo, hi = np.quantile(flat[:, index], [(1 - level) / 2, (1 + level) / 2])
    return float(lo), float(hi)


def integrated_autocorr_time(x: np.ndarray, c: float = 5.0) -> float:
    """Integrated autocorrelation time of one scalar chain, walker-averaged,
    with the standard self-consistent window (first M with M >= c * tau)."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    n = x.shape[1]
    size = 1
    while size < 2 * n:
        size *= 2
    acf = np.zeros(n)
    for row in x:
        d = row - row.mean()
        f = np.fft.rfft(d, size)
        a = np.fft.irfft(f * np.conjugate(f), size)[:n].real
        if a[0] > 0:
            acf += a / a[0]
    acf /= x.shape[0]
    taus = 2.0 * np.cumsum(acf) - 1.0
    window = np.arange(n) >= c * taus
    if np.any(window):
        return float(taus[int(np.argmax(window))])
    return float(taus[-1])


def effective_sample_size(s: PosteriorSamples, index: int) -> float:
    """Post-burn-in sample count deflated by the integrated autocorrelation
    time of that parameter's walker-averaged chain."""
    sub = s.chain[:, s.burn_in:, index]
    tau = max(1.0, integrated_autocorr_time(sub))
    return sub.size / tau


def synthesize_data(u_true: BiotParams, fluid, dom, *, gamma: Optional[float] = None,
                    relative: Optional[float] = None, seed: int, b: float = 0.0,
                    cfl: float = 0.5, backend: str = "auto"
                    ) -> tuple[SignalTrace, SignalTrace, float]:
    """Simulate at the true parameters and add seeded i.i.d. Gaussian noise.

    Exactly one of gamma (absolute, Pa) and relative (fraction of the peak
    absolute clean pressure) must be given; relative 0 or gamma 0 is allowed
    here only so tests can produce degenerate noise-free datasets.  Returns
    (noisy, clean, gamma_used).
    """
    if (gamma is None) == (relative is None):
        raise ValueError("give exactly one of gamma= and relative=")
    clean = forward_map(u_true, fluid, dom, b=b, cfl=cfl, backend=backend)
    if gamma is None:
        gamma = float(relative) * float(np.max(np.abs(clean.pressures)))
    rng = np.random.default_rng(seed)
    noise = gamma * rng.standard_normal(clean.pressures.size)
    noisy = SignalTrace(times=clean.times, pressures=clean.pressures + noise,
                        provenance="synthetic-noisy")
    return noisy, clean, float(gamma)


def biot_hard_support(u) -> bool:
    """Physical bounds of the six-parameter vector (prior support factor)."""
    return check_hard_bounds(u)


@dataclass
class BiotPosterior:
    """Glue between the generic sampler and the physical problem: embeds a
    free-parameter subvector into the full six-parameter space, gates on the
    prior support, and only then runs the forward solve.

    prior and fixed are always six-dimensional; free names the coordinates
    being sampled (order follows PARAM_NAMES).
    """

    prior: object
    noise: NoiseModel
    data: SignalTrace
    fwd: Callable[[BiotParams], SignalTrace]
    free: tuple = PARAM_NAMES
    fixed: np.ndarray = field(default_factory=lambda: np.zeros(6))

    def __post_init__(self):
        bad = [n for n in self.free if n not in PARAM_NAMES]
        if bad:
            raise ValueError(f"unknown parameter names: {bad}")
        if len(self.free) == 0:
            raise ValueError("empty parameter subset")
        self.free = tuple(sorted(self.free, key=PARAM_NAMES.index))
        self.free_idx = np.array([PARAM_NAMES.index(n) for n in self.free])
        self.fixed = np.asarray(self.fixed, dtype=float)

    @property
    def dim(self) -> int:
        return len(self.free)

    def embed(self, free_vec) -> np.ndarray:
        u = self.fixed.copy()
        u[self.free_idx] = np.asarray(free_vec, dtype=float)
        return u

    def log_posterior(self, free_vec) -> float:
        u = self.embed(free_vec)
        lp = self.prior.log_density(u)
        if lp == -math.inf:
            return -math.inf
        try:
            params = BiotParams.from_array(u)
        except AdmissibilityError:
            return -math.inf
        return lp + log_likelihood(params, self.data, self.noise, self.fwd)

    def initial_walkers(self, n_walkers: int, rng: np.random.Generator,
                        max_tries: int = 200) -> np.ndarray:
        """Prior draws restricted to the free coordinates, re-drawn until the
        full log-posterior is finite (runs the forward solve)."""
        out = np.empty((n_walkers, self.dim))
        for k in range(n_walkers):
            for attempt in range(max_tries):
                v = self.prior.sample(rng)[self.free_idx]
                if math.isfinite(self.log_posterior(v)):
                    out[k] = v
                    break
            else:
                raise InitializationError(
                    f"no feasible initial position for walker {k} "
                    f"after {max_tries} prior draws")
        return out
