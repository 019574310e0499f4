"""Run-configuration loading, validation and canonical serialization.

Configs are nested key/value sections in YAML (JSON accepted as an
alternative encoding of the same schema).  Validation errors carry the
dotted field path.  A content hash of the normalized config is embedded in
every output file so results can be traced to the exact configuration.
"""

from __future__ import annotations

import hashlib
import json
import math
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np
import yaml


class _YamlLoader(yaml.SafeLoader):
    """SafeLoader that also accepts 1e5 / 2.2e9 style floats (YAML 1.2)."""


_YamlLoader.add_implicit_resolver(
    "tag:yaml.org,2002:float",
    re.compile(r"""^(?:
         [-+]?(?:[0-9][0-9_]*)\.[0-9_]*(?:[eE][-+]?[0-9]+)?
        |[-+]?(?:[0-9][0-9_]*)(?:[eE][-+]?[0-9]+)
        |[-+]?\.[0-9_]+(?:[eE][-+]?[0-9]+)?
        |[-+]?\.(?:inf|Inf|INF)
        |\.(?:nan|NaN|NAN))$""", re.X),
    list("-+0123456789."))

from .material import (AdmissibilityError, BiotParams, FluidProps, PARAM_NAMES,
                       elastic_constants)
from .domain import DomainGeometry, GeometryError, build_domain
from .inference import GaussianPrior, UniformPrior, biot_hard_support
from .optim import NMConfig
from .solver import Domain

DEFAULT_ALPHA_MAX = 3.0


class ConfigError(ValueError):
    """Invalid run configuration; message starts with the dotted field path."""

    def __init__(self, path: str, message: str):
        self.path = path
        super().__init__(f"{path}: {message}")


def _section(d: dict, path: str, key: str, required: bool = True) -> dict:
    v = d.get(key)
    if v is None:
        if required:
            raise ConfigError(f"{path}{key}", "missing required section")
        return {}
    if not isinstance(v, dict):
        raise ConfigError(f"{path}{key}", f"expected a mapping, got {type(v).__name__}")
    return v


def _num(d: dict, path: str, key: str, default=None, required: bool = False,
         positive: bool = False, nonnegative: bool = False):
    v = d.get(key, None)
    if v is None:
        if required:
            raise ConfigError(f"{path}{key}", "missing required value")
        return default
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(f"{path}{key}", f"expected a number, got {v!r}")
    v = float(v)
    if not math.isfinite(v):
        raise ConfigError(f"{path}{key}", "must be finite")
    if positive and not (v > 0):
        raise ConfigError(f"{path}{key}", f"must be > 0 (got {v})")
    if nonnegative and v < 0:
        raise ConfigError(f"{path}{key}", f"must be >= 0 (got {v})")
    return v


def _int(d: dict, path: str, key: str, default=None, required: bool = False,
         minimum: Optional[int] = None):
    v = d.get(key, None)
    if v is None:
        if required:
            raise ConfigError(f"{path}{key}", "missing required value")
        return default
    if isinstance(v, bool) or not isinstance(v, int):
        raise ConfigError(f"{path}{key}", f"expected an integer, got {v!r}")
    if minimum is not None and v < minimum:
        raise ConfigError(f"{path}{key}", f"must be >= {minimum} (got {v})")
    return v


def _names(d: dict, path: str, key: str, default):
    v = d.get(key)
    if v is None:
        return list(default)
    if not isinstance(v, list) or not all(isinstance(s, str) for s in v):
        raise ConfigError(f"{path}{key}", "expected a list of parameter names")
    bad = [s for s in v if s not in PARAM_NAMES]
    if bad:
        raise ConfigError(f"{path}{key}", f"unknown parameter names {bad}; "
                                          f"valid: {list(PARAM_NAMES)}")
    if len(set(v)) != len(v):
        raise ConfigError(f"{path}{key}", "duplicate parameter names")
    return list(v)


@dataclass
class RunConfig:
    """Validated run configuration; raw holds the normalized dict form."""

    raw: dict
    fluid: FluidProps
    biot_true: BiotParams
    geometry: DomainGeometry
    b: float
    cfl: float
    T: float
    f_c: float
    F_0: float
    n_samples: int
    prior_kind: str
    prior_table: dict
    alpha_max: float
    noise_gamma: Optional[float]
    noise_relative: Optional[float]
    noise_seed: int
    mcmc_walkers: int
    mcmc_steps: int
    mcmc_burn_in: int
    mcmc_stretch: float
    mcmc_seed: int
    mcmc_free: list
    nm: NMConfig
    nm_subset: list
    nm_sigma_reg: Optional[float]
    output_dir: str

    # -- construction ----------------------------------------------------

    @classmethod
    def load(cls, path) -> "RunConfig":
        path = Path(path)
        if not path.exists():
            raise ConfigError(str(path), "config file not found")
        text = path.read_text()
        try:
            if path.suffix.lower() == ".json":
                data = json.loads(text)
            else:
                data = yaml.load(text, Loader=_YamlLoader)
        except (json.JSONDecodeError, yaml.YAMLError) as exc:
            raise ConfigError(str(path), f"cannot parse: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError(str(path), "top level must be a mapping")
        return cls.from_dict(data)

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        geo = _section(data, "", "geometry")
        phy = _section(data, "", "physics")
        fl = _section(phy, "physics.", "fluid")
        bi = _section(phy, "physics.", "biot")
        pri = _section(data, "", "prior")
        noi = _section(data, "", "noise", required=False)
        mc = _section(data, "", "mcmc", required=False)
        nm = _section(data, "", "nm", required=False)
        out = _section(data, "", "output", required=False)

        rho_f = _num(fl, "physics.fluid.", "rho_f", required=True, positive=True)
        k_f = _num(fl, "physics.fluid.", "K_f", required=True, positive=True)
        fluid = FluidProps(rho_f=rho_f, K_f=k_f)

        vals = {}
        for name, (lo, hi) in (("phi", (0.0, 1.0)), ("alpha", (1.0, math.inf)),
                               ("Ks", (0.0, math.inf)), ("Kb", (0.0, math.inf)),
                               ("N", (0.0, math.inf)), ("rho_s", (0.0, math.inf))):
            v = _num(bi, "physics.biot.", name, required=True)
            if name == "alpha":
                ok = v >= lo
            else:
                ok = lo < v < hi if hi < math.inf else v > lo
            if not ok:
                bound = f">= {lo}" if name == "alpha" else \
                    (f"in ({lo}, {hi})" if hi < math.inf else f"> {lo}")
                raise ConfigError(f"physics.biot.{name}", f"must be {bound} (got {v})")
            vals[name] = v
        biot_true = BiotParams(**vals)
        b = _num(phy, "physics.", "b", default=0.0, nonnegative=True)
        try:
            elastic_constants(biot_true, fluid, b)
        except AdmissibilityError as exc:
            raise ConfigError("physics.biot", f"inadmissible parameters: {exc}") from exc

        cfl = _num(phy, "physics.", "cfl", default=0.5)
        if not (0 < cfl <= 1):
            raise ConfigError("physics.cfl", f"must be in (0, 1] (got {cfl})")
        t_total = _num(phy, "physics.", "T", required=True, positive=True)
        f_c = _num(phy, "physics.", "f_c", required=True, positive=True)
        f_0 = _num(phy, "physics.", "F_0", default=1.0)
        if f_0 == 0:
            raise ConfigError("physics.F_0", "must be nonzero")
        n_samples = _int(phy, "physics.", "n_samples", default=512, minimum=1)

        try:
            geometry = DomainGeometry(
                bone_length=_num(geo, "geometry.", "bone_length", required=True, positive=True),
                bone_thickness=_num(geo, "geometry.", "bone_thickness", required=True, positive=True),
                source_offset=_num(geo, "geometry.", "source_offset", default=2.0e-3, positive=True),
                receiver_offset=_num(geo, "geometry.", "receiver_offset", default=None),
                lateral_pad=_num(geo, "geometry.", "lateral_pad", default=4.0e-3, positive=True),
                vertical_pad=_num(geo, "geometry.", "vertical_pad", default=4.0e-3, positive=True),
                dx=_num(geo, "geometry.", "dx", default=None),
                cells_per_wavelength=_num(geo, "geometry.", "cells_per_wavelength",
                                          default=20.0, positive=True),
                source_x=_num(geo, "geometry.", "source_x", default=None),
                receiver_x=_num(geo, "geometry.", "receiver_x", default=None),
            )
        except GeometryError as exc:
            raise ConfigError("geometry", str(exc)) from exc

        kind = pri.get("kind")
        if kind not in ("gaussian", "uniform"):
            raise ConfigError("prior.kind", f"must be 'gaussian' or 'uniform' (got {kind!r})")
        alpha_max = _num(pri, "prior.", "alpha_max", default=DEFAULT_ALPHA_MAX, positive=True)
        if alpha_max <= 1.0:
            raise ConfigError("prior.alpha_max", f"must be > 1 (got {alpha_max})")
        table = {}
        for name in PARAM_NAMES:
            row = _section(pri, "prior.", name)
            p = f"prior.{name}."
            if kind == "gaussian":
                mean = _num(row, p, "mean", required=True)
                std = _num(row, p, "std", required=True, positive=True)
                table[name] = {"mean": mean, "std": std}
            else:
                lo = _num(row, p, "lo", required=True)
                hi = _num(row, p, "hi", default=math.inf)
                if name == "alpha" and not math.isfinite(hi):
                    hi = alpha_max   # truncate the half-open tortuosity range
                if not math.isfinite(hi):
                    raise ConfigError(p + "hi", "must be finite")
                if not lo < hi:
                    raise ConfigError(p + "hi", f"needs lo < hi (got [{lo}, {hi}])")
                table[name] = {"lo": lo, "hi": hi}

        noise_gamma = _num(noi, "noise.", "gamma", default=None)
        noise_rel = _num(noi, "noise.", "relative", default=None)
        if noise_gamma is not None and noise_rel is not None:
            raise ConfigError("noise", "give either gamma or relative, not both")
        if noise_gamma is None and noise_rel is None:
            noise_rel = 0.05
        if noise_gamma is not None and noise_gamma < 0:
            raise ConfigError("noise.gamma", f"must be >= 0 (got {noise_gamma})")
        if noise_rel is not None and noise_rel < 0:
            raise ConfigError("noise.relative", f"must be >= 0 (got {noise_rel})")
        noise_seed = _int(noi, "noise.", "seed", default=0)

        walkers = _int(mc, "mcmc.", "walkers", default=24, minimum=2)
        steps = _int(mc, "mcmc.", "steps", default=1500, minimum=1)
        burn = _int(mc, "mcmc.", "burn_in", default=steps // 5, minimum=0)
        if burn >= steps:
            raise ConfigError("mcmc.burn_in", f"must be < steps (got {burn} >= {steps})")
        stretch = _num(mc, "mcmc.", "stretch", default=2.0)
        if stretch <= 1:
            raise ConfigError("mcmc.stretch", f"must be > 1 (got {stretch})")
        mcmc_seed = _int(mc, "mcmc.", "seed", default=0)
        mcmc_free = _names(mc, "mcmc.", "free", PARAM_NAMES)
        if walkers < 2 * len(mcmc_free) + 2:
            raise ConfigError("mcmc.walkers",
                              f"need >= {2 * len(mcmc_free) + 2} walkers for "
                              f"{len(mcmc_free)} free parameters (got {walkers})")
        if walkers % 2:
            raise ConfigError("mcmc.walkers", "must be even (split-half update)")

        try:
            nm_cfg = NMConfig(
                tau_r=_num(nm, "nm.", "tau_r", default=1.0),
                tau_e=_num(nm, "nm.", "tau_e", default=2.0),
                tau_c=_num(nm, "nm.", "tau_c", default=0.5),
                tau_s=_num(nm, "nm.", "tau_s", default=0.5),
                max_iters=_int(nm, "nm.", "max_iters", default=2000, minimum=1),
                size_tol=_num(nm, "nm.", "size_tol", default=1e-8, positive=True),
                f_tol=_num(nm, "nm.", "f_tol", default=1e-10, positive=True),
            )
        except ValueError as exc:
            raise ConfigError("nm", str(exc)) from exc
        subset = nm.get("subset")
        if subset is not None and subset == []:
            raise ConfigError("nm.subset", "empty parameter subset")
        nm_subset = _names(nm, "nm.", "subset", PARAM_NAMES)
        nm_sigma = _num(nm, "nm.", "sigma_reg", default=None)
        if nm_sigma is not None and nm_sigma < 0:
            raise ConfigError("nm.sigma_reg", f"must be >= 0 (got {nm_sigma})")

        out_dir = out.get("dir", ".")
        if not isinstance(out_dir, str):
            raise ConfigError("output.dir", "expected a string path")

        cfg = cls(raw={}, fluid=fluid, biot_true=biot_true, geometry=geometry,
                  b=b, cfl=cfl, T=t_total, f_c=f_c, F_0=f_0, n_samples=n_samples,
                  prior_kind=kind, prior_table=table, alpha_max=alpha_max,
                  noise_gamma=noise_gamma, noise_relative=noise_rel,
                  noise_seed=noise_seed,
                  mcmc_walkers=walkers, mcmc_steps=steps, mcmc_burn_in=burn,
                  mcmc_stretch=stretch, mcmc_seed=mcmc_seed, mcmc_free=mcmc_free,
                  nm=nm_cfg, nm_subset=nm_subset, nm_sigma_reg=nm_sigma,
                  output_dir=out_dir)
        cfg.raw = cfg.to_dict()
        return cfg

    # -- serialization ----------------------------------------------------

    def to_dict(self) -> dict:
        g, bt = self.geometry, self.biot_true
        d = {
            "geometry": {
                "bone_length": g.bone_length,
                "bone_thickness": g.bone_thickness,
                "source_offset": g.source_offset,
                "receiver_offset": g.receiver_offset,
                "lateral_pad": g.lateral_pad,
                "vertical_pad": g.vertical_pad,
                "dx": g.dx,
                "cells_per_wavelength": g.cells_per_wavelength,
                "source_x": g.source_x,
                "receiver_x": g.receiver_x,
            },
            "physics": {
                "fluid": {"rho_f": self.fluid.rho_f, "K_f": self.fluid.K_f},
                "biot": {n: getattr(bt, n) for n in PARAM_NAMES},
                "b": self.b, "cfl": self.cfl, "T": self.T,
                "f_c": self.f_c, "F_0": self.F_0, "n_samples": self.n_samples,
            },
            "prior": {"kind": self.prior_kind, "alpha_max": self.alpha_max,
                      **{n: dict(self.prior_table[n]) for n in PARAM_NAMES}},
            "noise": {"gamma": self.noise_gamma, "relative": self.noise_relative,
                      "seed": self.noise_seed},
            "mcmc": {"walkers": self.mcmc_walkers, "steps": self.mcmc_steps,
                     "burn_in": self.mcmc_burn_in, "stretch": self.mcmc_stretch,
                     "seed": self.mcmc_seed, "free": list(self.mcmc_free)},
            "nm": {"tau_r": self.nm.tau_r, "tau_e": self.nm.tau_e,
                   "tau_c": self.nm.tau_c, "tau_s": self.nm.tau_s,
                   "max_iters": self.nm.max_iters, "size_tol": self.nm.size_tol,
                   "f_tol": self.nm.f_tol, "subset": list(self.nm_subset),
                   "sigma_reg": self.nm_sigma_reg},
            "output": {"dir": self.output_dir},
        }
        return d

    def to_yaml(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=True)

    @property
    def hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    # -- derived objects ---------------------------------------------------

    def domain(self) -> Domain:
        grid, region, source, receiver = build_domain(
            self.geometry, self.fluid, self.biot_true,
            f_c=self.f_c, F_0=self.F_0, T=self.T, n_samples=self.n_samples,
            b=self.b)
        return Domain(grid, region, source, receiver)

    def prior(self):
        t = self.prior_table
        if self.prior_kind == "gaussian":
            return GaussianPrior(
                mean=np.array([t[n]["mean"] for n in PARAM_NAMES]),
                std=np.array([t[n]["std"] for n in PARAM_NAMES]),
                support=biot_hard_support)
        return UniformPrior(
            lo=np.array([t[n]["lo"] for n in PARAM_NAMES]),
            hi=np.array([t[n]["hi"] for n in PARAM_NAMES]),
            support=biot_hard_support)

    def resolve_gamma(self, reference_peak: float) -> float:
        """Absolute noise std; relative levels scale the given peak |P|."""
        if self.noise_gamma is not None:
            return self.noise_gamma
        return self.noise_relative * reference_peak
