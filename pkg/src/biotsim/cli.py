"""Command-line front end: forward simulation, synthetic-data generation,
conditional-mean and MAP estimation, and summary re-rendering.

Exit codes: 0 success, 1 user/config error, 2 numerical failure.  All
output files embed the config hash, serialize numbers with 17 significant
digits, and are written atomically (temp file + rename), so re-running any
subcommand with the same config and seed reproduces every file bitwise.
Worker parallelism for the sampler is capped by the BIOT_THREADS
environment variable (default 1).
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import tempfile
from pathlib import Path
from typing import Optional

import numpy as np

from .material import AdmissibilityError, BiotParams, PARAM_NAMES
from .domain import GeometryError, SignalTrace
from .solver import InstabilityError, forward_map
from .inference import (BiotPosterior, DimensionMismatch, InitializationError,
                        NoiseModel, conditional_mean, credible_interval,
                        effective_sample_size, ensemble_sample)
from .optim import estimate_map
from .config import ConfigError, RunConfig

USER_ERRORS = (ConfigError, GeometryError, AdmissibilityError, DimensionMismatch,
               InitializationError, FileNotFoundError, ValueError)


def _fmt(x) -> str:
    if isinstance(x, str):
        return x
    if isinstance(x, (bool, np.bool_)):
        return "1" if x else "0"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return format(float(x), ".17g")


def _atomic_write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_csv(path: Path, header: list, rows, config_hash: str) -> None:
    lines = [f"# config_hash={config_hash}", ",".join(header)]
    for row in rows:
        lines.append(",".join(_fmt(v) for v in row))
    _atomic_write(path, "\n".join(lines) + "\n")


def write_json(path: Path, payload: dict) -> None:
    _atomic_write(path, json.dumps(payload, indent=2, sort_keys=True) + "\n")


def read_dataset(path) -> tuple[np.ndarray, np.ndarray, Optional[np.ndarray]]:
    """Read a trace/dataset CSV: t plus one or two pressure columns
    (P or P_noisy[,P_clean]); comment lines start with '#'."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"dataset file not found: {path}")
    header = None
    data = []
    with path.open() as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if header is None:
                header = [c.strip() for c in line.split(",")]
                continue
            data.append([float(v) for v in line.split(",")])
    if header is None or not data:
        raise DimensionMismatch(f"dataset {path} is empty")
    arr = np.asarray(data)
    if arr.shape[1] < 2 or header[0] != "t":
        raise DimensionMismatch(
            f"dataset {path} must have columns t,P[,P_clean]; got {header}")
    clean = arr[:, 2] if arr.shape[1] > 2 else None
    return arr[:, 0], arr[:, 1], clean


def _snapshot_writer(out_dir: Path, grid, config_hash: str):
    def emit(step: int, t: float, p: np.ndarray):
        lines = [f"t={_fmt(t)} nx={grid.nx} ny={grid.ny}"]
        for i in range(grid.nx):
            lines.append(",".join(_fmt(v) for v in p[i]))
        _atomic_write(out_dir / f"snapshot_{step:06d}.csv", "\n".join(lines) + "\n")
    return emit


def _n_workers() -> int:
    raw = os.environ.get("BIOT_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        raise ConfigError("BIOT_THREADS", f"must be an integer, got {raw!r}")


def _load_data_for(cfg: RunConfig, dataset_path) -> tuple:
    """Dataset against the config's sample grid; returns (dom, y, clean)."""
    times, noisy, clean = read_dataset(dataset_path)
    dom = cfg.domain()
    want = dom.receiver.times
    if times.size != want.size or not np.allclose(times, want, rtol=1e-9, atol=0.0):
        raise DimensionMismatch(
            f"dataset sample grid ({times.size} samples) does not match the "
            f"config receiver grid ({want.size} samples over T={cfg.T})")
    y = SignalTrace(times=want, pressures=noisy, provenance="external")
    return dom, y, clean


def _forward_handle(cfg: RunConfig, dom):
    def fwd(params: BiotParams) -> SignalTrace:
        return forward_map(params, cfg.fluid, dom, b=cfg.b, cfl=cfg.cfl)
    return fwd


def _gamma_for(cfg: RunConfig, noisy: np.ndarray, clean: Optional[np.ndarray]) -> float:
    ref = clean if clean is not None else noisy
    gamma = cfg.resolve_gamma(float(np.max(np.abs(ref))))
    if not (gamma > 0):
        raise ConfigError("noise", "estimation needs a positive noise level")
    return gamma


# ---------------------------------------------------------------- commands

def cmd_forward(cfg: RunConfig, out_dir: Path, snapshots: Optional[int]) -> None:
    dom = cfg.domain()
    on_snap = _snapshot_writer(out_dir, dom.grid, cfg.hash) if snapshots else None
    trace = forward_map(cfg.biot_true, cfg.fluid, dom, b=cfg.b, cfl=cfg.cfl,
                        snapshot_every=snapshots, on_snapshot=on_snap)
    write_csv(out_dir / "trace.csv", ["t", "P"],
              zip(trace.times, trace.pressures), cfg.hash)


def cmd_synthesize(cfg: RunConfig, out_dir: Path, seed: Optional[int]) -> None:
    from .inference import synthesize_data
    dom = cfg.domain()
    noisy, clean, gamma = synthesize_data(
        cfg.biot_true, cfg.fluid, dom, gamma=cfg.noise_gamma,
        relative=cfg.noise_relative, b=cfg.b, cfl=cfg.cfl,
        seed=cfg.noise_seed if seed is None else seed)
    write_csv(out_dir / "dataset.csv", ["t", "P_noisy", "P_clean"],
              zip(noisy.times, noisy.pressures, clean.pressures), cfg.hash)


def _estimate_entry(name: str, value: float, fixed: bool, lo=None, hi=None) -> dict:
    entry = {"value": value, "fixed": fixed}
    if lo is not None:
        entry["lo"] = lo
        entry["hi"] = hi
    return entry


def cmd_estimate_cm(cfg: RunConfig, dataset_path, out_dir: Path,
                    seed: Optional[int]) -> None:
    dom, y, clean = _load_data_for(cfg, dataset_path)
    gamma = _gamma_for(cfg, y.pressures, clean)
    seed = cfg.mcmc_seed if seed is None else seed
    fwd = _forward_handle(cfg, dom)
    posterior = BiotPosterior(prior=cfg.prior(), noise=NoiseModel(gamma), data=y,
                              fwd=fwd, free=tuple(cfg.mcmc_free),
                              fixed=cfg.biot_true.to_array())
    init = posterior.initial_walkers(cfg.mcmc_walkers,
                                     np.random.default_rng((seed, 0xA5)))
    samples = ensemble_sample(posterior.log_posterior, init, cfg.mcmc_steps,
                              stretch=cfg.mcmc_stretch, seed=seed,
                              burn_in=cfg.mcmc_burn_in, n_workers=_n_workers(),
                              names=posterior.free)
    u_cm_free = conditional_mean(samples)
    u_cm = BiotParams.from_array(posterior.embed(u_cm_free))
    fit = fwd(u_cm)
    misfit = float(np.linalg.norm(y.pressures - fit.pressures))

    rows = []
    for w in range(samples.n_walkers):
        for s in range(samples.n_steps):
            full = posterior.embed(samples.chain[w, s])
            rows.append([w, s, *full, samples.log_post[w, s],
                         samples.accepted[w, s]])
    write_csv(out_dir / "chain.csv",
              ["walker", "step", *PARAM_NAMES, "log_post", "accepted"],
              rows, cfg.hash)
    write_csv(out_dir / "fit.csv", ["t", "P_data", "P_fit"],
              zip(y.times, y.pressures, fit.pressures), cfg.hash)

    estimates = {}
    for i, nm in enumerate(PARAM_NAMES):
        if nm in posterior.free:
            k = posterior.free.index(nm)
            lo, hi = credible_interval(samples, k, 0.9)
            estimates[nm] = _estimate_entry(nm, float(u_cm.to_array()[i]), False, lo, hi)
        else:
            estimates[nm] = _estimate_entry(nm, float(cfg.biot_true.to_array()[i]), True)
    summary = {
        "command": "estimate-cm",
        "config_hash": cfg.hash,
        "seed": seed,
        "prior_kind": cfg.prior_kind,
        "free": list(posterior.free),
        "gamma": gamma,
        "estimates": estimates,
        "true": {nm: getattr(cfg.biot_true, nm) for nm in PARAM_NAMES},
        "interval_level": 0.9,
        "misfit": misfit,
        "noise_norm": (float(np.linalg.norm(y.pressures - clean))
                       if clean is not None else None),
        "acceptance_rate": [float(a) for a in samples.accept_rate],
        "ess": {nm: float(effective_sample_size(samples, k))
                for k, nm in enumerate(posterior.free)},
        "n_walkers": samples.n_walkers,
        "n_steps": samples.n_steps,
        "burn_in": samples.burn_in,
    }
    write_json(out_dir / "summary.json", summary)


def cmd_estimate_map(cfg: RunConfig, dataset_path, out_dir: Path) -> None:
    dom, y, clean = _load_data_for(cfg, dataset_path)
    gamma = _gamma_for(cfg, y.pressures, clean)
    sigma_reg = cfg.nm_sigma_reg if cfg.nm_sigma_reg is not None \
        else 2.0 * gamma * gamma
    fwd = _forward_handle(cfg, dom)
    res = estimate_map(y, cfg.prior(), fwd, cfg=cfg.nm,
                       free=tuple(cfg.nm_subset), fixed=cfg.biot_true.to_array(),
                       sigma_reg=sigma_reg)
    fit = fwd(res.params)
    misfit = float(np.linalg.norm(y.pressures - fit.pressures))

    write_csv(out_dir / "nm_log.csv",
              ["iter", "operation", "f_best", "f_worst", "diameter"],
              ([r.iteration, r.operation, r.f_best, r.f_worst, r.diameter]
               for r in res.log), cfg.hash)
    write_csv(out_dir / "fit.csv", ["t", "P_data", "P_fit"],
              zip(y.times, y.pressures, fit.pressures), cfg.hash)

    estimates = {}
    for i, nm in enumerate(PARAM_NAMES):
        fixed = nm not in res.free
        estimates[nm] = _estimate_entry(nm, float(res.params.to_array()[i]), fixed)
    summary = {
        "command": "estimate-map",
        "config_hash": cfg.hash,
        "prior_kind": cfg.prior_kind,
        "free": list(res.free),
        "gamma": gamma,
        "sigma_reg": sigma_reg,
        "estimates": estimates,
        "true": {nm: getattr(cfg.biot_true, nm) for nm in PARAM_NAMES},
        "objective": res.objective,
        "iterations": res.iterations,
        "termination": res.reason,
        "n_evals": res.n_evals,
        "misfit": misfit,
        "noise_norm": (float(np.linalg.norm(y.pressures - clean))
                       if clean is not None else None),
    }
    write_json(out_dir / "summary.json", summary)


def cmd_report(summary_path) -> None:
    path = Path(summary_path)
    if not path.exists():
        raise FileNotFoundError(f"summary file not found: {path}")
    s = json.loads(path.read_text())
    est = s["estimates"]
    has_iv = any("lo" in est[nm] for nm in PARAM_NAMES if nm in est)
    head = f"{'Parameter':<10}{'True':>14}{'Estimate':>14}"
    if has_iv:
        head += f"  {'0.90 interval':<28}"
    print(f"{s.get('command', 'run')}  (prior: {s.get('prior_kind', '?')}, "
          f"config {s.get('config_hash', '?')})")
    print(head)
    print("-" * len(head))
    for nm in PARAM_NAMES:
        if nm not in est:
            continue
        e = est[nm]
        row = f"{nm:<10}{s['true'][nm]:>14.6g}{e['value']:>14.6g}"
        if has_iv:
            if "lo" in e:
                row += f"  [{e['lo']:.6g}, {e['hi']:.6g}]"
            else:
                row += "  (fixed)"
        elif e.get("fixed"):
            row += "  (fixed)"
        print(row)
    if "misfit" in s and s["misfit"] is not None:
        print(f"misfit ||y - G(u)|| = {s['misfit']:.6g}")
    if s.get("termination"):
        print(f"termination: {s['termination']} after {s['iterations']} iterations")


# ---------------------------------------------------------------- driver

def _build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="biotsim",
        description="Poroelastic through-transmission simulation and "
                    "Bayesian parameter recovery")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, dataset=False):
        p.add_argument("--config", required=True, help="run configuration (YAML or JSON)")
        p.add_argument("--out", default=None, help="output directory (default: config output.dir)")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        if dataset:
            p.add_argument("--dataset", required=True, help="dataset CSV from 'synthesize'")

    p = sub.add_parser("forward", help="run the forward simulation at the true parameters")
    common(p)
    p.add_argument("--snapshots", type=int, default=None, metavar="K",
                   help="dump the full pressure field every K steps")
    common(sub.add_parser("synthesize", help="forward solve plus seeded noise"))
    common(sub.add_parser("estimate-cm", help="ensemble-MCMC conditional-mean estimate"),
           dataset=True)
    common(sub.add_parser("estimate-map", help="simplex MAP estimate"), dataset=True)
    p = sub.add_parser("report", help="render a summary JSON as an aligned table")
    p.add_argument("summary", help="path to summary.json")
    return ap


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "report":
            cmd_report(args.summary)
            return 0
        cfg = RunConfig.load(args.config)
        out_dir = Path(args.out if args.out is not None else cfg.output_dir)
        if args.command == "forward":
            if args.snapshots is not None and args.snapshots < 1:
                raise ConfigError("--snapshots", "must be a positive step count")
            cmd_forward(cfg, out_dir, args.snapshots)
        elif args.command == "synthesize":
            cmd_synthesize(cfg, out_dir, args.seed)
        elif args.command == "estimate-cm":
            cmd_estimate_cm(cfg, args.dataset, out_dir, args.seed)
        elif args.command == "estimate-map":
            cmd_estimate_map(cfg, args.dataset, out_dir)
        return 0
    except InstabilityError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 2
    except USER_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
