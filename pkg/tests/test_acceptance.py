"""Acceptance gate: one test per criterion, each printing a PASS/FAIL line.

The desk-scale inversion criteria run the real pipeline on a scaled
through-transmission replica (ten times the reference geometry at a tenth
of the pulse frequency, which leaves the lossless wave system dimensionless-
identical) and are statistical by nature; their seeds are fixed.  Worker
count for the samplers honors BIOT_THREADS (default 2, capped by the CPU
count).  Run with `pytest tests/test_acceptance.py -s` to see the lines.
"""

import math
import os

import numpy as np
import pytest
import scipy.linalg
import scipy.stats
import yaml

from biotsim import (BiotParams, DomainGeometry, FluidProps, Grid, ReceiverSpec,
                     RegionMap, SourceSpec, build_domain, elastic_constants,
                     forward_map, make_step_control, max_wave_speed)
from biotsim.inference import (BiotPosterior, GaussianPrior, NoiseModel,
                               UniformPrior, biot_hard_support, conditional_mean,
                               credible_interval, ensemble_sample,
                               integrated_autocorr_time, synthesize_data)
from biotsim.optim import NMConfig, estimate_map, map_objective, nelder_mead
from biotsim.solver import Domain

WATER = FluidProps(rho_f=1000.0, K_f=2.2e9)
TRUTH = BiotParams(phi=0.5, alpha=1.4, Ks=20e9, Kb=3.3e9, N=2.6e9, rho_s=1960.0)
T3_LO = np.array([0.3, 1.0, 1.5e10, 2.0e9, 2.0e9, 1000.0])
T3_HI = np.array([0.95, 3.0, 3.0e10, 4.5e9, 3.0e9, 3000.0])
T2_MEAN = np.array([0.8, 1.6, 25e9, 3.8e9, 4.5e9, 1940.0])
T2_STD = np.array([0.1, 1.5, 9e9, 2.5e9, 5.5e9, 250.0])


def n_workers():
    cap = os.cpu_count() or 1
    return max(1, min(int(os.environ.get("BIOT_THREADS", "2")), cap))


def report(num, name, ok, detail):
    print(f"\nACCEPTANCE {num} {name}: {'PASS' if ok else 'FAIL'} ({detail})")
    assert ok, f"criterion {num} {name}: {detail}"


# ---------------------------------------------------------------- 1

def test_criterion_1_constitutive_oracle():
    ec = elastic_constants(TRUTH, WATER)
    # independent scripted evaluation of the closed forms
    phi, Ks, Kb, N, Kf = 0.5, 20e9, 3.3e9, 2.6e9, 2.2e9
    delta = 1 - phi - Kb / Ks + phi * Ks / Kf
    r_ref = phi ** 2 * Ks / delta
    ok = (abs(ec.Delta - delta) <= 1e-12 * abs(delta)
          and abs(ec.Delta - 4.880454545454546) <= 1e-12 * 4.88
          and abs(ec.R - r_ref) <= 1e-12 * r_ref
          and abs(ec.R - 1.024494737822483e9) <= 1e-12 * ec.R
          and abs(ec.rho12 - (-200.0)) <= 1e-12 * 200
          and abs(ec.rho11 - 1180.0) <= 1e-12 * 1180
          and abs(ec.rho22 - 700.0) <= 1e-12 * 700)
    report(1, "constitutive oracle", ok,
           f"Delta={ec.Delta:.12g} R={ec.R:.10g} rho=({ec.rho11:g},{ec.rho12:g},{ec.rho22:g})")


# ---------------------------------------------------------------- 2

def test_criterion_2_solver_convergence():
    fc = 1e5
    L, T, m = 90e-3, 5e-5, 125
    times = np.arange(1, m + 1) * (T / m)
    traces = []
    for dx in (1.5e-3, 0.75e-3, 0.375e-3):
        n = round(L / dx)
        grid = Grid(n, n, dx, dx)
        src = SourceSpec(45e-3, 60e-3, fc, 1.0)
        rcv = ReceiverSpec(45e-3, 30e-3, times)
        traces.append(forward_map(TRUTH, WATER, Domain(grid, None, src, rcv)).pressures)
    e1 = np.sqrt(np.mean((traces[0] - traces[2]) ** 2))
    e2 = np.sqrt(np.mean((traces[1] - traces[2]) ** 2))
    order = math.log2(e1 / e2)
    report(2, "solver convergence", order >= 1.5,
           f"errors {e1:.3e} -> {e2:.3e}, observed order {order:.2f}")


# ---------------------------------------------------------------- 3

@pytest.fixture(scope="module")
def paper_run():
    geom = DomainGeometry(bone_length=10e-3, bone_thickness=4e-3)
    grid, region, src, rcv = build_domain(geom, WATER, TRUTH,
                                          f_c=1e6, F_0=1.0, T=7e-5, n_samples=512)
    dom = Domain(grid, region, src, rcv)
    ctrl = make_step_control(grid, WATER, rcv, elastic_constants(TRUTH, WATER))
    return dom, ctrl, forward_map(TRUTH, WATER, dom)


def test_criterion_3_causality_and_linearity(paper_run):
    dom, ctrl, tr = paper_run
    src, rcv = dom.source, dom.receiver
    d = math.hypot(rcv.x - src.x, rcv.y - src.y)
    v_fast = max(WATER.c, max_wave_speed(elastic_constants(TRUTH, WATER)))
    t_cut = d / v_fast - 2 * ctrl.dt
    peak = np.max(np.abs(tr.pressures))
    pre = np.abs(tr.pressures[tr.times < t_cut])
    leak = pre.max() / peak if pre.size else 0.0

    double = forward_map(TRUTH, WATER,
                         Domain(dom.grid, dom.region,
                                SourceSpec(src.x, src.y, src.f_c, 2.0), rcv))
    lin = np.max(np.abs(double.pressures - 2 * tr.pressures)) / np.max(np.abs(double.pressures))
    ok = pre.size > 0 and leak <= 1e-12 and lin <= 1e-10
    report(3, "causality and linearity", ok,
           f"pre-arrival leak {leak:.2e} (n={pre.size}), linearity dev {lin:.2e}")


def test_paper_trace_shape(paper_run):
    # qualitative reproduction: quiescent interval, arrival burst, coda
    dom, ctrl, tr = paper_run
    p = np.abs(tr.pressures)
    peak = p.max()
    d = math.hypot(dom.receiver.x - dom.source.x, dom.receiver.y - dom.source.y)
    v_fast = max(WATER.c, max_wave_speed(elastic_constants(TRUTH, WATER)))
    quiet = p[tr.times < d / v_fast]       # before any possible arrival
    assert quiet.size > 10
    assert quiet.max() <= 1e-6 * peak
    assert tr.times[int(np.argmax(p))] > d / v_fast    # burst comes later
    assert p[-p.size // 10:].max() < peak              # coda below the burst


# ---------------------------------------------------------------- 4

def test_criterion_4_interface_sanity():
    fc = 1e5
    dx = WATER.c / fc / 12.0
    W = 120e-3
    nx = round(W / dx)
    # rigid slab: reflected wave equals the field of the mirror image
    # source, so calibrate the spreading with an all-fluid run
    ny = round(105e-3 / dx)
    grid = Grid(nx, ny, dx, dx)
    eps = 0.25 * dx
    region = RegionMap(grid, (dx + eps, (nx - 1) * dx - eps), (4e-3, 10e-3))
    y_top = (region.j_hi + 1) * dx
    xs = W / 2
    ys, yp = y_top + 45e-3, y_top + 22.5e-3
    T, m = 6.5e-5, 650
    times = np.arange(1, m + 1) * (T / m)
    tr = forward_map(TRUTH, WATER,
                     Domain(grid, region, SourceSpec(xs, ys, fc, 1.0),
                            ReceiverSpec(xs, yp, times)),
                     rigid_bone=True)
    r1, r2 = ys - yp, (ys - y_top) + (yp - y_top)
    t_split = (r1 + 0.5 * (r2 - r1)) / WATER.c + 1.0 / fc
    refl = np.max(np.abs(tr.pressures[times >= t_split]))

    grid2 = Grid(nx, round(170e-3 / dx), dx, dx)
    ys2 = 120e-3
    cal = forward_map(TRUTH, WATER,
                      Domain(grid2, None, SourceSpec(xs, ys2, fc, 1.0),
                             ReceiverSpec(xs, ys2 - r2, times)))
    R = refl / np.max(np.abs(cal.pressures))

    # nearly transparent bone: phi -> 1 with a vanishing frame
    soft = BiotParams(phi=0.995, alpha=1.0, Ks=20e9, Kb=1e4, N=1e4, rho_s=1960.0)
    geom = DomainGeometry(bone_length=60e-3, bone_thickness=20e-3,
                          source_offset=10e-3, receiver_offset=10e-3,
                          lateral_pad=20e-3, vertical_pad=12e-3, dx=dx)
    g3, reg3, src3, rcv3 = build_domain(geom, WATER, soft, f_c=fc, F_0=1.0,
                                        T=5.5e-5, n_samples=220)
    a_soft = np.max(np.abs(forward_map(soft, WATER,
                                       Domain(g3, reg3, src3, rcv3)).pressures))
    a_fluid = np.max(np.abs(forward_map(soft, WATER,
                                        Domain(g3, None, src3, rcv3)).pressures))
    ratio = a_soft / a_fluid
    ok = abs(R - 1.0) <= 0.05 and abs(ratio - 1.0) <= 0.05
    report(4, "interface sanity", ok,
           f"rigid reflection R={R:.4f}, phi->1 transmission ratio={ratio:.4f}")


# ---------------------------------------------------------------- 5

def test_criterion_5_sampler_calibration():
    lp = lambda x: -0.5 * float(x @ x)
    rng = np.random.default_rng(100)
    s = ensemble_sample(lp, rng.standard_normal((32, 6)), 5000, seed=101)
    flat = s.flat()
    n_total = flat.shape[0]
    ok = True
    details = []
    for i in range(6):
        tau = max(1.0, integrated_autocorr_time(s.chain[:, s.burn_in:, i]))
        mcse = math.sqrt(tau / n_total)      # target std is 1
        mean_ok = abs(flat[:, i].mean()) <= 3 * mcse
        var_ok = abs(flat[:, i].var() - 1.0) <= 0.10
        ok = ok and mean_ok and var_ok
        details.append(f"{flat[:, i].mean():+.4f}/{3 * mcse:.4f}")

    # KS against the 1D standard normal at the 1% level on an effectively
    # independent subsample (thinned by the autocorrelation time; walkers
    # are mutually independent after burn-in)
    s1 = ensemble_sample(lambda x: -0.5 * float(x[0] ** 2),
                         np.random.default_rng(7).standard_normal((128, 1)),
                         3000, seed=71)
    chain = s1.chain[:, s1.burn_in:, 0]
    tau = max(1.0, integrated_autocorr_time(chain))
    thin = max(1, int(math.ceil(tau)))
    sub = chain[:, ::thin].ravel()
    if sub.size > 15_000:
        sub = sub[:15_000]
    ks = scipy.stats.kstest(sub, "norm")
    crit = 1.62762 / math.sqrt(sub.size)    # 1% asymptotic critical value
    ks_ok = ks.statistic < crit
    ok = ok and ks_ok and sub.size >= 10_000
    report(5, "sampler calibration", ok,
           f"means/3MCSE {', '.join(details)}; KS D={ks.statistic:.4f} "
           f"< {crit:.4f} on n={sub.size}")


# ---------------------------------------------------------------- 6

def test_criterion_6_map_tikhonov_equivalence():
    rng = np.random.default_rng(31)
    A = rng.standard_normal((12, 4))
    u_true = rng.standard_normal(4)
    gamma, sigma_pr = 0.25, 1.3
    y = A @ u_true + gamma * rng.standard_normal(12)
    u0 = rng.standard_normal(4) * 0.3
    prior = GaussianPrior(u0, np.full(4, sigma_pr))
    lam = (gamma / sigma_pr) ** 2
    closed = np.linalg.solve(A.T @ A + lam * np.eye(4), A.T @ y + lam * u0)

    f = lambda u: map_objective(u, y, prior, 2.0 * gamma ** 2, lambda v: A @ v)
    pts = np.vstack([u0, u0 + np.eye(4) * 0.5])
    res = nelder_mead(f, pts, NMConfig(max_iters=20_000, size_tol=1e-13, f_tol=1e-15))
    rel = np.linalg.norm(res.x - closed) / np.linalg.norm(closed)
    report(6, "MAP-Tikhonov equivalence", rel <= 1e-6,
           f"relative distance to closed form {rel:.2e} "
           f"({res.iterations} iterations, {res.reason})")


# ---------------------------------------------------------------- 7

def test_criterion_7_nelder_mead_oracle():
    sphere = lambda x: float(x @ x)
    res = nelder_mead(sphere, np.array([[0.0, 0.0], [0.0, 1.0], [1.0, 0.0]]),
                      NMConfig(max_iters=1))
    got = {tuple(v) for v in res.simplex.vertices}
    step_ok = (res.log[0].operation == "contract"
               and got == {(0.0, 0.0), (0.0, 1.0), (-0.5, 0.75)})

    ros = lambda x: (1 - x[0]) ** 2 + 100 * (x[1] - x[0] ** 2) ** 2
    r2 = nelder_mead(ros, np.array([[-1.2, 1.0], [-0.96, 1.0], [-1.2, 1.25]]),
                     NMConfig(max_iters=5000, size_tol=1e-12, f_tol=1e-16))
    ros_ok = bool(np.all(np.abs(r2.x - 1.0) <= 1e-4))
    report(7, "simplex oracle", step_ok and ros_ok,
           f"hand-traced contraction {'ok' if step_ok else 'WRONG'}, "
           f"Rosenbrock -> ({r2.x[0]:.6f}, {r2.x[1]:.6f})")


# ---------------------------------------------------------------- 8 and 9

@pytest.fixture(scope="module")
def replica():
    """Scaled through-transmission replica and its seeded noisy dataset."""
    geom = DomainGeometry(bone_length=100e-3, bone_thickness=40e-3,
                          source_offset=20e-3, receiver_offset=20e-3,
                          lateral_pad=40e-3, vertical_pad=12e-3,
                          cells_per_wavelength=10.5)
    grid, region, src, rcv = build_domain(geom, WATER, TRUTH, f_c=1e5, F_0=1.0,
                                          T=6.0e-5, n_samples=160)
    assert grid.dx <= WATER.c / 1e5 / 10.0   # >= 10 cells per wavelength
    dom = Domain(grid, region, src, rcv)
    noisy, clean, gamma = synthesize_data(TRUTH, WATER, dom, relative=0.05,
                                          seed=7071)
    noise_norm = float(np.linalg.norm(noisy.pressures - clean.pressures))
    fwd = lambda p: forward_map(p, WATER, dom)
    return dom, noisy, gamma, noise_norm, fwd


def _run_cm(replica_data, prior, free, seed, steps=1500, walkers=24):
    dom, noisy, gamma, noise_norm, fwd = replica_data
    post = BiotPosterior(prior=prior, noise=NoiseModel(gamma), data=noisy,
                         fwd=fwd, free=free, fixed=TRUTH.to_array())
    init = post.initial_walkers(walkers, np.random.default_rng((seed, 0xA5)))
    s = ensemble_sample(post.log_posterior, init, steps, seed=seed,
                        burn_in=steps // 5, n_workers=n_workers(),
                        names=post.free)
    cm_free = conditional_mean(s)
    u_cm = BiotParams.from_array(post.embed(cm_free))
    misfit = float(np.linalg.norm(noisy.pressures - fwd(u_cm).pressures))
    return post, s, u_cm, misfit


def _check_round_trip(replica_data, prior, label, seed):
    dom, noisy, gamma, noise_norm, fwd = replica_data
    post, s, u_cm, misfit = _run_cm(replica_data, prior, ("phi", "alpha"), seed)
    ci_phi = credible_interval(s, 0, 0.9)
    ci_alpha = credible_interval(s, 1, 0.9)
    cover = ci_phi[0] <= 0.5 <= ci_phi[1] and ci_alpha[0] <= 1.4 <= ci_alpha[1]
    fit_ok = misfit <= 1.2 * noise_norm
    detail = (f"{label}: phi CI [{ci_phi[0]:.3f},{ci_phi[1]:.3f}], "
              f"alpha CI [{ci_alpha[0]:.3f},{ci_alpha[1]:.3f}], "
              f"misfit {misfit:.2f} <= {1.2 * noise_norm:.2f}")
    return cover and fit_ok, detail


def test_criterion_8_round_trip_inversion(replica):
    prior_u = UniformPrior(T3_LO, T3_HI, support=biot_hard_support)
    ok_u, det_u = _check_round_trip(replica, prior_u, "uniform", seed=42)
    prior_g = GaussianPrior(T2_MEAN, T2_STD, support=biot_hard_support)
    ok_g, det_g = _check_round_trip(replica, prior_g, "gaussian", seed=43)
    report(8, "desk-scale round trip", ok_u and ok_g, f"{det_u}; {det_g}")


def test_criterion_9_cm_beats_map(replica):
    dom, noisy, gamma, noise_norm, fwd = replica
    prior = UniformPrior(T3_LO, T3_HI, support=biot_hard_support)
    post, s, u_cm, misfit_cm = _run_cm(replica, prior, tuple(
        ("phi", "alpha", "Ks", "Kb", "N", "rho_s")), seed=4242)
    res = estimate_map(noisy, prior, fwd,
                       cfg=NMConfig(max_iters=2000),
                       free=("phi", "alpha", "Ks", "Kb", "N", "rho_s"),
                       fixed=TRUTH.to_array(), sigma_reg=2.0 * gamma ** 2)
    misfit_map = float(np.linalg.norm(noisy.pressures - fwd(res.params).pressures))
    report(9, "CM misfit <= MAP misfit", misfit_cm <= misfit_map,
           f"||y-G(u_CM)||={misfit_cm:.2f} vs ||y-G(u_MAP)||={misfit_map:.2f} "
           f"(map after {res.iterations} iterations, {res.reason})")


# ---------------------------------------------------------------- 10

def test_criterion_10_bitwise_reproducibility(tmp_path):
    from biotsim.cli import main

    cfg = {
        "geometry": {"bone_length": 24e-3, "bone_thickness": 12e-3,
                     "source_offset": 6e-3, "receiver_offset": 6e-3,
                     "lateral_pad": 8e-3, "vertical_pad": 8e-3,
                     "cells_per_wavelength": 8.0},
        "physics": {"fluid": {"rho_f": 1000.0, "K_f": 2.2e9},
                    "biot": {"phi": 0.5, "alpha": 1.4, "Ks": 2.0e10,
                             "Kb": 3.3e9, "N": 2.6e9, "rho_s": 1960.0},
                    "T": 3.2e-5, "f_c": 1.0e5, "n_samples": 64},
        "prior": {"kind": "uniform", "alpha_max": 3.0,
                  "phi": {"lo": 0.3, "hi": 0.95}, "alpha": {"lo": 1.0},
                  "Ks": {"lo": 1.5e10, "hi": 3.0e10},
                  "Kb": {"lo": 2.0e9, "hi": 4.5e9},
                  "N": {"lo": 2.0e9, "hi": 3.0e9},
                  "rho_s": {"lo": 1000.0, "hi": 3000.0}},
        "noise": {"relative": 0.05, "seed": 11},
        "mcmc": {"walkers": 14, "steps": 30, "burn_in": 6, "seed": 5,
                 "free": ["phi", "alpha"]},
        "nm": {"subset": ["phi", "alpha"], "max_iters": 25},
    }
    path = tmp_path / "repro.yaml"
    path.write_text(yaml.safe_dump(cfg))
    out_a, out_b = tmp_path / "a", tmp_path / "b"
    for out in (out_a, out_b):
        assert main(["forward", "--config", str(path), "--out", str(out),
                     "--snapshots", "60"]) == 0
        assert main(["synthesize", "--config", str(path), "--out", str(out)]) == 0
        assert main(["estimate-cm", "--config", str(path),
                     "--dataset", str(out / "dataset.csv"), "--out", str(out)]) == 0
        mp = out / "map"
        assert main(["estimate-map", "--config", str(path),
                     "--dataset", str(out / "dataset.csv"), "--out", str(mp)]) == 0
    files = sorted(p.relative_to(out_a) for p in out_a.rglob("*") if p.is_file())
    diff = [str(f) for f in files
            if (out_a / f).read_bytes() != (out_b / f).read_bytes()]
    report(10, "bitwise reproducibility", not diff and len(files) >= 7,
           f"{len(files)} files compared" + (f", differing: {diff}" if diff else ""))
