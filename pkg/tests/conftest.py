import numpy as np
import pytest

from biotsim import BiotParams, DomainGeometry, FluidProps, Grid, ReceiverSpec, \
    SourceSpec, build_domain
from biotsim.solver import Domain


@pytest.fixture(scope="session")
def water():
    return FluidProps(rho_f=1000.0, K_f=2.2e9)


@pytest.fixture(scope="session")
def bone_params():
    # reference specimen values used throughout
    return BiotParams(phi=0.5, alpha=1.4, Ks=20e9, Kb=3.3e9, N=2.6e9, rho_s=1960.0)


@pytest.fixture(scope="session")
def desk_domain(water, bone_params):
    """Small 100 kHz through-transmission setup used by the solver tests."""
    geom = DomainGeometry(bone_length=50e-3, bone_thickness=20e-3,
                          source_offset=8e-3, receiver_offset=8e-3,
                          lateral_pad=16e-3, vertical_pad=12e-3,
                          cells_per_wavelength=10.5)
    grid, region, src, rcv = build_domain(geom, water, bone_params,
                                          f_c=1e5, F_0=1.0, T=6e-5, n_samples=200)
    return Domain(grid, region, src, rcv)


@pytest.fixture()
def fluid_box(water):
    """All-fluid box with source and receiver on exact cell centers."""
    fc = 1e5
    dx = water.c / fc / 15.0
    grid = Grid(64, 64, dx, dx)
    src = SourceSpec(*grid.cell_center(32, 44), f_c=fc, F_0=1.0)
    times = np.arange(1, 201) * (4.5e-5 / 200)
    rcv = ReceiverSpec(*grid.cell_center(32, 16), times=times)
    return Domain(grid, None, src, rcv)


def desk_config_dict(**overrides):
    """Config-dict factory for CLI tests; overrides merge per section."""
    base = {
        "geometry": {
            "bone_length": 50e-3, "bone_thickness": 20e-3,
            "source_offset": 8e-3, "receiver_offset": 8e-3,
            "lateral_pad": 16e-3, "vertical_pad": 12e-3,
            "cells_per_wavelength": 10.5,
        },
        "physics": {
            "fluid": {"rho_f": 1000.0, "K_f": 2.2e9},
            "biot": {"phi": 0.5, "alpha": 1.4, "Ks": 2.0e10, "Kb": 3.3e9,
                     "N": 2.6e9, "rho_s": 1960.0},
            "b": 0.0, "cfl": 0.5, "T": 6.0e-5, "f_c": 1.0e5, "F_0": 1.0,
            "n_samples": 200,
        },
        "prior": {
            "kind": "uniform", "alpha_max": 3.0,
            "phi": {"lo": 0.3, "hi": 0.95},
            "alpha": {"lo": 1.0},
            "Ks": {"lo": 1.5e10, "hi": 3.0e10},
            "Kb": {"lo": 2.0e9, "hi": 4.5e9},
            "N": {"lo": 2.0e9, "hi": 3.0e9},
            "rho_s": {"lo": 1000.0, "hi": 3000.0},
        },
        "noise": {"relative": 0.05, "seed": 7071},
        "mcmc": {"walkers": 24, "steps": 40, "burn_in": 10, "stretch": 2.0,
                 "seed": 42, "free": ["phi", "alpha"]},
        "nm": {"max_iters": 40, "subset": ["phi", "alpha"]},
        "output": {"dir": "."},
    }
    for section, patch in overrides.items():
        if isinstance(patch, dict):
            base.setdefault(section, {}).update(patch)
        else:
            base[section] = patch
    return base
