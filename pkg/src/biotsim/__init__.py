"""Ultrasonic through-transmission simulation of a fluid-saturated porous
solid and Bayesian recovery of its constitutive parameters."""

from .material import (AdmissibilityError, BiotParams, ElasticConstants,
                       FluidProps, PARAM_NAMES, elastic_constants,
                       max_wave_speed)
from .domain import (DomainGeometry, GeometryError, Grid, ReceiverSpec,
                     RegionMap, SignalTrace, SourceSpec, build_domain,
                     source_amplitude)
from .solver import (Domain, FieldState, InstabilityError, StepControl,
                     forward_map, make_step_control, stable_dt)
from .inference import (BiotPosterior, DimensionMismatch, GaussianPrior,
                        InitializationError, NoiseModel, PosteriorSamples,
                        UniformPrior, conditional_mean, credible_interval,
                        ensemble_sample, integrated_autocorr_time,
                        log_likelihood, log_posterior, log_prior,
                        synthesize_data)
from .optim import (MAPResult, NMConfig, NMResult, Simplex, estimate_map,
                    map_objective, nelder_mead)
from .config import ConfigError, RunConfig

__version__ = "0.1.0"
