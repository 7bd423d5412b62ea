"""Personalized route-choice prediction with a two-level Plackett-Luce model,
Bayesian inference by NUTS, and sequential nightly updating."""

from .data import ChoiceData, Observation, RawUserContext, Route, encode_features
from .datagen import GeneratorConfig, generate_dataset, generate_observation, generate_offer_set
from .dynamic import (MixturePrior, ObservationStore, SequentialPlackettLuce, WeightingConfig,
                      compute_observation_weights, fit_dynamic_step, particle_filter_resample,
                      plugin_bandwidth, prune_store)
from .exceptions import (DivergenceError, InitError, NotFittedError, NumericError, ParseError,
                         SamplerError, ValidationError)
from .model import (TABLE1_MEANS, ChoiceBatch, choice_probabilities, compute_weights,
                    log_posterior_and_gradient, predict_proba, route_value)
from .posterior import ParticleSet, evaluate_accuracy, posterior_summary
from .sampler import McmcConfig, nuts_sample
from .scaling import RouteScaler
from .static import PlackettLuceRouteChoice, fit_static

__version__ = "0.1.0"
