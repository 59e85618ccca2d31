"""Exact-observation stochastic filtering for stochastic reaction networks.

Full-dimensional references (truncated filtering equations, particle filter)
and two reduced filters built on conditional-expectation propensities: an
unconditional projection (cheap, biased) and a conditional projection
(consistent, Monte Carlo convergent).
"""

from .builtin import BuiltinModel, bistable_gene, builtin_model, linear_cascade
from .errors import SrnFilterError
from .ffsp import Pmf, TruncatedSpace, UnnormalizedPmf, enumerate_space, normalize, solve_cme
from .filters import (
    FilterConfig,
    FilterResult,
    marginalize,
    run_cmp,
    run_filter,
    run_reference,
    run_ump,
)
from .model import (
    InitialDistribution,
    Reaction,
    SrnModel,
    StatePartition,
    model_from_json,
    model_to_json,
    propensity,
    validate_model,
)
from .simulate import ObservedPath, Trajectory, extract_observation, ssa_simulate

__all__ = [
    "BuiltinModel", "bistable_gene", "builtin_model", "linear_cascade",
    "SrnFilterError",
    "Pmf", "TruncatedSpace", "UnnormalizedPmf", "enumerate_space", "normalize",
    "solve_cme",
    "FilterConfig", "FilterResult", "marginalize", "run_cmp", "run_filter",
    "run_reference", "run_ump",
    "InitialDistribution", "Reaction", "SrnModel", "StatePartition",
    "model_from_json", "model_to_json", "propensity", "validate_model",
    "ObservedPath", "Trajectory", "extract_observation", "ssa_simulate",
]

__version__ = "0.1.0"
