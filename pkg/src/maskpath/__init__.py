"""Decoding-order research engine for masked sequence models."""

from .errors import (
    BudgetExceeded,
    ConfigError,
    ContractViolation,
    DegeneratePopulation,
    InputError,
    MaskpathError,
)
from .lookahead import LookaheadConfig, ValueReport, estimate, random_partition
from .models import (
    Denoiser,
    ExactJointModel,
    MarginalSet,
    MarkovChainModel,
    NoisyMarginalWrapper,
    PartialSequence,
    TabularJointModel,
    Vocab,
    marginals,
    sample_step,
    step_logprob,
)
from .oracle import (
    OracleBudget,
    entropy_guidance,
    exact_potential,
    exact_tc,
    exact_value,
    lookahead_exact_expectation,
    mc_elbo,
    mc_elbo_exact,
    path_entropy,
    verify_bound_chain,
)
from .trajectory import PathRecord, Trajectory, accumulate, path_ll

__version__ = "0.1.0"
