"""Sensitivity of failure probabilities to perturbations of input marginals.

Each input marginal is perturbed in a controlled way: an exponential tilt
with a prescribed Kullback-Leibler budget ``delta``, or a shift of one bound
of a bounded support.  The resulting failure probability is re-estimated by
likelihood-ratio reweighting of one Monte Carlo sample, so the performance
function is evaluated only once per sample point.
"""

from .distributions import (
    Component,
    DistributionSpec,
    Family,
    exponential,
    lognormal,
    normal,
    parse_distribution,
    poisson,
    tilted_uniform,
    triangular,
    truncnormal,
    uniform,
)
from .errors import (
    ConfigError,
    DomainError,
    IngestError,
    NoSolutionError,
    NumericalError,
    ParameterError,
    RelsensError,
    UndefinedIndexError,
    UnsupportedOperationError,
)
from .estimation import (
    EvaluatedSample,
    FailureEstimate,
    IndexEstimate,
    PlanEntry,
    SensitivityRecord,
    estimate_interaction_pf,
    estimate_perturbed_pf,
    estimate_pf,
    index_variance,
    sensitivity_index,
    sweep,
)
from .lambertw import LambertBranch, lambert_w
from .models import (
    CountingModel,
    FunctionModel,
    LinearGaussian,
    Tabulated,
    analytic_pf_linear,
    build_sample,
    ingest_sample,
    write_sample,
)
from .tilt import (
    MODES,
    Branch,
    PerturbationMode,
    TiltSolution,
    delta_max,
    kl_divergence,
    parse_mode,
    solve_tau,
    tilted,
)

__version__ = "0.1.0"
