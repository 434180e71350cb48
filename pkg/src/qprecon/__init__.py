"""Preconditioned gradient methods for fixed-rank matrix recovery.

Points are factor pairs ``(G, H)`` representing ``X = G H^T``. The solvers
use a metric that weights each factor direction by the Gram matrix of the
other factor, which makes the iterates of ``X`` independent of how the
product is split between the factors.
"""

from .analysis import (
    contraction_profile,
    estimate_rpd,
    hessian_rayleigh,
    incoherence,
    mc_rpd_check,
    theory_constants,
)
from .geometry import (
    FactoredPoint,
    TangentPair,
    induced_update,
    metric,
    rebalance,
    riemannian_gradient,
    tangent_project,
    transport,
    v_operator,
)
from .instances import GeneratorSpec, InitSpec, generate, initialize
from .linalg import AmbientFactorization, RankDropError, SparseCoord, product_svd, truncated_svd
from .problems import (
    EntrySampling,
    FullObservation,
    GaussianSensing,
    ProblemInstance,
    objective,
    recovery_error,
)
from .solvers import (
    SolveResult,
    SolverConfig,
    Status,
    TraceRecord,
    armijo_search,
    ecg_solve,
    egd_solve,
    exact_linemin,
    rbb_stepsize,
    rcg_solve,
    rgd_solve,
    solve,
)

__version__ = "0.1.0"
