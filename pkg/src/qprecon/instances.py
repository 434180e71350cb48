"""Synthetic recovery instances and initial points."""

import warnings
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .geometry import FactoredPoint, rebalance
from .linalg import RankDropError, product_svd, truncated_svd
from .problems import (
    EntrySampling,
    FullObservation,
    GaussianSensing,
    ProblemInstance,
)
from .rng import Stream

__all__ = ["GeneratorSpec", "InitSpec", "generate", "initialize", "adjoint_observations"]

SAMPLINGS = ("bernoulli", "gaussian_sensing", "full")
MODELS = ("gaussian_factors", "zero")


@dataclass(frozen=True)
class GeneratorSpec:
    """What to generate.

    ``sampling`` is ``"bernoulli"`` (entries kept with probability ``p``),
    ``"gaussian_sensing"`` (``d`` measurements with N(0, 1) sensing entries,
    divided by sqrt(d) only when ``normalize_sensing``) or ``"full"``.
    ``model="zero"`` gives ``M* = 0``, for closed-form checks.
    """

    m: int
    n: int
    k: int
    sampling: str = "bernoulli"
    p: float = 1.0
    d: int = 0
    seed: int = 0
    model: str = "gaussian_factors"
    normalize_sensing: bool = False
    n_test: int = 1000

    def __post_init__(self):
        if self.m < 1 or self.n < 1 or not 1 <= self.k <= min(self.m, self.n):
            raise ValueError(f"invalid dimensions m={self.m}, n={self.n}, k={self.k}")
        if self.sampling not in SAMPLINGS:
            raise ValueError(f"unknown sampling {self.sampling!r}; expected one of {SAMPLINGS}")
        if self.model not in MODELS:
            raise ValueError(f"unknown model {self.model!r}; expected one of {MODELS}")
        if self.sampling == "bernoulli" and not 0 < self.p <= 1:
            raise ValueError("sampling rate p must lie in (0, 1]")
        if self.sampling == "gaussian_sensing" and self.d < 1:
            raise ValueError("number of measurements d must be at least 1")


@dataclass(frozen=True)
class InitSpec:
    """How to build the initial point.

    ``strategy`` is ``"spectral"`` or ``"random_gaussian"``; ``balance`` is
    ``1.0`` for the balanced point or lambda for ``(lambda G0, H0 / lambda)``.
    ``normalize_adjoint`` divides the spectral estimate by the operator gain
    (``Phi*(b) / d`` for unnormalized sensing) so it has the scale of M*.
    """

    strategy: str = "spectral"
    balance: float = 1.0
    seed: int = 0
    normalize_adjoint: bool = False

    def __post_init__(self):
        if self.strategy not in ("spectral", "random_gaussian"):
            raise ValueError(f"unknown init strategy {self.strategy!r}")
        if not self.balance > 0:
            raise ValueError("balance factor lambda must be positive")


def _bernoulli_omega(spec, stream):
    for _ in range(3):
        u = stream.uniform((spec.m, spec.n))
        mask = u < spec.p
        if mask.any():
            return mask
    raise ValueError("sampled index set is empty after 3 attempts; increase p")


def generate(spec):
    """Build a noiseless :class:`ProblemInstance` from ``spec``.

    Draw order on ``Stream(spec.seed)``: G* (m x k, row-major), H* (n x k),
    then either the m x n Bernoulli uniforms or the d x (m n) sensing
    matrix, then the held-out test selection.
    """
    stream = Stream(spec.seed)
    shape = (spec.m, spec.n)
    mstar = None
    if spec.model == "gaussian_factors":
        for _ in range(3):
            G = stream.normal((spec.m, spec.k))
            H = stream.normal((spec.n, spec.k))
            try:
                amb = product_svd(G, H)
            except RankDropError:
                continue
            if amb.S[-1] > 1e-10 * amb.S[0]:
                mstar = FactoredPoint(G, H)
                break
        if mstar is None:
            raise RuntimeError("could not draw a rank-k ground truth")

    test = None
    if spec.sampling == "bernoulli":
        mask = _bernoulli_omega(spec, stream)
        rows, cols = np.nonzero(mask)
        op = EntrySampling(rows, cols, shape)
        trows, tcols = np.nonzero(~mask)
        if trows.size and spec.n_test > 0:
            keys = stream.uniform(trows.size)
            pick = np.sort(np.argsort(keys, kind="stable")[: spec.n_test])
            trows, tcols = trows[pick], tcols[pick]
            if mstar is not None:
                tvals = np.einsum("ij,ij->i", mstar.G[trows], mstar.H[tcols])
            else:
                tvals = np.zeros(trows.size)
            test = (trows, tcols, tvals)
    elif spec.sampling == "gaussian_sensing":
        phi = stream.normal((spec.d, spec.m * spec.n))
        if spec.normalize_sensing:
            phi /= np.sqrt(spec.d)
        op = GaussianSensing(phi, shape)
    else:
        op = FullObservation(shape)
    return ProblemInstance(op, mstar=mstar, rank=spec.k, test=test)


def adjoint_observations(inst, normalize=False):
    """``A*(b)`` as a dense or sparse matrix: ``Phi*(b)`` or ``(1/p) P_Omega(M*)``.

    With ``normalize`` it is divided by ``op.gain``, which makes it an
    unbiased estimate of M* for unnormalized Gaussian sensing too.
    """
    op = inst.op
    D = op.weight * op.adjoint(inst.observed)
    return D / op.gain if normalize else D


def initialize(inst, init=None, k=None):
    """Initial factor pair for a solver run.

    Spectral: rank-k truncated SVD ``U S V^T`` of :func:`adjoint_observations`,
    returned balanced as ``(U S^1/2, V S^1/2)``. Random: Gaussian factors
    from ``Stream(init.seed, 1)``. Then ``balance`` rescales to
    ``(lambda G0, H0 / lambda)``.
    """
    init = init or InitSpec()
    k = inst.rank if k is None else int(k)
    m, n = inst.shape
    if init.strategy == "spectral":
        D = adjoint_observations(inst, init.normalize_adjoint)
        if not sp.issparse(D):
            D = np.asarray(D)
        amb = truncated_svd(D, k)
        U, S, V = amb.U, amb.S, amb.V
        if amb.rank < k or amb.rank_flag:
            warnings.warn(
                f"spectral initialization has numerical rank {amb.rank} < {k}; "
                "padding with small random directions",
                RuntimeWarning,
                stacklevel=2,
            )
            U, S, V = _pad(U, S, V, k, m, n, Stream(init.seed, 2))
        root = np.sqrt(S)
        x0 = FactoredPoint(U * root, V * root)
    else:
        stream = Stream(init.seed, 1)
        x0 = FactoredPoint(stream.normal((m, k)), stream.normal((n, k)))
    if init.balance != 1.0:
        x0 = rebalance(x0, np.eye(k) / init.balance)
    return x0


def _pad(U, S, V, k, m, n, stream):
    r = S.size
    s1 = S[0] if r else 1.0
    # complete U and V with orthonormal directions orthogonal to the available ones
    def complete(B, dim):
        R = stream.normal((dim, k - r))
        if r:
            R -= B @ (B.T @ R)
        Q, _ = np.linalg.qr(R)
        return np.hstack([B, Q]) if r else Q

    U = complete(U, m)
    V = complete(V, n)
    S = np.concatenate([S, np.full(k - r, 1e-8 * s1)])
    return U, S, V
