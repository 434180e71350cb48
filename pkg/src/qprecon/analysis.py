"""Numerical audits of the convergence theory.

Sampled restricted-positive-definiteness (RPD) constants, Rayleigh
quotients of the Hessian at the solution, incoherence, the local
contraction constants, the completion RPD spot check, and contraction
ratios measured on solver traces.

Sampling loops split their samples over ``n_jobs`` workers; worker ``w``
draws from ``Stream(seed, 1 + w)``, so results depend only on the seed and
the worker count.
"""

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .geometry import tangent_project
from .linalg import max_row_norm, product_svd, truncated_svd
from .problems import EntrySampling
from .rng import Stream

__all__ = [
    "RpdEstimate",
    "RayleighEstimate",
    "TheoryConstants",
    "McRpdReport",
    "estimate_rpd",
    "hessian_rayleigh",
    "incoherence",
    "theory_constants",
    "compute_constants",
    "restricted_norm_estimate",
    "mc_rpd_check",
    "contraction_profile",
    "ContractionProfile",
]

RADII = (1e-3, 1e-2, 1e-1, 1.0)


@dataclass
class RpdEstimate:
    """Sampled RPD constant: every quotient lies in ``[min, max]``.

    ``beta_hat = max(1 - min_quotient, max_quotient - 1)`` clipped at 0 is
    a lower bound on the true constant.
    """

    beta_hat: float
    samples: int
    rank_tested: int
    min_quotient: float
    max_quotient: float


@dataclass
class RayleighEstimate:
    min: float
    max: float
    quotients: np.ndarray = field(repr=False)


def _quotient(op, Z, normalize):
    """``<Z, A Z> / |Z|^2`` (divided by the operator gain when normalizing)."""
    z = np.ravel(Z)
    r = op.measure_dense(Z)
    q = op.weight * float(r @ r) / float(z @ z)
    return q / op.gain if normalize else q


def _split(samples, n_jobs):
    n_jobs = max(1, min(int(n_jobs), samples))
    base, extra = divmod(samples, n_jobs)
    return [base + (w < extra) for w in range(n_jobs)]


def _parallel(fn, samples, seed, n_jobs):
    """Run ``fn(count, stream)`` per worker and concatenate the results."""
    counts = _split(samples, n_jobs)
    streams = [Stream(seed, 1 + w) for w in range(len(counts))]
    if len(counts) == 1:
        parts = [fn(counts[0], streams[0])]
    else:
        with ThreadPoolExecutor(max_workers=len(counts)) as pool:
            parts = list(pool.map(fn, counts, streams))
    return np.concatenate(parts)


def _balanced_factors(amb):
    root = np.sqrt(amb.S)
    return amb.U * root, amb.V * root


def _perturbed_difference(G, H, radius, stream):
    """``X - M*`` for ``X = (G + s E1)(H + s E2)^T`` with first-order size ``radius``."""
    E1 = stream.normal(G.shape)
    E2 = stream.normal(H.shape)
    D1 = E1 @ H.T + G @ E2.T
    s = radius / np.linalg.norm(D1)
    return s * D1 + (s * s) * (E1 @ E2.T)


def estimate_rpd(op, mstar=None, rank=1, samples=200, seed=0, normalize=True, n_jobs=1):
    """Sample quotients ``<Z, A Z> / |Z|^2`` over low-rank Z.

    Parameters
    ----------
    op : MeasurementOperator
    mstar : AmbientFactorization, optional
        Without it Z is a random rank-``rank`` matrix. With it half of the
        samples are differences ``X - M*`` with X a rank-k perturbation of
        M* at relative radii 1e-3 .. 1, and half differences with a random
        rank-k X of the same scale.
    normalize : bool
        Divide by ``op.gain`` (``trace(A) / (m n)``) so that unnormalized
        Gaussian sensing is measured against its mean quotient.
    """
    if samples < 1:
        raise ValueError("samples must be at least 1")
    m, n = op.shape
    if mstar is not None:
        G, H = _balanced_factors(mstar)
        scale = float(np.linalg.norm(mstar.S))
        k = mstar.rank

    def work(count, stream):
        out = np.empty(count)
        for i in range(count):
            if mstar is None:
                Z = stream.normal((m, rank)) @ stream.normal((n, rank)).T
            elif i % 2 == 0:
                radius = RADII[(i // 2) % len(RADII)] * scale
                Z = _perturbed_difference(G, H, radius, stream)
            else:
                X = stream.normal((m, k)) @ stream.normal((n, k)).T
                Z = X * (scale / np.linalg.norm(X)) - G @ H.T
            out[i] = _quotient(op, Z, normalize)
        return out

    q = _parallel(work, samples, seed, n_jobs)
    lo, hi = float(q.min()), float(q.max())
    return RpdEstimate(
        beta_hat=max(0.0, 1.0 - lo, hi - 1.0),
        samples=samples,
        rank_tested=rank if mstar is None else 2 * k,
        min_quotient=lo,
        max_quotient=hi,
    )


def hessian_rayleigh(inst, samples=100, seed=0, normalize=True, n_jobs=1):
    """Rayleigh quotients of the Hessian at M* over random tangent directions.

    At the solution the Hessian quadratic form on a tangent vector Z is
    ``<Z, A Z>``; Z is the tangent projection of a Gaussian matrix.
    """
    if inst.mstar is None:
        raise ValueError("the Hessian check needs a rank-k ground truth")
    amb = product_svd(inst.mstar.G, inst.mstar.H)
    op = inst.op

    def work(count, stream):
        out = np.empty(count)
        for i in range(count):
            Z = tangent_project(amb, stream.normal(op.shape))
            out[i] = _quotient(op, Z, normalize)
        return out

    q = _parallel(work, samples, seed, n_jobs)
    return RayleighEstimate(float(q.min()), float(q.max()), q)


def incoherence(amb):
    """Smallest mu with row norms of U below sqrt(mu k / m) and of V below sqrt(mu k / n)."""
    m, n = amb.shape
    k = amb.rank
    return max(m * max_row_norm(amb.U) ** 2 / k, n * max_row_norm(amb.V) ** 2 / k)


@dataclass
class TheoryConstants:
    """Constants of the local linear convergence bound.

    ``kappa(theta) = 1 - theta (2 nu_tilde - c_delta_t theta)`` is the
    per-step squared-error contraction, valid for stepsizes inside
    :meth:`stepsize_window`.
    """

    L: float
    sigma_min_star: float
    sigma_max_star: float
    beta: float
    delta: float
    nu_tilde: float
    delta_max: float
    c_delta_t: float
    region_violated: bool
    mc_delta_bound: float | None = None
    L_power: float | None = None

    def kappa(self, theta):
        return 1.0 - theta * (2.0 * self.nu_tilde - self.c_delta_t * theta)

    def stepsize_window(self):
        """Open interval ``(0, min(1, 2 nu / C))``; ``(0, 0)`` when empty."""
        if self.region_violated or self.nu_tilde <= 0:
            return (0.0, 0.0)
        return (0.0, min(1.0, 2.0 * self.nu_tilde / self.c_delta_t))


def compute_constants(beta, delta, sigma_min_xt, L, sigma_min_star, sigma_max_star=None,
                      C_star=None, C2=None, mu=None, k=None, n=None):
    """Closed-form constants from explicit parameters."""
    if not 0 <= beta < 1:
        raise ValueError("beta must lie in [0, 1)")
    if delta < 0:
        raise ValueError("delta must be nonnegative")
    nu = 2.0 * (1.0 - beta - delta * L / sigma_min_star)
    delta_max = (1.0 - beta) * sigma_min_star / L
    c = 4.0 * L**2 + delta * L**2 * (4.0 * L + 2.0 + delta) / sigma_min_xt
    mc = None
    if None not in (C_star, C2, mu, k, n, sigma_max_star):
        mc = (math.sqrt(2.0 * C_star * k) - 1.0) * sigma_max_star / C2 * math.sqrt(mu * k / n)
    return TheoryConstants(
        L=L,
        sigma_min_star=sigma_min_star,
        sigma_max_star=sigma_max_star if sigma_max_star is not None else sigma_min_star,
        beta=beta,
        delta=delta,
        nu_tilde=nu,
        delta_max=delta_max,
        c_delta_t=c,
        region_violated=delta >= delta_max,
        mc_delta_bound=mc,
    )


def restricted_norm_estimate(op, rank, iters=20, seed=0, normalize=True):
    """Largest quotient ``<Z, A Z> / |Z|^2`` found by power iteration on rank-``rank`` Z.

    Each step applies A and truncates back to rank ``rank``.
    """
    m, n = op.shape
    stream = Stream(seed, 0)
    Z = stream.normal((m, rank)) @ stream.normal((n, rank)).T
    best = _quotient(op, Z, normalize)
    for _ in range(iters):
        W = op.apply(Z)
        amb = truncated_svd(W, rank)
        if amb.rank == 0:
            break
        Z = amb.matrix()
        best = max(best, _quotient(op, Z, normalize))
    return best


def theory_constants(inst, beta, delta, sigma_min_xt, L=None, C_star=None, C2=None, mu=None,
                     samples=200, seed=0, normalize=True):
    """Constants for ``inst`` with sampled defaults.

    ``L`` defaults to ``1 + beta_hat`` of a rank-2k RPD estimate; the
    power-iteration estimate of the restricted operator norm is reported
    as ``L_power`` alongside. The completion delta bound is filled in when
    ``C_star`` and ``C2`` are given (mu defaults to the incoherence of M*).
    """
    if inst.mstar is None:
        raise ValueError("theory constants need a rank-k ground truth")
    amb = product_svd(inst.mstar.G, inst.mstar.H)
    k = inst.rank
    L_power = restricted_norm_estimate(inst.op, 2 * k, seed=seed, normalize=normalize)
    if L is None:
        L = 1.0 + estimate_rpd(inst.op, rank=2 * k, samples=samples, seed=seed, normalize=normalize).beta_hat
    if C_star is not None and C2 is not None and mu is None:
        mu = incoherence(amb)
    tc = compute_constants(beta, delta, sigma_min_xt, L, float(amb.S[-1]), float(amb.S[0]),
                           C_star=C_star, C2=C2, mu=mu, k=k, n=inst.shape[1])
    tc.L_power = L_power
    return tc


@dataclass
class McRpdReport:
    """Outcome of the completion RPD spot check.

    ``pass_fraction`` is the share of accepted samples with
    ``1/3 <= (1/p)|P_Omega(Z)|^2 / |Z|^2 <= 2``.
    """

    samples: int
    attempts: int
    pass_fraction: float
    min_quotient: float
    max_quotient: float
    quotients: np.ndarray = field(repr=False)


def mc_rpd_check(inst, samples=200, C1=None, mu=None, delta=None, seed=0, max_attempts=None, C_star=2.0):
    """Spot-check the completion RPD inequality near M*.

    X is drawn as a rank-k factor perturbation of M* with
    ``0 < |X - M*|_F <= delta`` and kept only if
    ``|X|_{2,inf} <= C1 sqrt(mu k / m)`` and ``|X^T|_{2,inf} <= C1 sqrt(mu k / n)``
    (rejection sampling). ``mu`` defaults to the incoherence of M*,
    ``delta`` to ``0.5 * sigma_min(M*)`` and ``C1`` to
    ``sigma_max(M*) * sqrt(2 C_star k)``, since the cap is on X itself and
    scales with it.
    """
    if not isinstance(inst.op, EntrySampling):
        raise TypeError("the completion RPD check needs an entry-sampling operator")
    if inst.mstar is None:
        raise ValueError("the completion RPD check needs a rank-k ground truth")
    op = inst.op
    m, n = op.shape
    amb = product_svd(inst.mstar.G, inst.mstar.H)
    k = amb.rank
    mu = incoherence(amb) if mu is None else mu
    delta = 0.5 * float(amb.S[-1]) if delta is None else delta
    C1 = float(amb.S[0]) * math.sqrt(2 * C_star * k) if C1 is None else C1
    row_cap = C1 * math.sqrt(mu * k / m)
    col_cap = C1 * math.sqrt(mu * k / n)
    G, H = _balanced_factors(amb)
    Mst = G @ H.T
    stream = Stream(seed, 1)
    max_attempts = max_attempts or 50 * samples
    quotients = []
    attempts = 0
    while len(quotients) < samples and attempts < max_attempts:
        attempts += 1
        radius = delta * stream.uniform(1)[0]
        if radius == 0:
            continue
        Z = _perturbed_difference(G, H, radius, stream)
        nz = np.linalg.norm(Z)
        if nz == 0 or nz > delta:
            continue
        X = Mst + Z
        if max_row_norm(X) > row_cap or max_row_norm(X.T) > col_cap:
            continue
        quotients.append(_quotient(op, Z, normalize=False))
    q = np.array(quotients)
    passed = np.count_nonzero((q >= 1.0 / 3.0) & (q <= 2.0)) if q.size else 0
    return McRpdReport(
        samples=int(q.size),
        attempts=attempts,
        pass_fraction=passed / q.size if q.size else float("nan"),
        min_quotient=float(q.min()) if q.size else float("nan"),
        max_quotient=float(q.max()) if q.size else float("nan"),
        quotients=q,
    )


@dataclass
class ContractionProfile:
    ratios: np.ndarray
    final_quartile_max: float


def contraction_profile(trace):
    """Ratios ``e_{t+1} / e_t`` of consecutive recovery errors in a trace."""
    if len(trace) < 3:
        raise ValueError("need at least 3 trace records")
    errs = np.array([rec.recovery_error for rec in trace], dtype=np.float64)
    if np.any(~np.isfinite(errs[:-1])) or np.any(errs[:-1] <= 0):
        raise ValueError("recovery errors must be positive before termination")
    ratios = errs[1:] / errs[:-1]
    start = (3 * ratios.size) // 4
    return ContractionProfile(ratios, float(ratios[start:].max()))
