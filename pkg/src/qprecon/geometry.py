"""Quotient geometry of fixed-rank matrices seen through the factorization X = G H^T.

Points of the total space are factor pairs (G, H) with full column rank;
``(G, H)`` and ``(G F^{-1}, H F^T)`` represent the same matrix for every
invertible k x k F. Tangent vectors are pairs of matrices shaped like the
factors. The preconditioned metric weights each factor direction with the
Gram matrix of the *other* factor, which makes it invariant along fibers.
"""

from dataclasses import dataclass

import numpy as np

from .linalg import (
    AmbientFactorization,
    RankDropError,
    gram,
    product_svd,
    spd_solve_right,
)

__all__ = [
    "FactoredPoint",
    "TangentPair",
    "metric",
    "euclidean_metric",
    "metric_norm",
    "riemannian_gradient",
    "rebalance",
    "transport",
    "differential_pi",
    "v_operator",
    "tangent_project",
    "induced_update",
    "check_full_rank",
]


@dataclass(frozen=True)
class FactoredPoint:
    """A factor pair ``(G, H)``, G of shape (m, k), H of shape (n, k)."""

    G: np.ndarray
    H: np.ndarray

    def __post_init__(self):
        G = np.asarray(self.G, dtype=np.float64)
        H = np.asarray(self.H, dtype=np.float64)
        if G.ndim != 2 or H.ndim != 2 or G.shape[1] != H.shape[1]:
            raise ValueError(f"incompatible factor shapes {G.shape}, {H.shape}")
        object.__setattr__(self, "G", G)
        object.__setattr__(self, "H", H)

    @property
    def shape(self):
        return (self.G.shape[0], self.H.shape[0])

    @property
    def rank(self):
        return self.G.shape[1]

    def product(self):
        return self.G @ self.H.T

    def svd(self):
        return product_svd(self.G, self.H)

    def step(self, direction, theta):
        """The identity retraction: ``x + theta * direction``."""
        return FactoredPoint(self.G + theta * direction.xi1, self.H + theta * direction.xi2)


@dataclass(frozen=True)
class TangentPair:
    """A tangent vector ``(xi1, xi2)`` to the total space."""

    xi1: np.ndarray
    xi2: np.ndarray

    def __add__(self, other):
        return TangentPair(self.xi1 + other.xi1, self.xi2 + other.xi2)

    def __sub__(self, other):
        return TangentPair(self.xi1 - other.xi1, self.xi2 - other.xi2)

    def __neg__(self):
        return TangentPair(-self.xi1, -self.xi2)

    def __mul__(self, c):
        return TangentPair(c * self.xi1, c * self.xi2)

    __rmul__ = __mul__

    @classmethod
    def zeros_like(cls, x):
        return cls(np.zeros_like(x.G), np.zeros_like(x.H))


def _check_tangent(x, xi):
    if xi.xi1.shape != x.G.shape or xi.xi2.shape != x.H.shape:
        raise ValueError(
            f"tangent shapes {xi.xi1.shape}, {xi.xi2.shape} do not match point "
            f"{x.G.shape}, {x.H.shape}"
        )


def check_full_rank(x):
    """Raise :class:`RankDropError` if either factor lost full column rank."""
    x.svd()
    for F in (x.G, x.H):
        s = np.linalg.svd(F, compute_uv=False)
        if s[-1] <= 1e-14 * s[0]:
            raise RankDropError("factor is numerically rank deficient")


def metric(x, xi, eta):
    """Preconditioned inner product at ``x``.

    ``tr(xi1^T eta1 H^T H) + tr(xi2^T eta2 G^T G)``
    """
    _check_tangent(x, xi)
    _check_tangent(x, eta)
    a = np.einsum("ij,ij->", xi.xi1 @ gram(x.H), eta.xi1)
    b = np.einsum("ij,ij->", xi.xi2 @ gram(x.G), eta.xi2)
    return float(a + b)


def euclidean_metric(x, xi, eta):
    """Plain Frobenius pairing of tangent pairs (``x`` is ignored)."""
    return float(np.vdot(xi.xi1, eta.xi1) + np.vdot(xi.xi2, eta.xi2))


def metric_norm(x, xi):
    return float(np.sqrt(max(metric(x, xi, xi), 0.0)))


def riemannian_gradient(x, partials):
    """Gradient under the preconditioned metric.

    Scales the Euclidean partials ``(dG, dH)`` to
    ``(dG (H^T H)^{-1}, dH (G^T G)^{-1})``.

    Raises
    ------
    RankDropError
        If a Gram matrix is not positive definite.
    """
    _check_tangent(x, partials)
    return TangentPair(
        spd_solve_right(partials.xi1, gram(x.H)),
        spd_solve_right(partials.xi2, gram(x.G)),
    )


def rebalance(x, F):
    """Move along the fiber: ``(G F^{-1}, H F^T)``; the product is unchanged."""
    F = np.asarray(F, dtype=np.float64)
    k = x.rank
    if F.shape != (k, k):
        raise ValueError(f"F must be {k}x{k}, got {F.shape}")
    cond = np.linalg.cond(F)
    if not np.isfinite(cond) or cond > 1e14:
        raise ValueError("F is singular")
    return FactoredPoint(np.linalg.solve(F.T, x.G.T).T, x.H @ F.T)


def transport(xi, F):
    """Carry a tangent vector along :func:`rebalance` with the same F.

    ``(xi1 F^{-1}, xi2 F^T)`` is the unique choice with
    ``Dpi(rebalance(x, F))[transport(xi, F)] == Dpi(x)[xi]``.
    """
    F = np.asarray(F, dtype=np.float64)
    return TangentPair(np.linalg.solve(F.T, xi.xi1.T).T, xi.xi2 @ F.T)


def differential_pi(x, xi):
    """``Dpi(x)[xi] = G xi2^T + xi1 H^T`` as a dense m x n matrix."""
    _check_tangent(x, xi)
    return x.G @ xi.xi2.T + xi.xi1 @ x.H.T


def _check_ambient(amb, Z):
    if Z.shape != amb.shape:
        raise ValueError(f"matrix shape {Z.shape} does not match {amb.shape}")


def v_operator(amb, Z):
    """``P_U Z + Z P_V``: maps a Euclidean gradient to the quotient gradient."""
    _check_ambient(amb, Z)
    U, V = amb.U, amb.V
    return U @ (U.T @ Z) + (Z @ V) @ V.T


def tangent_project(amb, Z):
    """Orthogonal projection onto the tangent space of the rank-k manifold."""
    _check_ambient(amb, Z)
    U, V = amb.U, amb.V
    UtZ = U.T @ Z
    ZV = Z @ V
    return U @ UtZ + ZV @ V.T - U @ (UtZ @ V) @ V.T


def induced_update(amb, euclid_grad, theta):
    """Ambient image of one preconditioned gradient step.

    ``X - theta V_X(S) + theta^2 S X^+ S`` with ``S`` the Euclidean gradient
    at ``X = U diag(S) V^T``. The pseudo-inverse is applied via the SVD
    factors. ``euclid_grad`` may be dense or a scipy sparse matrix.
    """
    if theta < 0:
        raise ValueError("theta must be nonnegative")
    S = euclid_grad
    if S.shape != amb.shape:
        raise ValueError(f"gradient shape {S.shape} does not match {amb.shape}")
    U, V = amb.U, amb.V
    SV = np.asarray(S @ V)
    UtS = np.asarray((S.T @ U).T)
    VZ = U @ UtS + SV @ V.T
    # S X^+ S = (S V) diag(1/s) (U^T S)
    second = (SV / amb.S) @ UtS
    return amb.matrix() - theta * VZ + theta**2 * second
