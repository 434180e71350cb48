"""Small dense/sparse kernels shared by the geometry, problem and solver code.

Everything here works on the thin factors of a rank-k matrix, so costs stay
O((m + n) k^2) unless a function explicitly takes an ambient m x n input.
"""

from dataclasses import dataclass

import numpy as np
import scipy.linalg
import scipy.sparse as sp

__all__ = [
    "RankDropError",
    "AmbientFactorization",
    "SparseCoord",
    "gram",
    "spd_solve",
    "spd_solve_right",
    "product_svd",
    "truncated_svd",
    "frob_inner",
    "frob_norm",
    "max_row_norm",
    "lowrank_diff_norm",
]

# sigma_k / sigma_1 below this means the factor pair left the full-rank set
RANK_TOL = 1e-14


class RankDropError(np.linalg.LinAlgError):
    """A factor (or factored product) lost full column rank."""


@dataclass(frozen=True)
class AmbientFactorization:
    """Thin SVD ``X = U diag(S) V^T`` of a rank-k matrix.

    ``S`` is sorted in descending order and strictly positive. ``rank_flag``
    is set by :func:`truncated_svd` when fewer than the requested number of
    nonzero singular values were available.
    """

    U: np.ndarray
    S: np.ndarray
    V: np.ndarray
    rank_flag: bool = False

    @property
    def shape(self):
        return (self.U.shape[0], self.V.shape[0])

    @property
    def rank(self):
        return self.S.shape[0]

    def matrix(self):
        return (self.U * self.S) @ self.V.T

    def pinv_apply(self, Z):
        """Return ``X^+ Z`` (n x p) for an m x p input, never forming X^+."""
        return self.V @ ((self.U.T @ Z) / self.S[:, None])


@dataclass(frozen=True)
class SparseCoord:
    """Coordinate-format sparse matrix with 0-based, duplicate-free indices."""

    rows: int
    cols: int
    row_idx: np.ndarray
    col_idx: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        if self.rows < 1 or self.cols < 1:
            raise ValueError("sparse matrix dimensions must be positive")
        i = np.asarray(self.row_idx, dtype=np.int64)
        j = np.asarray(self.col_idx, dtype=np.int64)
        v = np.asarray(self.values, dtype=np.float64)
        if not (i.shape == j.shape == v.shape and i.ndim == 1):
            raise ValueError("row_idx, col_idx and values must be 1-d and equally long")
        if i.size:
            if i.min() < 0 or i.max() >= self.rows or j.min() < 0 or j.max() >= self.cols:
                raise ValueError("sparse index out of range")
            lin = i * self.cols + j
            if np.unique(lin).size != lin.size:
                raise ValueError("duplicate (i, j) entries in sparse matrix")
        if not np.all(np.isfinite(v)):
            raise ValueError("sparse values must be finite")
        object.__setattr__(self, "row_idx", i)
        object.__setattr__(self, "col_idx", j)
        object.__setattr__(self, "values", v)

    @property
    def shape(self):
        return (self.rows, self.cols)

    @property
    def nnz(self):
        return self.values.size

    def to_scipy(self):
        return sp.csr_matrix((self.values, (self.row_idx, self.col_idx)), shape=self.shape)

    def to_dense(self):
        out = np.zeros(self.shape)
        out[self.row_idx, self.col_idx] = self.values
        return out


def _check_2d(M, name="matrix"):
    M = np.asarray(M, dtype=np.float64)
    if M.ndim != 2:
        raise ValueError(f"{name} must be 2-d, got shape {M.shape}")
    return M


def gram(M):
    """Return ``M^T M``, bit-exactly symmetric (upper triangle mirrored)."""
    M = _check_2d(M)
    A = M.T @ M
    return np.triu(A) + np.triu(A, 1).T


def spd_solve(A, B):
    """Solve ``A X = B`` for symmetric positive definite A via Cholesky.

    Raises
    ------
    RankDropError
        If the Cholesky factorization breaks down. For Gram matrices this
        means the corresponding factor is (numerically) rank deficient.
    """
    A = _check_2d(A, "A")
    B = np.asarray(B, dtype=np.float64)
    if A.shape[0] != A.shape[1] or B.shape[0] != A.shape[0]:
        raise ValueError(f"incompatible shapes {A.shape} and {B.shape}")
    try:
        c = scipy.linalg.cho_factor(A, lower=False, check_finite=True)
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise RankDropError(f"matrix is not positive definite: {exc}") from exc
    # cho_factor only fails on exactly nonpositive pivots
    d = np.abs(np.diag(c[0]))
    if d.min() <= np.sqrt(RANK_TOL) * d.max():
        raise RankDropError("matrix is numerically singular")
    return scipy.linalg.cho_solve(c, B)


def spd_solve_right(B, A):
    """Return ``B A^{-1}`` for SPD A (the form used by the gradient)."""
    return spd_solve(A, np.asarray(B).T).T


def _fix_signs(U, V):
    # largest-magnitude entry of each U column made positive
    idx = np.argmax(np.abs(U), axis=0)
    s = np.sign(U[idx, np.arange(U.shape[1])])
    s[s == 0] = 1.0
    return U * s, V * s


def product_svd(G, H):
    """Thin SVD of ``G H^T`` computed from the factors.

    Two QR factorizations and a k x k SVD; the m x n product is never formed.

    Parameters
    ----------
    G : ndarray, shape (m, k)
    H : ndarray, shape (n, k)

    Returns
    -------
    AmbientFactorization
    """
    G = _check_2d(G, "G")
    H = _check_2d(H, "H")
    if G.shape[1] != H.shape[1]:
        raise ValueError(f"factor ranks differ: {G.shape} vs {H.shape}")
    Qg, Rg = np.linalg.qr(G)
    Qh, Rh = np.linalg.qr(H)
    Us, S, Vst = np.linalg.svd(Rg @ Rh.T)
    if S[0] == 0 or S[-1] <= RANK_TOL * S[0]:
        raise RankDropError("factored product is numerically rank deficient")
    U, V = _fix_signs(Qg @ Us, Qh @ Vst.T)
    return AmbientFactorization(U, S, V)


def truncated_svd(M, k):
    """Best rank-k approximation factors of a dense or sparse matrix.

    Sparse inputs are densified when ``m * n`` is at most 4e6 (the exact
    LAPACK path); larger ones go through ARPACK with a fixed start vector.
    If fewer than k singular values are numerically nonzero the available
    ones are returned with ``rank_flag=True``.
    """
    if isinstance(M, SparseCoord):
        M = M.to_scipy()
    m, n = M.shape
    if not 1 <= k <= min(m, n):
        raise ValueError(f"rank {k} out of range for shape {M.shape}")
    if sp.issparse(M) and m * n > 4_000_000:
        import scipy.sparse.linalg as spla

        v0 = np.ones(min(m, n)) / np.sqrt(min(m, n))
        U, S, Vt = spla.svds(M.tocsr().astype(np.float64), k=k, v0=v0)
        order = np.argsort(S)[::-1]
        U, S, Vt = U[:, order], S[order], Vt[order]
    else:
        A = M.toarray() if sp.issparse(M) else _check_2d(M)
        U, S, Vt = np.linalg.svd(A, full_matrices=False)
        U, S, Vt = U[:, :k], S[:k], Vt[:k]
    keep = S > RANK_TOL * max(S[0], np.finfo(float).tiny)
    flag = not keep.all()
    U, S, V = U[:, keep], S[keep], Vt[keep].T
    U, V = _fix_signs(U, V)
    return AmbientFactorization(U, S, V, rank_flag=flag)


def frob_inner(A, B):
    A = np.asarray(A)
    B = np.asarray(B)
    if A.shape != B.shape:
        raise ValueError(f"shape mismatch {A.shape} vs {B.shape}")
    return float(np.vdot(A, B))


def frob_norm(A):
    return float(np.linalg.norm(A))


def max_row_norm(A):
    """The (2, inf) norm: largest Euclidean norm among the rows of A."""
    A = _check_2d(A)
    return float(np.sqrt(np.max(np.einsum("ij,ij->i", A, A))))


def lowrank_diff_norm(G1, H1, G2, H2):
    """``||G1 H1^T - G2 H2^T||_F`` without forming either product.

    The difference is ``[G1, -G2] [H1, H2]^T``; after QR of both stacked
    factors only a 2k x 2k core remains, which avoids the cancellation of
    the trace-expansion formula near convergence.
    """
    _, Ra = np.linalg.qr(np.hstack([G1, -G2]))
    _, Rb = np.linalg.qr(np.hstack([H1, H2]))
    return float(np.linalg.norm(Ra @ Rb.T))
