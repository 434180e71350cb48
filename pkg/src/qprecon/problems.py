"""Quadratic recovery objectives and their measurement operators.

Every operator is written as ``A = w * M^T M`` where ``M`` maps an m x n
matrix to a measurement vector and ``w`` is a scalar weight:

========================  ==============================  ===========
operator                  measurement ``M(Z)``            weight ``w``
========================  ==============================  ===========
:class:`GaussianSensing`  ``Phi @ vec(Z)`` (column-major)  1
:class:`EntrySampling`    entries of Z on Omega            1 / p
:class:`FullObservation`  ``vec(Z)`` (row-major)           1
========================  ==============================  ===========

The objective is ``f(X) = 1/2 <X, A X> - <A M*, X>``, evaluated through the
residual ``r = M(X) - b`` with ``b = M(M*)``:
``f = w/2 (|r|^2 - |b|^2)``. Low-rank inputs are measured straight from
their factors; for entry sampling that costs O(|Omega| k).
"""

import numpy as np
import scipy.sparse as sp

from .geometry import FactoredPoint, TangentPair
from .linalg import lowrank_diff_norm

__all__ = [
    "MeasurementOperator",
    "GaussianSensing",
    "EntrySampling",
    "FullObservation",
    "ProblemInstance",
    "make_instance",
    "apply_A",
    "objective",
    "excess_objective",
    "euclid_partials",
    "ambient_euclid_grad",
    "residual_norm",
    "recovery_error",
    "test_rmse",
    "line_coefficients",
    "line_residuals",
]


class MeasurementOperator:
    """Common interface of the three operator variants."""

    kind = "abstract"
    weight = 1.0

    def __init__(self, shape):
        m, n = (int(s) for s in shape)
        if m < 1 or n < 1:
            raise ValueError(f"invalid shape {shape}")
        self.shape = (m, n)

    def _check(self, Z):
        if Z.shape != self.shape:
            raise ValueError(f"matrix shape {Z.shape} does not match operator {self.shape}")

    def measure_dense(self, Z):
        raise NotImplementedError

    def measure_factored(self, G, H):
        return self.measure_dense(G @ H.T)

    def adjoint(self, r):
        """``M^T r`` as an m x n matrix (dense ndarray or scipy sparse)."""
        raise NotImplementedError

    def apply(self, Z):
        """``A(Z)`` for a dense m x n matrix; always returns a dense array."""
        self._check(Z)
        out = self.weight * self.adjoint(self.measure_dense(Z))
        return out.toarray() if sp.issparse(out) else np.asarray(out)

    @property
    def gain(self):
        """Average eigenvalue ``trace(A) / (m n)``.

        Quotients ``<Z, A Z> / |Z|^2`` concentrate around this value, so the
        restricted-isometry estimates divide by it.
        """
        return 1.0

    def norm_estimate(self, iters=5):
        """Estimate of the operator norm of ``A`` (used for a first stepsize)."""
        return 1.0


class GaussianSensing(MeasurementOperator):
    """Dense sensing ``Phi(X) = Phi_hat @ vec(X)``, vec stacking columns.

    Parameters
    ----------
    phi : ndarray, shape (d, m * n)
        Row ``i`` is the column-major vectorization of the i-th sensing matrix.
    shape : (m, n)
    """

    kind = "gaussian_sensing"

    def __init__(self, phi, shape):
        super().__init__(shape)
        phi = np.ascontiguousarray(phi, dtype=np.float64)
        m, n = self.shape
        if phi.ndim != 2 or phi.shape[1] != m * n:
            raise ValueError(f"phi must have m*n = {m * n} columns, got {phi.shape}")
        if not np.all(np.isfinite(phi)):
            raise ValueError("sensing matrix must be finite")
        self.phi = phi

    @property
    def d(self):
        return self.phi.shape[0]

    def measure_dense(self, Z):
        self._check(Z)
        return self.phi @ np.ravel(Z, order="F")

    def adjoint(self, r):
        return np.reshape(self.phi.T @ r, self.shape, order="F")

    @property
    def gain(self):
        return float(np.einsum("ij,ij->", self.phi, self.phi)) / (self.shape[0] * self.shape[1])

    def norm_estimate(self, iters=5):
        # power iteration on Phi^T Phi from a fixed start
        v = np.ones(self.phi.shape[1]) / np.sqrt(self.phi.shape[1])
        lam = 0.0
        for _ in range(iters):
            w = self.phi.T @ (self.phi @ v)
            lam = float(np.linalg.norm(w))
            if lam == 0:
                return 1.0
            v = w / lam
        return lam


_CHUNK = 1 << 15


class EntrySampling(MeasurementOperator):
    """Observation of the entries on an index set Omega, scaled by 1/p.

    Indices are stored sorted in row-major order; ``p = |Omega| / (m n)``.
    """

    kind = "entry_sampling"

    def __init__(self, rows, cols, shape):
        super().__init__(shape)
        m, n = self.shape
        rows = np.asarray(rows, dtype=np.int64)
        cols = np.asarray(cols, dtype=np.int64)
        if rows.shape != cols.shape or rows.ndim != 1 or rows.size == 0:
            raise ValueError("Omega must be a nonempty list of (row, col) pairs")
        if rows.min() < 0 or rows.max() >= m or cols.min() < 0 or cols.max() >= n:
            raise ValueError("Omega index out of range")
        lin = rows * n + cols
        order = np.argsort(lin, kind="stable")
        lin = lin[order]
        if np.any(np.diff(lin) == 0):
            raise ValueError("duplicate indices in Omega")
        self.rows = rows[order]
        self.cols = cols[order]
        self.p = self.rows.size / (m * n)
        self.weight = 1.0 / self.p
        self._indptr = np.searchsorted(self.rows, np.arange(m + 1)).astype(np.int64)

    @property
    def size(self):
        return self.rows.size

    def measure_dense(self, Z):
        self._check(Z)
        return np.asarray(Z)[self.rows, self.cols]

    def measure_factored(self, G, H):
        # chunked so the gathered rows stay in cache; same sums as one pass
        out = np.empty(self.rows.size)
        for s in range(0, self.rows.size, _CHUNK):
            e = s + _CHUNK
            out[s:e] = np.einsum("ij,ij->i", G[self.rows[s:e]], H[self.cols[s:e]])
        return out

    def adjoint(self, r):
        return sp.csr_matrix((np.asarray(r, dtype=np.float64), self.cols, self._indptr), shape=self.shape)

    @property
    def gain(self):
        return 1.0

    def norm_estimate(self, iters=5):
        return self.weight


class FullObservation(MeasurementOperator):
    """The identity operator: every entry observed, no scaling."""

    kind = "full_observation"

    def measure_dense(self, Z):
        self._check(Z)
        return np.ravel(np.asarray(Z, dtype=np.float64))

    def adjoint(self, r):
        return np.reshape(r, self.shape)


class ProblemInstance:
    """A noiseless recovery problem.

    Parameters
    ----------
    op : MeasurementOperator
    mstar : FactoredPoint or None
        Ground-truth factors; ``None`` stands for ``M* = 0``.
    rank : int
        Target rank k (defaults to the rank of ``mstar``).
    observed : ndarray, optional
        Measurement vector ``b``; computed from ``mstar`` when omitted.
    test : (rows, cols, values), optional
        Held-out entries for test RMSE.
    """

    def __init__(self, op, mstar=None, rank=None, observed=None, test=None):
        self.op = op
        self.mstar = mstar
        if mstar is not None and mstar.shape != op.shape:
            raise ValueError(f"ground truth shape {mstar.shape} does not match operator {op.shape}")
        if rank is None:
            if mstar is None:
                raise ValueError("rank is required when mstar is None")
            rank = mstar.rank
        self.rank = int(rank)
        if observed is None:
            if mstar is None:
                observed = op.measure_dense(np.zeros(op.shape))
            else:
                observed = op.measure_factored(mstar.G, mstar.H)
        self.observed = np.asarray(observed, dtype=np.float64)
        self.test = test
        self._b_sq = float(self.observed @ self.observed)

    @property
    def shape(self):
        return self.op.shape

    @property
    def dims(self):
        return (*self.op.shape, self.rank)

    def mstar_dense(self):
        if self.mstar is None:
            return np.zeros(self.shape)
        return self.mstar.product()

    def residual(self, x):
        """``M(G H^T) - b``."""
        _check_point(self, x)
        return self.op.measure_factored(x.G, x.H) - self.observed

    def objective_from_residual(self, r):
        return 0.5 * self.op.weight * (float(r @ r) - self._b_sq)

    def excess_from_residual(self, r):
        return 0.5 * self.op.weight * float(r @ r)

    def partials_from_residual(self, x, r):
        S = self.op.weight * self.op.adjoint(r)
        return TangentPair(np.asarray(S @ x.H), np.asarray(S.T @ x.G))


def _check_point(inst, x):
    if x.shape != inst.shape:
        raise ValueError(f"point shape {x.shape} does not match instance {inst.shape}")


def make_instance(op, mstar=None, rank=None, test=None):
    return ProblemInstance(op, mstar=mstar, rank=rank, test=test)


def apply_A(op, Z):
    """Dense ``A(Z)``; symmetric positive semidefinite in Z."""
    return op.apply(np.asarray(Z, dtype=np.float64))


def objective(inst, x):
    """``f(G H^T) = 1/2 <X, A X> - <A M*, X>`` (minimum ``-1/2 <M*, A M*>``)."""
    return inst.objective_from_residual(inst.residual(x))


def excess_objective(inst, x):
    """``f(X) - f(M*) = 1/2 <X - M*, A (X - M*)>``, nonnegative.

    Differs from :func:`objective` by a constant; used by the line searches
    because it does not cancel near the solution.
    """
    return inst.excess_from_residual(inst.residual(x))


def euclid_partials(inst, x):
    """``(S H, S^T G)`` with ``S = A(X) - A(M*)`` the Euclidean gradient."""
    return inst.partials_from_residual(x, inst.residual(x))


def ambient_euclid_grad(inst, X):
    """Dense ``A(X - M*)`` for a point, SVD triple, or dense matrix X."""
    if isinstance(X, FactoredPoint):
        X = X.product()
    elif hasattr(X, "matrix"):
        X = X.matrix()
    X = np.asarray(X, dtype=np.float64)
    if X.shape != inst.shape:
        raise ValueError(f"matrix shape {X.shape} does not match instance {inst.shape}")
    r = inst.op.measure_dense(X) - inst.observed
    S = inst.op.weight * inst.op.adjoint(r)
    return S.toarray() if sp.issparse(S) else np.asarray(S)


def residual_norm(inst, x):
    """Unweighted data misfit ``|Phi(X) - b|`` or ``|P_Omega(X - M*)|_F``."""
    return float(np.linalg.norm(inst.residual(x)))


def recovery_error(inst, x):
    """``|G H^T - M*|_F`` computed from factors."""
    if inst.mstar is None:
        _, R1 = np.linalg.qr(x.G)
        _, R2 = np.linalg.qr(x.H)
        return float(np.linalg.norm(R1 @ R2.T))
    return lowrank_diff_norm(x.G, x.H, inst.mstar.G, inst.mstar.H)


def test_rmse(inst, x):
    """Root mean squared error on held-out entries, or None without a test set."""
    if inst.test is None:
        return None
    rows, cols, values = inst.test
    if len(values) == 0:
        return None
    pred = np.einsum("ij,ij->i", x.G[rows], x.H[cols])
    return float(np.sqrt(np.mean((pred - values) ** 2)))


test_rmse.__test__ = False


def line_residuals(inst, x, direction, r0=None):
    """Residual pieces along ``x + t * direction``: ``r(t) = r0 + t r1 + t^2 r2``.

    With ``A1 = G eta2^T + eta1 H^T`` and ``A2 = eta1 eta2^T`` the product is
    ``X + t A1 + t^2 A2``, so ``r1 = M(A1)`` and ``r2 = M(A2)``. A residual
    ``r0`` already computed at ``x`` may be passed in.
    """
    op = inst.op
    r0 = inst.residual(x) if r0 is None else r0
    e1, e2 = direction.xi1, direction.xi2
    r1 = op.measure_factored(np.hstack([x.G, e1]), np.hstack([e2, x.H]))
    r2 = op.measure_factored(e1, e2)
    return r0, r1, r2


def line_coefficients(inst, x, direction):
    """Coefficients ``c0..c4`` of ``excess_objective(x + t * direction)``.

    The objective is quadratic in the product, which is quadratic in t, so
    the line function is an exact quartic.
    """
    r0, r1, r2 = line_residuals(inst, x, direction)
    w = inst.op.weight
    return np.array(
        [
            0.5 * w * (r0 @ r0),
            w * (r0 @ r1),
            w * (0.5 * (r1 @ r1) + r0 @ r2),
            w * (r1 @ r2),
            0.5 * w * (r2 @ r2),
        ]
    )
