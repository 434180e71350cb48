"""Gradient and conjugate-gradient solvers on the factor space.

``rgd_solve`` and ``rcg_solve`` use the preconditioned metric (the
"Qprecon" methods); ``egd_solve`` and ``ecg_solve`` run the same loops with
the raw Euclidean partials and the Frobenius inner product. All four move by
the identity retraction ``x + theta * eta``.

Stepsize rules (``SolverConfig.step``):

``armijo``      backtracking from the previous accepted step divided by beta
``linemin``     exact minimizer of the quartic objective along the line
``rbb1/rbb2``   Riemannian Barzilai-Borwein trial step, then backtracking
``rbb1_nols``   the RBB step taken as is (no backtracking)
``fixed``       a constant step, e.g. ``fixed:0.25``
"""

import csv
import math
import time
from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np

from .geometry import TangentPair, euclidean_metric, metric, riemannian_gradient
from .linalg import RankDropError
from .problems import line_residuals, recovery_error, test_rmse

__all__ = [
    "Status",
    "SolverConfig",
    "TraceRecord",
    "SolveResult",
    "LinesearchError",
    "armijo_search",
    "exact_linemin",
    "quartic_argmin",
    "rbb_stepsize",
    "rgd_solve",
    "rcg_solve",
    "egd_solve",
    "ecg_solve",
    "solve",
    "write_trace_csv",
    "TRACE_HEADER",
]

STEP_RULES = ("armijo", "linemin", "rbb1", "rbb2", "rbb1_nols", "rbb2_nols", "fixed")
TRACE_HEADER = [
    "iter", "seconds", "objective", "gradnorm", "recovery_error", "test_rmse",
    "stepsize", "backtracks", "ss", "sy", "yy",
]


class Status(str, Enum):
    GRAD_TOL = "GradToleranceReached"
    MAX_ITERS = "MaxIters"
    MAX_TIME = "MaxTime"
    TARGET = "RmseReached"
    RANK_DROP = "RankDrop"
    LINESEARCH_FAILED = "LinesearchFailed"


class LinesearchError(RuntimeError):
    """Backtracking exhausted without meeting the sufficient-decrease test."""


@dataclass(frozen=True)
class SolverConfig:
    """Solver settings.

    ``target_rmse`` stops on the held-out test RMSE and ``target_rel_error``
    on ``|X - M*|_F / |M*|_F``; both report ``RmseReached``.
    ``grad_tol_mode="relative"`` scales ``grad_tol`` by the initial
    gradient norm. ``restart_every=None`` restarts CG every ``min(m, n)``
    iterations.
    """

    step: str = "rbb2"
    fixed_step: float = 1.0
    grad_tol: float = 1e-8
    grad_tol_mode: str = "absolute"
    max_iters: int = 1000
    max_time: float = math.inf
    target_rmse: float | None = None
    target_rel_error: float | None = None
    armijo_sigma: float = 1e-4
    armijo_beta: float = 0.5
    max_backtracks: int = 50
    restart_every: int | None = None
    theta_min: float = 1e-12
    theta_max: float = 1e12
    nols_cap: float = 1e6
    nols_growth: float = 1e3
    nols_window: int = 10

    def __post_init__(self):
        if self.step not in STEP_RULES:
            raise ValueError(f"unknown step rule {self.step!r}; expected one of {STEP_RULES}")
        if self.grad_tol_mode not in ("absolute", "relative"):
            raise ValueError("grad_tol_mode must be 'absolute' or 'relative'")
        if not (0 < self.armijo_sigma < 1 and 0 < self.armijo_beta < 1):
            raise ValueError("armijo_sigma and armijo_beta must lie in (0, 1)")
        if self.step == "fixed" and not self.fixed_step > 0:
            raise ValueError("fixed step must be positive")
        if self.max_iters < 0:
            raise ValueError("max_iters must be nonnegative")

    @classmethod
    def parse_step(cls, text, **kwargs):
        """Build a config from a rule string such as ``"fixed:0.25"``."""
        rule, _, arg = text.partition(":")
        if rule == "fixed":
            if not arg:
                raise ValueError("fixed step needs a value, e.g. fixed:0.25")
            return cls(step="fixed", fixed_step=float(arg), **kwargs)
        if arg:
            raise ValueError(f"step rule {rule!r} takes no argument")
        return cls(step=rule, **kwargs)


@dataclass
class TraceRecord:
    iter: int
    wall_seconds: float
    objective: float
    grad_norm: float
    recovery_error: float | None = None
    test_rmse: float | None = None
    stepsize: float | None = None
    backtracks: int = 0
    rbb_internals: tuple | None = None


@dataclass
class SolveResult:
    x: object
    status: Status
    trace: list = field(default_factory=list)

    @property
    def iterations(self):
        return self.trace[-1].iter if self.trace else 0

    @property
    def final(self):
        return self.trace[-1]


def _backtrack(phi, f0, slope, theta0, sigma, beta, max_backtracks):
    """Smallest l >= 0 with ``f0 - phi(theta0 beta^l) >= sigma theta slope``."""
    theta = theta0
    for ell in range(max_backtracks + 1):
        val = phi(theta)
        if np.isfinite(val) and f0 - val >= sigma * theta * slope:
            return theta, ell
        theta *= beta
    raise LinesearchError(f"no sufficient decrease after {max_backtracks} backtracks")


def armijo_search(fun, x, direction, grad, theta0, sigma=1e-4, beta=0.5,
                  max_backtracks=50, inner=metric):
    """Backtracking line search along ``x + theta * direction``.

    Parameters
    ----------
    fun : callable
        Objective evaluated at a :class:`FactoredPoint`.
    grad : TangentPair
        Gradient at ``x`` with respect to ``inner``.
    inner : callable
        ``inner(x, xi, eta)``; the preconditioned metric by default.

    Returns
    -------
    theta : float
        ``theta0 * beta**l`` for the smallest admissible l.
    backtracks : int
        l.
    """
    slope = inner(x, -grad, direction)
    if not slope > 0:
        raise ValueError("direction is not a descent direction")
    f0 = fun(x)
    return _backtrack(lambda t: fun(x.step(direction, t)), f0, slope, theta0, sigma, beta, max_backtracks)


def _polyval(c, t):
    return (((c[4] * t + c[3]) * t + c[2]) * t + c[1]) * t + c[0]


def quartic_argmin(c):
    """Global minimizer over t >= 0 of ``sum c[i] t^i``.

    Returns ``(t, degenerate)``; degenerate (no curvature along the line)
    gives ``(0.0, True)``.
    """
    c = np.asarray(c, dtype=np.float64)
    if c[2] == 0 and c[4] == 0 and c[3] == 0:
        return 0.0, True
    d = np.array([4 * c[4], 3 * c[3], 2 * c[2], c[1]])
    nz = np.flatnonzero(d[:-1])
    roots = np.roots(d[nz[0]:]) if nz.size else np.array([])
    scale = max(1.0, *(abs(r) for r in roots)) if roots.size else 1.0
    cands = [0.0]
    for r in roots:
        if abs(r.imag) <= 1e-8 * scale and r.real > 0:
            t = r.real
            # Newton polish on the cubic derivative
            for _ in range(3):
                g = ((d[0] * t + d[1]) * t + d[2]) * t + d[3]
                h = (3 * d[0] * t + 2 * d[1]) * t + d[2]
                if h <= 0:
                    break
                t_new = t - g / h
                if not t_new > 0:
                    break
                t = t_new
            cands.append(t)
    vals = [_polyval(c, t) for t in cands]
    return float(cands[int(np.argmin(vals))]), False


def _polish(r0, r1, r2, w, t, iters=30):
    """Refine a stationary point of ``w/2 |r0 + t r1 + t^2 r2|^2``.

    Newton steps on ``phi' / phi''``, which converge quadratically even at
    multiple roots, where roots of the monomial cubic are only accurate to
    about eps^(1/3). The residual form keeps ``phi'`` accurate near the
    minimizer.
    """
    def derivs(t):
        r = r0 + t * (r1 + t * r2)
        dr = r1 + 2.0 * t * r2
        return (w * float(r @ r) / 2, w * float(r @ dr),
                w * (float(dr @ dr) + 2.0 * float(r @ r2)), 6.0 * w * float(dr @ r2))

    f, d1, d2, d3 = derivs(t)
    for _ in range(iters):
        if d2 <= 0 or d1 == 0:
            break
        u = d1 / d2
        du = 1.0 - d1 * d3 / (d2 * d2)
        if du <= 0:
            break
        t_new = t - u / du
        if not t_new > 0:
            break
        f_new, d1n, d2n, d3n = derivs(t_new)
        if f_new > f * (1 + 1e-12) + 1e-300:
            break
        done = abs(t_new - t) <= 4 * np.finfo(float).eps * t
        t, f, d1, d2, d3 = t_new, f_new, d1n, d2n, d3n
        if done:
            break
    return t


def exact_linemin(inst, x, direction, r0=None):
    """Exact minimizer of the objective along ``x + theta * direction``.

    The objective is quadratic in ``X = G H^T`` and X is quadratic in theta,
    so the line function is a quartic; its coefficients come from three
    low-rank measurements. ``r0`` is the residual at ``x`` if already known.
    Returns ``(theta, degenerate)``.
    """
    r0, r1, r2 = line_residuals(inst, x, direction, r0)
    w = inst.op.weight
    c = np.array([
        0.5 * w * (r0 @ r0),
        w * (r0 @ r1),
        w * (0.5 * (r1 @ r1) + r0 @ r2),
        w * (r1 @ r2),
        0.5 * w * (r2 @ r2),
    ])
    theta, degenerate = quartic_argmin(c)
    if theta > 0:
        theta = _polish(r0, r1, r2, w, theta)
    return theta, degenerate


def rbb_stepsize(x, x_prev, grad, grad_prev, rule="bb2", inner=metric,
                 fallback=None, theta_min=1e-12, theta_max=1e12):
    """Barzilai-Borwein step from iterate and gradient differences.

    ``z = x - x_prev`` and ``y = grad - grad_prev`` are compared
    coordinate-wise; all inner products are taken at ``x``.

    Returns
    -------
    theta, ss, sy, yy
        ``bb1 = ss / |sy|``, ``bb2 = |sy| / yy``. When ``|sy| < 1e-30`` or
        ``sy <= 0`` the step is ``fallback`` (``None`` if not given).
        Steps are clamped to ``[theta_min, theta_max]``.
    """
    z = TangentPair(x.G - x_prev.G, x.H - x_prev.H)
    y = grad - grad_prev
    ss = inner(x, z, z)
    sy = inner(x, z, y)
    yy = inner(x, y, y)
    rule = rule.lower().removeprefix("r")
    if abs(sy) < 1e-30 or sy <= 0 or not np.isfinite(sy):
        theta = fallback
    elif rule == "bb1":
        theta = ss / abs(sy)
    elif rule == "bb2":
        theta = abs(sy) / yy
    else:
        raise ValueError(f"unknown BB rule {rule!r}")
    if theta is not None:
        theta = float(min(max(theta, theta_min), theta_max))
    return theta, ss, sy, yy


class _Evaluator:
    """Caches the residual of the last evaluated trial point."""

    def __init__(self, inst):
        self.inst = inst
        self.cache = {}

    def excess(self, x):
        r = self.inst.residual(x)
        self.cache[id(x)] = (x, r)
        return self.inst.excess_from_residual(r)

    def residual(self, x):
        hit = self.cache.get(id(x))
        if hit is not None and hit[0] is x:
            return hit[1]
        return self.inst.residual(x)


def _record(inst, t, t_start, x, r, gnorm, theta, bt, rbb):
    err = recovery_error(inst, x)
    return TraceRecord(
        iter=t,
        wall_seconds=time.monotonic() - t_start,
        objective=inst.objective_from_residual(r),
        grad_norm=gnorm,
        recovery_error=err,
        test_rmse=test_rmse(inst, x),
        stepsize=theta,
        backtracks=bt,
        rbb_internals=rbb,
    )


def _descent(inst, x0, cfg, preconditioned, conjugate, callback=None):
    inner = metric if preconditioned else euclidean_metric

    def gradient(x, r):
        partials = inst.partials_from_residual(x, r)
        return riemannian_gradient(x, partials) if preconditioned else partials

    t_start = time.monotonic()
    ev = _Evaluator(inst)
    m, n = inst.shape
    restart_every = cfg.restart_every or min(m, n)
    # relative error target; with M* = 0 it applies to |X|_F directly
    mstar_norm = 1.0
    if cfg.target_rel_error is not None and inst.mstar is not None:
        _, R1 = np.linalg.qr(inst.mstar.G)
        _, R2 = np.linalg.qr(inst.mstar.H)
        mstar_norm = float(np.linalg.norm(R1 @ R2.T))

    x = x0
    r = inst.residual(x)
    try:
        grad = gradient(x, r)
    except RankDropError:
        return SolveResult(x, Status.RANK_DROP, [])
    gnorm = math.sqrt(max(inner(x, grad, grad), 0.0))
    tol = cfg.grad_tol * (gnorm if cfg.grad_tol_mode == "relative" else 1.0)
    trace = [_record(inst, 0, t_start, x, r, gnorm, None, 0, None)]
    if callback is not None:
        callback(0, x)

    excess_hist = [inst.excess_from_residual(r)]
    x_prev = grad_prev = eta_prev = None
    theta_prev = None
    since_restart = 0
    t = 0
    status = None
    while status is None:
        rec = trace[-1]
        if cfg.target_rel_error is not None and rec.recovery_error <= cfg.target_rel_error * mstar_norm:
            status = Status.TARGET
            break
        if cfg.target_rmse is not None and rec.test_rmse is not None and rec.test_rmse <= cfg.target_rmse:
            status = Status.TARGET
            break
        if gnorm <= tol:
            status = Status.GRAD_TOL
            break
        if t >= cfg.max_iters:
            status = Status.MAX_ITERS
            break
        if time.monotonic() - t_start >= cfg.max_time:
            status = Status.MAX_TIME
            break

        # search direction
        eta = -grad
        if conjugate and eta_prev is not None and since_restart < restart_every:
            y = grad - grad_prev
            den = inner(x, y, eta_prev)
            beta = max(0.0, inner(x, y, grad) / den) if den != 0 else 0.0
            if beta > 0:
                eta = -grad + beta * eta_prev
                if inner(x, eta, -grad) <= 0:
                    eta = -grad
            since_restart += 1
        else:
            since_restart = 0
        slope = inner(x, -grad, eta)

        # stepsize
        rbb = None
        bt = 0
        f0 = excess_hist[-1]
        phi = lambda th: ev.excess(x.step(eta, th))  # noqa: E731
        try:
            if cfg.step == "fixed":
                theta = cfg.fixed_step
            elif cfg.step == "linemin":
                theta, degenerate = exact_linemin(inst, x, eta, r)
                if degenerate:
                    # no curvature along the direction: nothing left to fit
                    status = Status.GRAD_TOL
                    break
                if theta <= 0:
                    status = Status.LINESEARCH_FAILED
                    break
            else:
                if cfg.step.startswith("rbb") and x_prev is not None:
                    theta0, ss, sy, yy = rbb_stepsize(
                        x, x_prev, grad, grad_prev, cfg.step[:4], inner=inner,
                        fallback=theta_prev, theta_min=cfg.theta_min, theta_max=cfg.theta_max,
                    )
                    rbb = (ss, sy, yy)
                elif theta_prev is None:
                    theta0 = 1.0 / inst.op.norm_estimate()
                else:
                    theta0 = theta_prev / cfg.armijo_beta
                if cfg.step.endswith("_nols"):
                    theta = min(theta0, cfg.nols_cap)
                else:
                    theta, bt = _backtrack(phi, f0, slope, theta0, cfg.armijo_sigma,
                                           cfg.armijo_beta, cfg.max_backtracks)
        except LinesearchError:
            status = Status.LINESEARCH_FAILED
            break

        x_new = x.step(eta, theta)
        r_new = ev.residual(x_new)
        ev.cache.clear()
        f_new = inst.excess_from_residual(r_new)
        try:
            grad_new = gradient(x_new, r_new)
        except RankDropError:
            x = x_new
            status = Status.RANK_DROP
            break
        x_prev, grad_prev, eta_prev = x, grad, eta
        x, r, grad = x_new, r_new, grad_new
        theta_prev = theta
        t += 1
        gnorm = math.sqrt(max(inner(x, grad, grad), 0.0))
        excess_hist.append(f_new)
        trace.append(_record(inst, t, t_start, x, r, gnorm, theta, bt, rbb))
        if callback is not None:
            callback(t, x)
        if not np.isfinite(f_new) or not np.isfinite(gnorm):
            status = Status.LINESEARCH_FAILED
        elif cfg.step.endswith("_nols") and t >= cfg.nols_window:
            if f_new > cfg.nols_growth * excess_hist[-1 - cfg.nols_window]:
                status = Status.LINESEARCH_FAILED
    return SolveResult(x, status, trace)


def rgd_solve(inst, x0, cfg=None, callback=None):
    """Preconditioned Riemannian gradient descent ("Qprecon RGD").

    ``callback(t, x)`` is called with the initial point (t = 0) and after
    every accepted step.
    """
    return _descent(inst, x0, cfg or SolverConfig(), preconditioned=True, conjugate=False, callback=callback)


def rcg_solve(inst, x0, cfg=None, callback=None):
    """Preconditioned Riemannian CG with the HS+ rule ("Qprecon RCG").

    ``beta = max(0, g(y, grad) / g(y, eta_prev))`` with ``y`` the gradient
    difference. The direction falls back to ``-grad`` when it is not a
    descent direction and every ``restart_every`` iterations.
    """
    cfg = cfg or SolverConfig(step="linemin")
    return _descent(inst, x0, cfg, preconditioned=True, conjugate=True, callback=callback)


def egd_solve(inst, x0, cfg=None, callback=None):
    """Euclidean gradient descent on the factors (baseline)."""
    return _descent(inst, x0, cfg or SolverConfig(step="armijo"), preconditioned=False,
                    conjugate=False, callback=callback)


def ecg_solve(inst, x0, cfg=None, callback=None):
    """Euclidean nonlinear CG (HS+) on the factors (baseline)."""
    return _descent(inst, x0, cfg or SolverConfig(step="linemin"), preconditioned=False,
                    conjugate=True, callback=callback)


METHODS = {"rgd": rgd_solve, "rcg": rcg_solve, "egd": egd_solve, "ecg": ecg_solve}


def solve(method, inst, x0, cfg=None, callback=None):
    try:
        fn = METHODS[method]
    except KeyError:
        raise ValueError(f"unknown method {method!r}; expected one of {sorted(METHODS)}") from None
    return fn(inst, x0, cfg, callback=callback)


def _fmt(v):
    return "" if v is None else repr(float(v)) if isinstance(v, (float, np.floating)) else str(v)


def write_trace_csv(path_or_file, trace):
    """Write a trace with the columns of :data:`TRACE_HEADER`."""
    own = isinstance(path_or_file, (str, bytes)) or hasattr(path_or_file, "__fspath__")
    fh = open(path_or_file, "w", newline="") if own else path_or_file
    try:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRACE_HEADER)
        for rec in trace:
            ss = sy = yy = None
            if rec.rbb_internals is not None:
                ss, sy, yy = rec.rbb_internals
            w.writerow([
                rec.iter, _fmt(rec.wall_seconds), _fmt(rec.objective), _fmt(rec.grad_norm),
                _fmt(rec.recovery_error), _fmt(rec.test_rmse), _fmt(rec.stepsize),
                rec.backtracks, _fmt(ss), _fmt(sy), _fmt(yy),
            ])
    finally:
        if own:
            fh.close()


def with_overrides(cfg, **kwargs):
    return replace(cfg, **{k: v for k, v in kwargs.items() if v is not None})
