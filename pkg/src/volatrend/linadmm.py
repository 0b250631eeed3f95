"""Full-field solver by linearized ADMM.

Each iteration takes a proximal gradient step on the likelihood, an
elementwise weighted soft-threshold on the penalty variable, and a dual
ascent step:

    h <- prox_{mu f}(h - (mu/rho) D'(D h - z + u))
    z <- soft_threshold(D h + u, rho * L)
    u <- u + D h - z

The step size must satisfy 0 < mu < rho / ||D||_2^2.  Convergence is
declared when max(||D h - z||, ||z_new - z_old||) drops below epsilon,
which defaults to 0.001% of the data mean square.
"""

from __future__ import annotations

import sys

import numpy as np
import scipy.sparse as sp

from .errors import ConvergenceError, ValidationError
from .grid import Field, SolverConfig, SolverResult
from .kernels import lambert_w_exp
from .operators import PenaltyWeights, operator_norm

__all__ = ["choose_stepsizes", "solve_linearized", "DEFAULT_MAX_ITER"]

DEFAULT_MAX_ITER = 50000


def choose_stepsizes(D, rho: float) -> float:
    """Step size 0.9 * rho / ||D||_2^2, safely inside the stability bound."""
    if rho <= 0:
        raise ValidationError("rho must be positive")
    return 0.9 * rho / operator_norm(D) ** 2


def default_epsilon(y: Field) -> float:
    """Stopping tolerance: 0.001% of the mean square of the data."""
    return 1e-5 * float(np.mean(y.values**2))


def solve_linearized(
    y: Field,
    D,
    weights: PenaltyWeights,
    cfg: SolverConfig,
    op_norm: float | None = None,
    trace_stream=None,
    warm_state: tuple[np.ndarray, np.ndarray] | None = None,
) -> SolverResult:
    """Run linearized ADMM on a full space-time field.

    Parameters
    ----------
    y : observed field (zero mean per cell)
    D, weights : penalty operator and per-row weights
    cfg : solver configuration; mu/epsilon/max_iter default when None
    op_norm : optional precomputed ||D||_2 to skip the power iteration
    trace_stream : overrides the verbose trace destination (default stderr)
    warm_state : optional (z, u) from a neighbouring solve; requires
        cfg.warm_start and |u| within the new threshold box

    Returns a :class:`SolverResult`; ``converged`` is False when the
    iteration cap is reached first.  Non-finite iterates raise
    :class:`ConvergenceError`.
    """
    lam = weights.weights
    if D.shape[0] != lam.size or D.shape[1] != y.spec.size:
        raise ValidationError("operator, weights and field dimensions disagree")
    if op_norm is None:
        op_norm = operator_norm(D)
    bound = cfg.rho / op_norm**2
    mu = 0.9 * bound if cfg.mu is None else cfg.mu
    if not 0 < mu < bound:
        raise ValidationError(f"mu must lie in (0, {bound:.6g}), got {mu}")
    eps = default_epsilon(y) if cfg.epsilon is None else cfg.epsilon
    max_iter = DEFAULT_MAX_ITER if cfg.max_iter is None else cfg.max_iter

    y_sq = y.values**2
    # prox of x + y^2 exp(-x) at scale mu: v - mu + W(mu y^2 exp(mu - v));
    # the constant part of the log-domain W argument is hoisted out of the loop
    with np.errstate(divide="ignore"):
        log_mu_ysq = np.log(mu * y_sq) + mu
    threshold = cfg.rho * lam
    scale = mu / cfg.rho

    if cfg.warm_start is not None:
        if cfg.warm_start.spec.size != y.spec.size:
            raise ValidationError("warm start has the wrong shape")
        h = cfg.warm_start.values.copy()
        Dh = D @ h
        if warm_state is not None:
            z, u = (np.array(v, dtype=float) for v in warm_state)
            if z.size != D.shape[0] or u.size != D.shape[0]:
                raise ValidationError("warm state has the wrong shape")
            if np.any(np.abs(u) > threshold):
                raise ValidationError("warm dual lies outside the threshold box")
        else:
            z = Dh.copy()
            u = np.zeros(D.shape[0])
    else:
        h = np.zeros(y.spec.size)
        Dh = np.zeros(D.shape[0])
        z = np.zeros(D.shape[0])
        u = np.zeros(D.shape[0])

    stream = trace_stream if trace_stream is not None else sys.stderr
    obj_trace, primal_trace, dual_trace = [], [], []
    converged = False
    it = 0
    DT = sp.csr_array(D.T)
    n, m = y.spec.size, D.shape[0]
    neg_threshold = -threshold
    # reusable buffers; per-iteration allocations stall badly on some hosts
    r = np.empty(m)
    z_new = np.empty(m)
    la = np.empty(n)
    for it in range(1, max_iter + 1):
        np.subtract(Dh, z, out=r)
        r += u
        v = DT @ r
        v *= scale
        np.subtract(h, v, out=v)
        np.subtract(log_mu_ysq, v, out=la)
        h = lambert_w_exp(la)
        h -= mu
        h += v
        Dh = D @ h

        np.add(Dh, u, out=r)
        # the dual iterate is the clip of Dh + u onto the box, and the new
        # z is the leftover: z = r - clip(r), u = clip(r)
        np.minimum(r, threshold, out=u)
        np.maximum(u, neg_threshold, out=u)
        np.subtract(r, u, out=z_new)
        np.subtract(Dh, z_new, out=r)
        primal = float(np.linalg.norm(r))
        np.subtract(z_new, z, out=r)
        dual = float(np.linalg.norm(r))
        z, z_new = z_new, z

        np.negative(h, out=la)
        np.exp(la, out=la)
        la *= y_sq
        la += h
        np.abs(Dh, out=r)
        obj = float(la.sum()) + float(lam @ r)
        obj_trace.append(obj)
        primal_trace.append(primal)
        dual_trace.append(dual)
        if cfg.verbose:
            stream.write(f"{it} {obj!r} {primal!r} {dual!r}\n")
        if not np.isfinite(obj):
            raise ConvergenceError(f"iterates diverged at iteration {it}")
        if max(primal, dual) < eps:
            converged = True
            break

    return SolverResult(
        h_hat=Field(y.spec, h),
        objective_trace=np.asarray(obj_trace),
        primal_residual_trace=np.asarray(primal_trace),
        dual_residual_trace=np.asarray(dual_trace),
        iterations=it,
        converged=converged,
        epsilon_used=eps,
        z=z,
        u=u,
    )
