"""Elementwise kernels: Lambert W, soft thresholding, and the conjugate
functions of the variance likelihood.

Everything here is a pure function of ndarrays and broadcasts elementwise,
so callers may vectorize or parallelize freely.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DomainError, ValidationError

__all__ = [
    "lambert_w",
    "lambert_w_exp",
    "soft_threshold",
    "ProxParams",
    "prox_variance_nll",
    "conjugate_single",
    "conjugate_single_grad_hess",
    "conjugate_augmented",
]

_INV_E = 1.0 / np.e
# above this, exp(log_x) would lose precision or overflow; solve in log domain
_LOG_DIRECT_MAX = 30.0


def _halley(w, x):
    # Halley steps for w*exp(w) = x; quadratic-plus convergence, cap 50
    for _ in range(50):
        ew = np.exp(w)
        f = w * ew - x
        if np.all(np.abs(f) <= 1e-14 * np.maximum(1.0, np.abs(x))):
            break
        wp1 = w + 1.0
        denom = ew * wp1 - (w + 2.0) * f / (2.0 * wp1)
        w = w - f / denom
    return w


def lambert_w(x):
    """Principal-branch Lambert W for real x >= -1/e (elementwise).

    Solves w * exp(w) = x with residual below 1e-14 * max(1, x).
    """
    x = np.asarray(x, dtype=float)
    scalar = x.ndim == 0
    x = np.atleast_1d(x)
    if np.any(x < -_INV_E - 1e-12) or np.any(np.isnan(x)):
        raise DomainError("lambert_w requires x >= -1/e")
    x = np.maximum(x, -_INV_E)

    w = np.empty_like(x)
    near_branch = x < -0.25
    small = (~near_branch) & (x < np.e)
    large = x >= np.e
    # series around the branch point x = -1/e
    p = np.sqrt(np.maximum(2.0 * (np.e * x[near_branch] + 1.0), 0.0))
    w[near_branch] = -1.0 + p - p**2 / 3.0
    w[small] = x[small] / (1.0 + x[small])
    lx = np.log(x[large])
    llx = np.log(lx)
    w[large] = lx - llx + llx / lx
    w = _halley(w, x)
    return float(w[0]) if scalar else w


def lambert_w_exp(log_x):
    """W(exp(log_x)) for real log_x, safe for arguments far beyond overflow.

    Solves w * exp(w - log_x) = 1 by Halley iteration, so only exp is
    evaluated in the loop and exp(log_x) is never formed.  log_x = -inf
    maps to 0; the residual |w exp(w) - x| stays below 1e-14 * x.
    """
    v = np.asarray(log_x, dtype=float)
    scalar = v.ndim == 0
    v = np.atleast_1d(v)
    if np.any(np.isnan(v)):
        raise DomainError("lambert_w_exp requires a real log-argument")

    tiny = v <= -37.0  # W(x) = x to double precision for x <= 1e-16
    if np.any(tiny):
        out = np.empty_like(v)
        out[tiny] = np.exp(v[tiny])
        work = ~tiny
        vw = v[work]
    else:
        out = None
        work = None
        vw = v
    if vw.size:
        mid = vw <= 2.5
        if mid.all():
            w = np.exp(vw)
            w /= 1.0 + w
        else:
            w = np.empty_like(vw)
            x_mid = np.exp(vw[mid])
            w[mid] = x_mid / (1.0 + x_mid)
            big = ~mid
            lv = np.log(vw[big])
            w[big] = vw[big] - lv + lv / vw[big]
        # Halley on w*exp(w - v) - 1 = 0, buffers reused across iterations;
        # the init is within ~30% everywhere so two cubic steps land at 1e-14
        t = np.empty_like(vw)
        f = np.empty_like(vw)
        tmp = np.empty_like(vw)
        wp1 = np.empty_like(vw)
        for k in range(50):
            np.subtract(w, vw, out=t)
            np.exp(t, out=t)
            np.multiply(w, t, out=f)
            f -= 1.0
            if k >= 2:
                np.abs(f, out=tmp)
                if tmp.max() <= 1e-14:
                    break
            np.add(w, 1.0, out=wp1)
            np.multiply(wp1, t, out=t)  # t becomes the denominator
            np.add(w, 2.0, out=tmp)
            tmp *= f
            tmp /= wp1
            tmp *= 0.5
            t -= tmp
            f /= t
            w -= f
        if work is None:
            out = w
        else:
            out[work] = w
    elif out is None:
        out = vw.copy()
    return float(out[0]) if scalar else out


def soft_threshold(u, alpha):
    """Elementwise shrinkage sign(u) * max(|u| - alpha, 0)."""
    u = np.asarray(u, dtype=float)
    alpha = np.asarray(alpha, dtype=float)
    if np.any(alpha < 0):
        raise ValidationError("soft threshold requires nonnegative alpha")
    # algebraically identical and cheaper than sign(u) * max(|u| - alpha, 0)
    return u - np.clip(u, -alpha, alpha)


@dataclass(frozen=True)
class ProxParams:
    """Scale and squared observation for the variance-likelihood prox."""

    alpha: float | np.ndarray
    y_sq: float | np.ndarray

    def __post_init__(self):
        if np.any(np.asarray(self.alpha) <= 0):
            raise ValidationError("prox scale alpha must be positive")
        if np.any(np.asarray(self.y_sq) < 0):
            raise ValidationError("y_sq must be nonnegative")


def prox_variance_nll(u, params: ProxParams):
    """Proximal map of f(x) = x + y^2 exp(-x) at scale alpha.

    Returns the unique x solving alpha * (1 - y^2 exp(-x)) + x - u = 0,
    in closed form x = u - alpha + W(alpha y^2 exp(alpha - u)).  The W
    argument is handled in the log domain so very negative u cannot
    overflow.
    """
    u = np.asarray(u, dtype=float)
    alpha = np.asarray(params.alpha, dtype=float)
    y_sq = np.asarray(params.y_sq, dtype=float)
    with np.errstate(divide="ignore"):
        log_arg = np.log(alpha) + np.log(y_sq) + alpha - u
    return u - alpha + lambert_w_exp(log_arg)


def _check_dual_domain(u):
    if np.any(u >= 1.0):
        raise DomainError("conjugate requires every component of u below 1")


def conjugate_single(u, y) -> float:
    """Fenchel conjugate of f(x) = sum(x + y^2 exp(-x)).

    f*(u) = sum (u - 1) log(y^2 / (1 - u)) + u - 1, defined for u < 1.
    Observations must be nonzero; perturb exact zeros with machine-scale
    jitter before calling.
    """
    u = np.asarray(u, dtype=float)
    y = np.asarray(y, dtype=float)
    _check_dual_domain(u)
    if np.any(y == 0):
        raise DomainError("conjugate_single is undefined at y = 0; jitter zeros")
    return float(np.sum((u - 1.0) * (np.log(y**2) - np.log1p(-u)) + u - 1.0))


def conjugate_single_grad_hess(u, y) -> tuple[np.ndarray, np.ndarray]:
    """Gradient log(y^2/(1-u)) and diagonal Hessian 1/(1-u) of the above."""
    u = np.asarray(u, dtype=float)
    y = np.asarray(y, dtype=float)
    _check_dual_domain(u)
    if np.any(y == 0):
        raise DomainError("conjugate_single is undefined at y = 0; jitter zeros")
    one_minus = 1.0 - u
    grad = np.log(y**2) - np.log1p(-u)
    return grad, 1.0 / one_minus


def conjugate_augmented(xi, y, z_tilde, u_dual, rho: float, weight=1.0):
    """Value, gradient and diagonal Hessian of the conjugate of

        f(x) = sum_j c_j (x_j + y_j^2 exp(-x_j)) + (rho/2) ||x - z_tilde + u||^2

    where c is an optional per-entry likelihood weight (default 1).  The
    maximizer solves c (1 - y^2 exp(-x)) + rho (x - z_tilde + u) = xi and
    is expressed through Lambert W; the gradient of the conjugate is that
    maximizer and the Hessian diagonal is 1 / (rho (1 + W)).  The identity
    c y^2 exp(-x*) = rho W keeps the evaluation overflow-free.
    """
    if rho <= 0:
        raise ValidationError("rho must be positive")
    xi = np.asarray(xi, dtype=float)
    y = np.asarray(y, dtype=float)
    weight = np.asarray(weight, dtype=float)
    a = np.asarray(z_tilde, dtype=float) - np.asarray(u_dual, dtype=float)
    phi = (weight - xi) / rho - a
    with np.errstate(divide="ignore"):
        log_q = np.log(weight) + np.log(y**2) - np.log(rho) + phi
    w = lambert_w_exp(log_q)
    x_star = w - phi
    value = float(np.sum((xi - weight) * x_star - rho * w - 0.5 * rho * (x_star - a) ** 2))
    hess = 1.0 / (rho * (1.0 + w))
    return value, x_star, hess
