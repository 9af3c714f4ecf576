"""Smooth unconstrained maximization used by the likelihood fitters.

Two workhorses: a BFGS quasi-Newton loop with backtracking line search,
and a damped Newton loop for problems with a cheap (exact or
finite-difference) Hessian.  Both maximize; callers pass log-likelihoods
directly.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConvergenceError, SingularFitError

GRAD_TOL = 1e-8
OBJ_REL_TOL = 1e-12
MAX_ITER = 500


@dataclass
class OptimResult:
    x: np.ndarray
    fun: float
    grad: np.ndarray
    n_iter: int
    converged: bool
    trace: list = field(default_factory=list)

    @property
    def grad_norm(self) -> float:
        return float(np.max(np.abs(self.grad)))


def _backtrack(fun, x, f0, g, direction, c1=1e-4, min_step=1e-14):
    """Armijo backtracking for a maximization step. Returns (step, x_new, f_new)."""
    slope = float(g @ direction)
    if slope <= 0:
        # Not an ascent direction; fall back to steepest ascent.
        direction = g
        slope = float(g @ g)
        if slope == 0.0:
            return 0.0, x, f0
    step = 1.0
    while step >= min_step:
        x_new = x + step * direction
        f_new = fun(x_new)
        if np.isfinite(f_new) and f_new >= f0 + c1 * step * slope:
            return step, x_new, f_new
        step *= 0.5
    return 0.0, x, f0


def maximize_bfgs(fun_grad, x0, grad_tol=GRAD_TOL, obj_rel_tol=OBJ_REL_TOL,
                  max_iter=MAX_ITER):
    """Maximize f via BFGS with backtracking line search.

    Parameters
    ----------
    fun_grad : callable
        Returns ``(f, grad)`` at a parameter vector.
    x0 : array_like
        Starting point.

    Stops when the gradient sup-norm drops below `grad_tol` or the relative
    objective change drops below `obj_rel_tol`.
    """
    x = np.asarray(x0, dtype=float).copy()
    n = x.size
    f, g = fun_grad(x)
    if not np.isfinite(f):
        raise ConvergenceError("objective not finite at the starting point")
    H = np.eye(n)  # inverse-Hessian approximation (of -f'')
    trace = [(0, f, float(np.max(np.abs(g))))]

    def f_only(z):
        return fun_grad(z)[0]

    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        if np.max(np.abs(g)) < grad_tol:
            converged = True
            break
        direction = H @ g
        step, x_new, f_new = _backtrack(f_only, x, f, g, direction)
        if step == 0.0:
            # Line search stalled; restart curvature once, then give up.
            if not np.allclose(H, np.eye(n)):
                H = np.eye(n)
                continue
            break
        _, g_new = fun_grad(x_new)
        s = x_new - x
        y = g - g_new  # change of -grad for the equivalent minimization
        sy = float(s @ y)
        if sy > 1e-12 * np.linalg.norm(s) * max(np.linalg.norm(y), 1e-300):
            rho = 1.0 / sy
            I = np.eye(n)
            H = (I - rho * np.outer(s, y)) @ H @ (I - rho * np.outer(y, s)) \
                + rho * np.outer(s, s)
        rel_change = abs(f_new - f) / max(1.0, abs(f))
        x, f, g = x_new, f_new, g_new
        trace.append((it, f, float(np.max(np.abs(g)))))
        if np.max(np.abs(g)) < grad_tol or rel_change < obj_rel_tol:
            converged = np.max(np.abs(g)) < grad_tol or rel_change < obj_rel_tol
            break
    return OptimResult(x, f, g, it, converged, trace)


def maximize_newton(fun_grad, hess, x0, grad_tol=GRAD_TOL, max_iter=100,
                    ridge0=0.0):
    """Maximize f via damped Newton steps with step-halving.

    `hess` returns the Hessian of f (negative definite near the optimum).
    Indefinite Hessians are ridged until the step is an ascent direction.
    """
    x = np.asarray(x0, dtype=float).copy()
    f, g = fun_grad(x)
    if not np.isfinite(f):
        raise ConvergenceError("objective not finite at the starting point")
    trace = [(0, f, float(np.max(np.abs(g))))]
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        if np.max(np.abs(g)) < grad_tol:
            converged = True
            break
        H = hess(x)
        ridge = ridge0
        for _ in range(40):
            try:
                direction = np.linalg.solve(-(H - ridge * np.eye(x.size)), g)
            except np.linalg.LinAlgError:
                direction = None
            if direction is not None and float(g @ direction) > 0:
                break
            ridge = max(2.0 * ridge, 1e-8 * (1.0 + np.max(np.abs(np.diag(H)))))
        else:
            raise SingularFitError("Hessian could not be made negative definite")

        def f_only(z):
            return fun_grad(z)[0]

        predicted = 0.5 * float(g @ direction)
        if predicted < 64.0 * np.finfo(float).eps * (1.0 + abs(f)):
            # Improvement below objective precision: trust the Newton step,
            # keep it only if the gradient actually shrinks.
            f_new, g_new = fun_grad(x + direction)
            if np.isfinite(f_new) and \
                    np.max(np.abs(g_new)) < np.max(np.abs(g)):
                x, f, g = x + direction, f_new, g_new
                trace.append((it, f, float(np.max(np.abs(g)))))
                continue
            break
        step, x_new, f_new = _backtrack(f_only, x, f, g, direction)
        if step == 0.0:
            break
        _, g_new = fun_grad(x_new)
        x, f, g = x_new, f_new, g_new
        trace.append((it, f, float(np.max(np.abs(g)))))
    if not converged:
        converged = bool(np.max(np.abs(g)) < grad_tol)
    return OptimResult(x, f, g, it, converged, trace)


def fd_hessian(grad_fun, x, h=1e-5):
    """Central finite-difference Hessian of f from its analytic gradient."""
    x = np.asarray(x, dtype=float)
    n = x.size
    H = np.empty((n, n))
    for k in range(n):
        hk = h * max(1.0, abs(x[k]))
        e = np.zeros(n)
        e[k] = hk
        gp = grad_fun(x + e)
        gm = grad_fun(x - e)
        H[:, k] = (gp - gm) / (2.0 * hk)
    return 0.5 * (H + H.T)


def polish_with_newton(fun_grad, x, grad_tol=GRAD_TOL, max_iter=25, h=1e-5):
    """Newton refinement using a finite-difference Hessian of the gradient.

    Used after BFGS when the line-searched iterate is close but the gradient
    has not yet reached `grad_tol`.
    """
    def hess(z):
        return fd_hessian(lambda w: fun_grad(w)[1], z, h=h)

    return maximize_newton(fun_grad, hess, x, grad_tol=grad_tol,
                           max_iter=max_iter)


def observed_information(grad_fun, x, h=1e-5):
    """Observed information (= -Hessian of the log-likelihood) at `x`."""
    return -fd_hessian(grad_fun, x, h=h)


def invert_information(info):
    """Invert an observed-information matrix, symmetrizing the result."""
    try:
        cov = np.linalg.inv(info)
    except np.linalg.LinAlgError as exc:
        raise SingularFitError("observed information is singular") from exc
    if not np.all(np.isfinite(cov)):
        raise SingularFitError("observed information is numerically singular")
    return 0.5 * (cov + cov.T)
