"""Pixel-resolution estimators of the baseline RAC intensity.

Three routes to the per-pixel rate:

* a naive per-pixel ratio of total RACs to total contact, optionally
  smoothed with a uniform moving-average kernel;
* a logistic random-effects model with a shoe-level N(0, theta^2) effect
  on the linear predictor, the marginal likelihood integrated by
  adaptive Gauss-Hermite quadrature, and a tensor-product cubic spline
  surface for the log intensity;
* conditional maximum likelihood, eliminating the shoe effect by
  conditioning on each shoe's RAC total; the per-stratum normalizing
  constant is an elementary symmetric polynomial evaluated by the exact
  subset-sum recursion, never by enumeration.

Since RACs are rare, the fitted logistic surface is reported on the
Poisson-rate scale, lambda = exp(g).

The two likelihood engines (`fit_mixed_logit`, `fit_conditional_logit`)
accept arbitrary per-stratum designs; the pixel-level entry points wrap
them with the spline design, and the simulation studies reuse them with
polynomial designs.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage
from scipy.special import expit, log_expit
from scipy.stats import norm

from . import optimize
from .errors import (ConvergenceError, InvalidInputError, InvalidStateError,
                     SingularFitError)
from .splines import SplineSpec, quantile_knots, tensor_design
from .subsampling import SubsampleMeta, full_meta

DEFAULT_QUAD_ORDER = 21


# ---------------------------------------------------------------------------
# Stratified data container
# ---------------------------------------------------------------------------

class _Packed:
    """Strata packed into flat arrays (observations contiguous by stratum)."""

    def __init__(self, y_list, X_list, offsets=None):
        if len(y_list) != len(X_list):
            raise InvalidInputError("y and X stratum lists differ in length")
        self.m = len(y_list)
        if offsets is None:
            offsets = np.zeros(self.m)
        self.offsets = np.asarray(offsets, dtype=float)
        ys, Xs, idx = [], [], []
        for i, (y, X) in enumerate(zip(y_list, X_list)):
            y = np.asarray(y, dtype=float)
            X = np.atleast_2d(np.asarray(X, dtype=float))
            if X.shape[0] != y.size:
                raise InvalidInputError(f"stratum {i}: design/outcome mismatch")
            if np.any((y != 0) & (y != 1)):
                raise InvalidInputError(f"stratum {i}: outcomes must be 0/1")
            ys.append(y)
            Xs.append(X)
            idx.append(np.full(y.size, i, dtype=np.int64))
        self.y = np.concatenate(ys) if ys else np.empty(0)
        self.X = np.vstack(Xs) if Xs else np.empty((0, 0))
        self.stratum = np.concatenate(idx) if idx else np.empty(0, dtype=np.int64)
        self.sizes = np.array([y.size for y in ys], dtype=np.int64)
        self.starts = np.concatenate(([0], np.cumsum(self.sizes)))[:-1]
        self.n1 = np.array([int(y.sum()) for y in ys], dtype=np.int64)
        self.d = self.X.shape[1]

    def eta(self, beta):
        return self.X @ beta + self.offsets[self.stratum]

    def rowsum(self, values):
        """Sum a per-observation vector within each stratum."""
        return np.bincount(self.stratum, weights=values, minlength=self.m)


# ---------------------------------------------------------------------------
# Plain logistic regression (the theta = 0 limit), by Newton iteration
# ---------------------------------------------------------------------------

def _logistic_loglik_grad(packed, beta):
    eta = packed.eta(beta)
    ll = float(np.sum(packed.y * eta + log_expit(-eta)))
    p = expit(eta)
    return ll, packed.X.T @ (packed.y - p)


def fit_logistic(packed_or_lists, X_list=None, offsets=None, max_iter=100):
    """Maximum-likelihood logistic regression with fixed offsets."""
    packed = packed_or_lists if isinstance(packed_or_lists, _Packed) \
        else _Packed(packed_or_lists, X_list, offsets)
    beta = np.zeros(packed.d)

    def fun_grad(b):
        return _logistic_loglik_grad(packed, b)

    def hess(b):
        p = expit(packed.eta(b))
        w = p * (1.0 - p)
        return -(packed.X.T * w) @ packed.X

    res = optimize.maximize_newton(fun_grad, hess, beta, max_iter=max_iter)
    if not res.converged:
        raise ConvergenceError("logistic fit did not converge", trace=res.trace)
    return res


# ---------------------------------------------------------------------------
# Mixed logistic model: adaptive Gauss-Hermite marginal likelihood
# ---------------------------------------------------------------------------

def _gh_nodes(order):
    z, w = np.polynomial.hermite.hermgauss(order)
    return z, np.log(w)


def _find_modes(packed, eta, theta, tol=1e-11, max_iter=60):
    """Per-stratum mode and curvature of log integrand over the shoe effect."""
    a = np.zeros(packed.m)
    inv_t2 = 1.0 / theta**2
    for _ in range(max_iter):
        p = expit(eta + a[packed.stratum])
        g1 = packed.rowsum(packed.y - p) - a * inv_t2
        g2 = -packed.rowsum(p * (1.0 - p)) - inv_t2
        step = np.clip(-g1 / g2, -4.0, 4.0)
        a = a + step
        if np.max(np.abs(step)) < tol:
            break
    p = expit(eta + a[packed.stratum])
    curv = packed.rowsum(p * (1.0 - p)) + inv_t2
    return a, curv


def mixed_logit_loglik_grad(packed, beta, theta, quad_order=DEFAULT_QUAD_ORDER):
    """Marginal log-likelihood and its gradient w.r.t. (beta, theta).

    The integral over the shoe effect is computed per stratum with
    Gauss-Hermite quadrature recentered at the integrand's mode and scaled
    by its curvature; the gradient differentiates under the integral and
    reuses the same nodes.
    """
    if theta < 0:
        raise InvalidInputError("theta must be non-negative")
    eta = packed.eta(beta)
    if theta < 1e-8:
        ll = float(np.sum(packed.y * eta + log_expit(-eta)))
        grad_beta = packed.X.T @ (packed.y - expit(eta))
        return ll, grad_beta, 0.0

    z, logw = _gh_nodes(quad_order)
    mode, curv = _find_modes(packed, eta, theta)
    sigma = 1.0 / np.sqrt(curv)
    A = mode[:, None] + math.sqrt(2.0) * sigma[:, None] * z[None, :]   # (m, Q)

    # log integrand at the nodes, summed within stratum
    eta_a = eta[None, :] + A[packed.stratum, :].T                       # (Q, N)
    terms = packed.y[None, :] * eta_a + log_expit(-eta_a)
    # add.reduceat needs contiguous strata, guaranteed by _Packed
    f = np.add.reduceat(terms, packed.starts, axis=1).T                 # (m, Q)
    f += -0.5 * (A / theta) ** 2 - math.log(theta) - 0.5 * math.log(2 * math.pi)

    log_terms = logw[None, :] + z[None, :] ** 2 + f
    log_mx = np.max(log_terms, axis=1, keepdims=True)
    sum_t = np.sum(np.exp(log_terms - log_mx), axis=1)
    li = np.log(math.sqrt(2.0) * sigma) + log_mx[:, 0] + np.log(sum_t)
    ll = float(np.sum(li))

    W = np.exp(log_terms - log_mx - np.log(sum_t)[:, None])             # (m, Q)
    resid = packed.y[None, :] - expit(eta_a)                            # (Q, N)
    obs_w = np.einsum("qn,qn->n", W.T[:, packed.stratum], resid)
    grad_beta = packed.X.T @ obs_w
    grad_theta = float(np.sum(W * ((A / theta) ** 2 - 1.0)) / theta)
    return ll, grad_beta, grad_theta


@dataclass
class EngineFit:
    beta: np.ndarray
    theta: float | None
    loglik: float
    covariance: np.ndarray | None
    grad_norm: float
    n_iter: int
    theta_at_boundary: bool = False
    dropped_strata: list = field(default_factory=list)


_LOG_THETA_MIN, _LOG_THETA_MAX = math.log(1e-6), math.log(1e3)


def fit_mixed_logit(y_list, X_list, offsets=None, quad_order=DEFAULT_QUAD_ORDER,
                    theta0=0.5, fix_theta=None, grad_tol=optimize.GRAD_TOL,
                    compute_cov=True) -> EngineFit:
    """Maximize the random-effects marginal likelihood over (beta, theta).

    `fix_theta` pins the random-effect standard deviation (0 gives the
    plain logistic model).  The covariance comes from the observed
    information of the marginal log-likelihood at the optimum.
    """
    keep, dropped = [], []
    offs = np.zeros(len(y_list)) if offsets is None else np.asarray(offsets, float)
    for i, y in enumerate(y_list):
        if len(y) == 0 or not np.isfinite(offs[i]):
            dropped.append(i)
        else:
            keep.append(i)
    if not keep:
        raise InvalidInputError("no usable strata")
    packed = _Packed([y_list[i] for i in keep], [X_list[i] for i in keep],
                     offs[keep])

    start = fit_logistic(packed)
    if fix_theta is not None and fix_theta < 1e-8:
        cov = None
        if compute_cov:
            def grad_only(b):
                return _logistic_loglik_grad(packed, b)[1]
            cov = optimize.invert_information(
                optimize.observed_information(grad_only, start.x))
        return EngineFit(beta=start.x, theta=0.0, loglik=start.fun,
                         covariance=cov, grad_norm=start.grad_norm,
                         n_iter=start.n_iter, dropped_strata=dropped)

    def unpack(zeta):
        return zeta[:-1], math.exp(float(np.clip(zeta[-1], _LOG_THETA_MIN,
                                                 _LOG_THETA_MAX)))

    def fun_grad(zeta):
        beta, theta = unpack(zeta)
        ll, gb, gt = mixed_logit_loglik_grad(packed, beta, theta, quad_order)
        if fix_theta is not None:
            gt = 0.0
        return ll, np.concatenate([gb, [gt * theta]])

    theta_start = theta0 if fix_theta is None else fix_theta
    z0 = np.concatenate([start.x, [math.log(max(theta_start, 1e-6))]])
    res = optimize.maximize_bfgs(fun_grad, z0, grad_tol=grad_tol)
    if res.grad_norm > grad_tol:
        res = optimize.polish_with_newton(fun_grad, res.x, grad_tol=grad_tol)
    if not res.converged and res.grad_norm > 1e-6:
        raise ConvergenceError(
            f"mixed logistic fit stalled (grad sup-norm {res.grad_norm:.2e})",
            trace=res.trace)
    beta, theta = unpack(res.x)
    boundary = bool(res.x[-1] <= _LOG_THETA_MIN + 1e-9
                    or res.x[-1] >= _LOG_THETA_MAX - 1e-9)

    cov = None
    if compute_cov:
        if fix_theta is not None or boundary:
            def grad_only(b):
                return mixed_logit_loglik_grad(packed, b, theta, quad_order)[1]
            info = optimize.observed_information(grad_only, beta)
            cov = optimize.invert_information(info)
        else:
            def grad_bt(v):
                ll, gb, gt = mixed_logit_loglik_grad(packed, v[:-1],
                                                     abs(v[-1]), quad_order)
                return np.concatenate([gb, [gt]])
            info = optimize.observed_information(
                grad_bt, np.concatenate([beta, [theta]]))
            cov = optimize.invert_information(info)[:-1, :-1]
    return EngineFit(beta=beta, theta=theta, loglik=res.fun, covariance=cov,
                     grad_norm=res.grad_norm, n_iter=res.n_iter,
                     theta_at_boundary=boundary, dropped_strata=dropped)


# ---------------------------------------------------------------------------
# Conditional logistic likelihood via the subset-sum recursion
# ---------------------------------------------------------------------------

class _CondData:
    """Strata padded to a common size for vectorized recursions.

    Padding items carry weight 0 and therefore never enter any subset, so
    elementary symmetric polynomials are unchanged.
    """

    def __init__(self, y_list, X_list, offsets=None):
        self.packed = _Packed(y_list, X_list, offsets)
        p = self.packed
        for i, (k, b) in enumerate(zip(p.n1, p.sizes)):
            if not (1 <= k < b):
                raise InvalidInputError(
                    f"stratum {i} has {k} cases of {b}: conditionally "
                    "uninformative; drop it before fitting")
        self.B = int(p.sizes.max())
        self.kmax = int(p.n1.max())
        self.m = p.m
        self.pad_mask = np.zeros((self.m, self.B), dtype=bool)
        self.eta_index = np.zeros((self.m, self.B), dtype=np.int64)
        for i in range(self.m):
            s, b = p.starts[i], p.sizes[i]
            self.eta_index[i, :b] = np.arange(s, s + b)
            self.pad_mask[i, b:] = True

    def weights(self, beta):
        """Per-stratum weights w = exp(eta - c) with pads at 0.

        Centering on the mean of the k largest linear predictors makes the
        dominant k-subset product exactly 1, so e_k never underflows.
        Returns None weights when the within-stratum spread would overflow
        exp (callers treat that as log-likelihood -inf).
        """
        p = self.packed
        eta = p.eta(beta)
        eta_pad = eta[self.eta_index]
        eta_pad[self.pad_mask] = -np.inf
        top = np.sort(eta_pad, axis=1)[:, ::-1]
        csum = np.cumsum(top, axis=1)
        center = csum[np.arange(self.m), p.n1 - 1] / p.n1
        shifted = eta_pad - center[:, None]
        if np.max(shifted) > 700.0:
            return None, center, eta
        W = np.exp(shifted)
        return W, center, eta


def _esym_all(W, kmax):
    """Elementary symmetric polynomials e_0..e_kmax of each row of W.

    Returns (E, log_scale) with true e_j = E[:, j] * exp(log_scale).
    """
    m, B = W.shape
    E = np.zeros((m, kmax + 1))
    E[:, 0] = 1.0
    scale = np.zeros(m)
    for t in range(B):
        E[:, 1:] = E[:, 1:] + W[:, t:t + 1] * E[:, :-1]
        mx = E.max(axis=1)
        big = mx > 1e250
        if np.any(big):
            E[big] /= mx[big, None]
            scale[big] += np.log(mx[big])
    return E, scale


def _esym_prefix(W, kmax):
    """Prefix polynomials P[:, t, j] = e_j(w_1..w_t), j <= kmax, with row scales."""
    m, B = W.shape
    P = np.zeros((m, B + 1, kmax + 1))
    P[:, 0, 0] = 1.0
    scales = np.zeros((m, B + 1))
    for t in range(1, B + 1):
        P[:, t, :] = P[:, t - 1, :]
        P[:, t, 1:] += W[:, t - 1:t] * P[:, t - 1, :-1]
        mx = P[:, t, :].max(axis=1)
        big = mx > 1e250
        scales[:, t] = scales[:, t - 1]
        if np.any(big):
            P[big, t, :] /= mx[big, None]
            scales[big, t] += np.log(mx[big])
    return P, scales


def _inclusion_probs(W, k_arr, kmax):
    """First-order inclusion probabilities of the conditional Bernoulli law.

    For row i with weights w and k_i selected items,
    pi_t = w_t * e_{k-1}(w without t) / e_k(w).
    Leave-one-out polynomials come from prefix/suffix decompositions.
    """
    m, B = W.shape
    E, e_scale = _esym_all(W, kmax)
    rows = np.arange(m)
    if np.any(E[rows, k_arr] == 0.0):
        # numerical collapse at an extreme trial point
        return None, None
    P, ps = _esym_prefix(W, kmax)
    S, ss = _esym_prefix(W[:, ::-1], kmax)

    log_ek = np.log(E[rows, k_arr]) + e_scale

    pi = np.zeros((m, B))
    # e_{k-1}^{(-t)} = sum_u P[t-1][u] * S_rev[t+1][k-1-u], where S over the
    # reversed row gives suffix polynomials: suffix after t = prefix of
    # reversed row of length B - t.
    for i in range(m):
        k = int(k_arr[i])
        Pu = P[i, 0:B, :k]                      # prefix before item t (t=1..B)
        Su = S[i, B - 1::-1, :k]                # suffix after item t
        dot = np.einsum("tu,tu->t", Pu, Su[:, ::-1])
        with np.errstate(divide="ignore", invalid="ignore"):
            logpi = np.log(W[i]) + np.log(dot) + ps[i, 0:B] \
                + ss[i, B - 1::-1] - log_ek[i]
        pi[i] = np.exp(logpi)
    pi[W == 0.0] = 0.0
    return pi, log_ek


def conditional_loglik(y_list, X_list, beta, offsets=None):
    """Stratified conditional log-likelihood at `beta` (no fitting)."""
    data = _CondData(y_list, X_list, offsets)
    return _cond_loglik_grad(data, np.asarray(beta, float), need_grad=False)[0]


def conditional_score(y_list, X_list, beta, offsets=None):
    """Gradient of the conditional log-likelihood at `beta`."""
    data = _CondData(y_list, X_list, offsets)
    return _cond_loglik_grad(data, np.asarray(beta, float), need_grad=True)[1]


def _cond_loglik_grad(data, beta, need_grad=True):
    p = data.packed
    W, center, eta = data.weights(beta)
    k = p.n1
    if W is None:
        return -math.inf, np.zeros(p.d) if need_grad else None
    if need_grad:
        pi, log_ek = _inclusion_probs(W, k, data.kmax)
        if pi is None:
            return -math.inf, np.zeros(p.d)
        resid = np.zeros(p.y.size)
        # unpad back to flat observation order
        for i in range(data.m):
            b = p.sizes[i]
            resid[p.starts[i]:p.starts[i] + b] = p.y[p.starts[i]:p.starts[i] + b] \
                - pi[i, :b]
        grad = p.X.T @ resid
    else:
        E, e_scale = _esym_all(W, data.kmax)
        if np.any(E[np.arange(data.m), k] == 0.0):
            return -math.inf, None
        log_ek = np.log(E[np.arange(data.m), k]) + e_scale
        grad = None
    # log numerator: sum_j y_j eta_j; log denominator: k*center + log e_k
    ll = float(np.sum(p.y * eta) - np.sum(k * center + log_ek))
    return ll, grad


def fit_conditional_logit(y_list, X_list, offsets=None,
                          grad_tol=optimize.GRAD_TOL, compute_cov=True,
                          drop_uninformative=True) -> EngineFit:
    """Conditional maximum likelihood for stratified binary outcomes.

    Strata with zero cases or all cases carry no conditional information
    and are dropped (recorded in ``dropped_strata``).  The design must not
    contain an intercept column; any stratum-constant covariate is not
    identified.
    """
    y_keep, X_keep, offs_keep, dropped = [], [], [], []
    offs = np.zeros(len(y_list)) if offsets is None else np.asarray(offsets, float)
    for i, y in enumerate(y_list):
        y = np.asarray(y)
        k = int(np.sum(y))
        if 1 <= k < y.size:
            y_keep.append(y)
            X_keep.append(X_list[i])
            offs_keep.append(offs[i])
        else:
            dropped.append(i)
    if not y_keep:
        raise InvalidInputError("every stratum is conditionally uninformative")
    if dropped and not drop_uninformative:
        raise InvalidInputError(f"uninformative strata present: {dropped}")
    data = _CondData(y_keep, X_keep, np.asarray(offs_keep))

    def fun_grad(b):
        return _cond_loglik_grad(data, b)

    res = optimize.maximize_bfgs(fun_grad, np.zeros(data.packed.d),
                                 grad_tol=grad_tol)
    if res.grad_norm > grad_tol:
        res = optimize.polish_with_newton(fun_grad, res.x, grad_tol=grad_tol)
    if not res.converged and res.grad_norm > 1e-6:
        raise ConvergenceError(
            f"conditional logistic fit stalled (grad sup-norm "
            f"{res.grad_norm:.2e})", trace=res.trace)
    cov = None
    if compute_cov:
        def grad_only(b):
            return _cond_loglik_grad(data, b)[1]
        info = optimize.observed_information(grad_only, res.x)
        cov = optimize.invert_information(info)
    return EngineFit(beta=res.x, theta=None, loglik=res.fun, covariance=cov,
                     grad_norm=res.grad_norm, n_iter=res.n_iter,
                     dropped_strata=dropped)


# ---------------------------------------------------------------------------
# Pixel-level estimators
# ---------------------------------------------------------------------------

@dataclass
class PixelFit:
    """A fitted per-pixel intensity surface plus its inference byproducts."""

    method: str
    lambda_hat: np.ndarray
    spline: SplineSpec | None = None
    sigma_hat: float | None = None
    covariance: np.ndarray | None = None
    log_likelihood: float | None = None
    sample_meta: SubsampleMeta | None = None
    var_a: float | None = None
    n_touching: np.ndarray | None = None
    intercept_identified: bool = True
    rescale_constant: float | None = None
    theta_at_boundary: bool = False
    dropped_shoes: list = field(default_factory=list)

    @property
    def grid(self):
        return self.lambda_hat.shape

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "grid": list(self.lambda_hat.shape),
            "lambda_hat": [[None if not np.isfinite(v) else float(v) for v in row]
                           for row in self.lambda_hat],
            "spline": self.spline.to_dict() if self.spline else None,
            "sigma_hat": self.sigma_hat,
            "covariance": None if self.covariance is None
            else self.covariance.tolist(),
            "log_likelihood": self.log_likelihood,
            "sample_meta": self.sample_meta.to_dict() if self.sample_meta else None,
            "var_a": self.var_a,
            "intercept_identified": self.intercept_identified,
            "rescale_constant": self.rescale_constant,
            "theta_at_boundary": self.theta_at_boundary,
            "dropped_shoes": list(self.dropped_shoes),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def _pixel_matrices(shoes, grid):
    """Accumulate sum(n) and sum(S) matrices from pixel ShoeRecords."""
    height, width = grid
    J = height * width
    sum_n = np.zeros(J)
    sum_s = np.zeros(J)
    per_shoe = []
    for rec in shoes:
        if rec.cell_index is None:
            if rec.counts.size != J:
                raise InvalidInputError(
                    f"shoe {rec.shoe_id}: expected {J} pixel cells, "
                    f"got {rec.counts.size}")
            sum_n += rec.counts
            sum_s += rec.s_area
        else:
            sum_n[rec.cell_index] += rec.counts
            sum_s[rec.cell_index] += rec.s_area
        per_shoe.append(rec)
    return sum_n, sum_s, per_shoe


def naive_pixel(shoes, grid) -> PixelFit:
    """Per-pixel ratio of total RACs to the number of shoes with contact.

    Pixels never touched by any shoe are undefined and reported as NaN.
    Also computes the moment estimator of the shoe-effect variance used
    by the naive confidence intervals.
    """
    shoes = list(shoes)
    if not shoes:
        raise InvalidInputError("need at least one shoe")
    height, width = grid
    sum_n, sum_s, _ = _pixel_matrices(shoes, grid)
    with np.errstate(divide="ignore", invalid="ignore"):
        lam = np.where(sum_s > 0, sum_n / np.where(sum_s > 0, sum_s, 1.0), np.nan)

    lam_filled = np.where(np.isnan(lam), 0.0, lam)
    u_sum = 0.0
    m = len(shoes)
    for rec in shoes:
        if rec.cell_index is None:
            denom = float(lam_filled @ rec.s_area)
        else:
            denom = float(lam_filled[rec.cell_index] @ rec.s_area)
        n_i = rec.total
        u_sum += (n_i**2 - n_i) / denom**2 if denom > 0 else 0.0
    var_a = u_sum / m - 1.0
    if var_a < 0:
        var_a = 0.0
    return PixelFit(method="naive",
                    lambda_hat=lam.reshape(height, width),
                    n_touching=sum_s.reshape(height, width),
                    var_a=float(var_a),
                    sample_meta=full_meta([r.shoe_id for r in shoes]))


def kernel_smooth(lam: np.ndarray, half_width: int = 10) -> np.ndarray:
    """Uniform moving-average smoothing that ignores undefined entries.

    Every entry becomes the mean of the defined entries inside its
    (2*half_width+1)^2 window; windows are clipped at the matrix edges and
    NaN inputs are excluded from both numerator and denominator.
    """
    if half_width < 0:
        raise InvalidInputError("half_width must be >= 0")
    if half_width == 0:
        return lam.copy()
    lam = np.asarray(lam, dtype=float)
    defined = np.isfinite(lam)
    vals = np.where(defined, lam, 0.0)
    size = 2 * half_width + 1
    num = ndimage.uniform_filter(vals, size=size, mode="constant", cval=0.0)
    den = ndimage.uniform_filter(defined.astype(float), size=size,
                                 mode="constant", cval=0.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(den > 0, num / np.where(den > 0, den, 1.0), np.nan)
    return out


def pixel_unit_coords(cell_ids, grid):
    """Unit-square coordinates of pixel centers (x right, y down from top)."""
    height, width = grid
    rows, cols = np.divmod(np.asarray(cell_ids, dtype=np.int64), width)
    return (cols + 0.5) / width, (rows + 0.5) / height


def _resolve_knots(shoes, grid, spline_knots):
    """Turn knot counts into quantile-placed knots over contact pixels."""
    kx, ky = spline_knots
    if np.ndim(kx) > 0 or np.ndim(ky) > 0:
        return np.asarray(kx, dtype=float), np.asarray(ky, dtype=float)
    xs, ys = [], []
    for rec in shoes:
        ids = rec.cell_index if rec.cell_index is not None \
            else np.flatnonzero(rec.s_area > 0)
        ux, uy = pixel_unit_coords(ids, grid)
        xs.append(ux)
        ys.append(uy)
    allx = np.concatenate(xs)
    ally = np.concatenate(ys)
    return quantile_knots(allx, int(kx)), quantile_knots(ally, int(ky))


def _spline_strata(shoes, grid, knots_x, knots_y, meta, drop_intercept):
    """Per-shoe (y, design, offset) triples on the tensor spline basis."""
    y_list, X_list, offs, kept_ids, dropped = [], [], [], [], []
    for rec in shoes:
        ids = rec.cell_index if rec.cell_index is not None \
            else np.flatnonzero(rec.s_area > 0)
        counts = rec.counts if rec.cell_index is not None else rec.counts[ids]
        if np.any(counts > 1):
            raise InvalidInputError(
                f"shoe {rec.shoe_id}: counts exceed 1; binarize first")
        off = meta.offset(rec.shoe_id) if meta is not None else 0.0
        if ids.size == 0 or not np.isfinite(off):
            dropped.append(rec.shoe_id)
            continue
        ux, uy = pixel_unit_coords(ids, grid)
        X = tensor_design(ux, uy, knots_x, knots_y)
        if drop_intercept:
            X = X[:, 1:]
        y_list.append(counts.astype(float))
        X_list.append(X)
        offs.append(off)
        kept_ids.append(rec.shoe_id)
    if not y_list:
        raise InvalidInputError("no usable shoes after filtering")
    return y_list, X_list, np.array(offs), kept_ids, dropped


def _surface_matrix(spec: SplineSpec, grid):
    height, width = grid
    ux, uy = pixel_unit_coords(np.arange(height * width), grid)
    g = tensor_design(ux, uy, spec.knots_x, spec.knots_y) @ spec.beta
    return np.exp(g).reshape(height, width)


def fit_re_pixel(shoes, grid, spline_knots=(3, 5),
                 quadrature_order=DEFAULT_QUAD_ORDER,
                 subsample: SubsampleMeta | None = None,
                 fix_theta=None) -> PixelFit:
    """Random-effects logistic fit of the spline intensity surface.

    `shoes` are binarized pixel records, usually the retained part of a
    case-control subsample whose meta supplies the per-shoe offsets.
    `spline_knots` may be counts (placed at coordinate quantiles of the
    supplied contact pixels) or explicit knot arrays.
    """
    shoes = list(shoes)
    knots_x, knots_y = _resolve_knots(shoes, grid, spline_knots)
    y_list, X_list, offs, kept, dropped = _spline_strata(
        shoes, grid, knots_x, knots_y, subsample, drop_intercept=False)
    fit = fit_mixed_logit(y_list, X_list, offs, quad_order=quadrature_order,
                          fix_theta=fix_theta)
    spec = SplineSpec(knots_x=knots_x, knots_y=knots_y, beta=fit.beta)
    dropped += [kept[i] for i in fit.dropped_strata]
    return PixelFit(method="random_effects",
                    lambda_hat=_surface_matrix(spec, grid),
                    spline=spec, sigma_hat=fit.theta,
                    covariance=fit.covariance,
                    log_likelihood=fit.loglik,
                    sample_meta=subsample or full_meta([r.shoe_id for r in shoes]),
                    theta_at_boundary=fit.theta_at_boundary,
                    dropped_shoes=dropped)


def fit_cml_pixel(shoes, grid, spline_knots=(3, 5),
                  subsample: SubsampleMeta | None = None) -> PixelFit:
    """Conditional-ML fit of the spline surface (intercept unidentified).

    The global intercept drops out of the conditional likelihood; the
    returned spline stores 0 in its place and the fit is flagged, so the
    surface is known up to a multiplicative constant.
    """
    shoes = list(shoes)
    knots_x, knots_y = _resolve_knots(shoes, grid, spline_knots)
    y_list, X_list, offs, kept, dropped = _spline_strata(
        shoes, grid, knots_x, knots_y, subsample, drop_intercept=True)
    fit = fit_conditional_logit(y_list, X_list, offs)
    beta_full = np.concatenate([[0.0], fit.beta])
    spec = SplineSpec(knots_x=knots_x, knots_y=knots_y, beta=beta_full)
    d = beta_full.size
    cov_full = np.zeros((d, d))
    if fit.covariance is not None:
        cov_full[1:, 1:] = fit.covariance
    dropped += [kept[i] for i in fit.dropped_strata]
    return PixelFit(method="cml",
                    lambda_hat=_surface_matrix(spec, grid),
                    spline=spec, covariance=cov_full,
                    log_likelihood=fit.loglik,
                    sample_meta=subsample or full_meta([r.shoe_id for r in shoes]),
                    intercept_identified=False,
                    dropped_shoes=dropped)


def rescale_pixel_cml(fit: PixelFit, reference: PixelFit) -> PixelFit:
    """Scale a pixel CML surface so its mean matches a naive reference.

    The analogue of the region-level rescaling; the constant is treated
    as fixed, so the covariance of the log-surface coefficients is
    unchanged apart from the intercept shift.
    """
    ref = reference.lambda_hat
    ok = np.isfinite(ref)
    ref_mean = float(np.nanmean(ref[ok]))
    fit_mean = float(np.mean(fit.lambda_hat[ok]))
    if ref_mean <= 0 or fit_mean <= 0:
        raise InvalidInputError("cannot rescale against a zero-mean fit")
    c = ref_mean / fit_mean
    spec = fit.spline
    new_beta = spec.beta.copy()
    new_beta[0] += math.log(c)
    new_spec = SplineSpec(knots_x=spec.knots_x, knots_y=spec.knots_y,
                          beta=new_beta, centering=spec.centering)
    return PixelFit(method=fit.method, lambda_hat=fit.lambda_hat * c,
                    spline=new_spec, sigma_hat=fit.sigma_hat,
                    covariance=fit.covariance,
                    log_likelihood=fit.log_likelihood,
                    sample_meta=fit.sample_meta,
                    intercept_identified=fit.intercept_identified,
                    rescale_constant=c, dropped_shoes=fit.dropped_shoes)


def pointwise_ci(fit: PixelFit, level: float = 0.95, at=None):
    """Pointwise confidence intervals for the intensity surface.

    Spline fits get a delta-method interval on the linear predictor,
    exponentiated; naive fits use the moment-estimator variance.  Points
    are (x, y) in unit-square coordinates.
    """
    if not (0.0 < level < 1.0):
        raise InvalidInputError(f"confidence level must be in (0,1), got {level}")
    if at is None:
        raise InvalidInputError("supply evaluation points `at`")
    z = float(norm.ppf(0.5 + level / 2.0))
    pts = [(float(x), float(y)) for x, y in at]
    out = []
    if fit.spline is not None:
        if fit.covariance is None:
            raise InvalidStateError("fit carries no covariance")
        for x, y in pts:
            row = fit.spline.design_row(x, y)[0]
            g = float(row @ fit.spline.beta)
            var = float(row @ fit.covariance @ row)
            se = math.sqrt(max(var, 0.0))
            out.append((math.exp(g - z * se), math.exp(g + z * se)))
        return out
    if fit.method != "naive":
        raise InvalidStateError("no interval construction for this fit")
    if fit.var_a is None or fit.n_touching is None:
        raise InvalidStateError("naive fit is missing variance ingredients")
    height, width = fit.grid
    for x, y in pts:
        col = min(int(x * width), width - 1)
        row_i = min(int(y * height), height - 1)
        lam = fit.lambda_hat[row_i, col]
        m_j = fit.n_touching[row_i, col]
        if not np.isfinite(lam) or m_j <= 0:
            out.append((math.nan, math.nan))
            continue
        var = (lam**2 * fit.var_a + lam) / m_j
        se = math.sqrt(var)
        out.append((lam - z * se, lam + z * se))
    return out
