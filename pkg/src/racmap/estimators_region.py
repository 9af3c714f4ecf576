"""Piecewise-constant intensity estimation on a coarse region partition.

The model: region counts are conditionally Poisson,
N_ij | a_i ~ Poisson(lambda_j * S_ij * a_i), with a shoe wear factor a_i
of mean 1 and variance sigma^2.  Three estimators are provided:

* naive: the per-region average of count/area over shoes touching the
  region, with a moment estimator for Var(a) feeding its variance;
* random effects: for a Gamma(gamma, gamma) wear law the marginal
  likelihood integrates in closed form (a negative-multinomial), so no
  quadrature is needed; a lognormal wear law falls back to adaptive
  Gauss-Hermite quadrature;
* conditional ML: conditioning on each shoe's total reduces the model to
  a multinomial whose log-likelihood is scale-invariant in lambda, so the
  fit pins the reference region at 1 and is rescaled afterwards against
  the naive fit.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import gammaln, polygamma, psi
from scipy.stats import norm

from . import optimize
from .errors import (ConvergenceError, InvalidInputError, InvalidStateError,
                     SingularFitError)

_LOG_GAMMA_MIN, _LOG_GAMMA_MAX = math.log(1e-8), math.log(1e8)


@dataclass
class RegionFit:
    """A fitted per-region intensity vector and its inference byproducts."""

    method: str
    lambda_hat: np.ndarray
    var_a_hat: float | None = None
    covariance: np.ndarray | None = None
    rescale_constant: float | None = None
    cis: list | None = None
    log_likelihood: float | None = None
    var_vector: np.ndarray | None = None
    at_boundary: np.ndarray | None = None
    undefined: np.ndarray | None = None
    s_total: np.ndarray | None = None
    m_touching: np.ndarray | None = None
    reference_cell: int | None = None
    prior: str | None = None
    var_a_clamped: bool = False

    @property
    def n_cells(self) -> int:
        return self.lambda_hat.size

    def to_dict(self) -> dict:
        def arr(a):
            return None if a is None else [
                None if (isinstance(v, float) and not np.isfinite(v)) else v
                for v in np.asarray(a).tolist()]
        return {
            "method": self.method,
            "lambda_hat": arr(self.lambda_hat),
            "var_a_hat": self.var_a_hat,
            "covariance": None if self.covariance is None
            else self.covariance.tolist(),
            "rescale_constant": self.rescale_constant,
            "cis": None if self.cis is None else [list(c) for c in self.cis],
            "log_likelihood": self.log_likelihood,
            "var_vector": arr(self.var_vector),
            "at_boundary": arr(self.at_boundary),
            "undefined": arr(self.undefined),
            "reference_cell": self.reference_cell,
            "prior": self.prior,
            "var_a_clamped": self.var_a_clamped,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def _as_matrices(shoes):
    """Stack full-coverage ShoeRecords into (m, J) area and count matrices."""
    if not shoes:
        raise InvalidInputError("need at least one shoe")
    J = shoes[0].s_area.size
    s_mat = np.empty((len(shoes), J))
    n_mat = np.empty((len(shoes), J), dtype=np.int64)
    for i, rec in enumerate(shoes):
        if rec.cell_index is not None:
            raise InvalidInputError(
                f"shoe {rec.shoe_id} is a subsample; region fits need "
                "full per-cell vectors")
        if rec.s_area.size != J:
            raise InvalidInputError("shoes disagree on the number of cells")
        s_mat[i] = rec.s_area
        n_mat[i] = rec.counts
    return s_mat, n_mat


# ---------------------------------------------------------------------------
# Naive estimator and its moment-based variance
# ---------------------------------------------------------------------------

def naive_region(shoes) -> RegionFit:
    """Average of count/area over the shoes touching each region."""
    s_mat, n_mat = _as_matrices(shoes)
    touch = s_mat > 0
    m_j = touch.sum(axis=0)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratios = np.where(touch, n_mat / np.where(touch, s_mat, 1.0), 0.0)
        lam = np.where(m_j > 0, ratios.sum(axis=0) / np.maximum(m_j, 1), np.nan)
    fit = RegionFit(method="naive", lambda_hat=lam,
                    undefined=(m_j == 0), m_touching=m_j,
                    s_total=s_mat.sum(axis=0),
                    at_boundary=np.zeros(lam.size, dtype=bool))
    var_vec, var_a, clamped = var_naive(shoes, lam)
    fit.var_vector = var_vec
    fit.var_a_hat = var_a
    fit.var_a_clamped = clamped
    fit.covariance = np.diag(np.where(np.isfinite(var_vec), var_vec, 0.0))
    return fit


def var_naive(shoes, lambda_hat):
    """Moment estimator of Var(a) and the per-region naive variance.

    Var(a) comes from U_i = (N_i^2 - N_i) / (sum_j lambda_j S_ij)^2, whose
    expectation is Var(a) + 1; negative estimates are clamped to zero and
    flagged.  Returns ``(var_vector, var_a_hat, clamped)``.
    """
    s_mat, n_mat = _as_matrices(shoes)
    lam = np.where(np.isfinite(lambda_hat), lambda_hat, 0.0)
    m = s_mat.shape[0]
    mu = s_mat @ lam
    n_i = n_mat.sum(axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        u = np.where(mu > 0, (n_i.astype(float)**2 - n_i) /
                     np.where(mu > 0, mu, 1.0)**2, 0.0)
    var_a = float(u.sum() / m - 1.0)
    clamped = var_a < 0
    if clamped:
        var_a = 0.0
    touch = s_mat > 0
    m_j = touch.sum(axis=0)
    with np.errstate(divide="ignore", invalid="ignore"):
        inv_s = np.where(touch, 1.0 / np.where(touch, s_mat, 1.0), 0.0)
        var_vec = np.where(
            m_j > 0,
            lam**2 * var_a / np.maximum(m_j, 1)
            + lam * inv_s.sum(axis=0) / np.maximum(m_j, 1)**2,
            np.nan)
    return var_vec, var_a, clamped


# ---------------------------------------------------------------------------
# Random-effects fits
# ---------------------------------------------------------------------------

def gamma_marginal_loglik(lam, gamma, s_mat, n_mat):
    """Closed-form marginal log-likelihood under a Gamma(gamma, gamma) wear law.

    Integrating the Poisson likelihood against the gamma density gives,
    per shoe, a negative-multinomial kernel:
    sum_j n_ij log(lambda_j S_ij) - log n_ij! + gamma log gamma
    - log Gamma(gamma) + log Gamma(n_i + gamma)
    - (n_i + gamma) log(gamma + sum_j lambda_j S_ij).
    """
    lam = np.asarray(lam, dtype=float)
    mu = s_mat @ lam
    n_i = n_mat.sum(axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        log_rate = np.where(n_mat > 0, np.log(
            np.where(n_mat > 0, lam[None, :] * s_mat, 1.0)), 0.0)
    ll = float(np.sum(n_mat * log_rate) - np.sum(gammaln(n_mat + 1.0)))
    ll += float(np.sum(gamma * math.log(gamma) - gammaln(gamma)
                       + gammaln(n_i + gamma)
                       - (n_i + gamma) * np.log(gamma + mu)))
    return ll


def _gamma_grad_hess(phi, psi_par, s_act, n_act, n_i, fix_gamma):
    """Gradient and Hessian in (log lambda_active, log gamma)."""
    lam = np.exp(phi)
    gam = math.exp(psi_par)
    mu = s_act @ lam
    D = gam + mu
    ncol = n_act.sum(axis=0)

    g_lam = ncol / lam - ((n_i + gam) / D) @ s_act
    g_gam = float(np.sum(math.log(gam) + 1.0 - psi(gam) + psi(n_i + gam)
                         - np.log(D) - (n_i + gam) / D))
    w2 = (n_i + gam) / D**2
    H_ll = (s_act.T * w2) @ s_act
    H_ll[np.diag_indices_from(H_ll)] -= ncol / lam**2
    H_lg = ((n_i - mu) / D**2) @ s_act
    H_gg = float(np.sum(1.0 / gam - polygamma(1, gam) + polygamma(1, n_i + gam)
                        - 1.0 / D - (mu - n_i) / D**2))

    # chain rule to log parameters
    g_phi = lam * g_lam
    H_pp = np.outer(lam, lam) * H_ll
    H_pp[np.diag_indices_from(H_pp)] += g_phi
    if fix_gamma:
        return g_phi, H_pp
    g_psi = gam * g_gam
    H_pg = lam * gam * H_lg
    H_psps = gam**2 * H_gg + g_psi
    g = np.concatenate([g_phi, [g_psi]])
    H = np.zeros((g.size, g.size))
    H[:-1, :-1] = H_pp
    H[:-1, -1] = H_pg
    H[-1, :-1] = H_pg
    H[-1, -1] = H_psps
    return g, H


def _fit_gamma(s_mat, n_mat, active, lam0, gamma0):
    s_act = s_mat[:, active]
    n_act = n_mat[:, active]
    n_i = n_mat.sum(axis=1)
    psi0 = float(np.clip(math.log(gamma0), _LOG_GAMMA_MIN, _LOG_GAMMA_MAX))

    def pack_ll(phi, psi_par):
        lam = np.zeros(s_mat.shape[1])
        lam[active] = np.exp(phi)
        return gamma_marginal_loglik(lam, math.exp(psi_par), s_mat, n_mat)

    def run(fix_gamma, psi_fixed, phi_start):
        def parked(z):
            """At a dispersion cap with an outward gradient, freeze psi."""
            psi_par = float(np.clip(z[-1], _LOG_GAMMA_MIN, _LOG_GAMMA_MAX))
            g, H = _gamma_grad_hess(z[:-1], psi_par, s_act, n_act, n_i, False)
            out_hi = z[-1] >= _LOG_GAMMA_MAX - 1e-9 and g[-1] > 0
            out_lo = z[-1] <= _LOG_GAMMA_MIN + 1e-9 and g[-1] < 0
            if out_hi or out_lo:
                g[-1] = 0.0
                H[-1, :] = 0.0
                H[:, -1] = 0.0
                H[-1, -1] = -1.0
            return psi_par, g, H

        def fun_grad(z):
            if fix_gamma:
                ll = pack_ll(z, psi_fixed)
                g, _ = _gamma_grad_hess(z, psi_fixed, s_act, n_act, n_i, True)
                return ll, g
            psi_par, g, _ = parked(z)
            return pack_ll(z[:-1], psi_par), g

        def hess(z):
            if fix_gamma:
                return _gamma_grad_hess(z, psi_fixed, s_act, n_act, n_i,
                                        True)[1]
            return parked(z)[2]

        z0 = phi_start if fix_gamma else np.concatenate([phi_start, [psi0]])
        return optimize.maximize_newton(fun_grad, hess, z0, grad_tol=1e-11,
                                        max_iter=300)

    phi0 = np.log(lam0[active])
    res = run(False, None, phi0)
    psi_hat = float(np.clip(res.x[-1], _LOG_GAMMA_MIN, _LOG_GAMMA_MAX))
    boundary = psi_hat >= _LOG_GAMMA_MAX - 1e-9 or psi_hat <= _LOG_GAMMA_MIN + 1e-9
    if boundary or not res.converged:
        # profile the rates with the dispersion pinned
        res2 = run(True, psi_hat, res.x[:-1] if res.x.size > len(phi0) else res.x)
        if not res2.converged:
            raise ConvergenceError("gamma random-effects fit did not converge",
                                   trace=res2.trace)
        phi_hat = res2.x
        ll = pack_ll(phi_hat, psi_hat)
        grad_norm = res2.grad_norm
    else:
        phi_hat = res.x[:-1]
        ll = res.fun
        grad_norm = res.grad_norm
    if grad_norm > 1e-6:
        raise ConvergenceError(
            f"gamma random-effects fit stalled (grad {grad_norm:.2e})")
    return phi_hat, psi_hat, ll, boundary


def _lognormal_loglik_grad(phi, t_par, s_act, n_act, n_i, quad_order=21):
    """AGHQ marginal log-likelihood and gradient for a lognormal wear law.

    a = exp(mu + tau z) with mu = -tau^2/2 so that E(a) = 1.
    """
    lam = np.exp(phi)
    tau = math.exp(t_par)
    mu_ln = -0.5 * tau**2
    rate = s_act @ lam                                 # (m,)
    m = rate.size

    # per-shoe mode of q(z) = n_i (mu+tau z) - rate e^{mu+tau z} - z^2/2
    zhat = np.zeros(m)
    for _ in range(60):
        a = np.exp(mu_ln + tau * zhat)
        g1 = tau * (n_i - rate * a) - zhat
        g2 = -tau**2 * rate * a - 1.0
        step = np.clip(-g1 / g2, -4.0, 4.0)
        zhat += step
        if np.max(np.abs(step)) < 1e-12:
            break
    a = np.exp(mu_ln + tau * zhat)
    sigma = 1.0 / np.sqrt(tau**2 * rate * a + 1.0)

    z, w = np.polynomial.hermite.hermgauss(quad_order)
    Z = zhat[:, None] + math.sqrt(2.0) * sigma[:, None] * z[None, :]
    A = np.exp(mu_ln + tau * Z)
    q = n_i[:, None] * (mu_ln + tau * Z) - rate[:, None] * A \
        - 0.5 * Z**2 - 0.5 * math.log(2 * math.pi)
    log_terms = np.log(w)[None, :] + z[None, :]**2 + q
    mx = log_terms.max(axis=1, keepdims=True)
    sums = np.exp(log_terms - mx).sum(axis=1)
    li = np.log(math.sqrt(2.0) * sigma) + mx[:, 0] + np.log(sums)
    with np.errstate(divide="ignore", invalid="ignore"):
        log_rate_terms = np.where(n_act > 0, np.log(
            np.where(n_act > 0, lam[None, :] * s_act, 1.0)), 0.0)
    const = float(np.sum(n_act * log_rate_terms) - np.sum(gammaln(n_act + 1.0)))
    ll = float(li.sum()) + const

    W = np.exp(log_terms - mx - np.log(sums)[:, None])
    Ea = np.sum(W * A, axis=1)
    g_lam = n_act.sum(axis=0) / lam - Ea @ s_act
    g_phi = lam * g_lam
    # d/dtau of q with mu = -tau^2/2: (n_i - rate a)(z - tau)
    g_tau = float(np.sum(W * (n_i[:, None] - rate[:, None] * A) * (Z - tau)))
    g_t = tau * g_tau
    return ll, np.concatenate([g_phi, [g_t]])


def _fit_lognormal(s_mat, n_mat, active, lam0, var0, quad_order=21):
    s_act = s_mat[:, active]
    n_act = n_mat[:, active]
    n_i = n_mat.sum(axis=1)
    tau0 = math.sqrt(math.log(1.0 + max(var0, 0.02)))

    def fun_grad(z):
        return _lognormal_loglik_grad(z[:-1], float(np.clip(z[-1], -8.0, 3.0)),
                                      s_act, n_act, n_i, quad_order)

    z0 = np.concatenate([np.log(lam0[active]), [math.log(tau0)]])
    res = optimize.maximize_bfgs(fun_grad, z0, grad_tol=1e-9)
    if res.grad_norm > 1e-9:
        res = optimize.polish_with_newton(fun_grad, res.x, grad_tol=1e-9)
    if not res.converged and res.grad_norm > 1e-6:
        raise ConvergenceError("lognormal random-effects fit did not converge",
                               trace=res.trace)
    return res


def fit_re_region(shoes, prior: str = "gamma", quad_order: int = 21) -> RegionFit:
    """Random-effects Poisson fit of the per-region intensities.

    The gamma prior (shape = rate = 1/Var(a), so E(a) = 1) admits an
    analytic marginal likelihood; the lognormal prior is integrated by
    adaptive Gauss-Hermite quadrature.  Regions with zero total count sit
    at the boundary (lambda = 0) and regions untouched by every shoe are
    undefined.
    """
    if prior not in ("gamma", "lognormal"):
        raise InvalidInputError(f"unknown prior {prior!r}")
    s_mat, n_mat = _as_matrices(shoes)
    J = s_mat.shape[1]
    if J < 2:
        raise InvalidInputError("region fits need at least two cells")
    touched = (s_mat > 0).any(axis=0)
    ncol = n_mat.sum(axis=0)
    active = touched & (ncol > 0)
    if not np.any(active):
        raise InvalidInputError("no region has positive counts")

    naive = naive_region(shoes)
    lam0 = np.where(np.isfinite(naive.lambda_hat) & (naive.lambda_hat > 0),
                    naive.lambda_hat, np.nan)
    fallback = np.nanmean(lam0)
    lam0 = np.where(np.isnan(lam0), max(fallback, 1e-6), lam0)
    var0 = naive.var_a_hat if naive.var_a_hat and naive.var_a_hat > 0 else 0.25

    lam_hat = np.zeros(J)
    lam_hat[~touched] = np.nan
    cov = np.zeros((J, J))
    idx = np.flatnonzero(active)

    if prior == "gamma":
        phi_hat, psi_hat, ll, boundary = _fit_gamma(
            s_mat, n_mat, active, lam0, 1.0 / var0)
        lam_hat[active] = np.exp(phi_hat)
        var_a = float(math.exp(-psi_hat))
        if boundary and psi_hat >= _LOG_GAMMA_MAX - 1e-9:
            var_a = 0.0
        s_act = s_mat[:, active]
        n_act = n_mat[:, active]
        n_i = n_mat.sum(axis=1)

        if boundary:
            def grad_only(phi):
                return _gamma_grad_hess(phi, psi_hat, s_act, n_act, n_i,
                                        True)[0]
            info = optimize.observed_information(grad_only, phi_hat)
            cov_phi = optimize.invert_information(info)
        else:
            def grad_only(z):
                return _gamma_grad_hess(z[:-1], z[-1], s_act, n_act, n_i,
                                        False)[0]
            info = optimize.observed_information(
                grad_only, np.concatenate([phi_hat, [psi_hat]]))
            cov_phi = optimize.invert_information(info)[:-1, :-1]
        scale = lam_hat[active]
        cov[np.ix_(idx, idx)] = cov_phi * np.outer(scale, scale)
        theta_boundary = boundary
    else:
        res = _fit_lognormal(s_mat, n_mat, active, lam0, var0, quad_order)
        lam_hat[active] = np.exp(res.x[:-1])
        tau = math.exp(float(np.clip(res.x[-1], -8.0, 3.0)))
        var_a = float(math.exp(tau**2) - 1.0)
        ll = res.fun
        s_act = s_mat[:, active]
        n_act = n_mat[:, active]
        n_i = n_mat.sum(axis=1)

        def grad_only(z):
            return _lognormal_loglik_grad(z[:-1], z[-1], s_act, n_act, n_i,
                                          quad_order)[1]
        info = optimize.observed_information(grad_only, res.x)
        cov_all = optimize.invert_information(info)[:-1, :-1]
        scale = lam_hat[active]
        cov[np.ix_(idx, idx)] = cov_all * np.outer(scale, scale)
        theta_boundary = False

    return RegionFit(method="random_effects", lambda_hat=lam_hat,
                     var_a_hat=var_a, covariance=cov, log_likelihood=ll,
                     at_boundary=touched & (ncol == 0), undefined=~touched,
                     s_total=s_mat.sum(axis=0),
                     m_touching=(s_mat > 0).sum(axis=0), prior=prior,
                     var_a_clamped=theta_boundary)


# ---------------------------------------------------------------------------
# Conditional maximum likelihood (multinomial reduction)
# ---------------------------------------------------------------------------

def cml_region_loglik(lam, s_mat, n_mat) -> float:
    """Multinomial conditional log-likelihood (up to the combinatorial term).

    sum_i sum_j n_ij [log lambda_j + log S_ij - log sum_j' S_ij' lambda_j'].
    Scale-invariant: replacing lambda by c*lambda leaves it unchanged.
    """
    lam = np.asarray(lam, dtype=float)
    mu = s_mat @ lam
    n_i = n_mat.sum(axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        lt = np.where(n_mat > 0,
                      np.log(np.where(n_mat > 0, lam[None, :] * s_mat, 1.0)),
                      0.0)
    return float(np.sum(n_mat * lt) - np.sum(n_i * np.log(mu)))


def cml_region_score(lam, s_mat, n_mat) -> np.ndarray:
    """Score vector of the conditional log-likelihood in lambda.

    Component k: sum_i [n_ik / lambda_k - n_i S_ik / sum_j S_ij lambda_j].
    """
    lam = np.asarray(lam, dtype=float)
    mu = s_mat @ lam
    n_i = n_mat.sum(axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        term1 = np.where(lam > 0, n_mat.sum(axis=0) /
                         np.where(lam > 0, lam, 1.0), np.inf)
    term2 = (n_i / mu) @ s_mat
    return term1 - term2


def fit_cml_region(shoes, grad_tol: float = 1e-11) -> RegionFit:
    """Conditional-ML fit with the reference region pinned at lambda = 1.

    Newton iteration on log-lambda using the exact multinomial Hessian.
    Regions with zero total count are boundary maxima at lambda = 0 and
    are excluded from the iteration.  The reference is region 0 when it
    has positive counts, otherwise the first region that does; the
    returned vector is normalized so the reference equals 1.
    """
    s_mat, n_mat = _as_matrices(shoes)
    m, J = s_mat.shape
    if J < 2:
        raise InvalidInputError("region fits need at least two cells")
    touched = (s_mat > 0).any(axis=0)
    ncol = n_mat.sum(axis=0)
    active = touched & (ncol > 0)
    if active.sum() < 2:
        raise InvalidInputError("fewer than two regions carry counts")
    ref = int(np.flatnonzero(active)[0])
    idx = np.flatnonzero(active)
    free = idx[idx != ref]
    n_i = n_mat.sum(axis=1)

    def assemble(eta_free):
        lam = np.zeros(J)
        lam[ref] = 1.0
        lam[free] = np.exp(eta_free)
        return lam

    def fun_grad(eta_free):
        lam = assemble(eta_free)
        mu = s_mat @ lam
        ll = cml_region_loglik(lam, s_mat, n_mat)
        pi = s_mat[:, free] * lam[free][None, :] / mu[:, None]
        g = ncol[free] - n_i @ pi
        return ll, g

    def hess(eta_free):
        lam = assemble(eta_free)
        mu = s_mat @ lam
        pi = s_mat[:, free] * lam[free][None, :] / mu[:, None]
        H = (pi.T * n_i) @ pi
        H[np.diag_indices_from(H)] -= n_i @ pi
        return H

    naive = naive_region(shoes)
    lam0 = np.where(np.isfinite(naive.lambda_hat) & (naive.lambda_hat > 0),
                    naive.lambda_hat, 1.0)
    eta0 = np.log(lam0[free] / lam0[ref])
    res = optimize.maximize_newton(fun_grad, hess, eta0, grad_tol=grad_tol,
                                   max_iter=300)
    if not res.converged:
        raise ConvergenceError("conditional ML fit did not converge",
                               trace=res.trace)
    lam_hat = assemble(res.x)
    lam_hat[~touched] = 0.0

    cov = np.zeros((J, J))
    try:
        cov_eta = optimize.invert_information(-hess(res.x))
        scale = lam_hat[free]
        cov[np.ix_(free, free)] = cov_eta * np.outer(scale, scale)
    except SingularFitError:
        cov = None
    return RegionFit(method="cml", lambda_hat=lam_hat, covariance=cov,
                     log_likelihood=res.fun,
                     at_boundary=touched & (ncol == 0), undefined=~touched,
                     s_total=s_mat.sum(axis=0),
                     m_touching=(s_mat > 0).sum(axis=0), reference_cell=ref)


def rescale_cml(fit: RegionFit, reference: RegionFit) -> RegionFit:
    """Match the CML fit's average intensity to a naive reference fit.

    The scaling constant c = mean(naive) / mean(cml) is treated as fixed:
    the covariance simply scales by c^2 and the extra variance carried by
    the naive average is not propagated.
    """
    if reference.method != "naive":
        raise InvalidInputError("rescale against a naive fit")
    if fit.lambda_hat.size != reference.lambda_hat.size:
        raise InvalidInputError("fits are on different partitions")
    ok = np.isfinite(fit.lambda_hat) & np.isfinite(reference.lambda_hat)
    ref_mean = float(np.mean(reference.lambda_hat[ok]))
    fit_mean = float(np.mean(fit.lambda_hat[ok]))
    if ref_mean == 0.0 or fit_mean == 0.0:
        raise InvalidInputError("cannot rescale: zero mean intensity")
    c = ref_mean / fit_mean
    return RegionFit(
        method=fit.method,
        lambda_hat=fit.lambda_hat * c,
        var_a_hat=fit.var_a_hat,
        covariance=None if fit.covariance is None else fit.covariance * c**2,
        rescale_constant=c,
        cis=None if fit.cis is None else [(lo * c, hi * c) for lo, hi in fit.cis],
        log_likelihood=fit.log_likelihood,
        at_boundary=fit.at_boundary,
        undefined=fit.undefined,
        s_total=fit.s_total,
        m_touching=fit.m_touching,
        reference_cell=fit.reference_cell,
        prior=fit.prior)


def region_ci(fit: RegionFit, level: float = 0.95) -> list:
    """Normal confidence intervals per region, floored at zero.

    Boundary regions (zero counts) get a one-sided exact-Poisson style
    upper bound based on total contact area; undefined regions get NaNs.
    """
    if not (0.0 < level < 1.0):
        raise InvalidInputError(f"confidence level must be in (0,1), got {level}")
    J = fit.lambda_hat.size
    if fit.var_vector is not None:
        se = np.sqrt(np.where(np.isfinite(fit.var_vector), fit.var_vector, 0.0))
    elif fit.covariance is not None:
        se = np.sqrt(np.clip(np.diag(fit.covariance), 0.0, None))
    else:
        raise InvalidStateError("fit carries no variance information")
    z = float(norm.ppf(0.5 + level / 2.0))
    cis = []
    for j in range(J):
        lam = fit.lambda_hat[j]
        if fit.undefined is not None and fit.undefined[j]:
            cis.append((math.nan, math.nan))
            continue
        if fit.at_boundary is not None and fit.at_boundary[j]:
            s_tot = fit.s_total[j] if fit.s_total is not None else 0.0
            hi = -math.log(1.0 - level) / s_tot if s_tot > 0 else math.inf
            cis.append((0.0, hi))
            continue
        lo = max(lam - z * se[j], 0.0)
        cis.append((lo, lam + z * se[j]))
    return cis
