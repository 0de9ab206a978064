"""Likelihood families: per-observation log densities and weighted MLE.

Two families are provided.  :class:`Gaussian` is the linear model with a
group-specific error variance.  :class:`NegativeBinomial` has mean
``a * exp(x @ beta)`` and size ``nu`` (variance ``mu + mu**2 / nu``).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln, digamma, polygamma

from .data import SpatialDataset

__all__ = [
    "GroupParameters",
    "Gaussian",
    "NegativeBinomial",
    "DegenerateGroupError",
    "get_family",
    "loglik",
    "weighted_mle",
    "VARIANCE_FLOOR",
    "RIDGE_JITTER",
    "NU_BOUNDS",
]

VARIANCE_FLOOR = 1e-10
# Cholesky regularization for singular Newton systems
RIDGE_JITTER = 1e-8
NU_BOUNDS = (1e-4, 1e4)


class DegenerateGroupError(ValueError):
    """Raised when a group has no positive observation weight."""


@dataclass(frozen=True, eq=False)
class GroupParameters:
    """Coefficients and scale of one group.

    ``scale`` is the error variance for the Gaussian family and the
    dispersion (size) for the negative binomial.
    """

    coefficients: np.ndarray
    scale: float

    def __post_init__(self):
        beta = np.array(self.coefficients, dtype=float).ravel()
        beta.setflags(write=False)
        scale = float(self.scale)
        if not (np.isfinite(scale) and scale > 0):
            raise ValueError(f"scale must be positive and finite, got {scale}")
        if not np.all(np.isfinite(beta)):
            raise ValueError("coefficients must be finite")
        object.__setattr__(self, "coefficients", beta)
        object.__setattr__(self, "scale", scale)

    def as_vector(self) -> np.ndarray:
        return np.append(self.coefficients, self.scale)

    def __eq__(self, other):
        return (
            isinstance(other, GroupParameters)
            and self.scale == other.scale
            and np.array_equal(self.coefficients, other.coefficients)
        )

    __hash__ = None


class Gaussian:
    name = "gaussian"

    def logpdf(self, y, eta, a, scale):
        y, eta = np.asarray(y, float), np.asarray(eta, float)
        return -0.5 * np.log(2 * np.pi * scale) - (y - eta) ** 2 / (2 * scale)

    def loglik_matrix(self, dataset: SpatialDataset, params) -> np.ndarray:
        """n x G matrix of ``log f(y_i | x_i; theta_g)``."""
        B = np.array([q.coefficients for q in params]).T
        s2 = np.array([q.scale for q in params])
        resid = dataset.response[:, None] - dataset.covariates @ B
        return -0.5 * np.log(2 * np.pi * s2) - resid**2 / (2 * s2)

    def mean(self, X, a, beta):
        return np.asarray(X, float) @ beta

    def fit(self, X, y, a, w, init=None) -> GroupParameters:
        keep = w > 0
        X, y, w = X[keep], y[keep], w[keep]
        sw = np.sqrt(w)
        # SVD least squares: exact maximizer even when the group has < p members
        beta = np.linalg.lstsq(X * sw[:, None], y * sw, rcond=None)[0]
        resid = y - X @ beta
        s2 = float(w @ resid**2 / w.sum())
        return GroupParameters(beta, max(s2, VARIANCE_FLOOR))

    def gradient(self, X, y, a, w, params: GroupParameters) -> np.ndarray:
        """Gradient of the weighted log-likelihood in (beta, variance)."""
        r = y - X @ params.coefficients
        s2 = params.scale
        g_beta = X.T @ (w * r) / s2
        g_s2 = float(w @ (r**2 / (2 * s2**2) - 0.5 / s2))
        return np.append(g_beta, g_s2)

    def coefficient_covariance(self, X, y, a, params: GroupParameters) -> np.ndarray:
        """Classical OLS covariance with the unbiased residual variance."""
        m, p = X.shape
        resid = y - X @ params.coefficients
        s2 = resid @ resid / (m - p)
        return s2 * np.linalg.inv(X.T @ X)

    def sample(self, rng, X, a, params_per_row) -> np.ndarray:
        mu = np.einsum("ij,ij->i", X, params_per_row[0])
        return mu + np.sqrt(params_per_row[1]) * rng.standard_normal(mu.shape[0])


class NegativeBinomial:
    name = "negbin"

    def logpdf(self, y, eta, a, nu):
        """NB log pmf with mean ``a * exp(eta)`` and size ``nu``."""
        y = np.asarray(y, float)
        log_mu = np.log(a) + np.asarray(eta, float)
        log_nu_mu = np.logaddexp(np.log(nu), log_mu)
        return (
            gammaln(y + nu) - gammaln(nu) - gammaln(y + 1)
            + nu * (np.log(nu) - log_nu_mu)
            + y * (log_mu - log_nu_mu)
        )

    def loglik_matrix(self, dataset: SpatialDataset, params) -> np.ndarray:
        B = np.array([q.coefficients for q in params]).T
        nu = np.array([q.scale for q in params])
        y = dataset.response[:, None]
        log_mu = np.log(dataset.offset_exposure)[:, None] + dataset.covariates @ B
        log_nu_mu = np.logaddexp(np.log(nu), log_mu)
        return (
            gammaln(y + nu) - gammaln(nu) - gammaln(y + 1)
            + nu * (np.log(nu) - log_nu_mu)
            + y * (log_mu - log_nu_mu)
        )

    def mean(self, X, a, beta):
        return np.asarray(a, float) * np.exp(np.asarray(X, float) @ beta)

    # -- pieces of the weighted log-likelihood ------------------------------

    def _objective(self, X, y, loga, w, beta, nu):
        return float(w @ self.logpdf(y, X @ beta, np.exp(loga), nu))

    def _beta_derivs(self, X, y, loga, w, beta, nu):
        mu = np.exp(loga + X @ beta)
        c = nu / (nu + mu)
        g = X.T @ (w * (y - mu) * c)
        # observed information
        h = w * mu * c * (nu + y) / (nu + mu)
        H = (X * h[:, None]).T @ X
        return g, H

    def _nu_derivs(self, y, mu, w, nu):
        r = nu + mu
        d1 = w @ (digamma(y + nu) - digamma(nu) + np.log(nu / r) + 1 - (y + nu) / r)
        d2 = w @ (polygamma(1, y + nu) - polygamma(1, nu) + 1 / nu - 2 / r + (y + nu) / r**2)
        return float(d1), float(d2)

    def gradient(self, X, y, a, w, params: GroupParameters) -> np.ndarray:
        """Gradient of the weighted log-likelihood in (beta, nu)."""
        loga = np.log(a)
        g, _ = self._beta_derivs(X, y, loga, w, params.coefficients, params.scale)
        mu = np.exp(loga + X @ params.coefficients)
        d1, _ = self._nu_derivs(y, mu, w, params.scale)
        return np.append(g, d1)

    def fit(self, X, y, a, w, init=None, tol=1e-8, max_iter=100) -> GroupParameters:
        """Alternating Newton steps on beta and log(nu).

        Observation weights act as fractional replication counts.  Stops when
        the gradient norm drops to ``tol`` or after ``max_iter`` outer
        iterations.
        """
        keep = w > 0
        X, y, w = X[keep], y[keep], w[keep]
        loga = np.log(a[keep])
        p = X.shape[1]
        lo, hi = np.log(NU_BOUNDS[0]), np.log(NU_BOUNDS[1])
        if init is not None:
            beta = init.coefficients.copy()
            t = float(np.clip(np.log(init.scale), lo, hi))
        else:
            z = np.log(y + 0.5) - loga
            Xw = X * w[:, None]
            beta = np.linalg.solve(Xw.T @ X + RIDGE_JITTER * np.eye(p), Xw.T @ z)
            t = 0.0

        obj = self._objective(X, y, loga, w, beta, np.exp(t))
        if not np.isfinite(obj):
            beta = np.zeros(p)
            beta[0] = np.log((w @ y + 0.5) / (w @ np.exp(loga)))
            obj = self._objective(X, y, loga, w, beta, np.exp(t))
        for _ in range(max_iter):
            nu = np.exp(t)
            # beta step: Newton with observed information, backtracking
            g, H = self._beta_derivs(X, y, loga, w, beta, nu)
            step = _solve_psd(H, g)
            beta, obj = _backtrack(
                lambda b: self._objective(X, y, loga, w, b, nu), beta, step, obj
            )
            # log-nu step
            mu = np.exp(loga + X @ beta)
            d1, d2 = self._nu_derivs(y, mu, w, nu)
            gt = nu * d1
            ht = nu**2 * d2 + nu * d1
            st = -gt / ht if ht < 0 else np.sign(gt) * 1.0
            st = float(np.clip(st, -5.0, 5.0))

            def f_t(tt):
                return self._objective(X, y, loga, w, beta, np.exp(tt))

            t_new, obj = _backtrack(f_t, t, st, obj, lo=lo, hi=hi)
            t = float(t_new)

            nu = np.exp(t)
            g, _ = self._beta_derivs(X, y, loga, w, beta, nu)
            d1, _ = self._nu_derivs(y, np.exp(loga + X @ beta), w, nu)
            at_bound = (t <= lo and d1 < 0) or (t >= hi and d1 > 0)
            gnorm = np.sqrt(g @ g + (0.0 if at_bound else d1 * d1))
            if gnorm <= tol:
                break
        return GroupParameters(beta, float(np.exp(t)))

    def observed_information(self, X, y, a, params: GroupParameters) -> np.ndarray:
        """(p+1) x (p+1) observed information in (beta, nu) at unit weights."""
        beta, nu = params.coefficients, params.scale
        mu = a * np.exp(X @ beta)
        w = np.ones_like(y, dtype=float)
        _, Hbb = self._beta_derivs(X, y, np.log(a), w, beta, nu)
        # d^2 l / d beta d nu
        hbn = -(X.T @ ((y - mu) * mu / (nu + mu) ** 2))
        _, d2 = self._nu_derivs(y, mu, w, nu)
        p = X.shape[1]
        info = np.empty((p + 1, p + 1))
        info[:p, :p] = Hbb
        info[:p, p] = info[p, :p] = hbn
        info[p, p] = -d2
        return info

    def coefficient_covariance(self, X, y, a, params: GroupParameters) -> np.ndarray:
        p = X.shape[1]
        return np.linalg.inv(self.observed_information(X, y, a, params))[:p, :p]

    def sample(self, rng, X, a, params_per_row) -> np.ndarray:
        beta, nu = params_per_row
        mu = a * np.exp(np.einsum("ij,ij->i", X, beta))
        return rng.negative_binomial(nu, nu / (nu + mu)).astype(float)


def _solve_psd(H, g):
    p = H.shape[0]
    try:
        L = np.linalg.cholesky(H)
    except np.linalg.LinAlgError:
        jitter = RIDGE_JITTER * max(1.0, np.abs(np.diag(H)).max())
        while True:
            try:
                L = np.linalg.cholesky(H + jitter * np.eye(p))
                break
            except np.linalg.LinAlgError:
                jitter *= 10
    return np.linalg.solve(L.T, np.linalg.solve(L, g))


def _backtrack(f, x, step, fx, lo=-np.inf, hi=np.inf, max_halvings=40):
    """Halve ``step`` until ``f`` does not decrease; returns (x, f(x))."""
    for _ in range(max_halvings):
        cand = np.clip(x + step, lo, hi)
        fc = f(cand)
        # rounding slack so steps near the optimum are not rejected
        if np.isfinite(fc) and fc >= fx - 1e-13 * abs(fx):
            return cand, fc
        step = step * 0.5
    return x, fx


_FAMILIES = {"gaussian": Gaussian, "negbin": NegativeBinomial}


def get_family(name):
    """Look up a family by name (``"gaussian"`` or ``"negbin"``); instances pass through."""
    if isinstance(name, (Gaussian, NegativeBinomial)):
        return name
    aliases = {"normal": "gaussian", "negativebinomial": "negbin", "nb": "negbin"}
    key = aliases.get(str(name).lower(), str(name).lower())
    try:
        return _FAMILIES[key]()
    except KeyError:
        raise ValueError(f"unknown family {name!r}; expected one of {sorted(_FAMILIES)}") from None


def loglik(family, y, x, a, params: GroupParameters) -> float:
    """Log density of a single observation."""
    family = get_family(family)
    eta = float(np.dot(np.asarray(x, float), params.coefficients))
    return float(family.logpdf(y, eta, a, params.scale))


def weighted_mle(family, dataset: SpatialDataset, obs_weights, init: GroupParameters | None = None) -> GroupParameters:
    """Maximize ``sum_i w_i log f(y_i | x_i; theta)`` over one group's parameters."""
    family = get_family(family)
    w = np.asarray(obs_weights, dtype=float)
    if w.shape != (dataset.n,):
        raise ValueError("obs_weights must have one entry per observation")
    if np.any(w < 0) or not np.all(np.isfinite(w)):
        raise ValueError("obs_weights must be finite and nonnegative")
    if not w.sum() > 0:
        raise DegenerateGroupError("group has no positive observation weight")
    return family.fit(dataset.covariates, dataset.response, dataset.offset_exposure, w, init=init)
