"""Interpolation to unsampled locations, response prediction and standard errors."""

from __future__ import annotations

import itertools
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np
from scipy.optimize import linear_sum_assignment

from .data import CrossWeights, SpatialDataset, SpatialWeights
from .fit import FitResult, scr_fit, sfcr_fit
from .likelihoods import get_family

__all__ = [
    "StandardErrors",
    "BootstrapError",
    "predict_assignment",
    "predict_fuzzy",
    "predict_response",
    "plug_in_se",
    "bootstrap_se",
    "align_labels",
]


class BootstrapError(RuntimeError):
    """Too many bootstrap replicates failed to converge."""


@dataclass
class StandardErrors:
    """Per-group coefficient standard errors.

    ``se`` is G x p; rows of unavailable groups are NaN and listed in
    ``unavailable``.
    """

    se: np.ndarray
    method: str
    B: int = 0
    unavailable: tuple = ()
    dropped: int = 0
    covariate_names: tuple = ()

    def to_dict(self) -> dict:
        names = list(self.covariate_names) or [f"b{k}" for k in range(self.se.shape[1])]
        groups = {}
        for g, row in enumerate(self.se):
            groups[str(g + 1)] = (
                None if g in self.unavailable else dict(zip(names, map(float, row)))
            )
        return {"method": self.method, "B": self.B, "dropped": self.dropped, "groups": groups}

    def to_json(self, **kwargs) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, **kwargs)


def _check_cross(fit: FitResult, cross: CrossWeights):
    W = cross.matrix
    if W.shape[1] != fit.labels.shape[0]:
        raise ValueError(f"cross weights have {W.shape[1]} columns but the fit has {fit.labels.shape[0]} locations")
    empty = np.flatnonzero(np.diff(W.indptr) == 0)
    if empty.size:
        raise ValueError(f"cross-weight row {empty[0]} has no nonzero entry")
    return W


def _votes(fit: FitResult, cross: CrossWeights) -> np.ndarray:
    W = _check_cross(fit, cross)
    onehot = np.zeros((fit.labels.shape[0], fit.G))
    onehot[np.arange(fit.labels.shape[0]), fit.labels] = 1.0
    return W @ onehot


def predict_assignment(fit: FitResult, cross: CrossWeights) -> np.ndarray:
    """Weighted neighbour vote for each new location (0-based; ties to the lower group)."""
    return np.argmax(_votes(fit, cross), axis=1)


def predict_fuzzy(fit: FitResult, cross: CrossWeights, phi: float | None = None,
                  delta: float | None = None):
    """Soft memberships and smoothed coefficients at new locations.

    Returns ``(probs, coefficients)`` with shapes m x G and m x p.  ``phi``
    and ``delta`` default to the values the fit used.
    """
    phi = fit.config.phi if phi is None else phi
    delta = fit.config.delta if delta is None else delta
    scores = delta * phi * _votes(fit, cross)
    scores -= scores.max(axis=1, keepdims=True)
    probs = np.exp(scores)
    probs /= probs.sum(axis=1, keepdims=True)
    return probs, probs @ fit.coefficients


def predict_response(fit: FitResult, cross: CrossWeights, new_covariates, new_exposure=None,
                     mode: str = "hard") -> np.ndarray:
    """Plug-in conditional mean at new locations.

    ``new_covariates`` must include the intercept column.
    """
    X = np.atleast_2d(np.asarray(new_covariates, dtype=float))
    if X.shape[1] != fit.coefficients.shape[1]:
        raise ValueError(f"expected {fit.coefficients.shape[1]} covariate columns, got {X.shape[1]}")
    if mode == "hard":
        beta = fit.coefficients[predict_assignment(fit, cross)]
    elif mode == "fuzzy":
        beta = predict_fuzzy(fit, cross)[1]
    else:
        raise ValueError(f"unknown mode {mode!r}")
    eta = np.einsum("ij,ij->i", X, beta)
    if fit.family == "negbin":
        if new_exposure is None:
            raise ValueError("the negative binomial family needs exposure for prediction")
        return np.asarray(new_exposure, dtype=float) * np.exp(eta)
    return eta


def plug_in_se(fit: FitResult, dataset: SpatialDataset, family=None) -> StandardErrors:
    """Per-group SEs treating the estimated memberships as known.

    Gaussian groups use the classical OLS formula with the unbiased residual
    variance; negative binomial groups invert the observed information.
    Groups with no more members than coefficients are reported unavailable.
    """
    family = get_family(family or fit.family)
    p = dataset.p
    se = np.full((fit.G, p), np.nan)
    unavailable = []
    for g, q in enumerate(fit.params):
        rows = np.flatnonzero(fit.labels == g)
        if rows.size <= p:
            unavailable.append(g)
            continue
        X, y = dataset.covariates[rows], dataset.response[rows]
        a = dataset.offset_exposure[rows]
        try:
            cov = family.coefficient_covariance(X, y, a, q)
        except np.linalg.LinAlgError:
            unavailable.append(g)
            continue
        se[g] = np.sqrt(np.clip(np.diag(cov), 0, None))
    return StandardErrors(se, "plug-in", unavailable=tuple(unavailable),
                          covariate_names=dataset.covariate_names)


def align_labels(reference: np.ndarray, labels: np.ndarray, G: int) -> np.ndarray:
    """Permutation ``perm`` minimizing Hamming distance of ``perm[labels]`` to ``reference``."""
    C = np.zeros((G, G))
    np.add.at(C, (labels, reference), 1)
    if G <= 8:
        best, best_score = None, -1.0
        for perm in itertools.permutations(range(G)):
            score = C[np.arange(G), perm].sum()
            if score > best_score:
                best, best_score = perm, score
        return np.array(best)
    rows, cols = linear_sum_assignment(-C)
    perm = np.empty(G, dtype=np.int64)
    perm[rows] = cols
    return perm


def bootstrap_se(fit: FitResult, dataset: SpatialDataset, family=None,
                 weights: SpatialWeights | None = None, B: int = 100, seed: int = 0,
                 n_jobs: int = 1, max_failure_rate: float = 0.2) -> StandardErrors:
    """Parametric bootstrap SEs of the group coefficients.

    Each replicate draws ``y*`` from the fitted model at the fitted labels,
    refits with the same mode, G and configuration (seed ``seed + b``),
    aligns replicate groups to the original by minimal Hamming distance and
    records the coefficients.  Non-converged replicates are dropped; if more
    than ``max_failure_rate`` of them fail a :class:`BootstrapError` is raised.
    """
    if B < 2:
        raise ValueError("B must be at least 2")
    if weights is None:
        raise ValueError("bootstrap refits need the spatial weights")
    family = get_family(family or fit.family)
    fitter = scr_fit if fit.mode == "scr" else sfcr_fit
    beta_rows = fit.coefficients[fit.labels]
    scale_rows = fit.scales[fit.labels]

    def replicate(b):
        rng = np.random.default_rng(seed + b)
        y_star = family.sample(rng, dataset.covariates, dataset.offset_exposure,
                               (beta_rows, scale_rows))
        cfg = replace(fit.config, seed=fit.config.seed + b)
        refit = fitter(dataset.with_response(y_star), family, weights, fit.G, cfg)
        if not refit.converged:
            return None
        perm = align_labels(fit.labels, refit.labels, fit.G)
        coefs = np.empty_like(refit.coefficients)
        coefs[perm] = refit.coefficients
        return coefs

    if n_jobs > 1:
        with ThreadPoolExecutor(n_jobs) as pool:
            reps = list(pool.map(replicate, range(B)))
    else:
        reps = [replicate(b) for b in range(B)]
    kept = [r for r in reps if r is not None]
    dropped = B - len(kept)
    if dropped > max_failure_rate * B:
        raise BootstrapError(f"{dropped} of {B} bootstrap replicates did not converge")
    if len(kept) < 2:
        raise BootstrapError(f"only {len(kept)} usable bootstrap replicates")
    se = np.std(np.stack(kept), axis=0, ddof=1)
    return StandardErrors(se, "bootstrap", B=B, dropped=dropped,
                          covariate_names=dataset.covariate_names)
