"""Synthetic spatial regression scenarios and evaluation metrics."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cholesky, LinAlgError
from scipy.spatial.distance import cdist

__all__ = [
    "GPConfig",
    "ScenarioTruth",
    "DomainError",
    "gen_locations",
    "exponential_covariance",
    "sample_gp",
    "gen_covariates",
    "scenario1_truth",
    "scenario2_truth",
    "gen_response",
    "mse",
    "mape_rmse",
    "write_scenario",
]

# region breakpoints along each axis (left-open, right-closed intervals)
S1_BREAKS = np.array([-1.0, 0.0, 1.0])
S2_BREAKS = np.array([0.0, 2.0 / 3.0, 4.0 / 3.0, 2.0])


class DomainError(ValueError):
    pass


@dataclass(frozen=True)
class GPConfig:
    """Zero-mean GP with covariance ``variance * exp(-d / range) + nugget * I``."""

    range: float
    variance: float = 1.0
    nugget: float = 1e-10

    def __post_init__(self):
        if not self.range > 0:
            raise ValueError("range must be positive")
        if not self.variance > 0:
            raise ValueError("variance must be positive")
        if self.nugget < 0:
            raise ValueError("nugget must be nonnegative")


@dataclass
class ScenarioTruth:
    locations: np.ndarray
    coefficients: np.ndarray  # n x 3: beta0, beta1, beta2
    sigma: np.ndarray
    regions: np.ndarray | None = None  # 0..5 for scenario 1

    def __post_init__(self):
        n = self.locations.shape[0]
        if self.coefficients.shape[0] != n or self.sigma.shape != (n,):
            raise ValueError("truth fields must all have length n")
        if np.any(self.sigma < 0):
            raise ValueError("sigma must be nonnegative")


def _rng(seed):
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


def gen_locations(n: int, seed=None) -> np.ndarray:
    """Uniform points on ``[-1,1] x [0,2]`` outside the half-ellipse ``s1^2 + s2^2/2 <= 1/4``."""
    if n < 1:
        raise ValueError("n must be at least 1")
    rng = _rng(seed)
    out = np.empty((0, 2))
    while out.shape[0] < n:
        need = n - out.shape[0]
        batch = max(16, int(need * 1.25) + 8)
        pts = np.column_stack([rng.uniform(-1, 1, batch), rng.uniform(0, 2, batch)])
        ok = (pts[:, 0] ** 2 + 0.5 * pts[:, 1] ** 2 > 0.25) & (pts[:, 0] > -1) & (pts[:, 1] > 0)
        out = np.vstack([out, pts[ok]])
    return out[:n]


def exponential_covariance(a, b, config: GPConfig) -> np.ndarray:
    return config.variance * np.exp(-cdist(a, b) / config.range)


def _gp_factor(locations, config: GPConfig):
    K = exponential_covariance(locations, locations, config)
    nugget = config.nugget
    while True:
        try:
            return cholesky(K + nugget * np.eye(K.shape[0]), lower=True)
        except LinAlgError:
            nugget = max(nugget * 10, 1e-10)
            if nugget > 1e-6:
                raise LinAlgError("covariance factorization failed even with nugget 1e-6") from None


def sample_gp(locations, config: GPConfig, seed=None, size: int | None = None) -> np.ndarray:
    """Draw from the GP at ``locations``; ``size`` gives that many independent draws as rows."""
    L = _gp_factor(np.asarray(locations, dtype=float), config)
    rng = _rng(seed)
    n = L.shape[0]
    if size is None:
        return L @ rng.standard_normal(n)
    return (L @ rng.standard_normal((n, size))).T


def gen_covariates(locations, eta: float, r: float = 0.75, seed=None) -> np.ndarray:
    """Two spatially correlated covariates with pointwise correlation ``r``."""
    if abs(r) > 1:
        raise ValueError("|r| must not exceed 1")
    z1, z2 = sample_gp(locations, GPConfig(range=eta), seed, size=2)
    return np.column_stack([z1, r * z1 + np.sqrt(1 - r**2) * z2])


def scenario1_truth(locations) -> ScenarioTruth:
    """Six rectangular regions with constant coefficients and noise scale."""
    locs = np.asarray(locations, dtype=float)
    j = np.searchsorted(S1_BREAKS, locs[:, 0], side="left") - 1
    k = np.searchsorted(S2_BREAKS, locs[:, 1], side="left") - 1
    bad = (j < 0) | (j > 1) | (k < 0) | (k > 2)
    if np.any(bad):
        i = int(np.flatnonzero(bad)[0])
        raise DomainError(f"location {i} at {tuple(locs[i])} lies outside every region")
    g1 = S1_BREAKS[j]
    g2 = S2_BREAKS[k]
    coefs = np.column_stack([2 * (g1 + g2), g1**2 + g2**2, -g1 - g2])
    sigma = 0.5 + 0.2 * np.abs(g1 - g2)
    return ScenarioTruth(locs, coefs, sigma, regions=j * 3 + k)


def scenario2_truth(locations, tau2: float = 2.0, seed=None) -> ScenarioTruth:
    """Independent GP coefficient fields (ranges 1, 2, 3) and a log-GP noise scale."""
    locs = np.asarray(locations, dtype=float)
    rng = _rng(seed)
    coefs = np.column_stack([
        sample_gp(locs, GPConfig(range=k + 1.0, variance=tau2), rng) for k in range(3)
    ])
    u = sample_gp(locs, GPConfig(range=3.0, variance=0.25), rng)
    return ScenarioTruth(locs, coefs, 0.2 * np.exp(u))


def gen_response(truth: ScenarioTruth, covariates, seed=None) -> np.ndarray:
    X = np.asarray(covariates, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    n = truth.locations.shape[0]
    if X.shape != (n, truth.coefficients.shape[1] - 1):
        raise ValueError("covariates do not match the truth dimensions")
    linear = truth.coefficients[:, 0] + np.einsum("ij,ij->i", X, truth.coefficients[:, 1:])
    return linear + truth.sigma * _rng(seed).standard_normal(n)


def mse(estimated, truth) -> float:
    """Mean squared error over every (location, coefficient) cell."""
    est, tru = np.asarray(estimated, float), np.asarray(truth, float)
    if est.shape != tru.shape:
        raise ValueError(f"shape mismatch: {est.shape} vs {tru.shape}")
    return float(np.mean((est - tru) ** 2))


def mape_rmse(predicted, observed) -> tuple[float, float]:
    """``(mean |yhat - y| / (y + 1), sqrt(mean (yhat - y)^2))``."""
    yhat, y = np.asarray(predicted, float), np.asarray(observed, float)
    if yhat.shape != y.shape or y.size < 1:
        raise ValueError("predicted and observed must be nonempty and equal length")
    err = yhat - y
    return float(np.mean(np.abs(err) / (y + 1))), float(np.sqrt(np.mean(err**2)))


def write_scenario(data_path, truth_path, truth: ScenarioTruth, covariates, y) -> None:
    """Write the data CSV (id,s1,s2,y,x1,...) and the truth CSV used for scoring."""
    X = np.asarray(covariates, dtype=float)
    n = truth.locations.shape[0]
    with open(data_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["id", "s1", "s2", "y"] + [f"x{k + 1}" for k in range(X.shape[1])])
        for i in range(n):
            w.writerow([i + 1, *map(repr, map(float, truth.locations[i])), repr(float(y[i])),
                        *map(repr, map(float, X[i]))])
    with open(truth_path, "w", newline="") as fh:
        w = csv.writer(fh)
        p = truth.coefficients.shape[1]
        w.writerow(["id"] + [f"beta{k}" for k in range(p)] + ["sigma", "region"])
        for i in range(n):
            region = "" if truth.regions is None else int(truth.regions[i]) + 1
            w.writerow([i + 1, *map(repr, map(float, truth.coefficients[i])),
                        repr(float(truth.sigma[i])), region])
