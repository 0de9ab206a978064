"""Spatially clustered regression: hard (SCR) and fuzzy (SFCR) fitting.

Both estimators maximize

    Q(theta, g) = sum_i log f(y_i | x_i; theta_{g_i}) + phi * sum_{i<j} w_ij [g_i == g_j]

by alternating group-wise maximum likelihood with membership updates.
Labels are 0-based in the Python API and 1-based in serialized output.
"""

from __future__ import annotations

import json
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np
from scipy.cluster.vq import kmeans2

from . import _kernels
from .data import SpatialDataset, SpatialWeights
from .likelihoods import GroupParameters, get_family

__all__ = [
    "FitConfig",
    "FitResult",
    "potts_penalty",
    "penalized_objective",
    "loglik_matrix",
    "update_memberships",
    "fuzzy_probs",
    "init_assignment",
    "scr_fit",
    "sfcr_fit",
    "information_criterion",
    "select_groups",
    "parameter_dimension",
]

SCHEMA_VERSION = 1


@dataclass(frozen=True)
class FitConfig:
    """Tuning and control settings shared by SCR and SFCR.

    ``membership_update`` is ``"sequential"`` (site-by-site, monotone in Q)
    or ``"synchronous"`` (all sites against the previous labels).
    """

    phi: float = 1.0
    delta: float = 1.0
    tol: float = 1e-6
    max_iterations: int = 500
    restarts: int = 10
    seed: int = 0
    init_strategy: str = "coordinate-kmeans"
    membership_update: str = "sequential"

    def __post_init__(self):
        if self.phi < 0:
            raise ValueError("phi must be nonnegative")
        if not self.delta > 0:
            raise ValueError("delta must be positive")
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be at least 1")
        if self.restarts < 1:
            raise ValueError("restarts must be at least 1")
        if self.init_strategy not in ("coordinate-kmeans", "random"):
            raise ValueError(f"unknown init_strategy {self.init_strategy!r}")
        if self.membership_update not in ("sequential", "synchronous"):
            raise ValueError(f"unknown membership_update {self.membership_update!r}")


@dataclass
class FitResult:
    mode: str
    family: str
    G: int
    params: list
    labels: np.ndarray
    fuzzy: np.ndarray | None
    objective_trace: list
    objective: float
    loglik: float
    ic: float
    iterations: int
    converged: bool
    per_location_coefficients: np.ndarray
    empty_groups: list
    config: FitConfig
    restart: int = 0
    locations: np.ndarray | None = None
    ids: tuple = ()
    covariate_names: tuple = ()
    n_obs: int = 0
    ic_table: dict = field(default_factory=dict)
    covariates: np.ndarray | None = None
    weights_spec: str = ""

    @property
    def coefficients(self) -> np.ndarray:
        """G x p matrix of group coefficients."""
        return np.array([q.coefficients for q in self.params])

    @property
    def scales(self) -> np.ndarray:
        return np.array([q.scale for q in self.params])

    # -- serialization ------------------------------------------------------

    def to_dict(self) -> dict:
        names = list(self.covariate_names)
        groups = [
            {
                "group": g + 1,
                "coefficients": dict(zip(names, map(float, q.coefficients))),
                "scale": q.scale,
                "size": int(np.sum(self.labels == g)),
                "empty": g in self.empty_groups,
            }
            for g, q in enumerate(self.params)
        ]
        locs = []
        for i in range(self.labels.shape[0]):
            row = {
                "id": self.ids[i] if self.ids else str(i + 1),
                "label": int(self.labels[i]) + 1,
                "coefficients": [float(v) for v in self.per_location_coefficients[i]],
            }
            if self.locations is not None:
                row["s1"], row["s2"] = (float(v) for v in self.locations[i])
            if self.fuzzy is not None:
                row["pi"] = [float(v) for v in self.fuzzy[i]]
            if self.covariates is not None:
                row["x"] = [float(v) for v in self.covariates[i]]
            locs.append(row)
        return {
            "schema_version": SCHEMA_VERSION,
            "mode": self.mode,
            "family": self.family,
            "G": self.G,
            "n": int(self.labels.shape[0]),
            "covariate_names": names,
            "groups": groups,
            "locations": locs,
            "ic": self.ic,
            "ic_table": {str(k): v for k, v in sorted(self.ic_table.items())},
            "loglik": self.loglik,
            "objective": self.objective,
            "objective_trace": [float(v) for v in self.objective_trace],
            "iterations": self.iterations,
            "converged": self.converged,
            "restart": self.restart,
            "config": asdict(self.config),
            "seed": self.config.seed,
            "weights": self.weights_spec,
        }

    def to_json(self, **kwargs) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, **kwargs)

    @classmethod
    def from_dict(cls, d: dict) -> "FitResult":
        names = tuple(d["covariate_names"])
        params = [
            GroupParameters([g["coefficients"][k] for k in names], g["scale"]) for g in d["groups"]
        ]
        locs = d["locations"]
        labels = np.array([r["label"] - 1 for r in locs], dtype=np.int64)
        fuzzy = np.array([r["pi"] for r in locs]) if locs and "pi" in locs[0] else None
        coords = np.array([[r["s1"], r["s2"]] for r in locs]) if locs and "s1" in locs[0] else None
        X = np.array([r["x"] for r in locs]) if locs and "x" in locs[0] else None
        return cls(
            mode=d["mode"],
            family=d["family"],
            G=d["G"],
            params=params,
            labels=labels,
            fuzzy=fuzzy,
            objective_trace=list(d["objective_trace"]),
            objective=d["objective"],
            loglik=d["loglik"],
            ic=d["ic"],
            iterations=d["iterations"],
            converged=d["converged"],
            per_location_coefficients=np.array([r["coefficients"] for r in locs]),
            empty_groups=[g["group"] - 1 for g in d["groups"] if g["empty"]],
            config=FitConfig(**d["config"]),
            restart=d.get("restart", 0),
            locations=coords,
            ids=tuple(r["id"] for r in locs),
            covariate_names=names,
            n_obs=d["n"],
            ic_table={int(k): v for k, v in d.get("ic_table", {}).items()},
            covariates=X,
            weights_spec=d.get("weights", ""),
        )

    @classmethod
    def from_json(cls, text: str) -> "FitResult":
        return cls.from_dict(json.loads(text))


# ---------------------------------------------------------------------------
# objective pieces

def _labels_array(labels, G=None) -> np.ndarray:
    lab = np.asarray(labels, dtype=np.int64)
    if lab.ndim != 1:
        raise ValueError("labels must be one-dimensional")
    if lab.size and lab.min() < 0:
        raise ValueError("labels must be nonnegative (0-based)")
    if G is not None and lab.size and lab.max() >= G:
        raise ValueError(f"label {lab.max()} out of range for G={G}")
    return lab


def potts_penalty(labels, weights: SpatialWeights, phi: float) -> float:
    """``phi * sum_{i<j} w_ij [g_i == g_j]`` over the stored pairs."""
    lab = _labels_array(labels)
    W = weights.matrix.tocoo()
    if lab.shape[0] != W.shape[0]:
        raise ValueError("labels and weights disagree in size")
    upper = W.row < W.col
    same = lab[W.row[upper]] == lab[W.col[upper]]
    return float(phi * W.data[upper][same].sum())


def loglik_matrix(dataset: SpatialDataset, family, params) -> np.ndarray:
    """n x G log densities of every observation under every group."""
    return get_family(family).loglik_matrix(dataset, params)


def penalized_objective(dataset, family, params, labels, weights, phi) -> float:
    lab = _labels_array(labels, len(params))
    ll = loglik_matrix(dataset, family, params)
    return float(ll[np.arange(dataset.n), lab].sum()) + potts_penalty(lab, weights, phi)


def _neighbor_votes(weights: SpatialWeights, labels: np.ndarray, G: int) -> np.ndarray:
    onehot = np.zeros((labels.shape[0], G))
    onehot[np.arange(labels.shape[0]), labels] = 1.0
    return weights.matrix @ onehot


def update_memberships(dataset, family, params, labels, weights, phi, mode="sequential",
                       ll=None) -> np.ndarray:
    """One full membership sweep; returns new labels (input untouched)."""
    G = len(params)
    lab = _labels_array(labels, G).copy()
    if ll is None:
        ll = loglik_matrix(dataset, family, params)
    if mode == "sequential":
        W = weights.matrix
        _kernels.sequential_sweep(W.indptr, W.indices, W.data, np.ascontiguousarray(ll), lab, float(phi))
        return lab
    if mode == "synchronous":
        return np.argmax(ll + phi * _neighbor_votes(weights, lab, G), axis=1)
    raise ValueError(f"unknown membership update mode {mode!r}")


def _softmax_rows(scores: np.ndarray) -> np.ndarray:
    z = scores - scores.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def fuzzy_probs(dataset, family, params, labels, weights, phi, delta, ll=None) -> np.ndarray:
    """Soft memberships ``pi_ig`` proportional to ``[f_ig * exp(phi * votes_ig)]**delta``.

    All sites are scored against the given ``labels``.
    """
    if not delta > 0:
        raise ValueError("delta must be positive")
    G = len(params)
    lab = _labels_array(labels, G)
    if ll is None:
        ll = loglik_matrix(dataset, family, params)
    return _softmax_rows(delta * (ll + phi * _neighbor_votes(weights, lab, G)))


def parameter_dimension(G: int, p: int) -> int:
    # coefficients plus one scale (variance or dispersion) per group
    return G * (p + 1)


def information_criterion(fit: FitResult, dataset: SpatialDataset, family) -> float:
    """BIC-type criterion ``-2 loglik + log(n) * dim(theta)`` at the hard labels."""
    ll = loglik_matrix(dataset, family, fit.params)
    total = float(ll[np.arange(dataset.n), fit.labels].sum())
    return _ic_value(total, dataset.n, parameter_dimension(fit.G, dataset.p))


def _ic_value(loglik: float, n: int, dim: int) -> float:
    return float(-2.0 * loglik + np.log(n) * dim)


# ---------------------------------------------------------------------------
# initialization

def init_assignment(dataset: SpatialDataset, G: int, strategy="coordinate-kmeans", seed=0) -> np.ndarray:
    """Initial labels in ``0..G-1``, every group nonempty.

    ``coordinate-kmeans`` runs k-means++ seeded K-means on standardized
    coordinates; ``random`` draws uniform labels.
    """
    n = dataset.n
    if G < 1 or G > n:
        raise ValueError(f"G={G} must be between 1 and n={n}")
    rng = np.random.default_rng(seed)
    if G == 1:
        return np.zeros(n, dtype=np.int64)
    if strategy == "coordinate-kmeans":
        Z = dataset.locations - dataset.locations.mean(axis=0)
        sd = Z.std(axis=0)
        Z = Z / np.where(sd > 0, sd, 1.0)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            _, lab = kmeans2(Z, G, minit="++", seed=rng)
        lab = lab.astype(np.int64)
    elif strategy == "random":
        lab = rng.integers(0, G, size=n).astype(np.int64)
    else:
        raise ValueError(f"unknown init strategy {strategy!r}")
    return _repair_empty(lab, G)


def _repair_empty(lab: np.ndarray, G: int) -> np.ndarray:
    counts = np.bincount(lab, minlength=G)
    for g in np.flatnonzero(counts == 0):
        donor = int(np.argmax(counts))
        i = int(np.flatnonzero(lab == donor)[-1])
        lab[i] = g
        counts[donor] -= 1
        counts[g] += 1
    return lab


# ---------------------------------------------------------------------------
# estimation

def _fit_groups(family, dataset, weight_columns, previous):
    """Group-wise weighted MLE; groups without weight keep ``previous``."""
    X, y, a = dataset.covariates, dataset.response, dataset.offset_exposure
    out, empty = [], []
    for g, w in enumerate(weight_columns):
        if not w.sum() > 0:
            empty.append(g)
            out.append(previous[g])
            continue
        init = previous[g] if previous is not None else None
        out.append(family.fit(X, y, a, w, init=init))
    return out, empty


def _initial_params(family, dataset, labels, G):
    pooled = None
    params = []
    for g in range(G):
        w = (labels == g).astype(float)
        if w.sum() > 0:
            params.append(family.fit(dataset.covariates, dataset.response, dataset.offset_exposure, w))
        else:
            if pooled is None:
                pooled = family.fit(dataset.covariates, dataset.response,
                                    dataset.offset_exposure, np.ones(dataset.n))
            params.append(pooled)
    return params


def _max_change(old, new) -> float:
    return max(float(np.max(np.abs(a.as_vector() - b.as_vector()))) for a, b in zip(old, new))


def _check_inputs(dataset, weights, G):
    if int(G) != G or G < 1:
        raise ValueError("G must be a positive integer")
    if G > dataset.n:
        raise ValueError(f"G={G} exceeds the number of locations n={dataset.n}")
    if weights.n != dataset.n:
        raise ValueError(f"weights are {weights.n} x {weights.n} but the dataset has n={dataset.n}")


def _restart_inits(dataset, G, config, init_labels):
    if init_labels is not None:
        inits = [_labels_array(lab, G) for lab in init_labels]
        if any(lab.shape[0] != dataset.n for lab in inits):
            raise ValueError("initial labelings must have one label per location")
        return inits
    return [
        init_assignment(dataset, G, config.init_strategy, seed=[config.seed, r])
        for r in range(config.restarts)
    ]


def _scr_single(dataset, family, weights, G, config, labels):
    idx = np.arange(dataset.n)
    labels = labels.copy()
    params = _initial_params(family, dataset, labels, G)
    ll = family.loglik_matrix(dataset, params)
    pen = lambda lab: potts_penalty(lab, weights, config.phi)
    trace = [float(ll[idx, labels].sum()) + pen(labels)]
    converged = False
    empty: list = []
    it = 0
    for it in range(1, config.max_iterations + 1):
        new_labels = update_memberships(dataset, family, params, labels, weights, config.phi,
                                        config.membership_update, ll=ll)
        trace.append(float(ll[idx, new_labels].sum()) + pen(new_labels))
        onehot = [(new_labels == g).astype(float) for g in range(G)]
        new_params, empty = _fit_groups(family, dataset, onehot, params)
        ll = family.loglik_matrix(dataset, new_params)
        trace.append(float(ll[idx, new_labels].sum()) + pen(new_labels))
        stable = np.array_equal(new_labels, labels)
        dtheta = _max_change(params, new_params)
        labels, params = new_labels, new_params
        if stable and dtheta < config.tol:
            converged = True
            break
    return dict(params=params, labels=labels, fuzzy=None, trace=trace, iterations=it,
                converged=converged, empty=empty, ll=ll)


def _sfcr_single(dataset, family, weights, G, config, labels):
    idx = np.arange(dataset.n)
    labels = labels.copy()
    params = _initial_params(family, dataset, labels, G)
    ll = family.loglik_matrix(dataset, params)
    W = weights.matrix
    pen = lambda lab: potts_penalty(lab, weights, config.phi)
    trace = [float(ll[idx, labels].sum()) + pen(labels)]
    probs_prev = None
    converged = False
    empty: list = []
    it = 0
    for it in range(1, config.max_iterations + 1):
        if config.membership_update == "sequential":
            probs = np.empty((dataset.n, G))
            new_labels = labels.copy()
            _kernels.sequential_fuzzy_sweep(W.indptr, W.indices, W.data, np.ascontiguousarray(ll),
                                            new_labels, float(config.phi), float(config.delta), probs)
        else:
            probs = fuzzy_probs(dataset, family, params, labels, weights, config.phi,
                                config.delta, ll=ll)
            new_labels = np.argmax(probs, axis=1)
        params, empty = _fit_groups(family, dataset, list(probs.T), params)
        labels = new_labels
        ll = family.loglik_matrix(dataset, params)
        trace.append(float(ll[idx, labels].sum()) + pen(labels))
        if probs_prev is not None and np.max(np.abs(probs - probs_prev)) < config.tol:
            converged = True
            probs_prev = probs
            break
        probs_prev = probs
    return dict(params=params, labels=labels, fuzzy=probs_prev, trace=trace, iterations=it,
                converged=converged, empty=empty, ll=ll)


def _run(mode, dataset, family, weights, G, config, init_labels):
    family = get_family(family)
    config = config or FitConfig()
    _check_inputs(dataset, weights, G)
    single = _scr_single if mode == "scr" else _sfcr_single
    best, best_r = None, 0
    for r, lab in enumerate(_restart_inits(dataset, G, config, init_labels)):
        out = single(dataset, family, weights, G, config, lab)
        if best is None or out["trace"][-1] > best["trace"][-1]:
            best, best_r = out, r
    labels = best["labels"]
    ll = best["ll"]
    total_ll = float(ll[np.arange(dataset.n), labels].sum())
    if best["fuzzy"] is not None:
        coefs = best["fuzzy"] @ np.array([q.coefficients for q in best["params"]])
    else:
        coefs = np.array([best["params"][g].coefficients for g in labels]).reshape(dataset.n, dataset.p)
    counts = np.bincount(labels, minlength=G)
    return FitResult(
        mode=mode,
        family=family.name,
        G=int(G),
        params=best["params"],
        labels=labels,
        fuzzy=best["fuzzy"],
        objective_trace=best["trace"],
        objective=best["trace"][-1],
        loglik=total_ll,
        ic=_ic_value(total_ll, dataset.n, parameter_dimension(G, dataset.p)),
        iterations=best["iterations"],
        converged=best["converged"],
        per_location_coefficients=coefs,
        empty_groups=[int(g) for g in np.flatnonzero(counts == 0)],
        config=config,
        restart=best_r,
        locations=np.array(dataset.locations),
        ids=dataset.ids,
        covariate_names=dataset.covariate_names,
        n_obs=dataset.n,
        covariates=np.array(dataset.covariates),
    )


def scr_fit(dataset: SpatialDataset, family, weights: SpatialWeights, G: int,
            config: FitConfig | None = None, init_labels=None) -> FitResult:
    """Spatially clustered regression by alternating MLE and ICM sweeps.

    Parameters
    ----------
    dataset, weights
        Data and the symmetric penalty graph over its locations.
    family : str or family instance
        ``"gaussian"`` or ``"negbin"``.
    G : int
        Number of groups.
    config : FitConfig, optional
    init_labels : sequence of label arrays, optional
        Explicit 0-based initial labelings, one restart each; overrides
        ``config.init_strategy`` and ``config.restarts``.

    Returns
    -------
    FitResult
        The restart with the highest final penalized objective.
    """
    return _run("scr", dataset, family, weights, G, config, init_labels)


def sfcr_fit(dataset: SpatialDataset, family, weights: SpatialWeights, G: int,
             config: FitConfig | None = None, init_labels=None) -> FitResult:
    """Spatially fuzzy clustered regression.

    Same interface as :func:`scr_fit`.  Converges when the soft memberships
    move by less than ``config.tol``; ``per_location_coefficients`` holds the
    membership-weighted average of the group coefficients.
    """
    return _run("sfcr", dataset, family, weights, G, config, init_labels)


def select_groups(dataset, family, weights, candidates, config: FitConfig | None = None,
                  mode: str = "scr", n_jobs: int = 1) -> FitResult:
    """Fit every candidate G with SCR and keep the smallest IC (ties: smaller G).

    With ``mode="sfcr"`` the fuzzy fit is run at the G chosen by SCR.  The
    returned result carries the full ``ic_table``.
    """
    candidates = sorted({int(g) for g in candidates})
    if not candidates:
        raise ValueError("candidates must be nonempty")
    config = config or FitConfig()

    def one(G):
        return scr_fit(dataset, family, weights, G, config)

    if n_jobs > 1:
        with ThreadPoolExecutor(n_jobs) as pool:
            fits = list(pool.map(one, candidates))
    else:
        fits = [one(G) for G in candidates]
    table = {f.G: float(f.ic) for f in fits}
    best = min(fits, key=lambda f: (f.ic, f.G))
    if mode == "sfcr":
        best = sfcr_fit(dataset, family, weights, best.G, config)
    elif mode != "scr":
        raise ValueError(f"unknown mode {mode!r}")
    best.ic_table = table
    return best
