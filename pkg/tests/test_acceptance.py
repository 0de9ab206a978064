"""Acceptance criteria, one test each, with a pass/fail summary line per criterion."""

import itertools
import subprocess
import sys
import time
from pathlib import Path

import numpy as np
import pytest
from sklearn.metrics import adjusted_rand_score

from conftest import ACCEPTANCE_LINES, scenario1_dataset
from spclustreg.data import SpatialDataset, cross_knn_weights, knn_weights
from spclustreg.fit import (
    FitConfig,
    init_assignment,
    loglik_matrix,
    penalized_objective,
    scr_fit,
    select_groups,
    sfcr_fit,
)
from spclustreg.likelihoods import weighted_mle
from spclustreg.predict import predict_response
from spclustreg.simulate import gen_locations, mape_rmse, mse, scenario1_truth

pytestmark = pytest.mark.acceptance


def report(number, title, ok, detail):
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {number}: {title} -- {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert ok, line


def locally_optimal(ds, fit, W, slack=1e-9):
    ll = loglik_matrix(ds, "gaussian", fit.params)
    A = W.matrix
    votes = np.column_stack([A @ (fit.labels == g).astype(float) for g in range(fit.G)])
    score = ll + fit.config.phi * votes
    return bool(np.all(score.max(axis=1) - score[np.arange(ds.n), fit.labels] <= slack))


def monotone(trace, slack=1e-9):
    t = np.asarray(trace)
    return bool(np.all(np.diff(t) >= -slack * np.maximum(1.0, np.abs(t[1:]))))


# --------------------------------------------------------------------------- 1

def test_criterion_1_monotone_ascent():
    start = time.perf_counter()
    mono = opt = 0
    for seed in range(50):
        ds, _ = scenario1_dataset(seed, n=300)
        W = knn_weights(ds, 5)
        fit = scr_fit(ds, "gaussian", W, 6, FitConfig(seed=seed))
        mono += monotone(fit.objective_trace)
        opt += locally_optimal(ds, fit, W)
    elapsed = time.perf_counter() - start
    report(1, "monotone ascent and local optimality", mono == 50 and opt == 50 and elapsed < 60,
           f"{mono}/50 monotone traces, {opt}/50 locally optimal, {elapsed:.1f} s (limit 60 s)")


# --------------------------------------------------------------------------- 2

def _brute_force_optimum(ds, W, phi):
    best = -np.inf
    for lab in itertools.product((0, 1), repeat=ds.n):
        lab = np.array(lab)
        q = 0.0
        for g in (0, 1):
            m = lab == g
            if not m.any():
                continue
            beta = np.linalg.lstsq(ds.covariates[m], ds.response[m], rcond=None)[0]
            r = ds.response[m] - ds.covariates[m] @ beta
            s2 = max(np.mean(r**2), 1e-10)
            q += np.sum(-0.5 * np.log(2 * np.pi * s2) - r**2 / (2 * s2))
        A = W.toarray()
        q += phi * sum(A[i, j] for i in range(ds.n) for j in range(i + 1, ds.n) if lab[i] == lab[j])
        best = max(best, q)
    return best


def test_criterion_2_brute_force_oracle():
    start = time.perf_counter()
    worst = 0.0
    hits = 0
    inits = [np.array(lab) for lab in itertools.product((0, 1), repeat=8)]
    for seed in range(25):
        rng = np.random.default_rng(seed)
        locs = rng.uniform(size=(8, 2))
        x = rng.standard_normal(8)
        y = np.where(locs[:, 0] < 0.5, 1 + 2 * x, -1 - x) + 0.5 * rng.standard_normal(8)
        ds = SpatialDataset.from_arrays(locs, x, y)
        W = knn_weights(ds, 2)
        fit = scr_fit(ds, "gaussian", W, 2, FitConfig(), init_labels=inits)
        q_fit = penalized_objective(ds, "gaussian", fit.params, fit.labels, W, 1.0)
        q_best = _brute_force_optimum(ds, W, 1.0)
        gap = abs(q_fit - q_best)
        worst = max(worst, gap)
        hits += gap <= 1e-9 * max(1.0, abs(q_best))
    elapsed = time.perf_counter() - start
    report(2, "exhaustive-enumeration oracle (n=8, G=2)", hits == 25 and elapsed < 30,
           f"{hits}/25 within 1e-9, worst gap {worst:.2e}, {elapsed:.1f} s (limit 30 s)")


# --------------------------------------------------------------------------- 3

def test_criterion_3_degeneration_identities():
    pooled_ok = classify_ok = 0
    worst = 0.0
    for seed in range(20):
        ds, _ = scenario1_dataset(200 + seed, n=300)
        W = knn_weights(ds, 5)
        one = scr_fit(ds, "gaussian", W, 1, FitConfig(phi=1.0, restarts=1))
        q = weighted_mle("gaussian", ds, np.ones(ds.n))
        err = max(np.max(np.abs(one.params[0].coefficients - q.coefficients)), abs(one.params[0].scale - q.scale))
        worst = max(worst, err)
        pooled_ok += err <= 1e-10
        free = scr_fit(ds, "gaussian", W, 6, FitConfig(phi=0.0, restarts=2, seed=seed))
        ll = loglik_matrix(ds, "gaussian", free.params)
        classify_ok += bool(np.array_equal(free.labels, np.argmax(ll, axis=1)))
    report(3, "G=1 pooled MLE and phi=0 likelihood classification", pooled_ok == 20 and classify_ok == 20,
           f"pooled equality {pooled_ok}/20 (worst {worst:.1e}, tol 1e-10), "
           f"likelihood-only labels {classify_ok}/20")


# --------------------------------------------------------------------------- 4

def test_criterion_4_sfcr_hard_limit():
    same = 0
    for seed in range(20):
        ds, _ = scenario1_dataset(300 + seed, n=300)
        W = knn_weights(ds, 5)
        init = [init_assignment(ds, 6, seed=seed)]
        hard = scr_fit(ds, "gaussian", W, 6, FitConfig(), init_labels=init)
        soft = sfcr_fit(ds, "gaussian", W, 6, FitConfig(delta=1e3), init_labels=init)
        same += bool(np.array_equal(hard.labels, soft.labels))
    report(4, "SFCR with delta=1e3 reproduces SCR labels", same == 20, f"{same}/20 identical labelings")


# --------------------------------------------------------------------------- 5

def test_criterion_5_scenario1_recovery():
    start = time.perf_counter()
    beats, good_ari, mses, olss, aris = 0, 0, [], [], []
    for seed in range(20):
        ds, truth = scenario1_dataset(seed, n=1000)
        fit = scr_fit(ds, "gaussian", knn_weights(ds, 5), 6, FitConfig(seed=seed))
        ols = np.linalg.lstsq(ds.covariates, ds.response, rcond=None)[0]
        m_scr = mse(fit.per_location_coefficients, truth.coefficients)
        m_ols = mse(np.tile(ols, (ds.n, 1)), truth.coefficients)
        ari = adjusted_rand_score(truth.regions, fit.labels)
        mses.append(m_scr)
        olss.append(m_ols)
        aris.append(ari)
        beats += m_scr < m_ols
        good_ari += ari >= 0.8
    elapsed = time.perf_counter() - start
    report(5, "Scenario-1 recovery (n=1000, G=6)", beats >= 19 and good_ari >= 15 and elapsed < 300,
           f"MSE below OLS in {beats}/20 (need 19; SCR {min(mses):.3f}-{max(mses):.3f} vs "
           f"OLS {min(olss):.3f}-{max(olss):.3f}), ARI>=0.8 in {good_ari}/20 (need 15; "
           f"range {min(aris):.2f}-{max(aris):.2f}), {elapsed:.1f} s (limit 300 s)")


# --------------------------------------------------------------------------- 6

def test_criterion_6_group_selection():
    chosen = []
    for seed in range(10):
        ds, _ = scenario1_dataset(1000 + seed, n=1000)
        fit = select_groups(ds, "gaussian", knn_weights(ds, 5), range(5, 31, 5), FitConfig(seed=seed))
        chosen.append(fit.G)
    hits = sum(g in (10, 15) for g in chosen)
    report(6, "IC selects G in {10, 15} for Scenario 1", hits > 5,
           f"{hits}/10 runs in {{10, 15}} (need a majority); selected {chosen}")


# --------------------------------------------------------------------------- 7

def _scalability_dataset(n):
    rng = np.random.default_rng(n)
    locs = gen_locations(n, rng)
    X = rng.standard_normal((n, 2))
    truth = scenario1_truth(locs)
    y = truth.coefficients[:, 0] + (X * truth.coefficients[:, 1:]).sum(axis=1)
    y = y + truth.sigma * rng.standard_normal(n)
    return SpatialDataset.from_arrays(locs, X, y)


def test_criterion_7_scalability():
    sizes = (1000, 5000, 20000)
    times, converged = [], []
    for n in sizes:
        ds = _scalability_dataset(n)
        W = knn_weights(ds, 5)
        start = time.perf_counter()
        fit = scr_fit(ds, "gaussian", W, 10, FitConfig(seed=1))
        times.append(time.perf_counter() - start)
        converged.append(fit.converged)
    slope = float(np.polyfit(np.log(sizes), np.log(times), 1)[0])
    ok = converged[-1] and times[-1] < 60 and slope < 2
    report(7, "scalability (n=20000, G=10, 5-NN, default 10 restarts)", ok,
           "runtimes " + ", ".join(f"n={n}: {t:.2f} s" for n, t in zip(sizes, times))
           + f"; log-log slope {slope:.2f} (need < 2); converged at n=20000: {converged[-1]}")


# --------------------------------------------------------------------------- 8

def test_criterion_8_spec_examples():
    root = Path(__file__).resolve().parent
    proc = subprocess.run(
        [sys.executable, "-m", "pytest", "-m", "example", "-q", "-p", "no:cacheprovider",
         "--ignore", str(root / "test_acceptance.py"), str(root)],
        capture_output=True, text=True, cwd=root.parent,
    )
    tail = [ln for ln in proc.stdout.strip().splitlines() if ln.strip()][-1]
    failed = [ln.split(" ")[1] for ln in proc.stdout.splitlines() if ln.startswith("FAILED ")]
    detail = tail + ("; failing: " + ", ".join(failed) if failed else "")
    report(8, "every worked example passes as a unit test", proc.returncode == 0, detail)


# --------------------------------------------------------------------------- 9

NB_COEFS = np.array([[0.5, 0.8, -0.3], [1.5, -0.5, 0.4], [1.0, 0.0, -0.8]])
NB_SIZE = 5.0


def nb_band_dataset(seed, n=600):
    rng = np.random.default_rng(seed)
    locs = rng.uniform(size=(n, 2))
    band = np.minimum((locs[:, 0] * 3).astype(int), 2)
    X = rng.standard_normal((n, 2))
    a = rng.uniform(0.5, 2.0, n)
    beta = NB_COEFS[band]
    mu = a * np.exp(beta[:, 0] + (X * beta[:, 1:]).sum(axis=1))
    y = rng.negative_binomial(NB_SIZE, NB_SIZE / (NB_SIZE + mu))
    return SpatialDataset.from_arrays(locs, X, y, a)


def test_criterion_9_negative_binomial_pipeline():
    exclusion = ("the crime-application numbers (G=7 selection, MAPE/RMSE table, maps) need an external "
                 "dataset that is not distributed with this package and are not reproduced")
    wins = 0
    ratios = []
    for seed in range(20):
        ds = nb_band_dataset(500 + seed)
        perm = np.random.default_rng(seed).permutation(ds.n)
        test, train = perm[:100], perm[100:]
        tr = ds.subset(train)
        fit = scr_fit(tr, "negbin", knn_weights(tr, 5), 3, FitConfig(seed=seed))
        cross = cross_knn_weights(ds.locations[test], tr.locations, 5)
        yhat = predict_response(fit, cross, ds.covariates[test], ds.exposure[test])
        pooled = weighted_mle("negbin", tr, np.ones(tr.n))
        ybase = ds.exposure[test] * np.exp(ds.covariates[test] @ pooled.coefficients)
        m_scr = mape_rmse(yhat, ds.response[test])[0]
        m_pool = mape_rmse(ybase, ds.response[test])[0]
        ratios.append(m_scr / m_pool)
        wins += m_scr < m_pool
    report(9, "synthetic NB: SCR beats pooled NB on held-out MAPE", wins >= 18,
           f"{wins}/20 splits (need 18), MAPE ratio SCR/pooled {min(ratios):.2f}-{max(ratios):.2f}; "
           f"excluded: {exclusion}")
