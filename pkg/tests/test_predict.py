import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import two_regime_dataset
from spclustreg.data import CrossWeights, SpatialDataset, cross_knn_weights, knn_weights
from spclustreg.fit import FitConfig, FitResult, scr_fit, sfcr_fit
from spclustreg.likelihoods import GroupParameters, weighted_mle
from spclustreg.predict import (
    BootstrapError,
    align_labels,
    bootstrap_se,
    plug_in_se,
    predict_assignment,
    predict_fuzzy,
    predict_response,
)


def make_fit(labels, coefs, family="gaussian", phi=1.0, delta=1.0, scale=1.0):
    labels = np.asarray(labels, dtype=np.int64)
    coefs = np.atleast_2d(np.asarray(coefs, float))
    params = [GroupParameters(c, scale) for c in coefs]
    return FitResult(
        mode="scr", family=family, G=len(params), params=params, labels=labels, fuzzy=None,
        objective_trace=[0.0], objective=0.0, loglik=0.0, ic=0.0, iterations=1, converged=True,
        per_location_coefficients=coefs[labels], empty_groups=[],
        config=FitConfig(phi=phi, delta=delta),
    )


def linear_data(seed, n=100, sigma=1.0):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((n, 2))
    y = 0.5 + x @ [1.0, -2.0] + sigma * rng.standard_normal(n)
    return SpatialDataset.from_arrays(rng.uniform(size=(n, 2)), x, y)


# --------------------------------------------------------------------------- hard interpolation

@pytest.mark.example
def test_unanimous_neighbourhood():
    fit = make_fit([1, 1, 1, 1, 1, 0], [[0.0], [1.0]])
    cross = CrossWeights(np.array([[1, 1, 1, 1, 1, 0.0]]))
    assert predict_assignment(fit, cross)[0] == 1


@pytest.mark.example
def test_larger_vote_wins():
    fit = make_fit([0, 1], [[0.0], [1.0]])
    assert predict_assignment(fit, CrossWeights(np.array([[0.6, 0.4]])))[0] == 0


@pytest.mark.example
def test_vote_tie_goes_to_lower_group():
    fit = make_fit([0, 2, 1], [[0.0], [1.0], [2.0]])
    assert predict_assignment(fit, CrossWeights(np.array([[0.5, 0.5, 0.0]])))[0] == 0


def test_empty_cross_row_rejected():
    fit = make_fit([0, 1], [[0.0], [1.0]])
    with pytest.raises(ValueError, match="row 1"):
        predict_assignment(fit, CrossWeights(np.array([[1.0, 0.0], [0.0, 0.0]])))


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31 - 1), st.lists(st.floats(1e-3, 1e3), min_size=6, max_size=6))
def test_assignment_invariant_to_row_rescaling(seed, scales):
    rng = np.random.default_rng(seed)
    fit = make_fit(rng.integers(0, 3, 10), [[0.0], [1.0], [2.0]])
    C = 0.9 * rng.uniform(size=(6, 10)) * (rng.uniform(size=(6, 10)) < 0.6)
    C[:, 0] += 0.1
    # scaled rows must stay in [0, 1]
    s = 0.999 * np.asarray(scales) / (np.asarray(scales).max() * C.max(axis=1))
    a = predict_assignment(fit, CrossWeights(C))
    b = predict_assignment(fit, CrossWeights(C * s[:, None]))
    np.testing.assert_array_equal(a, b)


# --------------------------------------------------------------------------- fuzzy interpolation

@pytest.mark.example
def test_fuzzy_unanimous_large_delta():
    fit = make_fit([1, 1, 1, 1, 1, 0], [[0.0, 5.0], [1.0, -1.0]], delta=1e3)
    probs, coef = predict_fuzzy(fit, CrossWeights(np.array([[1, 1, 1, 1, 1, 0.0]])))
    np.testing.assert_allclose(probs[0], [0, 1], atol=1e-12)
    np.testing.assert_allclose(coef[0], [1.0, -1.0], atol=1e-12)


@pytest.mark.example
def test_fuzzy_phi_zero_uniform():
    fit = make_fit([0, 1, 2, 2], [[0.0], [3.0], [6.0]], phi=0.0)
    probs, coef = predict_fuzzy(fit, CrossWeights(np.array([[1, 0, 0, 0.0], [0, 1, 1, 1.0]])))
    np.testing.assert_allclose(probs, 1 / 3, atol=1e-15)
    np.testing.assert_allclose(coef, 3.0, atol=1e-14)


@pytest.mark.example
def test_fuzzy_two_to_one_vote():
    fit = make_fit([0, 0, 1], [[0.0], [1.0]])
    probs, _ = predict_fuzzy(fit, CrossWeights(np.array([[1, 1, 1.0]])))
    e = np.e
    np.testing.assert_allclose(probs[0], [e**2 / (e**2 + e), e / (e**2 + e)], atol=1e-14)
    np.testing.assert_allclose(probs[0], [0.7311, 0.2689], atol=5e-5)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31 - 1), st.floats(0.01, 5), st.floats(0.1, 5))
def test_fuzzy_rows_normalized_and_hard_limit(seed, phi, delta):
    rng = np.random.default_rng(seed)
    fit = make_fit(rng.integers(0, 4, 15), rng.normal(size=(4, 2)), phi=phi, delta=delta)
    C = rng.integers(0, 3, size=(5, 15)) / 2.0  # vote gaps are multiples of 1/2
    C[:, 0] = 1.0
    probs, _ = predict_fuzzy(fit, CrossWeights(C))
    np.testing.assert_allclose(probs.sum(axis=1), 1.0, atol=1e-10)
    hard = predict_assignment(fit, CrossWeights(C))
    votes = np.column_stack([C @ (fit.labels == g) for g in range(4)])
    top2 = np.sort(votes, axis=1)[:, -2:]
    clear = top2[:, 1] > top2[:, 0]
    limit, _ = predict_fuzzy(fit, CrossWeights(C), phi=1.0, delta=1e3)
    np.testing.assert_allclose(limit[clear], np.eye(4)[hard][clear], atol=1e-12)


# --------------------------------------------------------------------------- response prediction

@pytest.mark.example
def test_gaussian_prediction_dot_product():
    fit = make_fit([0], [[1.0, 2.0]])
    yhat = predict_response(fit, CrossWeights(np.array([[1.0]])), [[1.0, 3.0]])
    assert yhat[0] == 7.0


@pytest.mark.example
def test_negbin_prediction_exposure():
    fit = make_fit([0], [[0.0, 0.0]], family="negbin")
    yhat = predict_response(fit, CrossWeights(np.array([[1.0]])), [[1.0, 4.0]], new_exposure=[2.0])
    assert yhat[0] == 2.0


@pytest.mark.example
def test_single_group_prediction_is_pooled():
    ds = linear_data(0)
    fit = scr_fit(ds, "gaussian", knn_weights(ds, 5), 1, FitConfig(restarts=1))
    q = weighted_mle("gaussian", ds, np.ones(ds.n))
    rng = np.random.default_rng(1)
    new = np.column_stack([np.ones(7), rng.standard_normal((7, 2))])
    cross = cross_knn_weights(rng.uniform(size=(7, 2)), ds.locations, 5)
    for mode in ("hard", "fuzzy"):
        np.testing.assert_allclose(predict_response(fit, cross, new, mode=mode), new @ q.coefficients, atol=1e-12)


def test_negbin_prediction_needs_exposure():
    fit = make_fit([0], [[0.0]], family="negbin")
    with pytest.raises(ValueError):
        predict_response(fit, CrossWeights(np.array([[1.0]])), [[1.0]])


def test_prediction_width_checked():
    fit = make_fit([0], [[0.0, 1.0]])
    with pytest.raises(ValueError):
        predict_response(fit, CrossWeights(np.array([[1.0]])), [[1.0]])


# --------------------------------------------------------------------------- plug-in SEs

@pytest.mark.example
def test_plug_in_intercept_only_two_points():
    ds = SpatialDataset.from_arrays([[0, 0], [1, 0]], np.zeros((2, 0)), [0.0, 2.0])
    fit = make_fit([0, 0], [[1.0]])
    se = plug_in_se(fit, ds)
    assert se.se[0, 0] == pytest.approx(1.0, abs=1e-14)


@pytest.mark.example
def test_plug_in_flags_small_group():
    ds = linear_data(2, n=6)
    fit = make_fit([0, 0, 0, 0, 0, 1], [[0, 0, 0.0], [0, 0, 0.0]])
    fit.params[0] = weighted_mle("gaussian", ds, (fit.labels == 0).astype(float))
    se = plug_in_se(fit, ds)
    assert se.unavailable == (1,)
    assert np.all(np.isnan(se.se[1])) and np.all(se.se[0] > 0)
    assert se.to_dict()["groups"]["2"] is None


@pytest.mark.example
def test_plug_in_duplication_ratio():
    ds = linear_data(3, n=20)
    p = ds.p
    fit = make_fit(np.zeros(20, int), [weighted_mle("gaussian", ds, np.ones(20)).coefficients])
    dup = SpatialDataset(np.vstack([ds.locations] * 2), np.vstack([ds.covariates] * 2),
                         np.concatenate([ds.response] * 2))
    fit2 = make_fit(np.zeros(40, int), fit.coefficients)
    a = plug_in_se(fit, ds).se[0] ** 2
    b = plug_in_se(fit2, dup).se[0] ** 2
    np.testing.assert_allclose(b / a, (20 - p) / (40 - p), rtol=1e-12)


def test_plug_in_matches_ols_formula():
    ds = linear_data(4)
    fit = scr_fit(ds, "gaussian", knn_weights(ds, 5), 1, FitConfig(restarts=1))
    X, y = ds.covariates, ds.response
    beta = np.linalg.solve(X.T @ X, X.T @ y)
    s2 = np.sum((y - X @ beta) ** 2) / (ds.n - ds.p)
    expected = np.sqrt(np.diag(s2 * np.linalg.inv(X.T @ X)))
    np.testing.assert_allclose(plug_in_se(fit, ds).se[0], expected, rtol=1e-10)


def test_plug_in_negbin_positive():
    rng = np.random.default_rng(0)
    n = 300
    x = rng.standard_normal(n)
    a = rng.uniform(0.5, 2, n)
    mu = a * np.exp(1 + 0.5 * x)
    y = rng.negative_binomial(3, 3 / (3 + mu))
    ds = SpatialDataset.from_arrays(rng.uniform(size=(n, 2)), x, y, a)
    fit = scr_fit(ds, "negbin", knn_weights(ds, 5), 1, FitConfig(restarts=1))
    se = plug_in_se(fit, ds)
    assert np.all(se.se[0] > 0) and np.all(se.se[0] < 0.2)


# --------------------------------------------------------------------------- bootstrap

def test_align_labels_recovers_permutation():
    rng = np.random.default_rng(0)
    ref = rng.integers(0, 4, 50)
    perm = np.array([2, 3, 0, 1])
    inverse = np.argsort(perm)
    assert list(align_labels(ref, inverse[ref], 4)) == list(perm)


def test_align_labels_large_G_uses_assignment():
    rng = np.random.default_rng(1)
    ref = np.repeat(np.arange(10), 5)
    perm = rng.permutation(10)
    shuffled = np.argsort(perm)[ref]
    np.testing.assert_array_equal(align_labels(ref, shuffled, 10), perm)


@pytest.mark.example
def test_bootstrap_degenerate_data():
    rng = np.random.default_rng(0)
    x = rng.standard_normal(30)
    ds = SpatialDataset.from_arrays(rng.uniform(size=(30, 2)), x, 1.0 + 2.0 * x)
    W = knn_weights(ds, 3)
    fit = scr_fit(ds, "gaussian", W, 1, FitConfig(restarts=1))
    se = bootstrap_se(fit, ds, weights=W, B=10, seed=1)
    assert np.all(se.se >= 0) and np.all(se.se < 1e-4)


@pytest.mark.example
def test_bootstrap_single_group_near_plug_in():
    ds = linear_data(5)
    W = knn_weights(ds, 5)
    fit = scr_fit(ds, "gaussian", W, 1, FitConfig(restarts=1))
    boot = bootstrap_se(fit, ds, weights=W, B=200, seed=3).se[0]
    plug = plug_in_se(fit, ds).se[0]
    np.testing.assert_array_less(np.abs(boot / plug - 1), 0.25)


@pytest.mark.example
def test_bootstrap_deterministic_and_thread_independent():
    ds, _ = two_regime_dataset(0, n=80)
    W = knn_weights(ds, 5)
    fit = scr_fit(ds, "gaussian", W, 2, FitConfig(restarts=2))
    a = bootstrap_se(fit, ds, weights=W, B=6, seed=7)
    b = bootstrap_se(fit, ds, weights=W, B=6, seed=7)
    c = bootstrap_se(fit, ds, weights=W, B=6, seed=7, n_jobs=4)
    assert a.to_json() == b.to_json() == c.to_json()
    assert np.all(a.se >= 0)


def test_bootstrap_failure_rate_enforced():
    ds, _ = two_regime_dataset(1, n=60)
    W = knn_weights(ds, 5)
    fit = sfcr_fit(ds, "gaussian", W, 2, FitConfig(restarts=1, max_iterations=1))
    with pytest.raises(BootstrapError):
        bootstrap_se(fit, ds, weights=W, B=4)


def test_bootstrap_requires_two_replicates():
    ds = linear_data(0, n=10)
    W = knn_weights(ds, 3)
    fit = scr_fit(ds, "gaussian", W, 1, FitConfig(restarts=1))
    with pytest.raises(ValueError):
        bootstrap_se(fit, ds, weights=W, B=1)
