import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dgdetect.dataio import Label
from dgdetect.errors import ModelFormatError, TrainingError
from dgdetect.features import DifferenceVector, FeatureConfig
from dgdetect.svm import (SvmConfig, SvmModel, calibrate, decision_value, decision_values,
                          dual_objective, fit_platt, format_model, load_model, parse_model,
                          rbf_kernel, save_model, score, scores, sigmoid_score, solve_smo,
                          train, train_arrays, train_calibrated)

from oracles import qp_reference, rbf_matrix, reference_bias

TIGHT = 1e-10


def feats(X, y):
    return [DifferenceVector(np.asarray(x, float),
                             label=Label.DOPPELGANGER if t > 0 else Label.MATED)
            for x, t in zip(X, y)]


def test_kernel_values():
    assert rbf_kernel([1.5, -2.0], [1.5, -2.0], 7.0) == 1.0
    assert rbf_kernel([0.0], [1.0], 0.5) == pytest.approx(0.6065306597126334, abs=1e-12)
    assert rbf_kernel([0.0, 0.0], [3.0, 4.0], 0.01) == pytest.approx(0.7788007830714049, abs=1e-12)


def test_symmetric_1d_problem():
    X = np.array([[2.0], [3.0], [-2.0], [-3.0]])
    y = np.array([1.0, 1.0, -1.0, -1.0])
    m = train(feats(X, y), SvmConfig(C=1.0, gamma=0.5))
    d = decision_values(m, X)
    assert np.all(d[:2] > 0) and np.all(d[2:] < 0)


def test_conflicting_identical_points_sit_at_bound():
    X = np.array([[0.5, 0.5], [0.5, 0.5]])
    y = np.array([1.0, -1.0])
    m = train_arrays(X, y, SvmConfig(C=1.0, gamma=1.0))
    assert sorted(m.dual_coef.tolist()) == [-1.0, 1.0]
    alpha, _ = qp_reference(rbf_matrix(X, 1.0), y, 1.0)
    assert np.allclose(alpha, [1.0, 1.0], atol=1e-8)


def test_random_2d_matches_reference_signs():
    rng = np.random.default_rng(11)
    X = rng.standard_normal((20, 2))
    y = np.where(X[:, 0] > 0, 1.0, -1.0)
    gamma, C = 0.5, 1.0
    m = train_arrays(X, y, SvmConfig(C=C, gamma=gamma, tolerance=TIGHT))
    K = rbf_matrix(X, gamma)
    alpha, obj = qp_reference(K, y, C)
    ref = K @ (alpha * y) + reference_bias(alpha, y, K, C)
    assert np.array_equal(np.sign(decision_values(m, X)), np.sign(ref))


def _smo_alpha(X, y, C, gamma, tol=TIGHT):
    return solve_smo(X, y, C, gamma, tol, 10_000_000)


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 30), st.integers(1, 4), st.sampled_from([0.1, 1.0, 10.0]),
       st.integers(0, 2**32 - 1))
def test_objective_matches_reference_qp(n, dim, C, seed):
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((n, dim))
    y = np.where(rng.random(n) < 0.5, 1.0, -1.0)
    y[0], y[1] = 1.0, -1.0
    gamma = 1.0 / dim
    res = _smo_alpha(X, y, C, gamma)
    K = rbf_matrix(X, gamma)
    _, ref_obj = qp_reference(K, y, C)
    assert dual_objective(res.alpha, y, K) == pytest.approx(ref_obj, abs=1e-6)
    # box and equality constraints
    assert np.all(res.alpha >= 0) and np.all(res.alpha <= C)
    assert abs(float(res.alpha @ y)) <= 1e-9 * max(1.0, C * n)


@settings(max_examples=30, deadline=None)
@given(st.integers(4, 40), st.integers(1, 5), st.floats(0.05, 20.0), st.integers(0, 2**32 - 1))
def test_model_invariants(n, dim, C, seed):
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((n, dim))
    y = np.where(rng.random(n) < 0.5, 1.0, -1.0)
    y[:2] = [1.0, -1.0]
    cfg = SvmConfig(C=C)
    m = train_arrays(X, y, cfg)
    assert m.n_sv >= 1
    assert np.all(np.abs(m.dual_coef) <= C)
    assert abs(math.fsum(m.dual_coef)) <= 1e-6
    # KKT: no violating pair beyond the tolerance
    K = rbf_matrix(X, m.gamma)
    alpha = np.zeros(n)
    sv_rows = {tuple(r): k for k, r in enumerate(m.support_vectors)}
    for i, row in enumerate(X):
        k = sv_rows.get(tuple(row))
        if k is not None:
            alpha[i] = abs(m.dual_coef[k])
    if len(sv_rows) == m.n_sv and len({tuple(r) for r in X}) == n:
        G = (np.outer(y, y) * K) @ alpha - 1.0
        yG = -y * G
        up = np.where(y > 0, alpha < C, alpha > 0)
        low = np.where(y > 0, alpha > 0, alpha < C)
        if up.any() and low.any():
            assert yG[up].max() - yG[low].min() <= cfg.tolerance + 1e-9


def test_margin_support_vectors_sit_on_margin():
    rng = np.random.default_rng(3)
    X = np.concatenate([rng.normal(2, 0.5, (10, 2)), rng.normal(-2, 0.5, (10, 2))])
    y = np.array([1.0] * 10 + [-1.0] * 10)
    C = 1000.0
    m = train_arrays(X, y, SvmConfig(C=C, gamma=0.5, tolerance=TIGHT))
    d = decision_values(m, m.support_vectors)
    free = np.abs(m.dual_coef) < C * (1 - 1e-8)
    assert free.any()
    assert np.allclose(d[free], np.sign(m.dual_coef[free]), atol=1e-6)


def test_localized_kernel_isolates_support_vector():
    rng = np.random.default_rng(9)
    X = rng.standard_normal((12, 3))
    y = np.array([1.0, -1.0] * 6)
    m = train_arrays(X, y, SvmConfig(C=1.0, gamma=1e6))
    for k, sv in enumerate(m.support_vectors):
        assert decision_value(m, sv) == pytest.approx(m.dual_coef[k] + m.bias, abs=1e-9)


def test_degenerate_model_returns_bias():
    m = SvmModel(np.zeros((1, 2)), np.zeros(1), 0.25, 1.0)
    assert decision_value(m, [5.0, -3.0]) == 0.25


def test_training_errors():
    with pytest.raises(TrainingError):
        train_arrays(np.ones((3, 2)), np.ones(3))
    with pytest.raises(TrainingError):
        train_arrays(np.array([[np.nan], [1.0]]), np.array([1.0, -1.0]))


def test_gamma_resolution():
    X = np.array([[0.0, 2.0], [2.0, 0.0]])
    assert SvmConfig(gamma="auto").resolved_gamma(X) == 0.5
    assert SvmConfig(gamma="scale").resolved_gamma(X) == 1.0 / (2 * X.var())
    assert SvmConfig(gamma="scale").resolved_gamma(np.ones((3, 4))) == 0.25
    assert SvmConfig(gamma=3.0).resolved_gamma(X) == 3.0


def test_sigmoid():
    assert sigmoid_score(0.0, -1.0, 0.0) == 0.5
    assert sigmoid_score(20.0, -1.0, 0.0) == pytest.approx(1.0, abs=1e-8)
    assert sigmoid_score(-1e6, -1.0, 0.0) == 0.0
    f = np.linspace(-30, 30, 1001)
    assert np.all(np.diff(sigmoid_score(f, -2.5, 0.3)) >= 0)
    assert np.all(np.diff(sigmoid_score(np.linspace(-5, 5, 101), -2.5, 0.3)) > 0)


def test_calibration_on_separated_held_out():
    rng = np.random.default_rng(4)
    X = np.concatenate([rng.normal(1.5, 0.3, (40, 2)), rng.normal(-1.5, 0.3, (40, 2))])
    y = np.array([1.0] * 40 + [-1.0] * 40)
    m = train_arrays(X[::2], y[::2])
    c = calibrate(m, feats(X[1::2], y[1::2]))
    assert c.A < 0
    s = scores(c, X[1::2])
    yy = y[1::2]
    assert s[yy > 0].min() > s[yy < 0].max()
    assert np.all((0 <= s) & (s <= 1))


def test_platt_reference_values():
    # targets smoothed to 1/(n+2); the fit is a convex problem so any
    # accurate minimiser agrees with this closed-form-free check
    from scipy.optimize import minimize

    f = np.array([-2.0, -1.0, -0.5, 0.2, 0.1, 1.0, 1.5, 2.5])
    y = np.array([-1, -1, 1, -1, 1, 1, -1, 1])
    hi, lo = 5 / 6, 1 / 6
    t = np.where(y > 0, hi, lo)

    def nll(p):
        z = p[0] * f + p[1]
        return float(np.sum(t * z + np.logaddexp(0, -z)))

    ref = minimize(nll, [0.0, 0.0], method="BFGS", options={"gtol": 1e-10}).x
    A, B = fit_platt(f, y)
    assert A == pytest.approx(ref[0], abs=1e-4) and B == pytest.approx(ref[1], abs=1e-4)


def test_positive_slope_falls_back_to_plain_sigmoid():
    m = SvmModel(np.zeros((1, 1)), np.array([1.0]), 0.0, 1.0)
    # decision value is exp(-x^2) > 0; make the positives have the lowest values
    X = np.array([[0.0], [0.1], [3.0], [4.0]])
    flipped = feats(X, [-1, -1, 1, 1])
    c = calibrate(m, flipped)
    assert (c.A, c.B) == (-1.0, 0.0)


def _trained(seed=0, fc=FeatureConfig()):
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((60, 5))
    y = np.where(X[:, 0] + 0.3 * rng.standard_normal(60) > 0, 1.0, -1.0)
    return train_calibrated(X, y, SvmConfig(seed=seed), fc)


def test_save_load_preserves_decisions_bitwise(tmp_path):
    m = _trained()
    save_model(m, tmp_path / "m.svm", ["# test model"])
    back = load_model(tmp_path / "m.svm")
    probes = np.random.default_rng(8).standard_normal((100, 5))
    assert np.array_equal(decision_values(m, probes), decision_values(back, probes))
    assert np.array_equal(scores(m, probes), scores(back, probes))
    assert format_model(back, ["# test model"]) == (tmp_path / "m.svm").read_text()


def test_feature_config_survives_serialization():
    fc = FeatureConfig("absolute", True, False)
    back = parse_model(format_model(_trained(fc=fc)))
    assert back.feature_config == fc


def test_bad_model_files(tmp_path):
    text = format_model(_trained())
    with pytest.raises(ModelFormatError):
        parse_model(text.replace("svm-v1", "svm-v9"))
    with pytest.raises(ModelFormatError):
        parse_model("\n".join(text.splitlines()[:-1]) + "\n")
    with pytest.raises(ModelFormatError):
        parse_model("")


def test_training_is_deterministic():
    assert format_model(_trained(3)) == format_model(_trained(3))


def test_score_convenience_matches_batch():
    m = _trained()
    x = np.full(5, 0.1)
    assert score(m, x) == float(scores(m, x[None, :])[0])
