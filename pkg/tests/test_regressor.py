import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from sleepcbm.core import ClinicalFeatures, SeverityClass, severity
from sleepcbm.experiments import oracle_concept_matrix
from sleepcbm.metrics import r2
from sleepcbm.nn import numerical_gradient, rel_error
from sleepcbm.regressor import (CLINICAL_FEATURE_NAMES, ClinicalEncoder, MLPAHIRegressor,
                                RegressorConfig, encode_clinical, fuse, fused_feature_names,
                                mlp_loss_and_grad, severity_array)
from sleepcbm.synth import SynthConfig, generate_cohort


def _clinical(**kw):
    base = dict(age=50.0, bmi=28.0, sbp=120.0, dbp=80.0, weight_kg=80.0, height_cm=170.0,
                smoker=False, hypertension=False, ethnicity="NonHispanic", race="White",
                gender="Female")
    base.update(kw)
    return ClinicalFeatures(**base)


def _enc(c):
    return dict(zip(CLINICAL_FEATURE_NAMES, encode_clinical(c)))


def test_encoding_examples():
    e = _enc(_clinical(race="Black", smoker=True))
    assert (e["race_white"], e["race_black"], e["race_other"]) == (0, 1, 0)
    assert e["smoker"] == 1 and e["hypertension"] == 0 and e["gender_male"] == 0
    assert (e["ethnicity_nonhispanic"], e["ethnicity_hispanic"]) == (1, 0)
    assert e["bmi"] == 28.0
    c = _clinical(gender="Male")
    np.testing.assert_array_equal(encode_clinical(c), encode_clinical(c))
    assert len(CLINICAL_FEATURE_NAMES) == 14
    assert len(fused_feature_names()) == 24


def test_unknown_enum_value():
    with pytest.raises(ValueError):
        _clinical(race="Martian")


def test_encoder_and_fuse():
    recs = [_clinical(), _clinical(age=70.0)]
    X = ClinicalEncoder().fit_transform(recs)
    assert X.shape == (2, 14)
    F = fuse(np.zeros((2, 10)), recs)
    np.testing.assert_array_equal(F[:, 10:], X)
    with pytest.raises(ValueError):
        fuse(np.zeros((3, 10)), recs)


def test_config_validation():
    for kw in ({"hidden_units": 0}, {"l2_penalty": -1}, {"lr": 0}):
        with pytest.raises(ValueError):
            RegressorConfig(**kw)
    model = MLPAHIRegressor.from_config(RegressorConfig(hidden_units=7))
    assert model.hidden_units == 7


@pytest.mark.parametrize("activation", ["relu", "tanh"])
@pytest.mark.parametrize("seed", range(10))
def test_regularised_loss_gradient(activation, seed):
    rng = np.random.default_rng(seed)
    n, d, h = (int(v) for v in rng.integers(1, 7, 3))
    X = rng.standard_normal((n, d))
    y = rng.standard_normal(n)
    l2 = float(rng.uniform(0, 2))
    params = {"W1": rng.standard_normal((d, h)), "b1": rng.standard_normal(h),
              "W2": rng.standard_normal((h, 1)), "b2": rng.standard_normal(1)}
    _, grads = mlp_loss_and_grad(params, X, y, l2, activation)
    for name, p in params.items():
        num = numerical_gradient(lambda: mlp_loss_and_grad(params, X, y, l2, activation)[0],
                                 p, 1e-5)
        assert rel_error(grads[name], num) < 1e-4, name


def test_loss_value_formula(rng):
    X = rng.standard_normal((5, 3))
    y = rng.standard_normal(5)
    params = {"W1": rng.standard_normal((3, 4)), "b1": rng.standard_normal(4),
              "W2": rng.standard_normal((4, 1)), "b2": rng.standard_normal(1)}
    pred = np.maximum(X @ params["W1"] + params["b1"], 0) @ params["W2"][:, 0] + params["b2"]
    expected = (np.sum((pred - y) ** 2)
                + 0.3 * (np.sum(params["W1"] ** 2) + np.sum(params["W2"] ** 2))) / 10
    assert mlp_loss_and_grad(params, X, y, 0.3)[0] == pytest.approx(expected, rel=1e-12)


def test_constant_target(rng):
    X = rng.standard_normal((40, 5))
    for k in (0.0, 12.5):
        pred = MLPAHIRegressor().fit(X, np.full(40, k)).predict(X)
        assert np.all(np.abs(pred - k) <= abs(k) * 1e-2 + 0.1)


def test_large_l2_shrinks_to_bias(rng):
    X = rng.standard_normal((50, 4))
    y = 10 + X @ [3.0, -1.0, 2.0, 0.5]
    small = MLPAHIRegressor(l2_penalty=0.0, max_epochs=500).fit(X, y)
    big = MLPAHIRegressor(l2_penalty=1e3, max_epochs=500).fit(X, y)
    assert np.abs(big.params_["W1"]).max() < 1e-2 * np.abs(small.params_["W1"]).max()
    assert np.std(big.predict(X)) < 0.05 * np.std(y)


def test_prediction_contract(rng):
    X = rng.standard_normal((30, 4))
    y = np.abs(rng.standard_normal(30)) * 5
    model = MLPAHIRegressor(max_epochs=200).fit(X, y)
    far = rng.standard_normal((20, 4)) * 100
    assert np.all(model.predict(far) >= 0)
    np.testing.assert_array_equal(model.predict(X), model.predict(X))
    assert all(isinstance(s, SeverityClass) for s in model.predict_severity(X))
    with pytest.raises(ValueError):
        model.predict(np.zeros((2, 3)))


def test_training_order_invariance(rng):
    X = rng.standard_normal((60, 6))
    y = X[:, 0] * 4 + rng.standard_normal(60)
    perm = rng.permutation(60)
    a = MLPAHIRegressor(max_epochs=300).fit(X, y)
    b = MLPAHIRegressor(max_epochs=300).fit(X[perm], y[perm])
    for k in a.params_:
        np.testing.assert_array_equal(a.params_[k], b.params_[k])


def test_standardisation_round_trip(rng):
    X = rng.standard_normal((20, 3)) * [1, 100, 0.01] + [5, -50, 3]
    model = MLPAHIRegressor(max_epochs=5).fit(X, rng.standard_normal(20))
    back = model._scale_X(X) * model.x_scale_ + model.x_mean_
    np.testing.assert_allclose(back, X, atol=1e-12)


def test_state_round_trip(rng):
    X = rng.standard_normal((20, 3))
    model = MLPAHIRegressor(max_epochs=50).fit(X, rng.standard_normal(20) + 5)
    clone = MLPAHIRegressor.from_state(*model.get_state())
    np.testing.assert_array_equal(clone.predict(X), model.predict(X))


def test_empty_and_nonfinite():
    with pytest.raises(ValueError):
        MLPAHIRegressor().fit(np.zeros((0, 3)), np.zeros(0))
    with pytest.raises(FloatingPointError):
        MLPAHIRegressor(lr=1e12, l2_penalty=0, max_epochs=200).fit(
            np.arange(20.0).reshape(10, 2), np.arange(10.0) ** 3)


def test_oracle_concepts_give_high_r2():
    studies = generate_cohort(SynthConfig(n_studies=300, seed=17))
    X = fuse(oracle_concept_matrix(studies), [s.clinical for s in studies])
    y = np.array([s.reference_ahi for s in studies])
    model = MLPAHIRegressor().fit(X[:200], y[:200], X[200:250], y[200:250])
    assert r2(y[250:], model.predict(X[250:])) >= 0.9


# severity --------------------------------------------------------------------

@pytest.mark.parametrize("ahi, cls", [(0.0, "Normal"), (4.999, "Normal"), (5.0, "Mild"),
                                      (14.999, "Mild"), (15.0, "Moderate"), (30.0, "Severe")])
def test_severity_boundaries(ahi, cls):
    assert severity(ahi).label == cls
    assert int(severity_array([ahi])[0]) == int(severity(ahi))


def test_negative_ahi():
    with pytest.raises(ValueError):
        severity(-0.1)
    with pytest.raises(ValueError):
        severity_array([1.0, -1.0])


@given(st.floats(0, 1e4), st.floats(0, 1e4))
def test_severity_monotone(a, b):
    lo, hi = sorted((a, b))
    assert severity(lo) <= severity(hi)
