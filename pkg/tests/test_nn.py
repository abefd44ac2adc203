import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from sleepcbm.nn import (LSTM, Adam, AttentionParams, BatchNorm1D, BiLSTM, Conv1D,
                         DeepAttention, Dense, Dropout, LayerState, LeakyReLU, MaxPool1D,
                         MissingCacheError, ReLU, adam_step, attention_backward,
                         attention_forward, bilstm_forward, grad_check, load_bundle,
                         mae_loss, numerical_gradient, rel_error, save_bundle, softmax)

TOL, H = 1e-4, 1e-5
N_SHAPES = 20


def _shapes(seed, n=N_SHAPES):
    rng = np.random.default_rng(seed)
    return [tuple(int(v) for v in rng.integers(1, 4, 3)) for _ in range(n)]


def _assert_pass(layer, shape, training=False, seed=0):
    report = grad_check(layer, shape, TOL, H, training=training, seed=seed)
    assert report.passed, (type(layer).__name__, shape, report.errors)


# finite-difference checks over random shapes ---------------------------------

@pytest.mark.parametrize("i", range(N_SHAPES))
def test_conv1d_gradients(i):
    rng = np.random.default_rng(100 + i)
    n, c, f = rng.integers(1, 4, 3)
    k = int(rng.integers(1, 8))
    t = int(rng.integers(1, 12))
    _assert_pass(Conv1D(int(c), int(f), k, rng), (int(n), t, int(c)), seed=i)


@pytest.mark.parametrize("i", range(N_SHAPES))
def test_batchnorm_gradients(i):
    rng = np.random.default_rng(200 + i)
    n, t, c = int(rng.integers(1, 4)), int(rng.integers(2, 8)), int(rng.integers(1, 4))
    layer = BatchNorm1D(c)
    layer.params["gamma"] = rng.uniform(0.5, 2, c)
    layer.params["beta"] = rng.standard_normal(c)
    _assert_pass(layer, (n, t, c), training=True, seed=i)
    _assert_pass(layer, (n, t, c), training=False, seed=i)


@pytest.mark.parametrize("i", range(N_SHAPES))
def test_activation_and_pool_gradients(i):
    rng = np.random.default_rng(300 + i)
    n, t, c = int(rng.integers(1, 4)), int(rng.integers(1, 12)), int(rng.integers(1, 4))
    _assert_pass(LeakyReLU(float(rng.uniform(0, 0.3))), (n, t, c), seed=i)
    _assert_pass(ReLU(), (n, t, c), seed=i)
    pool = int(rng.integers(1, 5))
    stride = int(rng.integers(1, pool + 1))
    if t >= pool:
        _assert_pass(MaxPool1D(pool, stride), (n, t, c), seed=i)


@pytest.mark.parametrize("i", range(N_SHAPES))
def test_bilstm_gradients(i):
    rng = np.random.default_rng(400 + i)
    n, t = int(rng.integers(1, 3)), int(rng.integers(1, 7))
    d, h = int(rng.integers(1, 4)), int(rng.integers(1, 5))
    _assert_pass(BiLSTM(d, h, rng), (n, t, d), seed=i)


def test_bilstm_reference_shape_gradients():
    _assert_pass(BiLSTM(3, 4, np.random.default_rng(1)), (1, 6, 3))


@pytest.mark.parametrize("i", range(N_SHAPES))
def test_dense_and_dropout_off_gradients(i):
    rng = np.random.default_rng(500 + i)
    shape = tuple(int(v) for v in rng.integers(1, 5, 2))
    out = int(rng.integers(1, 5))
    _assert_pass(Dense(shape[-1], out, rng), shape, seed=i)
    _assert_pass(Dropout(0.3, rng), (*shape, 2), training=False, seed=i)
    _assert_pass(Dropout(0.0, rng), (*shape, 2), training=True, seed=i)


@pytest.mark.parametrize("i", range(N_SHAPES))
def test_attention_gradients(i):
    rng = np.random.default_rng(600 + i)
    n, t, d, u = (int(v) for v in rng.integers(1, 6, 4))
    _assert_pass(DeepAttention(t, d, u, rng), (n, t, d), seed=i)


def test_spec_grad_check_examples():
    assert grad_check(Dense(2, 3), (3, 2), TOL).passed
    assert grad_check(DeepAttention(8, 4, 5), (1, 8, 4), TOL).passed


def test_dropout_training_backward_uses_mask():
    layer = Dropout(0.5, np.random.default_rng(3))
    x = np.ones((4, 50))
    out = layer.forward(x, training=True)
    assert set(np.unique(out)) <= {0.0, 2.0}
    np.testing.assert_array_equal(layer.backward(np.ones_like(x)), out)


class _SignFlippedDense(Dense):
    def backward(self, dout):
        dx = super().backward(dout)
        self.grads["W"] = -self.grads["W"]
        return dx


def test_corrupted_backward_fails():
    report = grad_check(_SignFlippedDense(3, 2), (4, 3), TOL)
    assert not report.passed
    assert report.errors["W"] > 0.5 and report.errors["input"] < TOL


def test_rel_error_and_numerical_gradient():
    assert rel_error([1.0], [1.0]) == 0.0
    x = np.array([1.0, -2.0, 3.0])
    g = numerical_gradient(lambda: float(np.sum(x ** 3)), x)
    np.testing.assert_allclose(g, 3 * x ** 2, rtol=1e-8)


# attention -----------------------------------------------------------------

def _params(rng, t, d, u, wc_zero=False):
    return AttentionParams(rng.standard_normal((d, u)),
                           np.zeros((u, 1)) if wc_zero else rng.standard_normal((u, 1)),
                           rng.standard_normal((t, u)))


def test_attention_uniform_when_wc_zero(rng):
    x = rng.standard_normal((7, 3))
    context, alpha, _ = attention_forward(x, _params(rng, 7, 3, 4, wc_zero=True))
    np.testing.assert_allclose(alpha, 1 / 7, rtol=0, atol=1e-15)
    np.testing.assert_allclose(context, x.mean(axis=0), atol=1e-14)


def test_attention_single_step(rng):
    x = rng.standard_normal((1, 5))
    context, alpha, _ = attention_forward(x, _params(rng, 1, 5, 3))
    assert alpha.tolist() == [1.0]
    np.testing.assert_array_equal(context, x[0])


def test_attention_weights_sum_to_one(rng):
    for _ in range(20):
        t, d, u = rng.integers(1, 12, 3)
        _, alpha, _ = attention_forward(rng.standard_normal((t, d)) * 5, _params(rng, t, d, u))
        assert abs(alpha.sum() - 1) < 1e-12 and np.all(alpha > 0)


def test_attention_zero_upstream(rng):
    _, _, cache = attention_forward(rng.standard_normal((8, 4)), _params(rng, 8, 4, 5))
    grads = attention_backward(cache, np.zeros(4))
    assert all(not np.any(g) for g in grads.values())


def test_attention_functional_matches_finite_differences(rng):
    x = rng.standard_normal((8, 4))
    p = _params(rng, 8, 4, 5)
    g = rng.standard_normal(4)
    _, _, cache = attention_forward(x, p)
    grads = attention_backward(cache, g)

    def f():
        return float(attention_forward(x, p)[0] @ g)

    for name, arr in (("x", x), ("W", p.W), ("W_c", p.W_c), ("b", p.b)):
        assert rel_error(grads[name], numerical_gradient(f, arr, H)) < TOL, name


def test_attention_wc_gradient_uniform_closed_form(rng):
    """With alpha uniform, dW_c = F^T (s - mean(s)) / T where s_t = x_t . g."""
    t = 6
    x = rng.standard_normal((t, 4))
    p = _params(rng, t, 4, 5, wc_zero=True)
    g = rng.standard_normal(4)
    _, _, cache = attention_forward(x, p)
    F = np.tanh(x @ p.W + p.b)
    s = x @ g
    expected = F.T @ (s - s.mean()) / t
    np.testing.assert_allclose(attention_backward(cache, g)["W_c"][:, 0], expected, atol=1e-14)


def test_attention_errors(rng):
    with pytest.raises(ValueError):
        attention_forward(rng.standard_normal((8, 4)), _params(rng, 7, 4, 5))
    with pytest.raises(MissingCacheError):
        attention_backward(None, np.zeros(4))
    layer = DeepAttention(4, 2, 3)
    with pytest.raises(MissingCacheError):
        layer.backward(np.zeros((1, 2)))


@given(arrays(np.float64, st.integers(1, 20), elements=st.floats(-50, 50)),
       st.floats(-100, 100))
def test_softmax_properties(e, c):
    p = softmax(e)
    assert np.all(p > 0) and abs(p.sum() - 1) < 1e-12
    np.testing.assert_allclose(softmax(e + c), p, rtol=1e-9, atol=1e-15)


# recurrent -----------------------------------------------------------------

def _zero_lstm_params(d, h):
    return {"Wx": np.zeros((d, 4 * h)), "Wh": np.zeros((h, 4 * h)), "b": np.zeros(4 * h)}


def test_bilstm_zero_params_zero_output():
    out = bilstm_forward(np.zeros((5, 3)), _zero_lstm_params(3, 4), _zero_lstm_params(3, 4))
    assert out.shape == (5, 8) and not np.any(out)


def test_bilstm_reverse_symmetry(rng):
    def p():
        return {"Wx": rng.standard_normal((3, 16)), "Wh": rng.standard_normal((4, 16)),
                "b": rng.standard_normal(16)}

    fw, bw = p(), p()
    x = rng.standard_normal((6, 3))
    a = bilstm_forward(x, fw, bw)
    b = bilstm_forward(x[::-1], bw, fw)
    swapped = np.concatenate([a[:, 4:], a[:, :4]], axis=1)[::-1]
    np.testing.assert_allclose(b, swapped, atol=1e-13)


def test_bilstm_shape_errors(rng):
    with pytest.raises(ValueError):
        bilstm_forward(np.zeros((5, 2)), _zero_lstm_params(3, 4), _zero_lstm_params(3, 4))
    with pytest.raises(ValueError):
        LSTM(3, 2).forward(np.zeros((1, 4, 2)))


def test_lstm_forget_bias_initialised_to_one():
    b = LSTM(3, 5).params["b"]
    assert np.all(b[5:10] == 1.0)


# conv / pool / misc ---------------------------------------------------------

def test_conv_identity_kernel(rng):
    c = 3
    layer = Conv1D(c, c, 5)
    W = np.zeros((5, c, c))
    W[2] = np.eye(c)
    layer.params["W"] = W
    x = rng.standard_normal((2, 11, c))
    np.testing.assert_array_equal(layer.forward(x), x)


def test_conv_matches_direct_sum(rng):
    layer = Conv1D(2, 3, 4, rng)
    layer.params["b"] = rng.standard_normal(3)
    x = rng.standard_normal((2, 9, 2))
    out = layer.forward(x)
    left = (4 - 1) // 2
    W, b = layer.params["W"], layer.params["b"]
    for n in range(2):
        for t in range(9):
            acc = b.copy()
            for j in range(4):
                s = t + j - left
                if 0 <= s < 9:
                    acc += x[n, s] @ W[j]
            np.testing.assert_allclose(out[n, t], acc, atol=1e-12)


def test_conv_tap_fallback_matches(rng):
    layer = Conv1D(2, 3, 5, rng)
    x = rng.standard_normal((2, 13, 2))
    full = layer.forward(x)
    dfull = layer.backward(np.ones_like(full))
    grads = {k: v.copy() for k, v in layer.grads.items()}
    layer.max_im2col_bytes = 0
    np.testing.assert_allclose(layer.forward(x), full, atol=1e-12)
    np.testing.assert_allclose(layer.backward(np.ones_like(full)), dfull, atol=1e-12)
    for k in grads:
        np.testing.assert_allclose(layer.grads[k], grads[k], atol=1e-12)


def test_maxpool_example():
    out = MaxPool1D(2, 2).forward(np.array([1.0, 3, 2, 5]).reshape(1, 4, 1))
    assert out.ravel().tolist() == [3.0, 5.0]


def test_shape_mismatch_errors():
    with pytest.raises(ValueError):
        Conv1D(2, 3, 3).forward(np.zeros((1, 5, 4)))
    with pytest.raises(ValueError):
        Dense(3, 2).forward(np.zeros((2, 4)))
    with pytest.raises(MissingCacheError):
        Dense(3, 2).backward(np.zeros((2, 2)))


def test_batchnorm_training_statistics(rng):
    layer = BatchNorm1D(3, momentum=0.9)
    x = rng.standard_normal((4, 50, 3)) * [1, 5, 0.1] + [3, -2, 10]
    out = layer.forward(x, training=True).reshape(-1, 3)
    np.testing.assert_allclose(out.mean(axis=0), 0, atol=1e-12)
    flat = x.reshape(-1, 3)
    var = flat.var(axis=0)
    # unit variance up to the eps regulariser
    np.testing.assert_allclose(out.var(axis=0), var / (var + layer.eps), rtol=1e-9)
    assert np.all(np.abs(out.var(axis=0)[:2] - 1) < 1e-3)
    np.testing.assert_allclose(layer.running_mean, 0.1 * flat.mean(axis=0), atol=1e-12)
    np.testing.assert_allclose(layer.running_var, 0.9 + 0.1 * flat.var(axis=0), rtol=1e-6)


def test_dropout_identity_cases(rng):
    x = rng.standard_normal((3, 4))
    assert Dropout(0.0).forward(x, training=True) is x
    assert Dropout(0.9).forward(x, training=False) is x


# loss and optimiser ----------------------------------------------------------

def test_mae_examples():
    assert mae_loss(np.array([2.0, 4.0]), np.array([1.0, 2.0]))[0] == 1.5
    v = np.array([1.0, -3.0])
    loss, grad = mae_loss(v, v)
    assert loss == 0.0 and not np.any(grad)
    with pytest.raises(ValueError):
        mae_loss(np.zeros(2), np.zeros(3))


@given(arrays(np.float64, 6, elements=st.floats(-1e3, 1e3)),
       arrays(np.float64, 6, elements=st.floats(-1e3, 1e3)))
def test_mae_symmetric(a, b):
    assert mae_loss(a, b)[0] == mae_loss(b, a)[0]


def test_adam_single_step_oracle(rng):
    p = rng.standard_normal((3, 2))
    g = rng.standard_normal((3, 2))
    lr, eps = 0.01, 1e-8
    new = adam_step(LayerState({"w": p}), {"w": g}, lr, eps=eps)
    # bias-corrected moments after one step are g and g**2
    np.testing.assert_allclose(new.parameters["w"], p - lr * g / (np.abs(g) + eps), rtol=1e-12)
    assert new.step_count == 1


def test_adam_zero_gradient_and_determinism(rng):
    p = rng.standard_normal(4)
    state = LayerState({"w": p})
    new = adam_step(state, {"w": np.zeros(4)}, 0.1)
    np.testing.assert_array_equal(new.parameters["w"], p)
    g = {"w": rng.standard_normal(4)}
    a, b = adam_step(state, g, 0.1), adam_step(state, g, 0.1)
    np.testing.assert_array_equal(a.parameters["w"], b.parameters["w"])
    np.testing.assert_array_equal(state.parameters["w"], p)


def test_adam_shape_errors():
    with pytest.raises(ValueError):
        adam_step(LayerState({"w": np.zeros(3)}), {"w": np.zeros(4)}, 0.1)
    with pytest.raises(ValueError):
        LayerState({"w": np.zeros(3)}, m={"w": np.zeros(2)})


def test_adam_optimizer_reduces_loss(rng):
    layer = Dense(3, 1, rng)
    x = rng.standard_normal((40, 3))
    y = x @ np.array([[1.0], [-2.0], [0.5]])
    opt = Adam([layer], lr=0.05)
    losses = []
    for _ in range(200):
        loss, g = mae_loss(layer.forward(x), y)
        layer.backward(g)
        opt.step()
        losses.append(loss)
    assert losses[-1] < 0.1 * losses[0]


# serialisation ---------------------------------------------------------------

def test_bundle_round_trip(tmp_path, rng):
    arrays_in = {"a": rng.standard_normal((2, 3)), "b": np.arange(4.0)}
    save_bundle(tmp_path, {"kind": "x", "seed": 42}, arrays_in)
    meta, arrays_out = load_bundle(tmp_path)
    assert meta == {"kind": "x", "seed": 42}
    assert list(arrays_out) == ["a", "b"]
    for k in arrays_in:
        np.testing.assert_array_equal(arrays_out[k], arrays_in[k])
    assert (tmp_path / "params.bin").stat().st_size == 10 * 8


def test_bundle_truncated(tmp_path):
    save_bundle(tmp_path, {}, {"a": np.zeros(4)})
    blob = tmp_path / "params.bin"
    blob.write_bytes(blob.read_bytes()[:-8])
    with pytest.raises(ValueError):
        load_bundle(tmp_path)
    blob.unlink()
    with pytest.raises(FileNotFoundError):
        load_bundle(tmp_path)
