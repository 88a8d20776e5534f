import io

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oracles import numeric_grad
from rlminer.agent.network import NetworkShape, RMSprop, ValueNetwork


def rel_error(a, b):
    return np.linalg.norm(a - b) / max(np.linalg.norm(a) + np.linalg.norm(b), 1e-12)


@pytest.mark.parametrize("instance", range(20))
def test_gradient_matches_finite_differences(instance):
    rng = np.random.default_rng(instance)
    shape = NetworkShape(vocab_size=7, token_dim=4, hidden=3, layers=1 + instance % 2)
    net = ValueNetwork(shape, seed=instance, dtype=np.float64)
    # move off the initial biases so every gate is exercised
    for p in net.params.values():
        p += rng.normal(0, 0.3, p.shape)
    t_len = int(rng.integers(2, 6))
    tokens = rng.integers(0, 7, size=(3, t_len))
    weights = rng.normal(size=3)

    def f():
        return float(weights @ net.forward(tokens))

    _, cache = net.forward(tokens, keep_cache=True)
    grads = net.backward(cache, weights)
    for name, param in net.params.items():
        num = numeric_grad(f, param, eps=1e-6)
        assert rel_error(grads[name], num) < 1e-4, name


def test_zero_output_weights_give_half():
    net = ValueNetwork(NetworkShape(5, 3, 4))
    net.params["W"][:] = 0
    np.testing.assert_array_equal(net.value([(0, 1, 2), (3, 4, 4, 4)]), [0.5, 0.5])


def test_values_in_unit_interval_and_batch_consistent():
    net = ValueNetwork(NetworkShape(9, 4, 5, 2), seed=3)
    rng = np.random.default_rng(0)
    seqs = [tuple(rng.integers(0, 9, size=int(rng.integers(2, 6)))) for _ in range(30)]
    together = net.value(seqs)
    alone = np.array([net.value([s])[0] for s in seqs])
    assert np.all((together > 0) & (together < 1))
    np.testing.assert_allclose(together, alone, rtol=1e-12)


def test_value_and_grad_sums_over_length_groups():
    net = ValueNetwork(NetworkShape(6, 3, 3), seed=1)
    seqs = [(0, 1, 2), (3, 4), (5, 0, 1), (2, 2)]
    dv = np.array([1.0, -2.0, 0.5, 3.0])
    _, grads = net.value_and_grad(seqs, lambda v: dv)
    ref = {k: np.zeros_like(v) for k, v in net.params.items()}
    for s, d in zip(seqs, dv):
        _, cache = net.forward(np.array([s]), keep_cache=True)
        for k, g in net.backward(cache, np.array([d])).items():
            ref[k] += g
    for k in ref:
        np.testing.assert_allclose(grads[k], ref[k], rtol=1e-10, atol=1e-14)


def test_float32_close_to_float64():
    a = ValueNetwork(NetworkShape(6, 4, 8), seed=2, dtype=np.float64)
    b = ValueNetwork(NetworkShape(6, 4, 8), seed=2, dtype="float32")
    seqs = [(0, 1, 2, 3), (4, 5, 5, 1)]
    assert b.value(seqs).dtype == np.float32
    np.testing.assert_allclose(a.value(seqs), b.value(seqs), atol=1e-5)


def test_checkpoint_round_trip(tmp_path):
    net = ValueNetwork(NetworkShape(6, 3, 4, 2), seed=5)
    buf = io.BytesIO()
    net.save(buf, fingerprint="abc", tokens={"sep": 4})
    buf.seek(0)
    back, header = ValueNetwork.load(buf)
    assert header["fingerprint"] == "abc" and header["tokens"] == {"sep": 4}
    assert back.shape == net.shape
    seqs = [(0, 4, 1, 5)]
    np.testing.assert_allclose(back.value(seqs), net.value(seqs), atol=1e-6)
    net.save(tmp_path / "v.bin")
    assert ValueNetwork.load(tmp_path / "v.bin")[0].shape == net.shape
    with pytest.raises(ValueError):
        ValueNetwork.load(io.BytesIO(b"x" * 32))


def test_copy_is_independent():
    net = ValueNetwork(NetworkShape(4, 2, 2))
    other = net.copy()
    other.params["W"] += 1
    assert not np.array_equal(net.params["W"], other.params["W"])


@settings(max_examples=30)
@given(st.floats(-5, 5), st.floats(0.01, 10))
def test_rmsprop_first_step_size(g, lr):
    # with a fresh accumulator the first step is lr * g / (sqrt(0.1 g^2) + eps)
    params = {"w": np.array([0.0])}
    opt = RMSprop(params, learning_rate=lr)
    opt.step(params, {"w": np.array([g])})
    expected = -lr * g / (np.sqrt(0.1 * g * g) + 1e-7)
    assert params["w"][0] == pytest.approx(expected, rel=1e-9, abs=1e-12)


def test_training_reduces_regression_error():
    net = ValueNetwork(NetworkShape(5, 4, 6), seed=0)
    seqs = [(0, 1, 2), (3, 4, 0), (1, 1, 1), (2, 3, 4)]
    target = np.array([0.9, 0.1, 0.7, 0.2])
    opt = RMSprop(net.params, 1e-2)
    before = np.abs(net.value(seqs) - target).mean()
    for _ in range(300):
        _, g = net.value_and_grad(seqs, lambda v: np.sign(v - target) / len(seqs))
        opt.step(net.params, g)
    assert np.abs(net.value(seqs) - target).mean() < min(before, 0.05)
