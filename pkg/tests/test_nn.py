import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from peglab.nn import (
    Adam,
    Mlp,
    categorical_entropy,
    categorical_logprob,
    categorical_sample,
    clip_grad_norm,
    entropy_grad,
    format_networks,
    gradient_check,
    load_networks,
    log_softmax,
    numerical_gradients,
    max_relative_error,
    parse_networks,
    save_networks,
    softmax,
)


def test_zero_net_outputs_zero():
    net = Mlp([3, 4, 2])
    for p in net.params:
        p[...] = 0.0
    assert np.array_equal(net(np.ones(3)), np.zeros(2))


def test_identity_single_layer_passthrough():
    net = Mlp([3, 3])
    net.params[0][...] = np.eye(3)
    net.params[1][...] = 0.0
    x = np.array([0.5, -2.0, 3.0])
    assert np.array_equal(net(x), x)


def test_sigmoid_head_range():
    net = Mlp([4, 8, 8, 1], output="sigmoid", rng=np.random.default_rng(1), output_gain=5.0)
    out = net(np.random.default_rng(2).normal(size=(100, 4)) * 3)
    assert ((out > 0) & (out < 1)).all()


def test_dimension_mismatch():
    with pytest.raises(ValueError):
        Mlp([3, 2])(np.ones(4))
    net = Mlp([3, 2])
    _, cache = net.forward_cache(np.ones((5, 3)))
    with pytest.raises(ValueError):
        net.backward(cache, np.ones((5, 3)))


@pytest.mark.parametrize("output", ["identity", "sigmoid"])
def test_backward_matches_finite_differences(output):
    rng = np.random.default_rng(0)
    net = Mlp([3, 6, 5, 2], output=output, rng=rng)
    x = rng.normal(size=(4, 3))
    w = rng.normal(size=(4, 2))
    err = gradient_check(net, lambda o: (float(np.sum(w * o)), w), x)
    assert err < 1e-4


def test_input_gradient_matches_finite_differences():
    rng = np.random.default_rng(3)
    net = Mlp([3, 5, 1], rng=rng)
    x = rng.normal(size=3)
    _, cache = net.forward_cache(x)
    _, gx = net.backward(cache, np.ones(1))
    h = 1e-6
    num = np.array([(net(x + h * e)[0] - net(x - h * e)[0]) / (2 * h) for e in np.eye(3)])
    assert np.allclose(gx, num, atol=1e-8)


def test_backward_linearity_and_zero():
    rng = np.random.default_rng(4)
    net = Mlp([2, 4, 3], rng=rng)
    x = rng.normal(size=(6, 2))
    g = rng.normal(size=(6, 3))
    _, cache = net.forward_cache(x)
    one, _ = net.backward(cache, g)
    two, _ = net.backward(cache, 2 * g)
    zero, _ = net.backward(cache, np.zeros_like(g))
    for a, b, z in zip(one, two, zero):
        assert np.allclose(2 * a, b, rtol=0, atol=1e-14)
        assert not z.any()


def test_preactivation_backward_skips_sigmoid():
    rng = np.random.default_rng(5)
    net = Mlp([2, 3, 1], output="sigmoid", rng=rng)
    x = rng.normal(size=(4, 2))
    out, cache = net.forward_cache(x)
    full, _ = net.backward(cache, np.ones((4, 1)))
    pre, _ = net.backward(cache, out * (1 - out), preactivation=True)
    for a, b in zip(full, pre):
        assert np.allclose(a, b, atol=1e-14)


def test_uniform_entropy_and_degenerate():
    assert categorical_entropy(np.zeros(5)) == pytest.approx(np.log(5))
    logits = np.array([100.0, 0, 0, 0, 0])
    assert categorical_entropy(logits) == pytest.approx(0.0, abs=1e-30)
    assert categorical_logprob(logits[None], np.array([0]))[0] == pytest.approx(0.0, abs=1e-30)


@given(st.lists(st.floats(-50, 50), min_size=2, max_size=8))
def test_softmax_sums_to_one(logits):
    assert abs(softmax(np.array(logits)).sum() - 1.0) < 1e-12


def test_nan_logits_rejected():
    with pytest.raises(ValueError):
        log_softmax(np.array([0.0, np.nan]))


def test_sample_frequencies_match_probabilities():
    logits = np.array([1.0, 0.0, -1.0, 2.0, 0.5])
    rng = np.random.default_rng(7)
    draws = categorical_sample(np.repeat(logits[None], 100_000, axis=0), rng)
    freq = np.bincount(draws, minlength=5) / len(draws)
    assert np.abs(freq - softmax(logits)).max() < 0.01
    assert np.isfinite(categorical_logprob(np.repeat(logits[None], 10, 0), draws[:10])).all()


def test_entropy_gradient_matches_finite_differences():
    rng = np.random.default_rng(8)
    logits = rng.normal(size=(3, 5))
    g = entropy_grad(logits)
    h = 1e-6
    num = np.zeros_like(logits)
    for idx in np.ndindex(logits.shape):
        e = np.zeros_like(logits)
        e[idx] = h
        num[idx] = (categorical_entropy(logits + e)[idx[0]] - categorical_entropy(logits - e)[idx[0]]) / (2 * h)
    assert np.allclose(g, num, atol=1e-8)


def test_entropy_bonus_gradient_check_on_networks():
    for seed in range(20):
        rng = np.random.default_rng(seed)
        net = Mlp([4, 8, 8, 5], rng=rng)
        x = rng.normal(size=(6, 4))

        def loss(out):
            return float(-categorical_entropy(out).mean()), -entropy_grad(out) / len(out)

        assert gradient_check(net, loss, x) < 1e-4


def test_adam_zero_grads_and_first_step():
    p = [np.array([1.0, -2.0])]
    opt = Adam(p, lr=0.1)
    opt.step([np.zeros(2)])
    assert np.array_equal(p[0], [1.0, -2.0])
    q = [np.array([0.5])]
    Adam(q, lr=0.01).step([np.array([3.0])])
    assert q[0][0] == pytest.approx(0.5 - 0.01, abs=1e-9)
    r = [np.array([0.5])]
    Adam(r, lr=0.01).step([np.array([-3.0])])
    assert r[0][0] == pytest.approx(0.51, abs=1e-9)


def test_adam_is_deterministic():
    def run():
        net = Mlp([2, 4, 1], rng=np.random.default_rng(1))
        opt = Adam(net.params, lr=1e-2)
        x = np.random.default_rng(2).normal(size=(8, 2))
        for _ in range(20):
            out, cache = net.forward_cache(x)
            grads, _ = net.backward(cache, 2 * out / len(out))
            opt.step(grads)
        return net.flat_params()

    assert np.array_equal(run(), run())


def test_adam_rejects_shape_mismatch():
    with pytest.raises(ValueError):
        Adam([np.zeros(2)]).step([np.zeros(3)])


def test_clip_grad_norm():
    g = [np.array([3.0, 4.0])]
    assert clip_grad_norm(g, 1.0) == pytest.approx(5.0)
    assert np.linalg.norm(g[0]) == pytest.approx(1.0)


def test_checkpoint_round_trip(tmp_path):
    nets = {"a/actor": Mlp([3, 4, 2], rng=np.random.default_rng(1)), "d": Mlp([2, 3, 1], output="sigmoid")}
    save_networks(tmp_path / "ck.txt", nets)
    loaded = load_networks(tmp_path / "ck.txt")
    assert set(loaded) == set(nets)
    for k in nets:
        assert loaded[k].output == nets[k].output
        assert np.array_equal(loaded[k].flat_params(), nets[k].flat_params())
    assert parse_networks(format_networks(nets))["d"].layer_dims == [2, 3, 1]


def test_numerical_helpers():
    net = Mlp([1, 1])
    net.params[0][...] = 2.0
    grads = numerical_gradients(net, lambda o: float(o.sum()), np.array([[3.0]]))
    assert grads[0][0, 0] == pytest.approx(3.0)
    assert max_relative_error([np.array([1.0])], [np.array([1.0])]) == 0.0
