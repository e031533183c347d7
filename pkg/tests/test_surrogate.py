import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from islandsched.surrogate import (ActivationBounds, Layer, NeuralNet, Normalizer, TrainingError,
                                   activation_bounds, evaluate, fold_normalization, forward,
                                   init_net, load_weights, loss_and_grad, input_box,
                                   pre_activations, train, train_split)


def random_net(sizes, seed=0):
    rng = np.random.default_rng(seed)
    net = init_net(sizes, rng)
    for l in net.layers:
        l.b[:] = rng.normal(0, 0.3, l.b.shape)
    return net


def test_forward_by_hand():
    net = NeuralNet([Layer(np.array([[1.0, -1.0]]), np.array([0.0, 0.5])),
                     Layer(np.array([[2.0], [3.0]]), np.array([0.1]), "linear")])
    # x = 1: hidden relu([1, -0.5]) = [1, 0]
    assert forward(net, [1.0]) == pytest.approx(2.1)
    # x = -1: hidden relu([-1, 1.5]) = [0, 1.5]
    assert forward(net, [-1.0]) == pytest.approx(4.6)
    np.testing.assert_allclose(forward(net, [[1.0], [-1.0]]), [2.1, 4.6])
    with pytest.raises(ValueError):
        forward(net, [1.0, 2.0])


def test_net_validation():
    with pytest.raises(ValueError):
        NeuralNet([Layer(np.ones((2, 3)), np.zeros(3)), Layer(np.ones((2, 1)), np.zeros(1), "linear")])
    with pytest.raises(ValueError):
        NeuralNet([Layer(np.ones((2, 1)), np.zeros(1), "relu")])


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000))
def test_gradient_matches_finite_differences(seed):
    net = random_net([3, 5, 4, 1], seed)
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(7, 3))
    y = rng.normal(size=7)
    _, grads = loss_and_grad(net, x, y)
    h = 1e-6
    for lyr, (gw, gb) in zip(net.layers, grads):
        for arr, g in ((lyr.w, gw), (lyr.b, gb)):
            idx = tuple(rng.integers(0, s) for s in arr.shape)
            old = arr[idx]
            arr[idx] = old + h
            up = loss_and_grad(net, x, y)[0]
            arr[idx] = old - h
            dn = loss_and_grad(net, x, y)[0]
            arr[idx] = old
            assert g[idx] == pytest.approx((up - dn) / (2 * h), rel=1e-4, abs=1e-6)


def test_fold_normalization_is_exact():
    rng = np.random.default_rng(3)
    net = random_net([4, 6, 1])
    x = rng.normal(3.0, 2.0, size=(50, 4))
    norm = Normalizer.fit(x, rng.normal(5.0, 0.5, 50))
    folded = fold_normalization(net, norm)
    expect = forward(net, (x - norm.mean) / norm.scale) * norm.y_scale + norm.y_mean
    np.testing.assert_allclose(forward(folded, x), expect, rtol=1e-12, atol=1e-12)


def test_save_load_roundtrip(tmp_path):
    net = random_net([4, 8, 8, 1])
    net.feature_names = ["a", "b", "c", "d"]
    bounds = activation_bounds(net, *input_box(net))
    net.save(tmp_path / "w.json", bounds, seed=3)
    back, b2 = load_weights(tmp_path / "w.json")
    x = np.random.default_rng(0).uniform(-1, 1, (20, 4))
    np.testing.assert_array_equal(forward(back, x), forward(net, x))
    assert back.feature_names == net.feature_names
    for a, b in zip(bounds.lo + bounds.raw_hi, b2.lo + b2.raw_hi):
        np.testing.assert_array_equal(a, b)
    assert (b2.out_lo, b2.out_hi) == (bounds.out_lo, bounds.out_hi)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.lists(st.integers(2, 12), min_size=1, max_size=3))
def test_interval_bounds_contain_every_preactivation(seed, hidden):
    net = random_net([4, *hidden, 1], seed)
    lo, hi = input_box(net)
    b = activation_bounds(net, lo, hi)
    x = np.random.default_rng(seed).uniform(lo, hi, size=(300, 4))
    for m, z in enumerate(pre_activations(net, x)):
        assert np.all(z >= b.raw_lo[m] - 1e-9) and np.all(z <= b.raw_hi[m] + 1e-9)
        assert np.all(b.lo[m] < 0) and np.all(b.hi[m] > 0)
        assert np.all(b.lo[m] <= np.minimum(b.raw_lo[m], 0)) and np.all(b.hi[m] >= np.maximum(b.raw_hi[m], 0))
    y = forward(net, x)
    assert np.all(y >= b.out_lo - 1e-9) and np.all(y <= b.out_hi + 1e-9)


def test_activation_bounds_validation():
    net = random_net([4, 3, 1])
    with pytest.raises(ValueError):
        activation_bounds(net, np.zeros(3), np.ones(3))
    with pytest.raises(ValueError):
        ActivationBounds([np.array([0.5])], [np.array([1.0])])


def test_input_box():
    lo, hi = input_box(random_net([4, 3, 1]))
    assert lo.tolist() == [0, 0, 0, -2] and hi.tolist() == [1, 1, 3, 2]


def test_training_fits_a_piecewise_linear_target():
    rng = np.random.default_rng(0)
    x = rng.uniform(-1, 1, size=(400, 2))
    y = np.maximum(x[:, 0] + 0.5 * x[:, 1], 0.0) + 0.2
    res = train(x, y, hidden=(16,), epochs=3000, lr=1e-2, seed=1)
    assert evaluate(res.net, x, y)["max_abs_hz"] < 0.05
    assert res.history[-1] < res.history[0]
    again = train(x, y, hidden=(16,), epochs=3000, lr=1e-2, seed=1)
    np.testing.assert_array_equal(forward(again.net, x), forward(res.net, x))


def test_train_split_keeps_best_validation_epoch():
    rng = np.random.default_rng(0)
    x = rng.uniform(-1, 1, size=(200, 2))
    y = np.abs(x[:, 0]) + 0.5
    res = train_split(x, y, hidden=(8,), epochs=500, lr=1e-2, seed=2, patience=50)
    assert len(res.val_history) == res.epochs
    assert res.epochs <= 500


def test_training_errors():
    with pytest.raises(TrainingError):
        train(np.zeros((0, 2)), np.zeros(0))


def test_evaluate_relative_error_ignores_tiny_labels():
    net = NeuralNet([Layer(np.zeros((1, 1)), np.zeros(1)), Layer(np.zeros((1, 1)), np.array([1.0]), "linear")])
    m = evaluate(net, np.zeros((3, 1)), np.array([0.0, 1.0, 2.0]))
    assert m["max_abs_hz"] == pytest.approx(1.0)
    assert m["mean_rel"] == pytest.approx(0.25)


def test_single_neuron_bounds_widen_by_five_percent():
    net = NeuralNet([Layer(np.array([[1.0]]), np.zeros(1)),
                     Layer(np.array([[1.0]]), np.zeros(1), "linear")])
    b = activation_bounds(net, [-2.0], [2.0])
    assert b.lo[0][0] == pytest.approx(-2.1) and b.hi[0][0] == pytest.approx(2.1)
