import math

import numpy as np
import pytest

from binode.autodiff import Tape, backward, lift
from binode.errors import DivergenceError
from binode.nnp import Nnp, NnpSpec, fit_surface, forward, forward_batch, forward_vars, init
from binode.ratelaws import TARGETS, sample_dataset
from binode.training import TrainConfig


def zero_net(spec):
    net = init(spec, 0)
    net.set_params(np.zeros(spec.n_params))
    return net


def test_spec_validation():
    with pytest.raises(ValueError):
        NnpSpec((False, False))
    with pytest.raises(ValueError):
        NnpSpec((True,), hidden_layers=0)
    with pytest.raises(ValueError):
        NnpSpec((True,), hidden_activation="tanh")
    with pytest.raises(ValueError):
        NnpSpec((True, True), monotone=(True,))
    spec = NnpSpec((True, False, True), 2, 3)
    assert spec.input_dim == 2 and list(spec.layer_sizes) == [2, 3, 3, 1]


def test_layer_shapes_chain():
    net = init(NnpSpec((True, True, False), 3, 4), 1)
    shapes = [W.shape for W in net.weights]
    assert shapes == [(4, 2), (4, 4), (4, 4), (1, 4)]
    assert [b.shape for b in net.biases] == [(4,), (4,), (4,), (1,)]


def test_init_bounds_fan_in_four():
    net = init(NnpSpec((True,) * 4, 1, 6), 3)
    assert np.all(np.abs(net.weights[0]) <= 0.5) and np.all(np.abs(net.biases[0]) <= 0.5)
    bound = 6 ** -0.5
    assert np.all(np.abs(net.weights[1]) <= bound)


def test_init_deterministic():
    spec = NnpSpec((True, True), 3, 3)
    assert np.array_equal(init(spec, 7).params, init(spec, 7).params)
    assert not np.array_equal(init(spec, 7).params, init(spec, 8).params)


def test_init_mean_fan_in_one():
    # 1 input, width 1: first layer weight and bias have fan-in 1 -> U(-1, 1)
    spec = NnpSpec((True,), 1, 1)
    vals = np.concatenate([init(spec, s).params[:2] for s in range(50000)])
    assert vals.size == 100000
    assert abs(vals.mean()) < 0.01
    assert vals.min() >= -1.0 and vals.max() <= 1.0


def test_zero_params_outputs():
    assert forward(zero_net(NnpSpec((True, True))), [3.0, -1.0]) == pytest.approx(math.log(2), abs=1e-15)
    assert forward(zero_net(NnpSpec((True,), output_activation="relu")), [5.0]) == 0.0


def test_masked_coordinate_ignored(rng):
    net = init(NnpSpec((True, False, True)), 4)
    x = rng.uniform(0, 2, 3)
    y = x.copy()
    y[1] = 1e6
    assert forward(net, x) == forward(net, y)


def test_masked_coordinate_has_zero_gradient():
    net = init(NnpSpec((True, False)), 4)
    tape = Tape()
    xs = [lift(0.3, tape, param=True), lift(0.9, tape, param=True)]
    ps = [lift(v, tape) for v in net.params]
    g = backward(tape, forward_vars(net, xs, ps))
    assert g[1] == 0.0 and g[0] != 0.0


def test_dimension_mismatch():
    net = init(NnpSpec((True, True)), 0)
    with pytest.raises(ValueError):
        forward(net, [1.0, 2.0, 3.0])


def test_tape_forward_matches_kernel(rng):
    net = init(NnpSpec((True, True, True), 3, 4, monotone=(True, False, True)), 5)
    x = rng.uniform(-1, 1, 3)
    tape = Tape()
    v = forward_vars(net, [lift(a, tape) for a in x], [lift(p, tape) for p in net.params])
    assert v.value == forward(net, x)


def test_nonnegative_outputs(rng):
    X = rng.uniform(-10, 10, (10000, 2))
    for seed in range(3):
        assert np.all(forward_batch(init(NnpSpec((True, True)), seed), X) > 0)
        relu = init(NnpSpec((True, True), output_activation="relu"), seed)
        assert np.all(forward_batch(relu, X) >= 0)


def test_monotone_constraint(rng):
    spec = NnpSpec((True, True), 3, 5, monotone=(True, False))
    for seed in range(3):
        net = init(spec, seed)
        eff = net.effective_weights()
        assert np.all(eff[0][:, 0] >= 0) and np.all(eff[1] >= 0) and np.all(eff[2] >= 0)
        a = rng.uniform(-2, 2, (1000, 2))
        b = a.copy()
        b[:, 0] += rng.uniform(0, 1, 1000)
        assert np.all(forward_batch(net, b) >= forward_batch(net, a))


def test_params_roundtrip():
    net = init(NnpSpec((True, True), 2, 3), 1)
    clone = Nnp.from_params(net.spec, net.params)
    assert np.array_equal(clone.params, net.params)
    assert np.array_equal(clone.weights[0], net.weights[0])


def test_fit_constant_target():
    X = np.random.default_rng(0).uniform(0, 2, (200, 1))
    y = np.full(200, 0.7)
    res = fit_surface(init(NnpSpec((True,), 1, 1, output_activation="identity"), 0), X, y,
                      TrainConfig(epochs=3000, lr=1e-2))
    assert res.loss < 1e-8


def test_fit_linear_target_one_by_one():
    # 2x+1 on [0, 2]: an ELU unit with positive pre-activation is linear, so an exact fit exists
    X = np.random.default_rng(1).uniform(0, 2, (200, 1))
    y = 2 * X[:, 0] + 1
    res = fit_surface(init(NnpSpec((True,), 1, 1, output_activation="identity"), 2), X, y,
                      TrainConfig(epochs=4000, lr=2e-2))
    assert res.loss < 1e-6


def test_fit_bisubstrate_three_by_four():
    t = TARGETS["bisubstrate_mm"]
    X, y = sample_dataset(t, t.lo, t.hi, 5000, 0)
    small = fit_surface(init(NnpSpec((True, True), 1, 1, output_activation="identity"), 0), X, y,
                        TrainConfig(epochs=1000))
    big = fit_surface(init(NnpSpec((True, True), 3, 4, output_activation="identity"), 0), X, y,
                      TrainConfig(epochs=1000))
    assert big.loss < 1e-3 and big.loss < small.loss / 10
    assert big.history[big.best_iteration] == big.loss


def test_fit_divergence_reports_iteration():
    X = np.ones((4, 1))
    y = np.array([1.0, 1.0, 1.0, np.inf])
    with pytest.raises(DivergenceError) as info:
        fit_surface(init(NnpSpec((True,), 1, 1, output_activation="identity"), 0), X, y, TrainConfig(epochs=5))
    assert info.value.iteration == 0


def test_fit_rejects_empty():
    with pytest.raises(ValueError):
        fit_surface(init(NnpSpec((True,)), 0), np.zeros((0, 1)), np.zeros(0), TrainConfig(epochs=1))
