import math
import warnings

import numpy as np
import pytest

from binode.model import (BinodeModel, StoichiometricLayer, build_lv_binode, build_monod_binode,
                          build_pk_binode, build_ssystem_binode, build_ultradian_binode, extract_surface,
                          init_stoich)
from binode.nnp import NnpSpec, init
from binode.optim import AdamState, adam_step
from binode.refmodels import MonodParams, monod_field, monod_growth


def zeroed(model):
    m = model.copy()
    p = m.get_params()
    p[:m.n_net_params] = 0.0
    m.set_params(p)
    return m


def test_zero_stoichiometry_gives_zero_field(rng):
    m = build_monod_binode(seed=1)
    m.set_params(np.concatenate([m.get_params()[:m.n_net_params], np.zeros(4)]))
    assert np.array_equal(m.vector_field(rng.uniform(0, 1, 2)), np.zeros(2))


def test_monod_structure_with_exact_rates():
    p = MonodParams()
    x = np.array([0.005, 0.5])
    v = np.array([monod_growth(p, x[1]) * x[0], p.k_d * x[0]])
    W = np.array([[1.0, -1.0], [-1.0 / p.Y, 0.0]])
    expected = np.array([0.86 * 0.5 / 0.5138 * 0.005 - 0.03 * 0.005, -(0.86 * 0.5 / 0.5138 * 0.005) / 1.28])
    np.testing.assert_allclose(W @ v, expected, rtol=1e-12)
    np.testing.assert_allclose(monod_field(p, x), expected, rtol=1e-12)
    np.testing.assert_allclose(expected, [4.0377e-3, -3.2716e-3], rtol=1e-3)


def _rescaled_field(m, c, X):
    """W' (c V) summed in the kernels' order, with W' the column-rescaled layer."""
    s = m.copy()
    for j in range(m.k):
        s.stoich.scale_column(j, 1.0 / c)
    W, V = s.stoich.effective(), c * m.process_rates(X)
    out = np.zeros((X.shape[0], m.n))
    for i in range(m.n):
        for j in range(m.k):
            out[:, i] = out[:, i] + W[i, j] * V[:, j]
    return out


@pytest.mark.parametrize("build", [build_monod_binode, build_lv_binode,
                                   lambda seed: build_ssystem_binode(2, seed=seed, layers=2, width=2)])
def test_joint_rescaling_invariance(build, rng):
    m = build(seed=3)
    X = rng.uniform(0.1, 2, (100, m.n))
    ref = m.vector_field(X)
    for c in (4.0, 0.25):  # powers of two (and their square roots) rescale without rounding
        np.testing.assert_array_equal(_rescaled_field(m, c, X), ref)
    scale = np.abs(m.stoich.effective()) @ np.abs(m.process_rates(X)).T
    for c in (2.5, 0.3, 7.0):
        assert np.all(np.abs(_rescaled_field(m, c, X) - ref).T <= 4 * np.finfo(float).eps * scale)


def test_rescaling_identity_output_models_bit_close(rng):
    # identity-output process: scaling the last layer by c scales the output exactly by c
    m = build_pk_binode(seed=2)
    c = 4.0
    s = m.copy()
    net = s.processes[0]
    net.weights[-1] = net.weights[-1] * c
    net.biases[-1] = net.biases[-1] * c
    s.stoich.scale_column(0, 1.0 / c)
    X = rng.uniform(0, 0.1, (100, 3))
    np.testing.assert_array_max_ulp(s.vector_field(X), m.vector_field(X), maxulp=4)


def test_monod_builder():
    m = build_monod_binode()
    assert (m.n, m.k) == (2, 2)
    assert not m.stoich.mask[1, 1] and m.stoich.effective()[1, 1] == 0.0
    assert m.processes[1].spec.input_mask == (True, False)
    a, b = m.process_rates(np.array([[0.3, 0.1], [0.3, 5.0]]))[:, 1]
    assert a == b
    assert all(p.spec.hidden_layers == 5 and p.spec.hidden_width == 5 for p in m.processes)
    assert all(p.spec.output_activation == "softplus" for p in m.processes)


def test_lv_builder():
    m = build_lv_binode()
    assert (m.n, m.k) == (2, 3)
    assert m.stoich.mask.tolist() == [[True, False, True], [False, True, True]]
    assert [p.spec.input_mask for p in m.processes] == [(True, False), (False, True), (True, True)]


def test_pk_builder():
    m = build_pk_binode()
    assert m.n == 3 and m.k == 1
    assert m.processes[0].spec.input_mask == (True, True, True)
    assert m.processes[0].spec.output_activation == "identity"
    fixed = m.fixed.evaluate(np.array([[0.0, 0.1, 0.0]]))[0]
    assert fixed[1] == pytest.approx(-0.072, abs=1e-15) and fixed[2] == 0.0
    assert np.array_equal(m.fixed.evaluate(np.zeros((1, 3))), np.zeros((1, 3)))


def test_ultradian_builder():
    m = build_ultradian_binode()
    assert m.n == 6 and m.k == 2
    assert all(p.spec.input_mask == (True, True, True, False, False, False) for p in m.processes)
    assert all(p.spec.output_activation == "identity" for p in m.processes)
    d = m.vector_field(np.array([36.0, 44.0, 11000.0, 0.0, 0.0, 0.0]), 0.0)
    assert d[3:] == pytest.approx([3.0, 0.0, 0.0], abs=1e-15)


def test_hybrid_field_equals_fixed_terms_when_nets_zeroed(rng):
    for build in (build_pk_binode, build_ultradian_binode):
        m = zeroed(build(seed=1))
        X = rng.uniform(0, 1, (5, m.n)) * (1 if m.n == 3 else np.array([50, 50, 1e4, 50, 50, 50]))
        for t in (0.0, 400.0):
            np.testing.assert_array_equal(m.vector_field(X, t, backend="numpy"), m.fixed.evaluate(X, t))
            np.testing.assert_array_max_ulp(m.vector_field(X, t, backend="numba"), m.fixed.evaluate(X, t), 4)


@pytest.mark.parametrize("n", [1, 2, 3])
def test_ssystem_structure(n):
    m = build_ssystem_binode(n, seed=0, layers=2, width=2)
    assert m.k == 2 * n
    assert np.all(m.stoich.mask.sum(axis=1) == 2)
    for i in range(n):
        assert sorted(m.stoich.sign[i][m.stoich.mask[i]]) == [-1, 1]
    assert all(p.spec.input_mask == (True,) * n and p.spec.output_activation == "softplus" for p in m.processes)
    eff = m.stoich.effective()
    assert np.all(eff[m.stoich.sign > 0] >= 0) and np.all(eff[m.stoich.sign < 0] <= 0)


def test_ssystem_row_depends_only_on_its_processes(rng):
    m = build_ssystem_binode(3, seed=4, layers=2, width=2)
    X = rng.uniform(0.1, 2, (20, 3))
    before = m.vector_field(X)
    p = m.get_params()
    offs = np.cumsum([0] + [net.spec.n_params for net in m.processes])
    p[offs[2]:offs[6]] = 0.0  # processes of rows 2 and 3
    m.set_params(p)
    after = m.vector_field(X)
    np.testing.assert_array_equal(after[:, 0], before[:, 0])
    assert not np.allclose(after[:, 1], before[:, 1])


def test_mask_and_sign_survive_adam_steps(rng):
    m = build_ssystem_binode(2, seed=1, layers=1, width=2)
    m.stoich.mask[0, 1] = False
    m.set_params(m.get_params())
    params, state = m.get_params(), AdamState.zeros(m.get_params().size)
    for _ in range(100):
        params, state = adam_step(params, rng.normal(size=params.size) * 10, state, 0.1,
                                  trainable=m.trainable_mask())
        m.set_params(params)
        eff = m.stoich.effective()
        assert eff[0, 1] == 0.0
        assert np.all(eff[m.stoich.sign > 0] >= 0) and np.all(eff[m.stoich.sign < 0] <= 0)


def test_stoich_validation():
    with pytest.raises(ValueError):
        StoichiometricLayer(np.zeros((2, 2)), np.ones((2, 3), bool), np.zeros((2, 2)), np.ones((2, 2), bool))
    with pytest.raises(ValueError):
        StoichiometricLayer(np.zeros((1, 1)), [[True]], [[2]], [[True]])


def test_init_stoich_ranges():
    W = init_stoich(np.ones((20, 20), bool), np.where(np.eye(20) > 0, 1, 0), rng=np.random.default_rng(0))
    free = W.raw[W.sign == 0]
    assert free.min() >= -0.5 and free.max() <= 0.5
    assert np.all((W.raw[W.sign == 1] >= 0) & (W.raw[W.sign == 1] <= 1))


def test_vector_field_dimension_mismatch():
    with pytest.raises(ValueError):
        build_monod_binode().vector_field(np.zeros(3))


def test_mismatched_process_mask_rejected():
    W = init_stoich(np.ones((2, 1), bool))
    with pytest.raises(ValueError):
        BinodeModel([init(NnpSpec((True, True, True)), 0)], W)


def test_surface_constant_for_zero_softplus_net():
    m = zeroed(build_monod_binode(seed=2))
    w = m.stoich.effective()[0, 0]
    s = extract_surface(m, 0, (0, 1), [np.linspace(0, 1, 4), np.linspace(0, 1, 5)])
    assert s.values.shape == (4, 5)
    np.testing.assert_allclose(s.values, w * math.log(2), rtol=1e-15)


def test_surface_shape_row_major():
    m = build_pk_binode(seed=0)
    g = np.linspace(0, 0.1, 25)
    s = extract_surface(m, 0, (0, 1), [g, g], fixed=[0, 0, 5.0])
    assert s.values.size == 625
    pts = s.points()
    assert np.all(pts[:, 2] == 5.0)
    assert pts[1, 0] == 0.0 and pts[1, 1] == g[1]  # last axis varies fastest
    np.testing.assert_array_equal(s.values.ravel(), m.contribution(0, 0, pts))


def test_surface_errors_and_domain_warning():
    m = build_monod_binode()
    with pytest.raises(ValueError):
        extract_surface(m, 0, (0, 2), [np.arange(3.0), np.arange(3.0)])
    with pytest.raises(ValueError):
        extract_surface(m, 5, (0,), [np.arange(3.0)])
    with pytest.raises(ValueError):
        extract_surface(m, 0, (0,), [np.array([1.0, 0.5])])
    m.domain = np.array([[0.0, 0.0], [1.0, 1.0]])
    with pytest.warns(UserWarning):
        extract_surface(m, 0, (0,), [np.linspace(0, 3, 4)])
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        extract_surface(m, 0, (0,), [np.linspace(0, 1, 4)])
