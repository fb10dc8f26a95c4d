import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bevquery.attention import (SasaParams, attention_weights, head_taus,
                                pairwise_bev_distance, sasa_layer)
from bevquery.numerics import layer_norm, linear


def make_params(seed, d=16, h=4, hd=4):
    rng = np.random.default_rng(seed)
    p = SasaParams.init(rng, d, h, hd)
    p.w_tau = rng.normal(size=p.w_tau.shape) * 0.1
    p.b_q, p.b_k, p.b_v, p.b_o = (rng.normal(size=x.shape) * 0.1
                                  for x in (p.b_q, p.b_k, p.b_v, p.b_o))
    return p


def vanilla_mhsa(x, p):
    """Independent scalar-loop multi-head self attention + residual + post-norm."""
    n, dm = x.shape
    h, d = p.num_heads, p.head_dim
    q = [[sum(x[i, k] * p.w_q[k, c] for k in range(dm)) + p.b_q[c] for c in range(h * d)] for i in range(n)]
    kk = [[sum(x[i, k] * p.w_k[k, c] for k in range(dm)) + p.b_k[c] for c in range(h * d)] for i in range(n)]
    v = [[sum(x[i, k] * p.w_v[k, c] for k in range(dm)) + p.b_v[c] for c in range(h * d)] for i in range(n)]
    cat = np.zeros((n, h * d))
    for head in range(h):
        sl = range(head * d, (head + 1) * d)
        for i in range(n):
            logits = [sum(q[i][c] * kk[j][c] for c in sl) / math.sqrt(d) for j in range(n)]
            m = max(logits)
            e = [math.exp(l - m) for l in logits]
            z = sum(e)
            for c in sl:
                cat[i, c] = sum(e[j] / z * v[j][c] for j in range(n))
    out = np.array([[sum(cat[i, c] * p.w_o[c, k] for c in range(h * d)) + p.b_o[k]
                     for k in range(dm)] for i in range(n)])
    return layer_norm(x + out, p.ln_gain, p.ln_shift)


def test_distance_examples():
    assert pairwise_bev_distance(np.array([[1.0, 1.0], [1.0, 1.0]]))[0, 1] == 0.0
    assert pairwise_bev_distance(np.array([[0.0, 0.0, 9.0], [3.0, 4.0, -2.0]]))[0, 1] == 5.0


def test_distance_properties_against_scalar_loop():
    c = np.random.default_rng(0).normal(scale=10, size=(8, 3))
    d = pairwise_bev_distance(c)
    for i in range(8):
        for j in range(8):
            assert abs(d[i, j] - math.sqrt((c[i, 0] - c[j, 0]) ** 2 + (c[i, 1] - c[j, 1]) ** 2)) < 1e-12
            for k in range(8):
                assert d[i, k] <= d[i, j] + d[j, k] + 1e-9
    np.testing.assert_array_equal(d, d.T)
    assert np.all(np.diag(d) == 0)


def test_taus_zero_weights():
    p = make_params(0)
    p.w_tau[:] = 0
    p.b_tau[:] = 0
    assert np.all(head_taus(np.random.default_rng(1).normal(size=(5, 16)), p) == 0)


def test_taus_equal_features_equal_taus():
    p = make_params(0)
    t = head_taus(np.tile(np.arange(16.0), (3, 1)), p)
    np.testing.assert_array_equal(t[0], t[1])
    np.testing.assert_array_equal(t[0], t[2])


def test_taus_hand_evaluation():
    p = SasaParams.init(np.random.default_rng(0), 2, 2, 1)
    p.w_tau = np.array([[1.0, -2.0], [0.5, 3.0]])
    p.b_tau = np.array([0.1, 0.2])
    t = head_taus(np.array([[2.0, 4.0]]), p)
    np.testing.assert_allclose(t, [[2 * 1 + 4 * 0.5 + 0.1, 2 * -2 + 4 * 3 + 0.2]])


def test_shared_mode_returns_shared_scalars():
    p = make_params(0)
    p.tau_shared = np.array([0.1, 0.2, 0.3, 0.4])
    t = head_taus(np.random.default_rng(1).normal(size=(3, 16)), p, "shared")
    np.testing.assert_array_equal(t, np.tile(p.tau_shared, (3, 1)))


def test_zero_tau_equals_vanilla():
    rng = np.random.default_rng(2)
    p = make_params(3)
    x = rng.normal(size=(6, 16))
    centers = rng.normal(scale=10, size=(6, 3))
    got = sasa_layer(x, centers, p, taus=np.zeros((6, 4)))
    assert np.max(np.abs(got - vanilla_mhsa(x, p))) < 1e-6


def test_single_query():
    p = make_params(4)
    x = np.random.default_rng(5).normal(size=(1, 16))
    w = attention_weights(x, np.zeros((1, 3)), p)
    assert np.all(w == 1.0)
    want = layer_norm(x + linear(linear(x, p.w_v, p.b_v), p.w_o, p.b_o), p.ln_gain, p.ln_shift)
    np.testing.assert_allclose(sasa_layer(x, np.zeros((1, 3)), p), want, atol=1e-12)


def test_weight_ratio_drops_with_tau():
    rng = np.random.default_rng(6)
    p = make_params(7)
    x = rng.normal(size=(5, 16))
    c = rng.normal(scale=5, size=(5, 3))
    d = pairwise_bev_distance(c)
    lo = attention_weights(x, c, p, taus=np.full((5, 4), 0.5))
    hi = attention_weights(x, c, p, taus=np.full((5, 4), 1.0))
    for i in range(5):
        for j in range(5):
            if i != j:
                assert hi[:, i, j].max() / 1 >= 0
                assert np.all(hi[:, i, j] / hi[:, i, i] < lo[:, i, j] / lo[:, i, i])
                np.testing.assert_allclose(
                    (hi[:, i, j] / hi[:, i, i]) / (lo[:, i, j] / lo[:, i, i]),
                    np.exp(-0.5 * d[i, j]), rtol=1e-9)


@pytest.mark.parametrize("fn", ["linear", "square", "sqrt"])
def test_distance_function_variants(fn):
    rng = np.random.default_rng(8)
    p = make_params(9)
    x, c = rng.normal(size=(4, 16)), rng.normal(scale=3, size=(4, 3))
    w = attention_weights(x, c, p, distance_fn=fn, taus=np.ones((4, 4)))
    base = attention_weights(x, c, p, taus=np.zeros((4, 4)))
    d = pairwise_bev_distance(c)
    g = {"linear": d, "square": d ** 2, "sqrt": np.sqrt(d)}[fn]
    ratio = (w[:, 0, 1] / w[:, 0, 0]) / (base[:, 0, 1] / base[:, 0, 0])
    np.testing.assert_allclose(ratio, np.exp(-g[0, 1]), rtol=1e-9)


@settings(max_examples=25, deadline=None)
@given(st.permutations(list(range(7))))
def test_permutation_equivariance(perm):
    rng = np.random.default_rng(10)
    p = make_params(11)
    x, c = rng.normal(size=(7, 16)), rng.normal(scale=5, size=(7, 3))
    out = sasa_layer(x, c, p)
    out_p = sasa_layer(x[perm], c[perm], p)
    np.testing.assert_allclose(out_p, out[perm], atol=1e-12)
