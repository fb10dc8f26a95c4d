import math

import numpy as np
import pytest

from bevquery.errors import ContractViolation
from bevquery.mixing import (MIXING_ORDERS, MixingParams, aggregate, apply_box_update,
                             channel_mix, class_scores, mix, point_mix, predict_heads)
from bevquery.numerics import layer_norm

D, C, P, K = 6, 5, 4, 3


@pytest.fixture
def params():
    rng = np.random.default_rng(0)
    p = MixingParams.init(rng, D, C, P, K, "channel_then_point")
    p.ln_c_gain, p.ln_c_shift = rng.normal(size=C), rng.normal(size=C) * 0.1
    p.ln_p_gain, p.ln_p_shift = rng.normal(size=P), rng.normal(size=P) * 0.1
    return p


def scalar_ln_relu(row, gain, shift, eps=1e-5):
    mean = sum(row) / len(row)
    var = sum((r - mean) ** 2 for r in row) / len(row)
    return [max(0.0, (r - mean) / math.sqrt(var + eps) * g + s)
            for r, g, s in zip(row, gain, shift)]


def oracle_channel_mix(f, q, p):
    gen = [sum(q[k] * p.w_cgen[k, j] for k in range(D)) + p.b_cgen[j] for j in range(C * C)]
    wc = [[gen[a * C + b] for b in range(C)] for a in range(C)]
    out = []
    for row in f:
        y = [sum(row[a] * wc[a][b] for a in range(C)) for b in range(C)]
        out.append(scalar_ln_relu(y, p.ln_c_gain, p.ln_c_shift))
    return np.array(out)


def oracle_point_mix(f, q, p):
    gen = [sum(q[k] * p.w_pgen[k, j] for k in range(D)) + p.b_pgen[j] for j in range(P * P)]
    wp = [[gen[a * P + b] for b in range(P)] for a in range(P)]
    out = []
    for c in range(C):
        y = [sum(f[a][c] * wp[a][b] for a in range(P)) for b in range(P)]
        out.append(scalar_ln_relu(y, p.ln_p_gain, p.ln_p_shift))
    return np.array(out)


def test_channel_mix_zero_case(params):
    params.b_cgen[:] = 0
    params.ln_c_shift[:] = 0
    out = channel_mix(np.random.default_rng(1).normal(size=(P, C)), np.zeros(D), params)
    assert np.all(out == 0)


def test_point_mix_zero_case(params):
    params.b_pgen[:] = 0
    params.ln_p_shift[:] = 0
    out = point_mix(np.random.default_rng(1).normal(size=(P, C)), np.zeros(D), params)
    assert out.shape == (C, P)
    assert np.all(out == 0)


def test_mix_shapes(params):
    f = np.random.default_rng(2).normal(size=(7, P, C))
    q = np.random.default_rng(3).normal(size=(7, D))
    assert channel_mix(f, q, params).shape == (7, P, C)
    assert point_mix(f, q, params).shape == (7, C, P)


def test_channel_mix_oracle(params):
    rng = np.random.default_rng(4)
    f, q = rng.normal(size=(P, C)), rng.normal(size=D)
    assert np.max(np.abs(channel_mix(f, q, params) - oracle_channel_mix(f, q, params))) < 1e-9


def test_point_mix_oracle(params):
    rng = np.random.default_rng(5)
    f, q = rng.normal(size=(P, C)), rng.normal(size=D)
    assert np.max(np.abs(point_mix(f, q, params) - oracle_point_mix(f, q, params))) < 1e-9


def test_batched_matches_unbatched(params):
    rng = np.random.default_rng(6)
    f, q = rng.normal(size=(3, P, C)), rng.normal(size=(3, D))
    batched = mix(f, q, params)
    for i in range(3):
        np.testing.assert_allclose(batched[i], mix(f[i], q[i], params), atol=1e-12)


def test_aggregate_oracle(params):
    rng = np.random.default_rng(7)
    mixed, q = rng.normal(size=C * P), rng.normal(size=D)
    params.b_agg = rng.normal(size=D)
    y = [sum(mixed[k] * params.w_agg[k, j] for k in range(C * P)) + params.b_agg[j] for j in range(D)]
    want = layer_norm(q + np.array(y), params.ln_agg_gain, params.ln_agg_shift)
    np.testing.assert_allclose(aggregate(mixed, q, params), want, atol=1e-9)


def test_aggregate_zero_mixed(params):
    q = np.random.default_rng(8).normal(size=D)
    out = aggregate(np.zeros(C * P), q, params)
    np.testing.assert_allclose(out, layer_norm(q, np.ones(D), np.zeros(D)), atol=1e-12)
    assert out.shape == (D,)


def test_channel_mix_row_equivariance(params):
    rng = np.random.default_rng(9)
    f, q = rng.normal(size=(P, C)), rng.normal(size=D)
    perm = rng.permutation(P)
    np.testing.assert_allclose(channel_mix(f[perm], q, params), channel_mix(f, q, params)[perm],
                               atol=1e-12)


def test_point_mix_channel_equivariance(params):
    rng = np.random.default_rng(10)
    f, q = rng.normal(size=(P, C)), rng.normal(size=D)
    perm = rng.permutation(C)
    np.testing.assert_allclose(point_mix(f[:, perm], q, params), point_mix(f, q, params)[perm],
                               atol=1e-12)


@pytest.mark.parametrize("order", MIXING_ORDERS)
def test_every_order_runs(order):
    rng = np.random.default_rng(11)
    p = MixingParams.init(rng, D, C, P, K, order)
    f, q = rng.normal(size=(2, P, C)), rng.normal(size=(2, D))
    out = mix(f, q, p, order)
    assert out.shape == ((2, C) if order == "none" else (2, C * P))
    assert aggregate(out, q, p).shape == (2, D)
    if order == "none":
        np.testing.assert_allclose(out, f.mean(axis=1))


def test_zero_heads(params):
    for name in ("w_reg1", "b_reg1", "w_reg2", "b_reg2", "w_cls1", "b_cls1", "w_cls2", "b_cls2"):
        getattr(params, name)[...] = 0
    deltas, logits = predict_heads(np.ones(D), params)
    assert np.all(deltas == 0)
    assert np.all(class_scores(logits) == 0.5)


def test_heads_hand_evaluation():
    p = MixingParams.init(np.random.default_rng(0), 2, 2, 2, 2, "channel_then_point", hidden=1)
    p.w_reg1, p.b_reg1 = np.array([[1.0], [-1.0]]), np.array([0.5])
    p.w_reg2, p.b_reg2 = np.arange(9.0).reshape(1, 9), np.ones(9)
    p.w_cls1, p.b_cls1 = np.array([[2.0], [0.0]]), np.array([-1.0])
    p.w_cls2, p.b_cls2 = np.array([[1.0, -1.0]]), np.array([0.0, 0.25])
    deltas, logits = predict_heads(np.array([3.0, 1.0]), p)
    hidden = max(0.0, 3 - 1 + 0.5)
    np.testing.assert_allclose(deltas, hidden * np.arange(9.0) + 1)
    hc = max(0.0, 6 - 1.0)
    np.testing.assert_allclose(logits, [hc, -hc + 0.25])


def test_box_update_rules():
    box = np.array([1.0, 2.0, 0.0, 2.0, 3.0, 4.0, 3.0, 5.0, 5.0])
    out = apply_box_update(box, np.zeros(9))
    np.testing.assert_array_equal(out[:6], box[:6])
    assert out[6] == pytest.approx(3.0)
    assert np.all(out[7:9] == 0)
    d = np.zeros(9)
    d[3] = np.log(2)
    assert apply_box_update(box, d)[3] == pytest.approx(4.0)
    d = np.zeros(9)
    d[6] = 1.0
    yaw = apply_box_update(box, d)[6]
    assert -np.pi <= yaw < np.pi
    assert yaw == pytest.approx(4.0 - 2 * np.pi)
    d = np.zeros(9)
    d[7:9] = [1.5, -2.0]
    np.testing.assert_array_equal(apply_box_update(box, d)[7:9], [1.5, -2.0])


def test_box_update_rejects_overflow():
    d = np.zeros(9)
    d[3] = 1e4
    with pytest.raises(ContractViolation):
        apply_box_update(np.ones(9), d)
