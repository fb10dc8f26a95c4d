"""Query-conditioned channel/point mixing, aggregation and prediction heads.

All functions accept a leading query axis: ``f`` is ``N x P x C`` and
``feat`` is ``N x D``; unbatched inputs (``P x C`` / ``D``) also work.
"""
from dataclasses import dataclass, fields

import numpy as np

from .errors import ConfigurationError, ContractViolation
from .numerics import layer_norm, linear, relu, sigmoid, wrap_angle

MIXING_ORDERS = ("channel_then_point", "point_then_channel", "channel_only",
                 "point_only", "static", "none")


@dataclass(eq=False)
class MixingParams:
    w_cgen: np.ndarray
    b_cgen: np.ndarray
    w_pgen: np.ndarray
    b_pgen: np.ndarray
    ln_c_gain: np.ndarray
    ln_c_shift: np.ndarray
    ln_p_gain: np.ndarray
    ln_p_shift: np.ndarray
    w_agg: np.ndarray
    b_agg: np.ndarray
    ln_agg_gain: np.ndarray
    ln_agg_shift: np.ndarray
    w_reg1: np.ndarray
    b_reg1: np.ndarray
    w_reg2: np.ndarray
    b_reg2: np.ndarray
    w_cls1: np.ndarray
    b_cls1: np.ndarray
    w_cls2: np.ndarray
    b_cls2: np.ndarray
    # fixed mixing matrices, only allocated for order="static"
    static_wc: np.ndarray = None
    static_wp: np.ndarray = None

    @classmethod
    def init(cls, rng, embed_dim, channels, points, num_classes, order,
             hidden=None, gen_gain=0.1, cls_bias=0.0, reg_gain=0.1,
             cls_gain=1.0):
        if order not in MIXING_ORDERS:
            raise ConfigurationError(f"unknown mixing_order {order!r}")
        d, c, p = embed_dim, channels, points
        hidden = hidden or d
        agg_in = c if order == "none" else c * p

        def w(a, b, gain=1.0):
            return rng.normal(0.0, gain / np.sqrt(a), (a, b))

        out = cls(
            w_cgen=w(d, c * c, gen_gain / np.sqrt(c)),
            b_cgen=rng.normal(0.0, 1.0 / np.sqrt(c), c * c),
            w_pgen=w(d, p * p, gen_gain / np.sqrt(p)),
            b_pgen=rng.normal(0.0, 1.0 / np.sqrt(p), p * p),
            ln_c_gain=np.ones(c), ln_c_shift=np.zeros(c),
            ln_p_gain=np.ones(p), ln_p_shift=np.zeros(p),
            w_agg=w(agg_in, d), b_agg=np.zeros(d),
            ln_agg_gain=np.ones(d), ln_agg_shift=np.zeros(d),
            w_reg1=w(d, hidden), b_reg1=np.zeros(hidden),
            w_reg2=w(hidden, 9, reg_gain), b_reg2=np.zeros(9),
            w_cls1=w(d, hidden), b_cls1=np.zeros(hidden),
            w_cls2=w(hidden, num_classes, cls_gain),
            b_cls2=np.full(num_classes, float(cls_bias)))
        if order == "static":
            out.static_wc = rng.normal(0.0, 1.0 / np.sqrt(c), (c, c))
            out.static_wp = rng.normal(0.0, 1.0 / np.sqrt(p), (p, p))
        return out

    @property
    def channels(self):
        return self.ln_c_gain.shape[0]

    @property
    def points(self):
        return self.ln_p_gain.shape[0]


def _channel_weights(feat, p, static):
    c = p.channels
    if static:
        return np.broadcast_to(p.static_wc, feat.shape[:-1] + (c, c))
    return linear(feat, p.w_cgen, p.b_cgen).reshape(feat.shape[:-1] + (c, c))


def _point_weights(feat, p, static):
    n = p.points
    if static:
        return np.broadcast_to(p.static_wp, feat.shape[:-1] + (n, n))
    return linear(feat, p.w_pgen, p.b_pgen).reshape(feat.shape[:-1] + (n, n))


def channel_mix(f, feat, p, static=False):
    """ReLU(LN(f @ W_c)) with W_c generated from the query feature; P x C -> P x C."""
    wc = _channel_weights(np.asarray(feat, dtype=np.float64), p, static)
    y = np.einsum("...pc,...cd->...pd", f, wc)
    return relu(layer_norm(y, p.ln_c_gain, p.ln_c_shift))


def point_mix(f, feat, p, static=False):
    """ReLU(LN(f^T @ W_p)); P x C -> C x P."""
    wp = _point_weights(np.asarray(feat, dtype=np.float64), p, static)
    y = np.einsum("...pc,...pq->...cq", f, wp)
    return relu(layer_norm(y, p.ln_p_gain, p.ln_p_shift))


def mix(f, feat, p, order="channel_then_point"):
    """Apply one mixing variant and flatten; returns ... x (P*C) (or ... x C for "none")."""
    f = np.asarray(f, dtype=np.float64)
    lead = f.shape[:-2]
    if order == "channel_then_point":
        out = point_mix(channel_mix(f, feat, p), feat, p)
    elif order == "point_then_channel":
        out = channel_mix(np.swapaxes(point_mix(f, feat, p), -1, -2), feat, p)
    elif order == "channel_only":
        out = channel_mix(f, feat, p)
    elif order == "point_only":
        out = point_mix(f, feat, p)
    elif order == "static":
        out = point_mix(channel_mix(f, feat, p, static=True), feat, p, static=True)
    elif order == "none":
        return np.mean(f, axis=-2)
    else:
        raise ConfigurationError(f"unknown mixing_order {order!r}")
    return out.reshape(lead + (-1,))


def aggregate(mixed, feat, p):
    """Linear over the flattened mixed features, residual add, layer norm."""
    y = linear(mixed, p.w_agg, p.b_agg)
    return layer_norm(feat + y, p.ln_agg_gain, p.ln_agg_shift)


def predict_heads(feat, p):
    """Two small MLPs: 9 box deltas and per-class logits."""
    deltas = linear(relu(linear(feat, p.w_reg1, p.b_reg1)), p.w_reg2, p.b_reg2)
    logits = linear(relu(linear(feat, p.w_cls1, p.b_cls1)), p.w_cls2, p.b_cls2)
    return deltas, logits


def class_scores(logits):
    return sigmoid(logits)


def apply_box_update(boxes, deltas):
    """Shift centres, scale sizes by exp, rotate yaw, overwrite velocity.

    Works on a single 9-vector or an N x 9 array.
    """
    boxes = np.asarray(boxes, dtype=np.float64)
    deltas = np.asarray(deltas, dtype=np.float64)
    out = np.empty(np.broadcast_shapes(boxes.shape, deltas.shape))
    out[..., 0:3] = boxes[..., 0:3] + deltas[..., 0:3]
    with np.errstate(over="ignore"):  # overflow is reported below
        out[..., 3:6] = boxes[..., 3:6] * np.exp(deltas[..., 3:6])
    out[..., 6] = wrap_angle(boxes[..., 6] + deltas[..., 6])
    out[..., 7:9] = deltas[..., 7:9]
    if not np.all(np.isfinite(out)) or np.any(out[..., 3:6] <= 0):
        raise ContractViolation("box update produced non-finite or degenerate boxes")
    return out
