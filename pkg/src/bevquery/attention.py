"""Self attention over queries with a learned, distance-dependent penalty.

Each head subtracts ``tau * dist(D_ij)`` from its logits, where ``D`` is the
BEV centre distance between queries. ``tau`` comes from a linear map of the
query feature (adaptive mode) or from one learnable scalar per head
(shared mode).
"""
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError
from .numerics import layer_norm, linear, softmax

TAU_MODES = ("adaptive", "shared")
DISTANCE_FNS = {
    "linear": lambda d: d,
    "square": lambda d: d * d,
    "sqrt": np.sqrt,
}


@dataclass(eq=False)
class SasaParams:
    w_q: np.ndarray
    b_q: np.ndarray
    w_k: np.ndarray
    b_k: np.ndarray
    w_v: np.ndarray
    b_v: np.ndarray
    w_o: np.ndarray
    b_o: np.ndarray
    w_tau: np.ndarray
    b_tau: np.ndarray
    tau_shared: np.ndarray
    ln_gain: np.ndarray
    ln_shift: np.ndarray

    @classmethod
    def init(cls, rng, embed_dim, num_heads, head_dim, tau_bias=0.5):
        hd = num_heads * head_dim
        if num_heads < 1 or head_dim < 1:
            raise ConfigurationError("need num_heads >= 1 and head_dim >= 1")

        def w(a, b):
            return rng.normal(0.0, 1.0 / np.sqrt(a), (a, b))

        return cls(
            w_q=w(embed_dim, hd), b_q=np.zeros(hd),
            w_k=w(embed_dim, hd), b_k=np.zeros(hd),
            w_v=w(embed_dim, hd), b_v=np.zeros(hd),
            w_o=w(hd, embed_dim), b_o=np.zeros(embed_dim),
            w_tau=np.zeros((embed_dim, num_heads)),
            b_tau=np.linspace(0.0, 2 * tau_bias, num_heads),
            tau_shared=np.linspace(0.0, 2 * tau_bias, num_heads),
            ln_gain=np.ones(embed_dim), ln_shift=np.zeros(embed_dim))

    @property
    def num_heads(self):
        return self.w_tau.shape[1]

    @property
    def head_dim(self):
        return self.w_q.shape[1] // self.num_heads


def pairwise_bev_distance(centers):
    """N x N BEV distances; ``centers`` is N x >=2 (only x, y are used)."""
    xy = np.asarray(centers, dtype=np.float64)[:, :2]
    diff = xy[:, None, :] - xy[None, :, :]
    return np.sqrt(np.sum(diff * diff, axis=-1))


def head_taus(features, p, tau_mode="adaptive"):
    """Per-query, per-head tau (N x H). Shared mode broadcasts the learnable scalars."""
    features = np.asarray(features, dtype=np.float64)
    if tau_mode == "adaptive":
        return linear(features, p.w_tau, p.b_tau)
    if tau_mode == "shared":
        lead = features.shape[:-1]
        return np.broadcast_to(p.tau_shared, lead + (p.num_heads,)).copy()
    raise ConfigurationError(f"unknown tau_mode {tau_mode!r}")


def attention_weights(features, centers, p, tau_mode="adaptive",
                      distance_fn="linear", taus=None):
    """Softmax weights, shape H x N x N (rows are queries, columns keys)."""
    if distance_fn not in DISTANCE_FNS:
        raise ConfigurationError(f"unknown distance_fn {distance_fn!r}")
    n = features.shape[0]
    h, d = p.num_heads, p.head_dim
    q = linear(features, p.w_q, p.b_q).reshape(n, h, d)
    k = linear(features, p.w_k, p.b_k).reshape(n, h, d)
    logits = np.einsum("ihc,jhc->hij", q, k) / np.sqrt(d)
    if taus is None:
        taus = head_taus(features, p, tau_mode)
    dist = DISTANCE_FNS[distance_fn](pairwise_bev_distance(centers))
    logits = logits - taus.T[:, :, None] * dist[None]
    return softmax(logits, axis=-1)


def sasa_layer(features, centers, p, tau_mode="adaptive", distance_fn="linear",
               taus=None):
    """One attention block: attend, project, add residual, layer-norm."""
    features = np.asarray(features, dtype=np.float64)
    n = features.shape[0]
    h, d = p.num_heads, p.head_dim
    weights = attention_weights(features, centers, p, tau_mode, distance_fn, taus)
    v = linear(features, p.w_v, p.b_v).reshape(n, h, d)
    heads = np.einsum("hij,jhc->ihc", weights, v).reshape(n, h * d)
    out = linear(heads, p.w_o, p.b_o)
    return layer_norm(features + out, p.ln_gain, p.ln_shift)
