"""Dense array kernels shared by every other module.

Arrays are plain float64 ``numpy.ndarray`` objects. Contractions go through
``np.einsum`` without path optimisation, which never dispatches to BLAS, so
results do not depend on the BLAS thread count.
"""
import numpy as np

from .errors import ConfigurationError, ContractViolation

LN_EPS = 1e-5


def linear(x, weight, bias=None):
    """y[..., j] = sum_k x[..., k] * weight[k, j] + bias[j]."""
    x = np.asarray(x, dtype=np.float64)
    weight = np.asarray(weight, dtype=np.float64)
    if weight.ndim != 2 or x.shape[-1] != weight.shape[0]:
        raise ConfigurationError(
            f"linear: cannot contract {x.shape} with {weight.shape}")
    y = np.einsum("...k,kj->...j", x, weight)
    if bias is not None:
        bias = np.asarray(bias, dtype=np.float64)
        if bias.shape != (weight.shape[1],):
            raise ConfigurationError(
                f"linear: bias {bias.shape} does not match {weight.shape}")
        y = y + bias
    return y


def softmax(x, axis=-1):
    x = np.asarray(x, dtype=np.float64)
    if x.shape[axis] == 0:
        raise ConfigurationError("softmax over an empty axis")
    z = x - np.max(x, axis=axis, keepdims=True)
    e = np.exp(z)
    return e / np.sum(e, axis=axis, keepdims=True)


def layer_norm(x, gain, shift, eps=LN_EPS):
    """Normalise over the last axis (biased variance) then scale and shift."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] < 1:
        raise ConfigurationError("layer_norm needs at least one channel")
    mean = np.mean(x, axis=-1, keepdims=True)
    var = np.mean((x - mean) ** 2, axis=-1, keepdims=True)
    return (x - mean) / np.sqrt(var + eps) * gain + shift


def relu(x):
    return np.maximum(np.asarray(x, dtype=np.float64), 0.0)


def sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    # split by sign to avoid overflow in exp
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def bilinear_sample(fmap, u, v):
    """Sample a C x H x W map at pixel (u, v); integer coordinates hit texel centres.

    ``u`` and ``v`` may be scalars (returns a C-vector) or equal-shape arrays
    (returns ``u.shape + (C,)``). Neighbour indices are clamped to the map edge.
    """
    fmap = np.asarray(fmap, dtype=np.float64)
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if not (np.all(np.isfinite(u)) and np.all(np.isfinite(v))):
        raise ContractViolation("bilinear_sample: non-finite coordinates")
    _, h, w = fmap.shape
    u0 = np.floor(u)
    v0 = np.floor(v)
    au = u - u0
    av = v - v0
    x0 = np.clip(u0.astype(np.int64), 0, w - 1)
    x1 = np.clip(u0.astype(np.int64) + 1, 0, w - 1)
    y0 = np.clip(v0.astype(np.int64), 0, h - 1)
    y1 = np.clip(v0.astype(np.int64) + 1, 0, h - 1)
    # gather gives C first; move channels last
    f00 = np.moveaxis(fmap[:, y0, x0], 0, -1)
    f01 = np.moveaxis(fmap[:, y0, x1], 0, -1)
    f10 = np.moveaxis(fmap[:, y1, x0], 0, -1)
    f11 = np.moveaxis(fmap[:, y1, x1], 0, -1)
    au = au[..., None]
    av = av[..., None]
    return ((1 - av) * ((1 - au) * f00 + au * f01)
            + av * ((1 - au) * f10 + au * f11))


def wrap_angle(theta):
    """Wrap into [-pi, pi)."""
    out = (np.asarray(theta, dtype=np.float64) + np.pi) % (2 * np.pi) - np.pi
    # fmod rounding can land exactly on +pi
    return np.where(out >= np.pi, out - 2 * np.pi, out)
