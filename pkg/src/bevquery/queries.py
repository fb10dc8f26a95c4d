"""Pillar queries: box state plus a learnable content feature."""
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError
from .numerics import wrap_angle

PILLAR_HEIGHT = 4.0
# initial box distribution; chosen to cover the ROI at ~3 sigma
MEAN_FOOTPRINT = 2.0
FOOTPRINT_STD = 0.5
MIN_FOOTPRINT = 0.5
YAW_STD = np.pi / 2

BOX_DIM = 9  # x, y, z, w, l, h, yaw, vx, vy


@dataclass(frozen=True)
class QueryBox:
    x: float
    y: float
    z: float
    w: float
    l: float
    h: float
    yaw: float
    vx: float = 0.0
    vy: float = 0.0

    def __post_init__(self):
        if not (self.w > 0 and self.l > 0 and self.h > 0):
            raise ConfigurationError(f"box sizes must be positive: {self}")
        object.__setattr__(self, "yaw", float(wrap_angle(self.yaw)))


def box_to_vector(b):
    return np.array([b.x, b.y, b.z, b.w, b.l, b.h, b.yaw, b.vx, b.vy])


def vector_to_box(vec):
    vec = np.asarray(vec, dtype=np.float64)
    if vec.shape != (BOX_DIM,):
        raise ConfigurationError(f"box vector must have {BOX_DIM} entries")
    return QueryBox(*(float(x) for x in vec))


@dataclass(frozen=True, eq=False)
class QuerySet:
    """N queries stored column-wise: ``boxes`` is N x 9, ``features`` is N x D."""
    boxes: np.ndarray
    features: np.ndarray

    def __post_init__(self):
        if self.boxes.ndim != 2 or self.boxes.shape[1] != BOX_DIM:
            raise ConfigurationError("boxes must be N x 9")
        if len(self.boxes) < 1 or len(self.boxes) != len(self.features):
            raise ConfigurationError("need N >= 1 aligned boxes and features")

    def __len__(self):
        return len(self.boxes)

    def box(self, i):
        return vector_to_box(self.boxes[i])


def init_boxes(n, seed, roi_half_extent):
    if n < 1:
        raise ConfigurationError("need at least one query")
    rng = np.random.default_rng([seed, 2718])
    xy = np.clip(rng.normal(0.0, roi_half_extent / 3, (n, 2)),
                 -roi_half_extent, roi_half_extent)
    wl = np.maximum(np.abs(rng.normal(MEAN_FOOTPRINT, FOOTPRINT_STD, (n, 2))),
                    MIN_FOOTPRINT)
    yaw = wrap_angle(rng.normal(0.0, YAW_STD, n))
    boxes = np.zeros((n, BOX_DIM))
    boxes[:, 0:2] = xy
    boxes[:, 3:5] = wl
    boxes[:, 5] = PILLAR_HEIGHT
    boxes[:, 6] = yaw
    return boxes


def init_queries(n, seed, roi_half_extent, query_embed):
    """Pillars on the ground plane with zero velocity; features copied from ``query_embed``."""
    query_embed = np.asarray(query_embed, dtype=np.float64)
    if n < 1:
        raise ConfigurationError("need at least one query")
    if query_embed.shape[0] != n:
        raise ConfigurationError(
            f"query embedding has {query_embed.shape[0]} rows, expected {n}")
    return QuerySet(init_boxes(n, seed, roi_half_extent), query_embed.copy())
