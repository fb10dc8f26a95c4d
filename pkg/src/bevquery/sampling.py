"""Query-guided spatio-temporal sampling of multi-view feature pyramids."""
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError
from .geometry import ego_align, project_points
from .numerics import bilinear_sample, linear, softmax
from .scene import ALLOWED_SCALES, render_view
from .parallel import ordered_map


@dataclass(frozen=True)
class StreamSpec:
    frame_indices: tuple
    resolution_scale: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "frame_indices",
                           tuple(int(f) for f in self.frame_indices))
        if not self.frame_indices:
            raise ConfigurationError("a stream needs at least one frame")
        if not any(abs(self.resolution_scale - s) < 1e-12 for s in ALLOWED_SCALES):
            raise ConfigurationError(
                f"resolution_scale must be one of {ALLOWED_SCALES}")


@dataclass
class SamplingConfig:
    num_frames: int = 8
    num_points: int = 16
    num_levels: int = 4
    align_ego: bool = True
    align_object: bool = True
    streams: list = field(default_factory=list)

    def __post_init__(self):
        if self.num_frames < 1 or self.num_points < 1 or self.num_levels < 1:
            raise ConfigurationError("num_frames, num_points, num_levels must be >= 1")
        if not self.streams:
            self.streams = [StreamSpec(tuple(range(self.num_frames)), 1.0)]
        self.streams = [s if isinstance(s, StreamSpec) else StreamSpec(**s)
                        for s in self.streams]
        route_streams(self)

    @property
    def total_points(self):
        return sum(len(s.frame_indices) for s in self.streams) * self.num_points

    def to_dict(self):
        return {"num_frames": self.num_frames, "num_points": self.num_points,
                "num_levels": self.num_levels, "align_ego": self.align_ego,
                "align_object": self.align_object,
                "streams": [{"frame_indices": list(s.frame_indices),
                             "resolution_scale": s.resolution_scale}
                            for s in self.streams]}


def route_streams(cfg):
    """Ordered (stream index, frame, resolution scale) tasks.

    This order is also the row order of the sampled features.
    """
    covered = set()
    plan = []
    for si, s in enumerate(cfg.streams):
        for f in s.frame_indices:
            if not 0 <= f < cfg.num_frames:
                raise ConfigurationError(f"stream frame {f} outside 0..{cfg.num_frames - 1}")
            covered.add(f)
            plan.append((si, f, s.resolution_scale))
    missing = set(range(cfg.num_frames)) - covered
    if missing:
        raise ConfigurationError(f"frames {sorted(missing)} not covered by any stream")
    return plan


@dataclass(eq=False)
class SamplingParams:
    w_offset: np.ndarray
    b_offset: np.ndarray
    w_scale: np.ndarray
    b_scale: np.ndarray

    @classmethod
    def init(cls, rng, embed_dim, cfg, offset_gain=0.1):
        n_off = cfg.num_frames * cfg.num_points * 3
        n_sc = cfg.num_frames * cfg.num_points * cfg.num_levels
        return cls(
            w_offset=rng.normal(0.0, offset_gain / np.sqrt(embed_dim), (embed_dim, n_off)),
            b_offset=rng.uniform(-0.5, 0.5, n_off),
            w_scale=rng.normal(0.0, offset_gain / np.sqrt(embed_dim), (embed_dim, n_sc)),
            b_scale=np.zeros(n_sc))


@dataclass(eq=False)
class SceneInputs:
    """Everything the sampler needs about one scene sample.

    ``pyramids[(scale, frame)]`` is a list with one FeaturePyramid per view.
    """
    cameras: tuple
    poses: tuple
    pyramids: dict

    @property
    def timestamps(self):
        return [p.timestamp for p in self.poses]


def prepare_inputs(scene, cfg, threads=None):
    if cfg.num_frames > scene.num_frames:
        raise ConfigurationError(
            f"model needs {cfg.num_frames} frames, scene has {scene.num_frames}")
    if cfg.num_levels > len(scene.cameras[0].strides):
        raise ConfigurationError("model uses more levels than the cameras provide")
    keys = sorted({(scale, f) for _, f, scale in route_streams(cfg)},
                  key=lambda k: (-k[0], k[1]))
    tasks = [(scale, f, k) for scale, f in keys for k in range(len(scene.cameras))]
    rendered = ordered_map(lambda t: render_view(scene, t[1], t[2], t[0]), tasks, threads)
    pyramids = {key: [] for key in keys}
    for (scale, f, _), pyr in zip(tasks, rendered):
        pyramids[(scale, f)].append(pyr)
    return SceneInputs(tuple(scene.cameras), tuple(scene.poses[:cfg.num_frames]),
                       pyramids)


def gen_offsets(features, p, cfg):
    """Raw (unbounded) offsets, shape ... x T x S x 3."""
    out = linear(features, p.w_offset, p.b_offset)
    return out.reshape(out.shape[:-1] + (cfg.num_frames, cfg.num_points, 3))


def scale_weights(features, p, cfg):
    """Per-point convex weights over pyramid levels, shape ... x T x S x L."""
    out = linear(features, p.w_scale, p.b_scale)
    out = out.reshape(out.shape[:-1] + (cfg.num_frames, cfg.num_points, cfg.num_levels))
    return softmax(out, axis=-1)


def pillar_to_ego(box, offset):
    """Offset in pillar units -> ego point. ``box`` (..., >=7) broadcasts against ``offset`` (..., 3)."""
    box = np.asarray(box, dtype=np.float64)
    offset = np.asarray(offset, dtype=np.float64)
    x, y, z, w, l, h, yaw = (box[..., i] for i in range(7))
    lx = w * offset[..., 0]
    ly = l * offset[..., 1]
    c, s = np.cos(yaw), np.sin(yaw)
    return np.stack([c * lx - s * ly + x,
                     s * lx + c * ly + y,
                     h * offset[..., 2] + z], axis=-1)


def warp_object_motion(points, velocity, dt):
    """Constant-velocity warp in the BEV plane; z is untouched."""
    points = np.array(points, dtype=np.float64)
    velocity = np.asarray(velocity, dtype=np.float64)
    points[..., 0] = points[..., 0] + velocity[..., 0] * dt
    points[..., 1] = points[..., 1] + velocity[..., 1] * dt
    return points


def warp_ego_motion(points, e0, et):
    return ego_align(points, e0, et)


def sampling_points(boxes, features, poses, p, cfg):
    """3D sampling points for every frame, expressed in that frame's ego coordinates.

    Returns an N x T x S x 3 array.
    """
    offsets = gen_offsets(features, p, cfg)
    pts = pillar_to_ego(boxes[:, None, None, :], offsets)
    t0 = poses[0].timestamp
    for t in range(cfg.num_frames):
        frame = pts[:, t]
        if cfg.align_object:
            frame = warp_object_motion(frame, boxes[:, None, 7:9],
                                       poses[t].timestamp - t0)
        if cfg.align_ego:
            frame = warp_ego_motion(frame, poses[0], poses[t])
        pts[:, t] = frame
    return pts


def sample_frame(points, weights, pyramids, cameras, scale):
    """Hit-averaged, level-weighted features for one frame.

    points: M x 3, weights: M x L, pyramids: one per view. Returns M x C and
    the per-point hit count.
    """
    m = points.shape[0]
    channels = pyramids[0].levels[0].shape[0]
    acc = np.zeros((m, channels))
    count = np.zeros(m)
    for cam, pyr in zip(cameras, pyramids):
        u, v, _, hit = project_points(cam, points)
        if not np.any(hit):
            continue
        feat = np.zeros((m, channels))
        for j in range(weights.shape[-1]):
            k = scale / cam.strides[j]
            feat = feat + weights[:, j:j + 1] * bilinear_sample(pyr.levels[j], u * k, v * k)
        acc = acc + np.where(hit[:, None], feat, 0.0)
        count = count + hit
    out = np.where(count[:, None] > 0, acc / np.maximum(count, 1)[:, None], 0.0)
    return out, count


def sample_spatiotemporal(boxes, features, inputs, p, cfg):
    """Sampled features, N x P_total x C, rows ordered by (stream, frame, point)."""
    boxes = np.asarray(boxes, dtype=np.float64)
    n = boxes.shape[0]
    s = cfg.num_points
    pts = sampling_points(boxes, features, inputs.poses, p, cfg)
    w = scale_weights(features, p, cfg)
    rows = []
    for _, t, scale in route_streams(cfg):
        pyramids = inputs.pyramids[(scale, t)]
        f, _ = sample_frame(pts[:, t].reshape(n * s, 3), w[:, t].reshape(n * s, -1),
                            pyramids, inputs.cameras, scale)
        rows.append(f.reshape(n, s, -1))
    return np.concatenate(rows, axis=1)
