"""Deterministic synthetic driving scenes.

Boxes move at constant world velocity, the ego vehicle drives along a
constant-velocity / constant-yaw-rate path, and each camera view gets a
feature pyramid with one Gaussian splat per visible object on top of iid
noise. The splats stand in for backbone features.
"""
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import ConfigurationError
from .geometry import CameraModel, EgoPose, project_points, surround_rig
from .numerics import wrap_angle
from .parallel import ordered_map

SCENE_FORMAT = "bevquery-scene"
SCENE_VERSION = 1

DEFAULT_CLASS_SIZES = (
    (1.9, 4.5, 1.6),   # car
    (0.7, 0.7, 1.8),   # pedestrian
    (2.6, 8.0, 3.2),   # truck
)

ALLOWED_SCALES = (1.0, 0.5, 0.25)


@dataclass
class SceneConfig:
    num_objects: int = 10
    class_sizes: list = field(default_factory=lambda: [list(s) for s in DEFAULT_CLASS_SIZES])
    size_jitter: float = 0.1
    roi_half_extent: float = 20.0
    min_range: float = 4.0
    min_separation: float = 2.0
    speed_range: tuple = (0.0, 5.0)
    num_frames: int = 8
    frame_interval: float = 0.5
    ego_velocity: tuple = (4.0, 0.0)
    ego_yaw_rate: float = 0.1
    channels: int = 64
    noise_std: float = 0.05
    class_signature_weight: float = 1.0
    num_cameras: int = 6
    image_width: int = 192
    image_height: int = 112
    hfov_deg: float = 70.0
    strides: tuple = (4, 8, 16, 32)
    mount_height: float = 1.5

    def __post_init__(self):
        self.speed_range = tuple(float(v) for v in self.speed_range)
        self.ego_velocity = tuple(float(v) for v in self.ego_velocity)
        self.strides = tuple(int(s) for s in self.strides)
        self.class_sizes = [[float(x) for x in s] for s in self.class_sizes]
        self.validate()

    @property
    def num_classes(self):
        return len(self.class_sizes)

    def validate(self):
        if self.num_objects < 0:
            raise ConfigurationError("num_objects must be >= 0")
        if not self.class_sizes or any(
                len(s) != 3 or min(s) <= 0 for s in self.class_sizes):
            raise ConfigurationError("class_sizes must be positive (w, l, h) triples")
        if not 0 <= self.size_jitter < 1:
            raise ConfigurationError("size_jitter must be in [0, 1)")
        if self.roi_half_extent <= 0 or not 0 <= self.min_range < self.roi_half_extent:
            raise ConfigurationError("need 0 <= min_range < roi_half_extent")
        lo, hi = self.speed_range
        if len(self.speed_range) != 2 or lo < 0 or hi < lo:
            raise ConfigurationError("speed_range must be 0 <= lo <= hi")
        if self.num_frames < 1 or self.frame_interval <= 0:
            raise ConfigurationError("need num_frames >= 1 and frame_interval > 0")
        if self.channels < 1 or self.noise_std < 0:
            raise ConfigurationError("need channels >= 1 and noise_std >= 0")
        if self.num_cameras < 1:
            raise ConfigurationError("need at least one camera")

    def cameras(self):
        return surround_rig(self.num_cameras, self.image_width, self.image_height,
                            self.hfov_deg, self.strides, self.mount_height)


@dataclass(frozen=True, eq=False)
class SceneObject:
    id: int
    class_id: int
    center0: np.ndarray
    size: np.ndarray
    yaw0: float
    velocity: np.ndarray
    signature: np.ndarray

    def center_at(self, dt):
        return self.center0 + np.array([self.velocity[0], self.velocity[1], 0.0]) * dt

    def to_dict(self):
        return {"id": self.id, "class_id": self.class_id,
                "center0": self.center0.tolist(), "size": self.size.tolist(),
                "yaw0": self.yaw0, "velocity": self.velocity.tolist(),
                "signature": self.signature.tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(int(d["id"]), int(d["class_id"]), np.array(d["center0"]),
                   np.array(d["size"]), float(d["yaw0"]),
                   np.array(d["velocity"]), np.array(d["signature"]))


@dataclass(frozen=True, eq=False)
class Scene:
    config: SceneConfig
    seed: int
    objects: tuple
    poses: tuple
    cameras: tuple

    @property
    def timestamps(self):
        return [p.timestamp for p in self.poses]

    @property
    def num_frames(self):
        return len(self.poses)

    @property
    def channels(self):
        return self.config.channels

    def to_dict(self):
        return {"format": SCENE_FORMAT, "version": SCENE_VERSION,
                "seed": self.seed, "config": _config_to_dict(self.config),
                "objects": [o.to_dict() for o in self.objects],
                "poses": [{"transform": p.transform.to_dict(),
                           "timestamp": p.timestamp} for p in self.poses],
                "cameras": [c.to_dict() for c in self.cameras]}

    @classmethod
    def from_dict(cls, d):
        from .geometry import RigidTransform
        if d.get("format") != SCENE_FORMAT or d.get("version") != SCENE_VERSION:
            raise ConfigurationError("not a bevquery scene file (or wrong version)")
        return cls(SceneConfig(**d["config"]), int(d["seed"]),
                   tuple(SceneObject.from_dict(o) for o in d["objects"]),
                   tuple(EgoPose(RigidTransform.from_dict(p["transform"]),
                                 float(p["timestamp"])) for p in d["poses"]),
                   tuple(CameraModel.from_dict(c) for c in d["cameras"]))


def _config_to_dict(cfg):
    d = asdict(cfg)
    d["speed_range"] = list(cfg.speed_range)
    d["ego_velocity"] = list(cfg.ego_velocity)
    d["strides"] = list(cfg.strides)
    return d


def object_signature(seed, object_id, class_id, channels, class_weight=1.0):
    """Unit-norm feature signature derived from (seed, id) plus a class direction."""
    own = np.random.default_rng([seed, 7919, object_id]).standard_normal(channels)
    cls = np.random.default_rng([seed, 104729, class_id]).standard_normal(channels)
    sig = own + class_weight * cls
    return sig / np.linalg.norm(sig)


def ego_poses(cfg):
    poses = []
    vx, vy = cfg.ego_velocity
    for t in range(cfg.num_frames):
        ts = -t * cfg.frame_interval
        poses.append(EgoPose.from_heading((vx * ts, vy * ts, 0.0),
                                          cfg.ego_yaw_rate * ts, ts))
    return tuple(poses)


def _visible_everywhere(center0, velocity, poses, cams):
    for pose in poses:
        dt = pose.timestamp - poses[0].timestamp
        c = center0 + np.array([velocity[0], velocity[1], 0.0]) * dt
        p = pose.transform.apply(c)
        if not any(bool(project_points(cam, p)[3]) for cam in cams):
            return False
    return True


def build_scene(config, seed, max_attempts=10000):
    cfg = config
    cfg.validate()
    rng = np.random.default_rng(seed)
    cams = tuple(cfg.cameras())
    poses = ego_poses(cfg)
    objects = []
    attempts = 0
    while len(objects) < cfg.num_objects:
        attempts += 1
        if attempts > max_attempts:
            raise ConfigurationError(
                "could not place objects; relax min_range/min_separation/speed_range")
        class_id = int(rng.integers(cfg.num_classes))
        base = np.array(cfg.class_sizes[class_id])
        size = base * (1 + cfg.size_jitter * rng.uniform(-1, 1, 3))
        r = rng.uniform(cfg.min_range, cfg.roi_half_extent)
        phi = rng.uniform(-np.pi, np.pi)
        # ego frame 0 coordinates -> world
        p_ego = np.array([r * np.cos(phi), r * np.sin(phi), size[2] / 2])
        center0 = poses[0].transform.rotation.T @ (p_ego - poses[0].transform.translation)
        speed = rng.uniform(*cfg.speed_range)
        heading = rng.uniform(-np.pi, np.pi)
        velocity = speed * np.array([np.cos(heading), np.sin(heading)])
        yaw0 = float(wrap_angle(heading if speed > 0 else rng.uniform(-np.pi, np.pi)))
        if any(np.linalg.norm(o.center0[:2] - center0[:2]) < cfg.min_separation
               for o in objects):
            continue
        if not _visible_everywhere(center0, velocity, poses, cams):
            continue
        oid = len(objects)
        sig = object_signature(seed, oid, class_id, cfg.channels,
                               cfg.class_signature_weight)
        objects.append(SceneObject(oid, class_id, center0, size, yaw0, velocity, sig))
    return Scene(cfg, int(seed), tuple(objects), poses, cams)


@dataclass(frozen=True, eq=False)
class GroundTruthFrame:
    """Boxes as (x, y, z, w, l, h, yaw, vx, vy) in the frame's own ego coordinates."""
    frame_index: int
    boxes: np.ndarray
    class_ids: np.ndarray
    object_ids: np.ndarray

    def __len__(self):
        return len(self.class_ids)


def gt_at(scene, frame_index):
    if not 0 <= frame_index < scene.num_frames:
        raise ConfigurationError(f"frame {frame_index} out of range")
    pose = scene.poses[frame_index]
    dt = pose.timestamp - scene.poses[0].timestamp
    r = pose.transform.rotation
    ego_yaw = np.arctan2(r[1, 0], r[0, 0])
    rows, cls, ids = [], [], []
    for o in scene.objects:
        c = pose.transform.apply(o.center_at(dt))
        if not any(bool(project_points(cam, c)[3]) for cam in scene.cameras):
            continue
        v = r[:2, :2] @ o.velocity
        yaw = float(wrap_angle(o.yaw0 + ego_yaw))
        rows.append([c[0], c[1], c[2], *o.size, yaw, v[0], v[1]])
        cls.append(o.class_id)
        ids.append(o.id)
    boxes = np.array(rows, dtype=np.float64).reshape(-1, 9)
    return GroundTruthFrame(frame_index, boxes, np.array(cls, dtype=np.int64),
                            np.array(ids, dtype=np.int64))


@dataclass(frozen=True, eq=False)
class FeaturePyramid:
    levels: tuple
    strides: tuple
    scale: float


def _scale_code(scale):
    for code, s in zip((1, 2, 4), ALLOWED_SCALES):
        if abs(scale - s) < 1e-12:
            return code
    raise ConfigurationError(f"resolution_scale must be one of {ALLOWED_SCALES}")


def render_view(scene, frame_index, view, resolution_scale=1.0):
    code = _scale_code(resolution_scale)
    cam = scene.cameras[view]
    pose = scene.poses[frame_index]
    dt = pose.timestamp - scene.poses[0].timestamp
    splats = []
    for o in scene.objects:
        c = pose.transform.apply(o.center_at(dt))
        u, v, depth, hit = project_points(cam, c)
        if hit:
            splats.append((float(u), float(v), float(depth), o))
    levels = []
    for j, stride in enumerate(cam.strides):
        h, w = cam.level_shape(j, resolution_scale)
        rng = np.random.default_rng([scene.seed, 31337, frame_index, view, j, code])
        fmap = scene.config.noise_std * rng.standard_normal((scene.channels, h, w))
        if scene.config.noise_std == 0:
            fmap = np.zeros((scene.channels, h, w))
        ys = np.arange(h, dtype=np.float64)[:, None]
        xs = np.arange(w, dtype=np.float64)[None, :]
        k = resolution_scale / stride
        for u, v, depth, o in splats:
            sigma = max(2.0, cam.fx * k * o.size[0] / depth)
            g = np.exp(-((xs - u * k) ** 2 + (ys - v * k) ** 2) / (2 * sigma ** 2))
            fmap = fmap + o.signature[:, None, None] * g[None]
        levels.append(fmap)
    return FeaturePyramid(tuple(levels), cam.strides, resolution_scale)


def render_features(scene, frame_index, resolution_scale=1.0, threads=None):
    """One FeaturePyramid per camera view for a single frame."""
    return ordered_map(lambda k: render_view(scene, frame_index, k, resolution_scale),
                       range(len(scene.cameras)), threads)
