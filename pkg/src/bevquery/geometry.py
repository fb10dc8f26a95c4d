"""Rigid transforms, ego poses and pinhole cameras."""
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError

CHEIRALITY_EPS = 1e-6


def rot_z(yaw):
    c, s = np.cos(yaw), np.sin(yaw)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


@dataclass(frozen=True, eq=False)
class RigidTransform:
    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        r = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        t = np.asarray(self.translation, dtype=np.float64).reshape(3)
        if not np.allclose(r.T @ r, np.eye(3), atol=1e-9, rtol=0):
            raise ConfigurationError("rotation is not orthonormal")
        if abs(np.linalg.det(r) - 1.0) > 1e-9:
            raise ConfigurationError("rotation has det != +1")
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls):
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_yaw(cls, yaw, translation=(0.0, 0.0, 0.0)):
        return cls(rot_z(yaw), np.asarray(translation, dtype=np.float64))

    def apply(self, points):
        """Map an (..., 3) array of points."""
        p = np.asarray(points, dtype=np.float64)
        return np.einsum("ij,...j->...i", self.rotation, p) + self.translation

    def apply_vector(self, vectors):
        return np.einsum("ij,...j->...i", self.rotation,
                         np.asarray(vectors, dtype=np.float64))

    def as_matrix(self):
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    def to_dict(self):
        return {"rotation": self.rotation.tolist(),
                "translation": self.translation.tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(np.array(d["rotation"]), np.array(d["translation"]))


def compose(a, b):
    """Return a∘b, i.e. the transform p -> a(b(p))."""
    return RigidTransform(a.rotation @ b.rotation,
                          a.rotation @ b.translation + a.translation)


def invert(a):
    rt = a.rotation.T
    return RigidTransform(rt, -rt @ a.translation)


@dataclass(frozen=True, eq=False)
class EgoPose:
    """World -> ego-local transform at ``timestamp`` (seconds)."""
    transform: RigidTransform
    timestamp: float

    @classmethod
    def from_heading(cls, position, heading, timestamp):
        # the vehicle sits at `position` facing `heading`; store the inverse
        ego_to_world = RigidTransform.from_yaw(heading, position)
        return cls(invert(ego_to_world), float(timestamp))


def ego_align(points, e0, et):
    """Move points from frame-0 ego coordinates into frame-t ego coordinates."""
    return compose(et.transform, invert(e0.transform)).apply(points)


@dataclass(frozen=True, eq=False)
class CameraModel:
    camera_from_ego: RigidTransform
    fx: float
    fy: float
    cx: float
    cy: float
    image_width: int
    image_height: int
    strides: tuple = (1,)
    name: str = ""

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ConfigurationError("focal lengths must be positive")
        if self.image_width <= 0 or self.image_height <= 0:
            raise ConfigurationError("image extents must be positive")
        strides = tuple(int(s) for s in self.strides)
        if not strides or strides[0] < 1 or any(
                b <= a for a, b in zip(strides, strides[1:])):
            raise ConfigurationError(
                f"strides must be positive and strictly increasing: {strides}")
        object.__setattr__(self, "strides", strides)

    @property
    def num_levels(self):
        return len(self.strides)

    def level_shape(self, level, scale=1.0):
        """(H, W) of one pyramid level for an image rendered at ``scale``."""
        s = self.strides[level]
        return (int(np.ceil(self.image_height * scale / s - 1e-9)),
                int(np.ceil(self.image_width * scale / s - 1e-9)))

    def to_dict(self):
        return {"camera_from_ego": self.camera_from_ego.to_dict(),
                "fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy,
                "image_width": self.image_width,
                "image_height": self.image_height,
                "strides": list(self.strides), "name": self.name}

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["camera_from_ego"] = RigidTransform.from_dict(d["camera_from_ego"])
        d["strides"] = tuple(d["strides"])
        return cls(**d)


def project_points(cam, p_ego):
    """Vectorised pinhole projection of (..., 3) ego points.

    Returns ``(u, v, depth, hit)`` arrays; ``u``/``v`` are full-resolution
    pixels and are zero where the point is behind the camera.
    """
    pc = cam.camera_from_ego.apply(p_ego)
    depth = pc[..., 2]
    front = depth > CHEIRALITY_EPS
    z = np.where(front, depth, 1.0)
    u = np.where(front, cam.fx * pc[..., 0] / z + cam.cx, 0.0)
    v = np.where(front, cam.fy * pc[..., 1] / z + cam.cy, 0.0)
    hit = (front & (u >= 0) & (u < cam.image_width)
           & (v >= 0) & (v < cam.image_height))
    return u, v, depth, hit


def project(cam, p_ego):
    """Project a single ego point; returns (u, v, depth, hit) as Python scalars."""
    u, v, d, hit = project_points(cam, np.asarray(p_ego, dtype=np.float64))
    return float(u), float(v), float(d), bool(hit)


def level_coords(cam, u, v, level, scale=1.0):
    s = scale / cam.strides[level]
    return u * s, v * s


def view_hits(cams, p_ego):
    """All (view index, u, v, depth) for cameras that see ``p_ego``."""
    hits = []
    for k, cam in enumerate(cams):
        u, v, d, hit = project(cam, p_ego)
        if hit:
            hits.append((k, u, v, d))
    return hits


# camera axes: x right, y down, z forward; ego axes: x forward, y left, z up
def camera_looking_along(yaw, mount=(0.0, 0.0, 1.5)):
    """camera_from_ego for a camera at ``mount`` facing ego heading ``yaw``."""
    c, s = np.cos(yaw), np.sin(yaw)
    r = np.array([[s, -c, 0.0],
                  [0.0, 0.0, -1.0],
                  [c, s, 0.0]])
    mount = np.asarray(mount, dtype=np.float64)
    return RigidTransform(r, -r @ mount)


def surround_rig(num_cameras=6, image_width=192, image_height=112,
                 hfov_deg=70.0, strides=(4, 8, 16, 32), mount_height=1.5):
    f = (image_width / 2) / np.tan(np.radians(hfov_deg) / 2)
    cams = []
    for k in range(num_cameras):
        yaw = 2 * np.pi * k / num_cameras
        cams.append(CameraModel(
            camera_looking_along(yaw, (0.0, 0.0, mount_height)),
            fx=float(f), fy=float(f),
            cx=image_width / 2, cy=image_height / 2,
            image_width=image_width, image_height=image_height,
            strides=tuple(strides), name=f"CAM_{k}"))
    return cams
