"""Camera model, pose sampling, and per-pixel ray generation.

Conventions (fixed globally): camera-to-world extrinsics, right-handed
world coordinates with +y up, camera looks down -z in its own frame.
Image rows grow downward, so pixel v maps to -y in camera space.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

ORTHONORMALITY_TOL = 1e-6


@dataclass(frozen=True)
class Intrinsics:
    """Pinhole intrinsics in pixel units."""

    focal_px: float
    width: int
    height: int
    principal_point: tuple[float, float] | None = None

    def __post_init__(self):
        if self.focal_px <= 0:
            raise ValueError(f"focal_px must be positive, got {self.focal_px}")
        if self.width <= 0 or self.height <= 0:
            raise ValueError("image dimensions must be positive")
        if self.principal_point is None:
            object.__setattr__(
                self, "principal_point", (self.width / 2.0, self.height / 2.0)
            )
        cx, cy = self.principal_point
        if not (0 <= cx <= self.width and 0 <= cy <= self.height):
            raise ValueError(f"principal point {self.principal_point} outside image")


@dataclass(frozen=True)
class CameraPose:
    """Camera-to-world rotation and translation."""

    rotation: np.ndarray  # (3, 3)
    translation: np.ndarray  # (3,)

    def __post_init__(self):
        rotation = np.asarray(self.rotation, dtype=np.float64)
        translation = np.asarray(self.translation, dtype=np.float64)
        if rotation.shape != (3, 3) or translation.shape != (3,):
            raise ValueError("rotation must be 3x3 and translation a 3-vector")
        residual = np.abs(rotation.T @ rotation - np.eye(3)).max()
        if residual >= ORTHONORMALITY_TOL:
            raise ValueError(f"rotation not orthonormal (residual {residual:.2e})")
        if np.linalg.det(rotation) < 0:
            raise ValueError("rotation must have determinant +1")
        object.__setattr__(self, "rotation", rotation)
        object.__setattr__(self, "translation", translation)

    @property
    def forward(self) -> np.ndarray:
        """World-space view direction (-z column of the rotation)."""
        return -self.rotation[:, 2]

    def to_matrix(self) -> np.ndarray:
        """4x4 camera-to-world matrix."""
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    @classmethod
    def from_matrix(cls, m: np.ndarray) -> "CameraPose":
        m = np.asarray(m, dtype=np.float64)
        if m.shape != (4, 4):
            raise ValueError(f"expected a 4x4 matrix, got shape {m.shape}")
        return cls(rotation=m[:3, :3], translation=m[:3, 3])


@dataclass(frozen=True)
class PoseDistribution:
    """Uniform yaw/pitch viewpoints on a sphere around a look-at point."""

    yaw_range: tuple[float, float] = (-0.6, 0.6)
    pitch_range: tuple[float, float] = (-0.3, 0.3)
    radius: float = 2.7
    look_at: tuple[float, float, float] = (0.0, 0.0, 0.0)

    def __post_init__(self):
        if self.yaw_range[0] > self.yaw_range[1]:
            raise ValueError(f"empty yaw_range {self.yaw_range}")
        if self.pitch_range[0] > self.pitch_range[1]:
            raise ValueError(f"empty pitch_range {self.pitch_range}")
        if self.radius <= 0:
            raise ValueError(f"radius must be positive, got {self.radius}")


def pose_from_angles(yaw: float, pitch: float, dist: PoseDistribution) -> CameraPose:
    """Place the camera on the distribution's sphere, looking at its center.

    yaw=0, pitch=0 gives the canonical frontal pose at look_at + (0, 0, radius).
    The up vector is world +y projected orthogonal to the forward axis.
    """
    tol = 1e-9
    if not (dist.yaw_range[0] - tol <= yaw <= dist.yaw_range[1] + tol):
        raise ValueError(f"yaw {yaw} outside range {dist.yaw_range}")
    if not (dist.pitch_range[0] - tol <= pitch <= dist.pitch_range[1] + tol):
        raise ValueError(f"pitch {pitch} outside range {dist.pitch_range}")

    look_at = np.asarray(dist.look_at, dtype=np.float64)
    offset = dist.radius * np.array(
        [
            np.sin(yaw) * np.cos(pitch),
            np.sin(pitch),
            np.cos(yaw) * np.cos(pitch),
        ]
    )
    position = look_at + offset

    forward = look_at - position
    norm = np.linalg.norm(forward)
    if norm < 1e-12:
        raise ValueError("degenerate pose: camera position equals look_at")
    forward /= norm

    world_up = np.array([0.0, 1.0, 0.0])
    up = world_up - np.dot(world_up, forward) * forward
    up_norm = np.linalg.norm(up)
    if up_norm < 1e-9:
        raise ValueError("degenerate pose: forward axis parallel to world up")
    up /= up_norm

    right = np.cross(forward, up)
    rotation = np.stack([right, up, -forward], axis=1)
    return CameraPose(rotation=rotation, translation=position)


def sample_pose(dist: PoseDistribution, rng: np.random.Generator) -> CameraPose:
    """Draw a pose with yaw and pitch uniform over the configured ranges."""
    yaw = rng.uniform(dist.yaw_range[0], dist.yaw_range[1])
    pitch = rng.uniform(dist.pitch_range[0], dist.pitch_range[1])
    return pose_from_angles(yaw, pitch, dist)


def generate_rays(pose: CameraPose, intr: Intrinsics) -> tuple[np.ndarray, np.ndarray]:
    """Per-pixel world-space rays for a pinhole camera.

    Rays pass through pixel centers (u + 0.5, v + 0.5). Returns
    (origins, directions), each (height, width, 3), directions normalized.
    """
    cx, cy = intr.principal_point
    u = np.arange(intr.width, dtype=np.float64) + 0.5
    v = np.arange(intr.height, dtype=np.float64) + 0.5
    uu, vv = np.meshgrid(u, v, indexing="xy")

    dirs_cam = np.stack(
        [
            (uu - cx) / intr.focal_px,
            -(vv - cy) / intr.focal_px,
            -np.ones_like(uu),
        ],
        axis=-1,
    )
    dirs_world = dirs_cam @ pose.rotation.T
    dirs_world /= np.linalg.norm(dirs_world, axis=-1, keepdims=True)

    origins = np.broadcast_to(pose.translation, dirs_world.shape).copy()
    return origins, dirs_world
