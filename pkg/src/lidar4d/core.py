"""Shared data model: scans, poses, sequences and BEV boxes.

Point data is held as ``(N, 4)`` float64 arrays with columns
``x, y, z, intensity``. Instance labelings are plain ``(N,)`` int64 arrays
where 0 means background/unassigned.
"""

from dataclasses import dataclass, field
from typing import NamedTuple, Sequence as Seq

import numpy as np

BACKGROUND_ID = 0


def _frozen(arr, shape_tail, name):
    arr = np.array(arr, dtype=np.float64, copy=True)
    if arr.ndim == 1 and arr.size == 0:
        arr = arr.reshape((0,) + shape_tail)
    if arr.shape[1:] != shape_tail:
        raise ValueError(f"{name} must have shape (N, {', '.join(map(str, shape_tail))}), got {arr.shape}")
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True, eq=False)
class Scan:
    """One LiDAR frame. ``points`` columns are x, y, z, intensity."""

    points: np.ndarray
    frame_index: int = 0

    def __post_init__(self):
        pts = _frozen(self.points, (4,), "points")
        if not np.isfinite(pts[:, :3]).all():
            raise ValueError("scan coordinates must be finite")
        if self.frame_index < 0:
            raise ValueError("frame_index must be non-negative")
        object.__setattr__(self, "points", pts)

    @classmethod
    def from_xyz(cls, xyz, intensity=None, frame_index=0):
        xyz = np.asarray(xyz, dtype=np.float64).reshape(-1, 3)
        if intensity is None:
            intensity = np.zeros(len(xyz))
        return cls(np.column_stack([xyz, intensity]), frame_index)

    @property
    def xyz(self):
        return self.points[:, :3]

    @property
    def intensity(self):
        return self.points[:, 3]

    def __len__(self):
        return self.points.shape[0]

    def __eq__(self, other):
        if not isinstance(other, Scan):
            return NotImplemented
        return self.frame_index == other.frame_index and np.array_equal(self.points, other.points)

    __hash__ = None


@dataclass(frozen=True, eq=False)
class Pose:
    """Rigid sensor-to-world transform ``p_world = R @ p + t``."""

    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        R = np.array(self.rotation, dtype=np.float64).reshape(3, 3)
        t = np.array(self.translation, dtype=np.float64).reshape(3)
        if not (np.isfinite(R).all() and np.isfinite(t).all()):
            raise ValueError("pose entries must be finite")
        if np.abs(R.T @ R - np.eye(3)).max() > 1e-6:
            raise ValueError("rotation is not orthonormal (R^T R != I within 1e-6)")
        if abs(np.linalg.det(R) - 1.0) > 1e-6:
            raise ValueError("rotation determinant must be +1 within 1e-6")
        R.flags.writeable = False
        t.flags.writeable = False
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls):
        return cls()

    @classmethod
    def from_matrix(cls, mat):
        mat = np.asarray(mat, dtype=np.float64)
        return cls(mat[:3, :3], mat[:3, 3])

    def matrix(self):
        """Row-major 3x4 ``[R|t]``."""
        return np.hstack([self.rotation, self.translation[:, None]])

    def inverse(self):
        Rt = self.rotation.T
        return Pose(Rt, -Rt @ self.translation)

    def compose(self, other):
        """``self ∘ other``: apply ``other`` first."""
        return Pose(self.rotation @ other.rotation, self.rotation @ other.translation + self.translation)

    def apply(self, xyz):
        xyz = np.asarray(xyz, dtype=np.float64).reshape(-1, 3)
        return xyz @ self.rotation.T + self.translation

    def __eq__(self, other):
        if not isinstance(other, Pose):
            return NotImplemented
        return np.array_equal(self.rotation, other.rotation) and np.array_equal(self.translation, other.translation)

    __hash__ = None


def rot_z(theta):
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


@dataclass(frozen=True)
class Sequence:
    scans: tuple
    poses: tuple

    def __post_init__(self):
        scans, poses = tuple(self.scans), tuple(self.poses)
        if len(scans) != len(poses):
            raise ValueError(f"{len(scans)} scans but {len(poses)} poses")
        idx = [s.frame_index for s in scans]
        if any(b <= a for a, b in zip(idx, idx[1:])):
            raise ValueError("frame indices must be strictly increasing")
        object.__setattr__(self, "scans", scans)
        object.__setattr__(self, "poses", poses)

    def __len__(self):
        return len(self.scans)

    def window(self, start, length):
        if start < 0 or length < 1 or start + length > len(self):
            raise ValueError(f"window [{start}, {start + length}) outside sequence of length {len(self)}")
        return Sequence(self.scans[start : start + length], self.poses[start : start + length])


class Aabb2D(NamedTuple):
    """Axis-aligned BEV box."""

    x_min: float
    x_max: float
    y_min: float
    y_max: float

    @property
    def center(self):
        return (0.5 * (self.x_min + self.x_max), 0.5 * (self.y_min + self.y_max))

    def as_array(self):
        return np.array(self, dtype=np.float64)


def transform_scan(scan: Scan, pose: Pose) -> Scan:
    xyz = pose.apply(scan.xyz)
    if not np.isfinite(xyz).all():
        raise ValueError("transform produced non-finite coordinates")
    return Scan(np.column_stack([xyz, scan.intensity]), scan.frame_index)


def _xyz(points):
    if isinstance(points, Scan):
        return points.xyz
    arr = np.asarray(points, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr.reshape(1, -1)
    return arr[:, :3]


def bev_aabb(points) -> Aabb2D:
    """Tight BEV box of a point set (z ignored)."""
    xyz = _xyz(points)
    if xyz.shape[0] == 0:
        raise ValueError("empty object")
    lo = xyz[:, :2].min(axis=0)
    hi = xyz[:, :2].max(axis=0)
    return Aabb2D(float(lo[0]), float(hi[0]), float(lo[1]), float(hi[1]))


def aabb_overlap(a: Aabb2D, b: Aabb2D) -> bool:
    # touching edges count as a collision
    return a.x_min <= b.x_max and b.x_min <= a.x_max and a.y_min <= b.y_max and b.y_min <= a.y_max


def centroid(points) -> np.ndarray:
    xyz = _xyz(points)
    if xyz.shape[0] == 0:
        raise ValueError("centroid of empty point set")
    return xyz.mean(axis=0)


def concat_scans(scans: Seq[Scan], frame_index=0) -> Scan:
    if not scans:
        return Scan(np.empty((0, 4)), frame_index)
    return Scan(np.vstack([s.points for s in scans]), frame_index)
