"""Ground / non-ground separation.

The built-in segmenter fits one dominant plane with RANSAC. Anything that
maps a :class:`~lidar4d.core.Scan` to a boolean mask can stand in for it,
e.g. :class:`MaskFileGround` which reads masks produced by an external tool.
"""

import logging
from pathlib import Path
from typing import NamedTuple, Protocol

import numpy as np

from . import io, kernels
from .config import GroundConfig
from .core import Scan

log = logging.getLogger(__name__)


class GroundSegmenter(Protocol):
    def __call__(self, scan: Scan) -> np.ndarray: ...


def _residuals(xyz, plane):
    a, b, c, d = plane
    return a * xyz[:, 0] + b * xyz[:, 1] + c * xyz[:, 2] + d


def _candidate_planes(xyz, rng, iterations, min_nz):
    n = xyz.shape[0]
    tri = rng.integers(0, n, size=(iterations, 3))
    p0, p1, p2 = xyz[tri[:, 0]], xyz[tri[:, 1]], xyz[tri[:, 2]]
    normal = np.cross(p1 - p0, p2 - p0)
    norm = np.linalg.norm(normal, axis=1)
    ok = norm > 1e-12
    normal[ok] /= norm[ok, None]
    normal[normal[:, 2] < 0] *= -1.0
    ok &= normal[:, 2] >= min_nz
    d = -(normal * p0).sum(axis=1)
    return np.column_stack([normal, d])[ok]


def _refit(xyz, mask):
    pts = xyz[mask]
    if len(pts) < 3:
        return None
    center = pts.mean(axis=0)
    _, _, vt = np.linalg.svd(pts - center, full_matrices=False)
    normal = vt[-1]
    if normal[2] < 0:
        normal = -normal
    return np.array([normal[0], normal[1], normal[2], -normal @ center])


def segment_ground_ransac(scan: Scan, cfg: GroundConfig = GroundConfig()) -> np.ndarray:
    """Boolean ground mask from a single RANSAC plane.

    Candidate planes come from ``cfg.iterations`` random point triples drawn
    with ``cfg.seed``; planes tilted more than ``cfg.max_normal_tilt`` degrees
    from vertical are discarded before scoring. The winning plane is refit by
    least squares on its inliers and the refit is kept when it does not lose
    inliers.
    """
    cfg.validate()
    xyz = scan.xyz
    n = xyz.shape[0]
    mask = np.zeros(n, dtype=bool)
    if n < 3:
        log.warning("scan %d has %d points; ground segmentation needs at least 3", scan.frame_index, n)
        return mask
    rng = np.random.default_rng(cfg.seed)
    min_nz = np.cos(np.deg2rad(cfg.max_normal_tilt))
    planes = _candidate_planes(xyz, rng, cfg.iterations, min_nz)
    if len(planes) == 0:
        return mask
    counts = kernels.plane_inlier_counts(xyz, planes, cfg.inlier_threshold)
    best = planes[int(np.argmax(counts))]
    mask = np.abs(_residuals(xyz, best)) <= cfg.inlier_threshold
    refit = _refit(xyz, mask)
    if refit is not None and refit[2] >= min_nz:
        refit_mask = np.abs(_residuals(xyz, refit)) <= cfg.inlier_threshold
        if refit_mask.sum() >= mask.sum():
            mask = refit_mask
    return mask


class RansacGround:
    def __init__(self, cfg: GroundConfig = GroundConfig()):
        self.cfg = cfg

    def __call__(self, scan):
        return segment_ground_ransac(scan, self.cfg)


class MaskFileGround:
    """Reads ``<frame>.ground`` byte masks from a directory."""

    def __init__(self, directory):
        self.directory = Path(directory)

    def __call__(self, scan):
        path = self.directory / io.frame_name(scan.frame_index, io.MASK_EXT)
        return io.read_ground_mask(path, expected_count=len(scan))


class SplitIndex(NamedTuple):
    ground: np.ndarray
    objects: np.ndarray


def split_scan(scan: Scan, mask):
    """Partition a scan into (ground, objects, index_map)."""
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != (len(scan),):
        raise ValueError(f"mask length {mask.shape[0] if mask.ndim else 0} does not match scan length {len(scan)}")
    gidx = np.nonzero(mask)[0]
    oidx = np.nonzero(~mask)[0]
    ground = Scan(scan.points[gidx], scan.frame_index)
    objects = Scan(scan.points[oidx], scan.frame_index)
    return ground, objects, SplitIndex(gidx, oidx)


def merge_split(ground: Scan, objects: Scan, index_map: SplitIndex) -> Scan:
    n = len(index_map.ground) + len(index_map.objects)
    pts = np.empty((n, 4))
    pts[index_map.ground] = ground.points
    pts[index_map.objects] = objects.points
    return Scan(pts, ground.frame_index)
