"""Spatio-temporal clustering into 4D pseudo-labels.

Non-ground points of a window of scans are moved into the world frame,
voxel-downsampled, clustered with DBSCAN and the cluster ids are copied back
to every original point.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import kernels
from .config import ClusterConfig, GroundConfig
from .core import BACKGROUND_ID, Scan, Sequence, transform_scan
from .ground import RansacGround


@dataclass(frozen=True, eq=False)
class VoxelGrid:
    """Occupied cells of a voxel grid.

    ``inverse[i]`` is the cell of input point ``i``; ``provenance[i]`` is its
    ``(scan, point)`` origin when known.
    """

    voxel_size: float
    cells: np.ndarray
    representatives: np.ndarray
    inverse: np.ndarray
    provenance: np.ndarray = None

    def __len__(self):
        return self.cells.shape[0]

    def members(self, cell):
        return np.nonzero(self.inverse == cell)[0]


@dataclass(frozen=True, eq=False)
class WindowPseudoLabels:
    start: int
    labels: tuple
    n_clusters: int

    def __len__(self):
        return len(self.labels)


def aggregate_window(seq: Sequence, start: int, length: int, masks=None):
    """World-frame non-ground points of ``length`` scans from ``start``.

    ``masks`` holds one ground mask per scan of the full sequence (None means
    no ground). Returns the aggregated scan and an ``(N, 2)`` provenance array
    of ``(scan position, point index)``.
    """
    if length < 1 or start < 0 or start + length > len(seq):
        raise ValueError(f"window [{start}, {start + length}) outside sequence of length {len(seq)}")
    chunks, prov = [], []
    for pos in range(start, start + length):
        scan = seq.scans[pos]
        keep = np.ones(len(scan), dtype=bool) if masks is None else ~np.asarray(masks[pos], dtype=bool)
        idx = np.nonzero(keep)[0]
        world = transform_scan(Scan(scan.points[idx], scan.frame_index), seq.poses[pos])
        chunks.append(world.points)
        prov.append(np.column_stack([np.full(len(idx), pos, dtype=np.int64), idx]))
    pts = np.vstack(chunks) if chunks else np.empty((0, 4))
    return Scan(pts, seq.scans[start].frame_index), np.vstack(prov).astype(np.int64)


def voxel_downsample(points, voxel_size: float, provenance=None) -> VoxelGrid:
    """One centroid per occupied ``floor(coord / voxel_size)`` cell."""
    if voxel_size <= 0:
        raise ValueError("voxel_size must be positive")
    xyz = np.asarray(points.xyz if isinstance(points, Scan) else points, dtype=np.float64)[:, :3]
    if xyz.shape[0] == 0:
        return VoxelGrid(voxel_size, np.empty((0, 3), np.int64), np.empty((0, 3)), np.empty(0, np.int64), provenance)
    cells = np.floor(xyz / voxel_size).astype(np.int64)
    uniq, inverse = np.unique(cells, axis=0, return_inverse=True)
    inverse = inverse.reshape(-1)
    counts = np.bincount(inverse)
    reps = np.column_stack([np.bincount(inverse, weights=xyz[:, k]) for k in range(3)]) / counts[:, None]
    return VoxelGrid(voxel_size, uniq, reps, inverse, provenance)


def dbscan(points, eps: float, min_pts: int) -> np.ndarray:
    """Density clustering; returns ids 1..K per point, 0 for noise.

    A point is core when at least ``min_pts`` points (itself included) lie
    within ``eps``. Core points reachable through core-core links share a
    cluster, clusters are numbered by their lowest-index core point, and a
    border point joins the cluster of its lowest-index core neighbor.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    if min_pts < 1:
        raise ValueError("min_pts must be at least 1")
    xyz = np.asarray(points, dtype=np.float64)
    if xyz.size == 0:
        return np.zeros(0, dtype=np.int64)
    if xyz.ndim != 2 or xyz.shape[1] < 3:
        raise ValueError(f"points must be (N, 3+), got {xyz.shape}")
    xyz = xyz[:, :3]
    indptr, indices = kernels.eps_neighbors(xyz, eps)
    return kernels.dbscan_labels(indptr, indices, min_pts)


def upsample_labels(grid: VoxelGrid, rep_labels, scan_sizes, start: int = 0) -> WindowPseudoLabels:
    """Copy cell labels to member points and scatter them back per scan.

    ``scan_sizes`` are the full point counts of the window's scans; points not
    present in the grid (ground) keep id 0.
    """
    rep_labels = np.asarray(rep_labels, dtype=np.int64)
    labels = [np.full(int(n), BACKGROUND_ID, dtype=np.int64) for n in scan_sizes]
    if grid.provenance is None:
        raise ValueError("grid has no provenance to scatter labels through")
    point_labels = rep_labels[grid.inverse] if len(grid) else np.empty(0, np.int64)
    for k in range(len(labels)):
        sel = grid.provenance[:, 0] == start + k
        labels[k][grid.provenance[sel, 1]] = point_labels[sel]
    n_clusters = int(rep_labels.max()) if rep_labels.size else 0
    for arr in labels:
        arr.flags.writeable = False
    return WindowPseudoLabels(start, tuple(labels), n_clusters)


def window_starts(n_scans: int, window_len: int, stride: int):
    """``(start, length)`` of each window; the last one is clipped to the sequence."""
    out = []
    start = 0
    while start < n_scans:
        length = min(window_len, n_scans - start)
        out.append((start, length))
        if start + length >= n_scans:
            break
        start += stride
    return out


def pseudo_label_window(seq, start, length, cfg: ClusterConfig, masks=None) -> WindowPseudoLabels:
    agg, prov = aggregate_window(seq, start, length, masks)
    grid = voxel_downsample(agg, cfg.voxel_size, prov)
    rep_labels = dbscan(grid.representatives, cfg.eps, cfg.min_pts)
    sizes = [len(seq.scans[p]) for p in range(start, start + length)]
    return upsample_labels(grid, rep_labels, sizes, start)


def ground_masks(seq: Sequence, segmenter=None, threads: int = 1):
    segmenter = segmenter or RansacGround(GroundConfig())
    if threads <= 1:
        return [segmenter(s) for s in seq.scans]
    with ThreadPoolExecutor(threads) as pool:
        return list(pool.map(segmenter, seq.scans))


def pseudo_label_sequence(seq: Sequence, cfg: ClusterConfig = ClusterConfig(), masks=None, segmenter=None, threads: int = 1):
    """Pseudo-label every window of ``seq``; ids are local to each window."""
    cfg.validate()
    if masks is None:
        masks = ground_masks(seq, segmenter, threads)
    jobs = window_starts(len(seq), cfg.window_len, cfg.stride)
    if threads <= 1 or len(jobs) == 1:
        return [pseudo_label_window(seq, s, n, cfg, masks) for s, n in jobs]
    with ThreadPoolExecutor(threads) as pool:
        return list(pool.map(lambda job: pseudo_label_window(seq, job[0], job[1], cfg, masks), jobs))


def merge_window_labels(n_scans: int, windows):
    """Per-scan label arrays for the whole sequence.

    Each scan takes its labels from the first window covering it. Window ids
    are shifted so that ids never repeat across windows; no cross-window
    linking is attempted.
    """
    out = [None] * n_scans
    offset = 0
    for win in windows:
        for k, lab in enumerate(win.labels):
            pos = win.start + k
            if out[pos] is None:
                out[pos] = np.where(lab > 0, lab + offset, 0)
        offset += win.n_clusters
    for pos in range(n_scans):
        if out[pos] is None:
            raise ValueError(f"scan {pos} not covered by any window")
    return out
