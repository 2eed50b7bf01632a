"""Class-agnostic 4D association metrics.

Segments are sets of ``(scan, point)`` pairs. Scores:

* ``s_assoc_temp``: ``1/|G| Σ_g 1/|g| Σ_{s∩g≠∅} |s∩g|·IoU(s,g)`` over 4D segments
* ``s_assoc``: the same formula after slicing every segment per scan
* ``iou_star``: ``1/|G| Σ_g max_s IoU(s,g)``

Intersections are counted with a sorted join on point keys instead of
explicit set operations.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import io, kernels
from .core import BACKGROUND_ID

_SHIFT = np.int64(32)

log = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class Segment4D:
    """``points`` is an ``(K, 2)`` array of unique ``(scan, point)`` pairs."""

    id: int
    points: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.int64).reshape(-1, 2)
        if pts.shape[0] == 0:
            raise ValueError(f"segment {self.id} is empty")
        if len(np.unique(_codes(pts))) != len(pts):
            raise ValueError(f"segment {self.id} has duplicate points")
        pts.flags.writeable = False
        object.__setattr__(self, "points", pts)

    def __len__(self):
        return self.points.shape[0]

    def as_set(self):
        return {(int(s), int(p)) for s, p in self.points}


def _codes(pts):
    return (pts[:, 0] << _SHIFT) | pts[:, 1]


@dataclass(frozen=True)
class AssocScores:
    s_assoc: float
    iou_star: float
    per_gt: tuple  # (segment index, |g|, association term, best IoU)


def _scores(gt_idx, pred_idx, g_size, s_size) -> AssocScores:
    """Scores from aligned per-row segment indices (-1 = none)."""
    n_gt = len(g_size)
    if n_gt == 0:
        raise ValueError("no ground truth")
    both = (gt_idx >= 0) & (pred_idx >= 0)
    g, s, inter = kernels.pair_counts(gt_idx[both], pred_idx[both])
    inter = inter.astype(np.float64)
    iou = inter / (g_size[g] + s_size[s] - inter)
    assoc = np.zeros(n_gt)
    best = np.zeros(n_gt)
    np.add.at(assoc, g, inter * iou)
    np.maximum.at(best, g, iou)
    assoc /= g_size
    per_gt = tuple((k, int(g_size[k]), float(assoc[k]), float(best[k])) for k in range(n_gt))
    return AssocScores(float(assoc.mean()), float(best.mean()), per_gt)


def _segment_rows(gt, pred):
    g_codes = np.concatenate([_codes(seg.points) for seg in gt]) if gt else np.empty(0, np.int64)
    g_idx = np.repeat(np.arange(len(gt)), [len(seg) for seg in gt]) if gt else np.empty(0, np.int64)
    if pred:
        p_codes = np.concatenate([_codes(seg.points) for seg in pred])
        p_idx = np.repeat(np.arange(len(pred)), [len(seg) for seg in pred])
        order = np.argsort(p_codes, kind="stable")
        p_codes, p_idx = p_codes[order], p_idx[order]
        if (np.diff(p_codes) == 0).any():
            raise ValueError("predicted segments must be disjoint")
        pos = np.searchsorted(p_codes, g_codes)
        hit = p_codes[np.minimum(pos, len(p_codes) - 1)] == g_codes
        matched = np.where(hit, p_idx[np.minimum(pos, len(p_codes) - 1)], -1)
    else:
        matched = np.full(len(g_codes), -1, dtype=np.int64)
    g_size = np.array([len(seg) for seg in gt], dtype=np.float64)
    s_size = np.array([len(seg) for seg in pred], dtype=np.float64)
    return g_idx, matched, g_size, s_size


def _check_gt(gt):
    if not gt:
        raise ValueError("no ground truth")


def s_assoc_temp(gt, pred) -> float:
    _check_gt(gt)
    return _scores(*_segment_rows(list(gt), list(pred))).s_assoc


def iou_star(gt, pred) -> float:
    _check_gt(gt)
    return _scores(*_segment_rows(list(gt), list(pred))).iou_star


def slice_per_scan(segments):
    """Split each 4D segment into one segment per scan it touches."""
    out = []
    for seg in segments:
        scans = seg.points[:, 0]
        for sc in np.unique(scans):
            out.append(Segment4D(len(out), seg.points[scans == sc]))
    return out


def s_assoc(gt, pred) -> float:
    _check_gt(gt)
    return s_assoc_temp(slice_per_scan(gt), slice_per_scan(pred))


def filter_gt(gt, min_points: int = 50, mode: str = "slice"):
    """Drop ground-truth segments with fewer than ``min_points`` points.

    ``mode="slice"`` judges each per-scan slice separately and keeps the
    surviving slices of a segment; ``mode="segment"`` judges whole 4D segments.
    """
    if mode not in ("slice", "segment"):
        raise ValueError("mode must be 'slice' or 'segment'")
    if min_points <= 0:
        return list(gt)
    out = []
    for seg in gt:
        if mode == "segment":
            if len(seg) >= min_points:
                out.append(seg)
            continue
        scans, counts = np.unique(seg.points[:, 0], return_counts=True)
        keep = scans[counts >= min_points]
        if keep.size == len(scans):
            out.append(seg)
        elif keep.size:
            out.append(Segment4D(seg.id, seg.points[np.isin(seg.points[:, 0], keep)]))
    return out


def segments_from_labels(label_arrays):
    """4D segments from per-scan instance id arrays (id 0 yields no segment)."""
    scan_idx, point_idx, ids = _flatten(label_arrays)
    sel = ids != BACKGROUND_ID
    scan_idx, point_idx, ids = scan_idx[sel], point_idx[sel], ids[sel]
    order = np.argsort(ids, kind="stable")
    uniq, starts = np.unique(ids[order], return_index=True)
    ends = np.append(starts[1:], len(order))
    return [
        Segment4D(int(u), np.column_stack([scan_idx[order[a:b]], point_idx[order[a:b]]]))
        for u, a, b in zip(uniq, starts, ends)
    ]


def _flatten(label_arrays):
    sizes = [len(a) for a in label_arrays]
    scan_idx = np.repeat(np.arange(len(sizes), dtype=np.int64), sizes)
    point_idx = np.concatenate([np.arange(n, dtype=np.int64) for n in sizes]) if sizes else np.empty(0, np.int64)
    ids = np.concatenate([np.asarray(a, dtype=np.int64) for a in label_arrays]) if sizes else np.empty(0, np.int64)
    return scan_idx, point_idx, ids


def _dense_index(keys):
    """Map nonzero keys to 0..K-1, zero keys to -1."""
    idx = np.full(len(keys), -1, dtype=np.int64)
    sel = keys != 0
    if sel.any():
        _, inv = np.unique(keys[sel], return_inverse=True)
        idx[sel] = inv.reshape(-1)
    return idx


def dense_scores(scan_idx, gt_ids, pred_ids, temporal: bool) -> AssocScores:
    """Scores for per-point label arrays covering the same points."""
    if temporal:
        gk, pk = gt_ids, pred_ids
    else:
        gk = np.where(gt_ids != 0, (scan_idx << _SHIFT) | gt_ids, 0)
        pk = np.where(pred_ids != 0, (scan_idx << _SHIFT) | pred_ids, 0)
    g_idx = _dense_index(gk)
    p_idx = _dense_index(pk)
    n_gt = int(g_idx.max()) + 1 if g_idx.size else 0
    n_pred = int(p_idx.max()) + 1 if p_idx.size else 0
    g_size = np.bincount(g_idx[g_idx >= 0], minlength=n_gt).astype(np.float64)
    s_size = np.bincount(p_idx[p_idx >= 0], minlength=n_pred).astype(np.float64)
    return _scores(g_idx, p_idx, g_size, s_size)


def _filter_dense(scan_idx, gt_ids, min_points, mode):
    if min_points <= 0:
        return gt_ids
    key = gt_ids if mode == "segment" else np.where(gt_ids != 0, (scan_idx << _SHIFT) | gt_ids, 0)
    idx = _dense_index(key)
    counts = np.bincount(idx[idx >= 0])
    small = np.zeros(len(gt_ids), dtype=bool)
    small[idx >= 0] = counts[idx[idx >= 0]] < min_points
    return np.where(small, 0, gt_ids)


@dataclass
class EvalReport:
    s_assoc_temp: float
    iou_star: float
    s_assoc: float
    s_assoc_temp_filtered: float
    iou_star_filtered: float
    s_assoc_filtered: float
    n_scans: int
    n_gt: int
    n_pred: int
    per_gt: list = field(default_factory=list)

    KEYS = (
        "s_assoc_temp",
        "iou_star",
        "s_assoc",
        "s_assoc_temp_filtered",
        "iou_star_filtered",
        "s_assoc_filtered",
    )

    def to_kv(self) -> str:
        lines = [f"{k}={getattr(self, k):.12f}" for k in self.KEYS]
        lines += [f"n_scans={self.n_scans}", f"n_gt={self.n_gt}", f"n_pred={self.n_pred}"]
        return "\n".join(lines) + "\n"

    def to_table(self) -> str:
        rows = [
            "              S_assoc^temp   IoU*     S_assoc",
            f"unfiltered    {self.s_assoc_temp:12.4f} {self.iou_star:8.4f} {self.s_assoc:10.4f}",
            f"filtered      {self.s_assoc_temp_filtered:12.4f} {self.iou_star_filtered:8.4f} {self.s_assoc_filtered:10.4f}",
            f"({self.n_gt} ground-truth objects, {self.n_pred} predicted segments, {self.n_scans} scans)",
        ]
        return "\n".join(rows) + "\n"


def evaluate_arrays(gt_labels, pred_labels, min_points: int = 50, filter_mode: str = "slice") -> EvalReport:
    if len(gt_labels) != len(pred_labels):
        raise ValueError("ground truth and prediction cover different scan counts")
    for k, (g, p) in enumerate(zip(gt_labels, pred_labels)):
        if len(g) != len(p):
            raise ValueError(f"scan {k}: {len(g)} ground-truth labels vs {len(p)} predicted")
    scan_idx, _, gt_ids = _flatten(gt_labels)
    _, _, pred_ids = _flatten(pred_labels)
    temp = dense_scores(scan_idx, gt_ids, pred_ids, temporal=True)
    per_scan = dense_scores(scan_idx, gt_ids, pred_ids, temporal=False)
    gt_f = _filter_dense(scan_idx, gt_ids, min_points, filter_mode)
    if (gt_f != 0).any():
        temp_f = dense_scores(scan_idx, gt_f, pred_ids, temporal=True)
        per_scan_f = dense_scores(scan_idx, gt_f, pred_ids, temporal=False)
    else:
        log.warning("no ground-truth segment survives the %d-point filter", min_points)
        temp_f = per_scan_f = AssocScores(float("nan"), float("nan"), ())
    gt_uniq = np.unique(gt_ids[gt_ids != 0])
    per_gt = [
        (int(gt_uniq[k]), size, term, best) for k, size, term, best in temp.per_gt
    ]
    return EvalReport(
        temp.s_assoc, temp.iou_star, per_scan.s_assoc,
        temp_f.s_assoc, temp_f.iou_star, per_scan_f.s_assoc,
        n_scans=len(gt_labels),
        n_gt=len(gt_uniq),
        n_pred=len(np.unique(pred_ids[pred_ids != 0])),
        per_gt=per_gt,
    )


def evaluate(gt_label_dir, pred_label_dir, scan_dir=None, min_points: int = 50,
             filter_mode: str = "slice", threads: int = 1) -> EvalReport:
    """Score every ``.label`` file of ``gt_label_dir`` against its namesake in ``pred_label_dir``."""
    gt_files = io.list_frames(gt_label_dir, io.LABEL_EXT)
    if not gt_files:
        raise ValueError(f"no ground truth label files in {gt_label_dir}")
    pred_dir = Path(pred_label_dir)

    def load(path):
        expected = None
        if scan_dir is not None:
            scan_path = Path(scan_dir) / (path.stem + io.SCAN_EXT)
            expected = scan_path.stat().st_size // 16
        g = io.read_labels(path, expected)
        p = io.read_labels(pred_dir / path.name, len(g))
        return g, p

    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            pairs = list(pool.map(load, gt_files))
    else:
        pairs = [load(f) for f in gt_files]
    return evaluate_arrays([g for g, _ in pairs], [p for _, p in pairs], min_points, filter_mode)
