"""Synthetic sequence generation by pasting tracked object snippets.

A window of scans gets a BEV ValidMap built from its ground points. Snippets
drawn from the object database are dropped on random valid cells with a
random yaw and kept only if their box center is on valid ground and their
per-frame BEV boxes stay clear of everything already placed.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from . import kernels
from .cluster import ground_masks, window_starts
from .config import PipelineConfig
from .core import Aabb2D, BACKGROUND_ID, Scan, Sequence, bev_aabb, rot_z

log = logging.getLogger(__name__)

# anchor jitter stays this far from cell borders so the anchor's own cell
# is never lost to rounding
_JITTER_MARGIN = 0.05


@dataclass(frozen=True, eq=False)
class ValidMap:
    resolution: float
    origin: np.ndarray
    valid: np.ndarray
    ground_z: np.ndarray

    @property
    def shape(self):
        return self.valid.shape

    def cell_of(self, x, y):
        return (
            int(np.floor((x - self.origin[0]) / self.resolution)),
            int(np.floor((y - self.origin[1]) / self.resolution)),
        )

    def is_valid_cell(self, m, n):
        return 0 <= m < self.valid.shape[0] and 0 <= n < self.valid.shape[1] and bool(self.valid[m, n])

    def is_valid_xy(self, x, y):
        return self.is_valid_cell(*self.cell_of(x, y))

    def valid_cells(self):
        return np.argwhere(self.valid)


def build_validmap(ground, resolution: float) -> ValidMap:
    """Binary BEV map: a cell is valid iff at least one ground point falls in it.

    The grid origin is the BEV min corner of the ground points. Each valid
    cell also records the mean ground height of its points.
    """
    if resolution <= 0:
        raise ValueError("resolution must be positive")
    xyz = ground.xyz if isinstance(ground, Scan) else np.asarray(ground, dtype=np.float64).reshape(-1, 3)
    if xyz.shape[0] == 0:
        return ValidMap(resolution, np.zeros(2), np.zeros((0, 0), bool), np.zeros((0, 0)))
    origin = xyz[:, :2].min(axis=0)
    idx = np.floor((xyz[:, :2] - origin) / resolution).astype(np.int64)
    shape = tuple(idx.max(axis=0) + 1)
    flat = np.ravel_multi_index((idx[:, 0], idx[:, 1]), shape)
    size = shape[0] * shape[1]
    count = np.bincount(flat, minlength=size)
    zsum = np.bincount(flat, weights=xyz[:, 2], minlength=size)
    valid = (count > 0).reshape(shape)
    with np.errstate(invalid="ignore", divide="ignore"):
        zmean = np.where(count > 0, zsum / np.maximum(count, 1), np.nan).reshape(shape)
    return ValidMap(resolution, origin, valid, zmean)


@dataclass(frozen=True, eq=False)
class ObjectSnippet:
    """Per-frame points of one tracked object in object-local coordinates.

    ``frames`` is a tuple of ``(frame_offset, (N, 4) points)``; the local frame
    puts the first frame's BEV centroid at the origin and its lowest point at
    ``z = 0``.
    """

    object_id: int
    frames: tuple

    def __post_init__(self):
        frames = tuple((int(off), np.asarray(pts, dtype=np.float64).reshape(-1, 4)) for off, pts in self.frames)
        if not frames:
            raise ValueError("snippet needs at least one frame")
        if any(len(p) == 0 for _, p in frames):
            raise ValueError("snippet frames must be non-empty")
        object.__setattr__(self, "frames", frames)

    @property
    def n_points(self):
        return sum(len(p) for _, p in self.frames)


@dataclass(frozen=True)
class PlacementRecord:
    snippet_id: int
    anchor: tuple
    yaw: float
    z_base: float
    boxes: tuple  # (frame, Aabb2D) pairs, world frame
    instance_id: int

    def to_line(self):
        boxes = ";".join(
            f"{f}:{b.x_min:.9g},{b.x_max:.9g},{b.y_min:.9g},{b.y_max:.9g}" for f, b in self.boxes
        )
        return (
            f"id={self.instance_id} snippet={self.snippet_id} anchor={self.anchor[0]:.9g},{self.anchor[1]:.9g} "
            f"yaw={self.yaw:.9g} z={self.z_base:.9g} boxes={boxes}"
        )


def _world_points(seq, pos, sel=None):
    pts = seq.scans[pos].points if sel is None else seq.scans[pos].points[sel]
    return np.column_stack([seq.poses[pos].apply(pts[:, :3]), pts[:, 3]])


def extract_object_db(seq: Sequence, windows, min_points: int = 30):
    """Build snippets from pseudo-labeled windows.

    An instance is kept when at least one frame holds ``min_points`` points.
    Points are taken in the world frame so object motion survives.
    """
    snippets = []
    next_id = 1
    for win in windows:
        for cid in range(1, win.n_clusters + 1):
            frames = []
            for k, lab in enumerate(win.labels):
                sel = np.nonzero(lab == cid)[0]
                if sel.size:
                    frames.append((k, _world_points(seq, win.start + k, sel)))
            if not frames or max(len(p) for _, p in frames) < min_points:
                continue
            first = frames[0][1]
            shift = np.array([first[:, 0].mean(), first[:, 1].mean(), first[:, 2].min(), 0.0])
            base = frames[0][0]
            local = tuple((off - base, p - shift) for off, p in frames)
            snippets.append(ObjectSnippet(next_id, local))
            next_id += 1
    return snippets


def _instance_boxes(world_xyz, labels):
    ids = np.unique(labels[labels != BACKGROUND_ID])
    if ids.size == 0:
        return np.empty((0, 4))
    boxes = np.empty((ids.size, 4))
    for k, i in enumerate(ids):
        b = bev_aabb(world_xyz[labels == i])
        boxes[k] = b
    return boxes


class _BoxStore:
    def __init__(self, capacity):
        self.boxes = np.empty((max(capacity, 1), 4))
        self.n = 0

    def add(self, box):
        if self.n == len(self.boxes):
            self.boxes = np.vstack([self.boxes, np.empty_like(self.boxes)])
        self.boxes[self.n] = box
        self.n += 1

    def view(self):
        return self.boxes[: self.n]


def place_objects(window: Sequence, validmap: ValidMap, db, n_s: int, rng_seed, labels=None,
                  collide_existing: bool = True, first_id: int = None):
    """Paste up to ``n_s`` sampled snippets into every frame of ``window``.

    Each of the ``n_s`` draws is a single attempt: snippet, valid anchor cell,
    in-cell jitter and yaw are drawn, then the draw is rejected when the
    first-frame box center is off valid ground or any per-frame box touches a
    previously accepted box (or an existing labeled instance, when
    ``collide_existing``). Returns the augmented sequence, per-scan labels and
    the accepted :class:`PlacementRecord` list.
    """
    if n_s < 0:
        raise ValueError("n_s must be non-negative")
    n_frames = len(window)
    if labels is None:
        labels = [np.zeros(len(s), dtype=np.int64) for s in window.scans]
    labels = [np.asarray(lab, dtype=np.int64) for lab in labels]
    if first_id is None:
        first_id = max((int(lab.max()) for lab in labels if lab.size), default=0) + 1
    if n_s == 0 or not db:
        return window, labels, []
    cells = validmap.valid_cells()
    if len(cells) == 0:
        log.warning("ValidMap has no valid cells; window left unchanged")
        return window, labels, []

    rng = np.random.default_rng(rng_seed)
    placed = [_BoxStore(n_s) for _ in range(n_frames)]
    existing = [np.empty((0, 4))] * n_frames
    if collide_existing:
        existing = [_instance_boxes(_world_points(window, f)[:, :3], labels[f]) for f in range(n_frames)]
    pasted = [[] for _ in range(n_frames)]
    pasted_ids = [[] for _ in range(n_frames)]
    records = []
    next_id = first_id
    res = validmap.resolution

    for _ in range(n_s):
        j = int(rng.integers(len(db)))
        c = int(rng.integers(len(cells)))
        jitter = _JITTER_MARGIN + (1.0 - 2 * _JITTER_MARGIN) * rng.random(2)
        yaw = float(rng.uniform(0.0, 2.0 * np.pi))

        snip = db[j]
        frames = [(off, pts) for off, pts in snip.frames if off < n_frames]
        if not frames:
            continue
        m, n = cells[c]
        anchor = validmap.origin + (np.array([m, n]) + jitter) * res
        z_base = float(validmap.ground_z[m, n])
        R = rot_z(yaw)
        offset = np.array([anchor[0], anchor[1], z_base])
        moved = [(off, pts[:, :3] @ R.T + offset, pts[:, 3]) for off, pts in frames]
        boxes = [(off, bev_aabb(xyz)) for off, xyz, _ in moved]

        cx, cy = boxes[0][1].center
        if not validmap.is_valid_xy(cx, cy):
            continue
        hit = False
        for off, box in boxes:
            arr = box.as_array()
            if kernels.any_overlap(placed[off].view(), arr) or kernels.any_overlap(existing[off], arr):
                hit = True
                break
        if hit:
            continue

        for off, box in boxes:
            placed[off].add(box.as_array())
        for off, xyz, inten in moved:
            sensor = window.poses[off].inverse().apply(xyz)
            pasted[off].append(np.column_stack([sensor, inten]))
            pasted_ids[off].append(np.full(len(xyz), next_id, dtype=np.int64))
        records.append(
            PlacementRecord(snip.object_id, (float(anchor[0]), float(anchor[1])), yaw, z_base, tuple(boxes), next_id)
        )
        next_id += 1

    scans, out_labels = [], []
    for f, scan in enumerate(window.scans):
        if pasted[f]:
            scans.append(Scan(np.vstack([scan.points] + pasted[f]), scan.frame_index))
            out_labels.append(np.concatenate([labels[f]] + pasted_ids[f]))
        else:
            scans.append(scan)
            out_labels.append(labels[f].copy())
    return Sequence(tuple(scans), window.poses), out_labels, records


def window_validmap(seq: Sequence, masks, resolution: float) -> ValidMap:
    ground = [_world_points(seq, pos, np.asarray(masks[pos], dtype=bool))[:, :3] for pos in range(len(seq))]
    return build_validmap(np.vstack(ground) if ground else np.empty((0, 3)), resolution)


def synth_sequence(seq: Sequence, labels, db, cfg: PipelineConfig = PipelineConfig(), masks=None,
                   segmenter=None, threads: int = 1):
    """Augment a whole sequence window by window.

    Windows are non-overlapping blocks of ``cfg.cluster.window_len`` scans.
    Each window draws from its own generator seeded by ``(seed, window)``,
    so results do not depend on ``threads``. Synthetic ids start above the
    largest existing id and are numbered in window order.
    """
    cfg.validate()
    labels = [np.asarray(lab, dtype=np.int64) for lab in labels]
    if len(labels) != len(seq):
        raise ValueError("one label array per scan required")
    if masks is None:
        masks = ground_masks(seq, segmenter, threads)
    base = max((int(lab.max()) for lab in labels if lab.size), default=0) + 1
    jobs = window_starts(len(seq), cfg.cluster.window_len, cfg.cluster.window_len)

    def run(w):
        start, length = jobs[w]
        win = seq.window(start, length)
        vmap = window_validmap(win, masks[start : start + length], cfg.synth.validmap_res)
        return place_objects(
            win, vmap, db, cfg.synth.n_s, [cfg.synth.seed, w], labels[start : start + length],
            cfg.synth.collide_existing, first_id=base,
        )

    if threads <= 1 or len(jobs) == 1:
        results = [run(w) for w in range(len(jobs))]
    else:
        with ThreadPoolExecutor(threads) as pool:
            results = list(pool.map(run, range(len(jobs))))

    scans, out_labels, all_records = [], [], []
    shift = 0
    for (start, length), (win, win_labels, records) in zip(jobs, results):
        for k in range(length):
            lab = win_labels[k].copy()
            n_orig = len(labels[start + k])
            lab[n_orig:] += shift
            out_labels.append(lab)
            scans.append(win.scans[k])
        all_records.append([replace(r, instance_id=r.instance_id + shift) for r in records])
        shift += len(records)
    return Sequence(tuple(scans), seq.poses), out_labels, all_records


def audit_placements(records, validmap: ValidMap = None):
    """Independent re-check of accepted placements.

    Returns a list of human-readable violations (empty when clean): box
    overlaps between records sharing a frame, and anchors or first-frame box
    centers outside valid cells.
    """
    problems = []
    by_frame = {}
    for r in records:
        for f, box in r.boxes:
            by_frame.setdefault(f, []).append((r.instance_id, Aabb2D(*box)))
    for f, items in by_frame.items():
        for a in range(len(items)):
            for b in range(a + 1, len(items)):
                ia, ba = items[a]
                ib, bb = items[b]
                if ba.x_min <= bb.x_max and bb.x_min <= ba.x_max and ba.y_min <= bb.y_max and bb.y_min <= ba.y_max:
                    problems.append(f"frame {f}: instances {ia} and {ib} overlap")
    if validmap is not None:
        for r in records:
            if not validmap.is_valid_xy(*r.anchor):
                problems.append(f"instance {r.instance_id}: anchor {r.anchor} not in a valid cell")
            if not validmap.is_valid_xy(*Aabb2D(*r.boxes[0][1]).center):
                problems.append(f"instance {r.instance_id}: box center not in a valid cell")
    return problems
