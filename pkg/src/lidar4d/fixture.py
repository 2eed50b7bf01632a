"""Tiny synthetic sequences with known instance labels.

Flat ground plus box-shaped objects whose bodies float 0.3 m above the
ground, like vehicles on wheels, so a plane fit cannot swallow object points.
The ego vehicle drives forward and yaws slightly, so scans are stored in a
moving sensor frame and poses matter for aggregation.
"""

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import io
from .core import Pose, Scan, Sequence, rot_z

SENSOR_HEIGHT = 1.7


@dataclass(frozen=True)
class BoxSpec:
    instance_id: int
    center: tuple
    velocity: tuple = (0.0, 0.0)
    size: tuple = (4.0, 2.0)
    z_range: tuple = (0.3, 1.8)
    n_points: int = 400


DEFAULT_BOXES = (
    BoxSpec(1, (-10.0, -8.0)),
    BoxSpec(2, (10.0, -8.0)),
    BoxSpec(3, (-12.0, 8.0), velocity=(1.0, 0.0)),
)


def box_surface(spec: BoxSpec, rng):
    """Points on the four sides and the top of a box centered at the origin (BEV)."""
    lx, ly = spec.size
    z0, z1 = spec.z_range
    h = z1 - z0
    areas = np.array([lx * h, lx * h, ly * h, ly * h, lx * ly])
    face = rng.choice(5, size=spec.n_points, p=areas / areas.sum())
    u, v = rng.random(spec.n_points), rng.random(spec.n_points)
    x = (u - 0.5) * lx
    y = (u - 0.5) * ly
    z = z0 + v * h
    pts = np.empty((spec.n_points, 3))
    for f in range(5):
        sel = face == f
        if f == 0:
            pts[sel] = np.column_stack([x[sel], np.full(sel.sum(), -ly / 2), z[sel]])
        elif f == 1:
            pts[sel] = np.column_stack([x[sel], np.full(sel.sum(), ly / 2), z[sel]])
        elif f == 2:
            pts[sel] = np.column_stack([np.full(sel.sum(), -lx / 2), y[sel], z[sel]])
        elif f == 3:
            pts[sel] = np.column_stack([np.full(sel.sum(), lx / 2), y[sel], z[sel]])
        else:
            pts[sel] = np.column_stack([(u[sel] - 0.5) * lx, (v[sel] - 0.5) * ly, np.full(sel.sum(), z1)])
    return pts


def ground_grid(extent=20.0, spacing=0.4, rng=None):
    g = np.arange(-extent, extent, spacing)
    xx, yy = np.meshgrid(g, g, indexing="ij")
    xy = np.column_stack([xx.ravel(), yy.ravel()])
    if rng is not None:
        xy = xy + rng.uniform(-0.1, 0.1, size=xy.shape) * spacing
    return np.column_stack([xy, np.zeros(len(xy))])


def ego_pose(t):
    return Pose(rot_z(0.02 * t), np.array([0.5 * t, 0.0, SENSOR_HEIGHT]))


def make_fixture(n_scans: int = 10, seed: int = 0, boxes=DEFAULT_BOXES):
    """Build ``(sequence, gt_labels, world_centroids)``.

    ``world_centroids[t][id]`` is the world-frame centroid of box ``id`` in
    scan ``t``. Each box reuses the same local point pattern in every scan,
    so static boxes have identical world points over time.
    """
    rng = np.random.default_rng(seed)
    ground = ground_grid(rng=rng)
    patterns = {b.instance_id: box_surface(b, np.random.default_rng([seed, b.instance_id])) for b in boxes}
    scans, poses, labels, centroids = [], [], [], []
    for t in range(n_scans):
        world = [ground]
        ids = [np.zeros(len(ground), dtype=np.int64)]
        inten = [np.full(len(ground), 0.2)]
        cents = {}
        for b in boxes:
            c = np.array([b.center[0] + b.velocity[0] * t, b.center[1] + b.velocity[1] * t, 0.0])
            pts = patterns[b.instance_id] + c
            world.append(pts)
            ids.append(np.full(len(pts), b.instance_id, dtype=np.int64))
            inten.append(np.full(len(pts), 0.6))
            cents[b.instance_id] = pts.mean(axis=0)
        pose = ego_pose(t)
        xyz = pose.inverse().apply(np.vstack(world))
        # store as float32 so in-memory fixtures equal what read_scan returns
        pts4 = np.column_stack([xyz, np.concatenate(inten)]).astype(np.float32).astype(np.float64)
        scans.append(Scan(pts4, t))
        poses.append(pose)
        labels.append(np.concatenate(ids))
        centroids.append(cents)
    return Sequence(tuple(scans), tuple(poses)), labels, centroids


def write_fixture(out_dir, n_scans: int = 10, seed: int = 0):
    out = Path(out_dir)
    seq, labels, _ = make_fixture(n_scans, seed)
    write_sequence(out, seq, labels)
    return seq, labels


def write_sequence(out, seq, labels=None):
    """``out/scans/*.bin``, ``out/poses.txt`` and optionally ``out/labels/*.label``."""
    out = Path(out)
    (out / "scans").mkdir(parents=True, exist_ok=True)
    for scan in seq.scans:
        io.write_scan(scan, out / "scans" / io.frame_name(scan.frame_index, io.SCAN_EXT))
    io.write_poses(seq.poses, out / "poses.txt")
    if labels is not None:
        (out / "labels").mkdir(exist_ok=True)
        for scan, lab in zip(seq.scans, labels):
            io.write_labels(lab, out / "labels" / io.frame_name(scan.frame_index, io.LABEL_EXT))
