import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lidar4d.cluster import (
    aggregate_window, dbscan, merge_window_labels, pseudo_label_sequence, upsample_labels,
    voxel_downsample, window_starts,
)
from lidar4d.config import ClusterConfig
from lidar4d.core import Pose, Scan, Sequence
from oracles import brute_dbscan


def test_aggregate_single_identity():
    s = Scan.from_xyz(np.random.default_rng(0).normal(size=(5, 3)))
    agg, prov = aggregate_window(Sequence((s,), (Pose.identity(),)), 0, 1)
    assert np.array_equal(agg.points, s.points)
    assert prov.tolist() == [[0, i] for i in range(5)]


def test_aggregate_translation_and_masks():
    a = Scan.from_xyz([[0, 0, 0], [1, 1, 1]], frame_index=0)
    b = Scan.from_xyz([[0, 0, 0], [1, 1, 1]], frame_index=1)
    seq = Sequence((a, b), (Pose.identity(), Pose(np.eye(3), [1, 0, 0])))
    agg, _ = aggregate_window(seq, 0, 2)
    assert np.array_equal(agg.xyz[2:], [[1, 0, 0], [2, 1, 1]])
    agg, prov = aggregate_window(seq, 0, 2, masks=[[True, False], [False, False]])
    assert len(agg) == len(prov) == 3


def test_voxel_examples():
    g = voxel_downsample(np.array([[0.1, 0.1, 0.1], [0.3, 0.2, 0.4]]), 0.5)
    assert len(g) == 1 and np.allclose(g.representatives, [[0.2, 0.15, 0.25]])
    g = voxel_downsample(np.array([[0.0, 0, 0], [1, 1, 1], [2, 2, 2]]), 0.5)
    assert len(g) == 3
    g = voxel_downsample(np.array([[0.5, 0.0, 0.0]]), 0.5)
    assert g.cells.tolist() == [[1, 0, 0]]


def test_dbscan_examples(backend):
    rng = np.random.default_rng(0)
    blobs = np.vstack([rng.normal(0, 0.1, (30, 3)), rng.normal(10, 0.1, (30, 3))])
    assert set(dbscan(blobs, 0.5, 5)) == {1, 2}
    assert dbscan(np.zeros((1, 3)), 0.5, 2).tolist() == [0]
    chain = np.column_stack([np.arange(20) * 0.45, np.zeros(20), np.zeros(20)])
    assert dbscan(chain, 0.5, 2).tolist() == [1] * 20


def test_dbscan_border_and_order(backend):
    # 0..2 core triangle, 3 a border of both 2 and a far cluster reached later
    pts = np.array([[0, 0, 0], [0.1, 0, 0], [0.2, 0, 0], [0.6, 0, 0], [5, 0, 0]], dtype=float)
    assert dbscan(pts, 0.45, 3).tolist() == [1, 1, 1, 1, 0]


@pytest.mark.parametrize("seed", range(200))
def test_dbscan_matches_brute_force(backend, seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 13))
    pts = rng.uniform(0, 2, size=(n, 3))
    if seed % 3 == 0:
        pts = np.round(pts * 2) / 2  # exact-distance ties
    eps = float(rng.choice([0.5, 0.7, 1.0]))
    min_pts = int(rng.integers(1, 5))
    assert dbscan(pts, eps, min_pts).tolist() == brute_dbscan(pts, eps, min_pts).tolist()


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(*[st.integers(0, 6)] * 3), min_size=1, max_size=25), st.integers(1, 4))
def test_dbscan_grid_property(coords, min_pts):
    pts = np.array(coords, dtype=float) * 0.25
    assert dbscan(pts, 0.25, min_pts).tolist() == brute_dbscan(pts, 0.25, min_pts).tolist()


def test_upsample_counts():
    pts = np.array([[0, 0, 0], [0.01, 0, 0], [5, 5, 5]], dtype=float)
    prov = np.array([[0, 1], [0, 2], [1, 0]])
    g = voxel_downsample(pts, 0.5, prov)
    win = upsample_labels(g, np.array([1, 0]), [3, 1])
    assert win.labels[0].tolist() == [0, 1, 1]
    assert win.labels[1].tolist() == [0]


def test_window_starts():
    assert window_starts(10, 4, 4) == [(0, 4), (4, 4), (8, 2)]
    assert window_starts(5, 12, 12) == [(0, 5)]
    assert window_starts(6, 4, 2) == [(0, 4), (2, 4)]


def test_merge_window_labels_offsets():
    from lidar4d.cluster import WindowPseudoLabels

    w0 = WindowPseudoLabels(0, (np.array([1, 0]), np.array([2])), 2)
    w1 = WindowPseudoLabels(2, (np.array([1, 1]),), 1)
    out = merge_window_labels(3, [w0, w1])
    assert [o.tolist() for o in out] == [[1, 0], [2], [3, 3]]


def test_pseudo_labels_fixture(fixture10):
    seq, gt, _ = fixture10
    wins = pseudo_label_sequence(seq.window(0, 5), ClusterConfig())
    assert wins[0].n_clusters >= 1
    again = pseudo_label_sequence(seq.window(0, 5), ClusterConfig(), threads=4)
    assert all(np.array_equal(a, b) for a, b in zip(wins[0].labels, again[0].labels))
