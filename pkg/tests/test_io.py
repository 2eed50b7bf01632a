import numpy as np
import pytest

from lidar4d import io
from lidar4d.core import Pose, Scan, rot_z
from lidar4d.synth import ObjectSnippet


def test_scan_round_trip(tmp_path):
    s = Scan(np.array([[1.5, -2.25, 0.0, 0.5]]), 0)
    io.write_scan(s, tmp_path / "000000.bin")
    assert io.read_scan(tmp_path / "000000.bin") == s


def test_scan_frame_index_from_name(tmp_path):
    io.write_scan(Scan.from_xyz([[0, 0, 0]]), tmp_path / "000042.bin")
    assert io.read_scan(tmp_path / "000042.bin").frame_index == 42


def test_empty_and_truncated_scan(tmp_path):
    (tmp_path / "a.bin").write_bytes(b"")
    assert len(io.read_scan(tmp_path / "a.bin")) == 0
    (tmp_path / "b.bin").write_bytes(b"\0" * 17)
    with pytest.raises(io.FormatError, match="truncated scan"):
        io.read_scan(tmp_path / "b.bin")


def test_corrupt_scan(tmp_path):
    np.array([np.nan, 0, 0, 0], dtype="<f4").tofile(tmp_path / "c.bin")
    with pytest.raises(io.FormatError, match="corrupt scan"):
        io.read_scan(tmp_path / "c.bin")


def test_write_scan_needs_parent(tmp_path):
    with pytest.raises(FileNotFoundError):
        io.write_scan(Scan.from_xyz([[0, 0, 0]]), tmp_path / "missing" / "x.bin")


def test_label_bit_layout(tmp_path):
    io.write_labels([3, 0], tmp_path / "l.label")
    words = np.fromfile(tmp_path / "l.label", dtype="<u4")
    assert words.tolist() == [0x00030000, 0]
    assert io.read_labels(tmp_path / "l.label", 2).tolist() == [3, 0]


def test_label_semantic_bits_ignored(tmp_path):
    np.array([(7 << 16) | 10], dtype="<u4").tofile(tmp_path / "l.label")
    assert io.read_labels(tmp_path / "l.label").tolist() == [7]


def test_label_count_mismatch(tmp_path):
    io.write_labels([1, 2, 3, 4, 5], tmp_path / "l.label")
    with pytest.raises(io.FormatError, match="label/scan length mismatch"):
        io.read_labels(tmp_path / "l.label", 4)


def test_label_id_range(tmp_path):
    with pytest.raises(io.FormatError):
        io.write_labels([70000], tmp_path / "l.label")


def test_poses(tmp_path):
    p = tmp_path / "poses.txt"
    p.write_text("1 0 0 0 0 1 0 0 0 0 1 0\n")
    assert io.read_poses(p) == [Pose.identity()]
    p.write_text("1 0 0 0 0 1 0 0 0 0 1 0\n" * 2 + "1 0 0 0 0 1 0 0 0 0 1\n")
    with pytest.raises(io.FormatError, match="line 3"):
        io.read_poses(p)


def test_pose_round_trip(tmp_path):
    rng = np.random.default_rng(5)
    poses = [Pose(rot_z(rng.uniform(-3, 3)), rng.normal(size=3) * 100) for _ in range(5)]
    io.write_poses(poses, tmp_path / "p.txt")
    back = io.read_poses(tmp_path / "p.txt")
    for a, b in zip(poses, back):
        assert np.allclose(a.matrix(), b.matrix(), atol=1e-9)


def test_ground_mask(tmp_path):
    io.write_ground_mask([True, False, True], tmp_path / "m.ground")
    assert io.read_ground_mask(tmp_path / "m.ground", 3).tolist() == [True, False, True]
    with pytest.raises(io.FormatError):
        io.read_ground_mask(tmp_path / "m.ground", 4)


def test_object_db_round_trip(tmp_path):
    pts = np.array([[0.5, 0.25, 0.0, 1.0], [1.0, 2.0, 3.0, 0.0]])
    snip = ObjectSnippet(7, ((0, pts), (2, pts[:1])))
    io.write_object_db([snip], tmp_path / "db")
    (back,) = io.read_object_db(tmp_path / "db")
    assert back.object_id == 7
    assert [f for f, _ in back.frames] == [0, 2]
    assert np.array_equal(back.frames[0][1], pts)


def test_matrix_round_trip(tmp_path):
    m = np.random.default_rng(0).normal(size=(3, 4))
    io.write_matrix(m, tmp_path / "m.txt")
    assert np.array_equal(io.read_matrix(tmp_path / "m.txt"), m)
    (tmp_path / "bad.txt").write_text("2 2\n1 2\n3\n")
    with pytest.raises(io.FormatError):
        io.read_matrix(tmp_path / "bad.txt")


def test_list_frames_sorted(tmp_path):
    for i in (3, 1, 2):
        io.write_scan(Scan.from_xyz([[0, 0, 0]]), tmp_path / io.frame_name(i, io.SCAN_EXT))
    (tmp_path / "notes.txt").write_text("x")
    assert [p.name for p in io.list_frames(tmp_path)] == ["000001.bin", "000002.bin", "000003.bin"]
