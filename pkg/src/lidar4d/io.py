"""Bit-exact readers and writers.

Layouts (all little-endian regardless of host):

* scan: consecutive ``float32`` records ``x, y, z, intensity`` (16 bytes each)
* labels: one ``uint32`` per point, instance id in the upper 16 bits,
  semantic class (always 0 here) in the lower 16 bits
* poses: text, one line per scan, 12 decimals forming a row-major ``[R|t]``
* ground mask: one byte (0/1) per point
* object database: one directory per snippet holding ``manifest.txt`` and
  one scan file per frame
* matrix: text, ``rows cols`` header then one row of decimals per line
"""

import re
from pathlib import Path

import numpy as np

from .core import Pose, Scan

SCAN_DTYPE = np.dtype("<f4")
LABEL_DTYPE = np.dtype("<u4")
SCAN_EXT = ".bin"
LABEL_EXT = ".label"
MASK_EXT = ".ground"
MAX_INSTANCE_ID = 0xFFFF


class FormatError(ValueError):
    """Raised for malformed or inconsistent input files."""


def _frame_from_name(path):
    m = re.search(r"(\d+)$", Path(path).stem)
    return int(m.group(1)) if m else 0


def read_scan(path, frame_index=None) -> Scan:
    path = Path(path)
    size = path.stat().st_size
    if size % 16:
        raise FormatError(f"truncated scan: {path} has {size} bytes, not a multiple of 16")
    raw = np.fromfile(path, dtype=SCAN_DTYPE).reshape(-1, 4)
    if not np.isfinite(raw[:, :3]).all():
        raise FormatError(f"corrupt scan: non-finite coordinates in {path}")
    if frame_index is None:
        frame_index = _frame_from_name(path)
    return Scan(raw.astype(np.float64), frame_index)


def write_scan(scan: Scan, path):
    path = Path(path)
    if not path.parent.is_dir():
        raise FileNotFoundError(f"parent directory does not exist: {path.parent}")
    np.ascontiguousarray(scan.points, dtype=SCAN_DTYPE).tofile(path)


def read_labels(path, expected_count=None) -> np.ndarray:
    path = Path(path)
    size = path.stat().st_size
    if size % 4:
        raise FormatError(f"label file {path} has {size} bytes, not a multiple of 4")
    count = size // 4
    if expected_count is not None and count != expected_count:
        raise FormatError(f"label/scan length mismatch: {path} holds {count} labels, expected {expected_count}")
    words = np.fromfile(path, dtype=LABEL_DTYPE, count=count)
    return (words >> 16).astype(np.int64)


def write_labels(labels, path):
    ids = np.asarray(labels, dtype=np.int64)
    if ids.size and (ids.min() < 0 or ids.max() > MAX_INSTANCE_ID):
        raise FormatError(f"instance ids must lie in [0, {MAX_INSTANCE_ID}]")
    (ids.astype(np.uint32) << 16).astype(LABEL_DTYPE).tofile(Path(path))


def read_poses(path):
    poses = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            tokens = line.split()
            if not tokens:
                continue
            if len(tokens) != 12:
                raise FormatError(f"{path}: line {lineno}: expected 12 values, got {len(tokens)}")
            try:
                vals = np.array([float(t) for t in tokens]).reshape(3, 4)
            except ValueError as exc:
                raise FormatError(f"{path}: line {lineno}: {exc}") from None
            try:
                poses.append(Pose.from_matrix(vals))
            except ValueError as exc:
                raise FormatError(f"{path}: line {lineno}: {exc}") from None
    return poses


def format_pose(pose: Pose) -> str:
    return " ".join(f"{v:.17g}" for v in pose.matrix().ravel())


def write_poses(poses, path):
    with open(path, "w") as fh:
        for pose in poses:
            fh.write(format_pose(pose) + "\n")


def read_ground_mask(path, expected_count=None) -> np.ndarray:
    path = Path(path)
    size = path.stat().st_size
    if expected_count is not None and size != expected_count:
        raise FormatError(f"ground mask {path} holds {size} entries, expected {expected_count}")
    raw = np.fromfile(path, dtype=np.uint8)
    if raw.size and raw.max() > 1:
        raise FormatError(f"ground mask {path} contains values other than 0/1")
    return raw.astype(bool)


def write_ground_mask(mask, path):
    np.asarray(mask, dtype=bool).astype(np.uint8).tofile(Path(path))


def list_frames(directory, ext=SCAN_EXT):
    """Sorted files with extension ``ext`` in ``directory``."""
    directory = Path(directory)
    if not directory.is_dir():
        raise FileNotFoundError(f"not a directory: {directory}")
    files = sorted(p for p in directory.iterdir() if p.suffix == ext)
    return files


def frame_name(frame_index, ext):
    return f"{frame_index:06d}{ext}"


# -- object database --------------------------------------------------------


def write_snippet(snippet, db_dir):
    """Store one :class:`~lidar4d.synth.ObjectSnippet` under ``db_dir``."""
    d = Path(db_dir) / f"obj_{snippet.object_id:06d}"
    d.mkdir(parents=True, exist_ok=True)
    offsets = [off for off, _ in snippet.frames]
    with open(d / "manifest.txt", "w") as fh:
        fh.write(f"object_id {snippet.object_id}\n")
        fh.write("frames " + " ".join(map(str, offsets)) + "\n")
    for off, pts in snippet.frames:
        write_scan(Scan(pts, off), d / frame_name(off, SCAN_EXT))
    return d


def read_snippet(path):
    from .synth import ObjectSnippet

    path = Path(path)
    meta = {}
    with open(path / "manifest.txt") as fh:
        for line in fh:
            key, _, rest = line.strip().partition(" ")
            if key:
                meta[key] = rest
    try:
        object_id = int(meta["object_id"])
        offsets = [int(t) for t in meta["frames"].split()]
    except (KeyError, ValueError) as exc:
        raise FormatError(f"bad manifest in {path}: {exc}") from None
    frames = [(off, read_scan(path / frame_name(off, SCAN_EXT), off).points) for off in offsets]
    return ObjectSnippet(object_id, frames)


def write_object_db(snippets, db_dir):
    Path(db_dir).mkdir(parents=True, exist_ok=True)
    for snip in snippets:
        write_snippet(snip, db_dir)


def read_object_db(db_dir):
    db_dir = Path(db_dir)
    if not db_dir.is_dir():
        raise FileNotFoundError(f"object database not found: {db_dir}")
    return [read_snippet(d) for d in sorted(db_dir.iterdir()) if d.is_dir() and (d / "manifest.txt").exists()]


# -- dense matrices for loss conformance ------------------------------------


def write_matrix(mat, path):
    mat = np.atleast_2d(np.asarray(mat, dtype=np.float64))
    with open(path, "w") as fh:
        fh.write(f"{mat.shape[0]} {mat.shape[1]}\n")
        for row in mat:
            fh.write(" ".join(f"{v:.17g}" for v in row) + "\n")


def read_matrix(path) -> np.ndarray:
    with open(path) as fh:
        header = fh.readline().split()
        if len(header) != 2:
            raise FormatError(f"{path}: header must be 'rows cols'")
        rows, cols = int(header[0]), int(header[1])
        body = fh.read().split()
    if len(body) != rows * cols:
        raise FormatError(f"{path}: expected {rows * cols} values, found {len(body)}")
    return np.array([float(t) for t in body], dtype=np.float64).reshape(rows, cols)
