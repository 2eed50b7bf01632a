"""Command line entry point: ``lidar4d <subcommand> ...``."""

import argparse
import logging
import os
import shutil
import sys
import tempfile
import time
from contextlib import contextmanager
from pathlib import Path

import numpy as np

from . import io
from .cluster import WindowPseudoLabels, merge_window_labels, pseudo_label_sequence, window_starts
from .config import ConfigError, apply_overrides, dump_config, load_config
from .core import Sequence
from .fixture import write_fixture, write_sequence
from .ground import MaskFileGround, RansacGround
from .loss import total_loss
from .metrics import evaluate
from .sampling import format_manifest, sample_pairs
from .synth import extract_object_db, synth_sequence

log = logging.getLogger("lidar4d")


class CliError(Exception):
    pass


@contextmanager
def staged_dir(target):
    """Yield a scratch directory that replaces ``target`` only on success."""
    target = Path(target)
    target.parent.mkdir(parents=True, exist_ok=True)
    tmp = Path(tempfile.mkdtemp(prefix=f".{target.name}.", dir=target.parent))
    try:
        yield tmp
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        raise
    if target.exists():
        shutil.rmtree(target)
    os.replace(tmp, target)


def _write_file_atomic(path, text):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def read_sequence(scan_dir, pose_file):
    files = io.list_frames(scan_dir, io.SCAN_EXT)
    if not files:
        raise CliError(f"no {io.SCAN_EXT} scans in {scan_dir}")
    scans = [io.read_scan(f) for f in files]
    poses = io.read_poses(pose_file)
    if len(poses) != len(scans):
        raise CliError(f"{pose_file} has {len(poses)} poses for {len(scans)} scans")
    return Sequence(tuple(scans), tuple(poses))


def read_label_dir(label_dir, seq):
    return [
        io.read_labels(Path(label_dir) / io.frame_name(s.frame_index, io.LABEL_EXT), len(s)) for s in seq.scans
    ]


def _segmenter(args, cfg):
    if getattr(args, "ground_masks", None):
        return MaskFileGround(args.ground_masks)
    return RansacGround(cfg.ground)


def _resolve_config(args):
    cfg = load_config(args.config, args.set or ())
    if args.seed is not None:
        s = str(args.seed)
        cfg = apply_overrides(cfg, [("ground.seed", s), ("synth.seed", s), ("sampling.seed", s)])
    return cfg


# -- subcommands ------------------------------------------------------------


def cmd_gen_fixture(args, cfg):
    with staged_dir(args.out) as tmp:
        seq, labels = write_fixture(tmp, args.scans, cfg.synth.seed if args.seed is None else args.seed)
    print(f"wrote {len(seq)} scans to {args.out}")
    return 0


def cmd_pseudo_label(args, cfg):
    t0 = time.perf_counter()
    seq = read_sequence(args.scans, args.poses)
    windows = pseudo_label_sequence(seq, cfg.cluster, segmenter=_segmenter(args, cfg), threads=args.threads)
    labels = merge_window_labels(len(seq), windows)
    with staged_dir(args.out) as tmp:
        for scan, lab in zip(seq.scans, labels):
            io.write_labels(lab, tmp / io.frame_name(scan.frame_index, io.LABEL_EXT))
        lines = [f"scans {len(seq)}", f"windows {len(windows)}"]
        lines += [f"window {w.start} {len(w)} clusters {w.n_clusters}" for w in windows]
        lines.append(f"clusters {sum(w.n_clusters for w in windows)}")
        (tmp / "summary.txt").write_text("\n".join(lines) + "\n")
    print(f"{len(windows)} windows, {sum(w.n_clusters for w in windows)} clusters "
          f"in {time.perf_counter() - t0:.2f} s")
    return 0


def _label_windows(seq, labels, cfg):
    """Wrap per-scan labels as windows so snippets never span window borders."""
    out = []
    for start, length in window_starts(len(seq), cfg.cluster.window_len, cfg.cluster.window_len):
        chunk = labels[start : start + length]
        ids = np.unique(np.concatenate(chunk))
        ids = ids[ids != 0]
        remap = np.zeros(int(ids.max()) + 1 if ids.size else 1, dtype=np.int64)
        remap[ids] = np.arange(1, ids.size + 1)
        out.append(WindowPseudoLabels(start, tuple(remap[c] for c in chunk), int(ids.size)))
    return out


def cmd_extract_db(args, cfg):
    seq = read_sequence(args.scans, args.poses)
    labels = read_label_dir(args.labels, seq)
    snippets = extract_object_db(seq, _label_windows(seq, labels, cfg), cfg.synth.min_points)
    with staged_dir(args.db) as tmp:
        io.write_object_db(snippets, tmp)
    print(f"extracted {len(snippets)} object snippets to {args.db}")
    return 0


def cmd_synth(args, cfg):
    over = []
    if args.ns is not None:
        over.append(("synth.n_s", str(args.ns)))
    if args.res is not None:
        over.append(("synth.validmap_res", str(args.res)))
    if args.collide_existing is not None:
        over.append(("synth.collide_existing", args.collide_existing))
    cfg = apply_overrides(cfg, over)
    seq = read_sequence(args.scans, args.poses)
    labels = read_label_dir(args.labels, seq)
    db = io.read_object_db(args.db)
    out_seq, out_labels, records = synth_sequence(
        seq, labels, db, cfg, segmenter=_segmenter(args, cfg), threads=args.threads
    )
    with staged_dir(args.out) as tmp:
        write_sequence(tmp, out_seq, out_labels)
        lines = []
        for w, recs in enumerate(records):
            lines += [f"window={w} " + r.to_line() for r in recs]
        (tmp / "placements.txt").write_text("".join(line + "\n" for line in lines))
    print(f"placed {sum(len(r) for r in records)} objects over {len(records)} windows "
          f"({cfg.synth.n_s} draws per window)")
    return 0


def cmd_sample_pairs(args, cfg):
    over = []
    if args.n_pairs is not None:
        over.append(("sampling.n_pairs", str(args.n_pairs)))
    if args.max_gap is not None:
        over.append(("sampling.max_gap", str(args.max_gap)))
    if args.no_nfs:
        over.append(("sampling.enable_nfs", "false"))
    if args.no_rto:
        over.append(("sampling.enable_rto", "false"))
    if args.rto_duplicate:
        over.append(("sampling.rto_duplicate", "true"))
    sc = apply_overrides(cfg, over).sampling
    if args.seq_len is not None:
        seq_len = args.seq_len
    elif args.scans is not None:
        seq_len = len(io.list_frames(args.scans, io.SCAN_EXT))
    else:
        raise CliError("give --seq-len or --scans")
    pairs = sample_pairs(seq_len, sc.n_pairs, sc.max_gap, sc.enable_nfs, sc.enable_rto, sc.seed, sc.rto_duplicate)
    text = format_manifest(pairs)
    if args.out:
        _write_file_atomic(args.out, text)
    else:
        sys.stdout.write(text)
    return 0


def cmd_eval(args, cfg):
    mc = cfg.metrics
    min_points = mc.min_points if args.min_points is None else args.min_points
    mode = args.filter_mode or mc.filter_mode
    report = evaluate(args.gt, args.pred, args.scans, min_points, mode, threads=args.threads)
    sys.stdout.write(report.to_table())
    if args.report:
        _write_file_atomic(args.report, report.to_kv())
    return 0


_LOSS_FILES = ("S_t", "S_tk", "M_t", "M_tk", "raw_t", "raw_tk", "centroids_t", "centroids_tk")


def cmd_loss_check(args, cfg):
    d = Path(args.dir)
    mats = {}
    for name in _LOSS_FILES:
        p = d / f"{name}.txt"
        mats[name] = io.read_matrix(p) if p.exists() else None
    for name in ("M_t", "M_tk", "raw_t", "raw_tk"):
        if mats[name] is None:
            raise CliError(f"missing {name}.txt in {d}")
    for s, raw in (("S_t", "raw_t"), ("S_tk", "raw_tk")):
        if mats[s] is None:
            mats[s] = 1.0 / (1.0 + np.exp(-mats[raw]))
    res = total_loss(
        mats["S_t"], mats["S_tk"], mats["M_t"], mats["M_tk"], mats["raw_t"], mats["raw_tk"],
        cfg.loss, mats["centroids_t"], mats["centroids_tk"],
    )
    text = "\n".join(res.lines()) + "\n"
    sys.stdout.write(text)
    if args.out:
        _write_file_atomic(args.out, text)
    return 0


def cmd_config(args, cfg):
    sys.stdout.write(dump_config(cfg))
    return 0


# -- parser -----------------------------------------------------------------


def _common():
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--config", default=argparse.SUPPRESS, help="key=value configuration file")
    p.add_argument("--set", action="append", default=argparse.SUPPRESS, metavar="KEY=VALUE",
                   help="override one configuration entry (repeatable)")
    p.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="seed for every random stage")
    p.add_argument("--threads", type=int, default=argparse.SUPPRESS, help="parallel workers (default 1)")
    p.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS)
    return p


def build_parser():
    common = _common()
    parser = argparse.ArgumentParser(prog="lidar4d", parents=[common],
                                     description="Unsupervised 4D LiDAR instance segmentation toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-fixture", parents=[common], help="write a toy sequence with ground truth")
    p.add_argument("out")
    p.add_argument("--scans", type=int, default=10)
    p.set_defaults(func=cmd_gen_fixture)

    p = sub.add_parser("pseudo-label", parents=[common], help="spatio-temporal clustering pseudo-labels")
    p.add_argument("--scans", required=True)
    p.add_argument("--poses", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--ground-masks")
    p.set_defaults(func=cmd_pseudo_label)

    p = sub.add_parser("extract-db", parents=[common], help="build the object snippet database")
    p.add_argument("--scans", required=True)
    p.add_argument("--poses", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--db", required=True)
    p.set_defaults(func=cmd_extract_db)

    p = sub.add_parser("synth", parents=[common], help="paste snippets into a sequence")
    p.add_argument("--scans", required=True)
    p.add_argument("--poses", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--db", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--ns", type=int)
    p.add_argument("--res", type=float)
    p.add_argument("--collide-existing", choices=("true", "false"))
    p.add_argument("--ground-masks")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("sample-pairs", parents=[common], help="write a training pair manifest")
    p.add_argument("--seq-len", type=int)
    p.add_argument("--scans")
    p.add_argument("--out")
    p.add_argument("--n-pairs", type=int)
    p.add_argument("--max-gap", type=int)
    p.add_argument("--no-nfs", action="store_true")
    p.add_argument("--no-rto", action="store_true")
    p.add_argument("--rto-duplicate", action="store_true")
    p.set_defaults(func=cmd_sample_pairs)

    p = sub.add_parser("eval", parents=[common], help="association metrics against ground truth")
    p.add_argument("--gt", required=True)
    p.add_argument("--pred", required=True)
    p.add_argument("--scans")
    p.add_argument("--report", help="write key=value results here")
    p.add_argument("--min-points", type=int)
    p.add_argument("--filter-mode", choices=("slice", "segment"))
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("loss-check", parents=[common], help="evaluate the loss on matrices from DIR")
    p.add_argument("dir")
    p.add_argument("--out")
    p.set_defaults(func=cmd_loss_check)

    p = sub.add_parser("config", parents=[common], help="print the effective configuration")
    p.set_defaults(func=cmd_config)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    for name, default in (("config", None), ("set", None), ("seed", None), ("threads", 1), ("verbose", False)):
        if not hasattr(args, name):
            setattr(args, name, default)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.threads < 1:
        parser.error("--threads must be at least 1")
    try:
        cfg = _resolve_config(args)
        return args.func(args, cfg)
    except (CliError, ConfigError, ValueError, OSError) as exc:
        print(f"lidar4d {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
