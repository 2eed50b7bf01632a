"""Training pair sampling with non-adjacent gaps and temporal reversal."""

from typing import NamedTuple

import numpy as np


class FramePair(NamedTuple):
    first: int
    second: int

    @property
    def gap(self):
        return abs(self.second - self.first)

    @property
    def reversed(self):
        return self.first > self.second


def sample_pairs(seq_len: int, n_pairs: int, max_gap: int = 4, enable_nfs: bool = True,
                 enable_rto: bool = True, rng_seed=0, rto_duplicate: bool = False):
    """Draw ``n_pairs`` frame pairs.

    Per draw: gap ``k`` uniform on ``1..max_gap`` (or 1 without NFS), start
    ``t`` uniform on ``0..seq_len-1-k``, and with RTO the order is flipped
    with probability 1/2. With ``rto_duplicate`` both orders of every drawn
    pair are emitted instead, forward first.
    """
    if seq_len < 2:
        raise ValueError("seq_len must be at least 2")
    if not 1 <= max_gap <= seq_len - 1:
        raise ValueError(f"max_gap must lie in [1, {seq_len - 1}]")
    if n_pairs < 0:
        raise ValueError("n_pairs must be non-negative")
    rng = np.random.default_rng(rng_seed)
    pairs = []
    for _ in range(n_pairs):
        k = int(rng.integers(1, max_gap + 1)) if enable_nfs else 1
        t = int(rng.integers(0, seq_len - k))
        if enable_rto and rto_duplicate:
            pairs.append(FramePair(t, t + k))
            pairs.append(FramePair(t + k, t))
        elif enable_rto and rng.random() < 0.5:
            pairs.append(FramePair(t + k, t))
        else:
            pairs.append(FramePair(t, t + k))
    return pairs


def format_manifest(pairs) -> str:
    return "".join(f"{p.first} {p.second}\n" for p in pairs)


def parse_manifest(text: str):
    out = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        tok = line.split()
        if not tok:
            continue
        if len(tok) != 2:
            raise ValueError(f"line {lineno}: expected 'first second'")
        out.append(FramePair(int(tok[0]), int(tok[1])))
    return out
