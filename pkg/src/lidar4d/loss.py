"""Forward-value loss kernels for query-based instance segmentation.

Everything works on plain arrays:

* ``S`` -- ``(N_p, N_q)`` point/query similarities in (0, 1) (sigmoid of the
  raw dot products),
* ``M`` -- ``(N_p, N_o)`` point/object indicators from pseudo-labels,
* ``raw`` -- ``(N_p, N_q)`` pre-sigmoid dot products.

Dice and BCE are reported as losses (lower is better): ``1 - coefficient``
and the negative mean log-likelihood. No gradients are computed.
"""

from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .config import LossConfig

PROB_CLAMP = 1e-7
KL_FLOOR = 1e-12


def _vec(x):
    return np.asarray(x, dtype=np.float64).reshape(-1)


def _check_pair(s, m):
    if s.shape != m.shape:
        raise ValueError(f"length mismatch: {s.shape[0]} vs {m.shape[0]}")


def dice_coefficient(s_col, m_col) -> float:
    """``2 Σ s·m / (Σ s² + Σ m²)``."""
    s, m = _vec(s_col), _vec(m_col)
    _check_pair(s, m)
    den = np.sum(s * s) + np.sum(m * m)
    if den == 0:
        raise ValueError("degenerate dice: both vectors are all zero")
    return float(np.sum(2.0 * s * m) / den)


def _log_terms(s):
    sc = np.clip(s, PROB_CLAMP, 1.0 - PROB_CLAMP)
    return np.log(sc), np.log1p(-sc)


def bce_loss(s_col, m_col) -> float:
    s, m = _vec(s_col), _vec(m_col)
    _check_pair(s, m)
    if s.size == 0:
        raise ValueError("empty input")
    ls, l1s = _log_terms(s)
    return float(-np.mean(m * ls + (1.0 - m) * l1s))


def scaled_dice(s_col, m_col, w_col) -> float:
    """``1 - Σ 2·w·s·m / (Σ s² + Σ m²)``."""
    s, m, w = _vec(s_col), _vec(m_col), _vec(w_col)
    _check_pair(s, m)
    _check_pair(s, w)
    den = np.sum(s * s) + np.sum(m * m)
    if den == 0:
        raise ValueError("degenerate dice: both vectors are all zero")
    return float(1.0 - np.sum(2.0 * w * s * m) / den)


def scaled_bce(s_col, m_col, w_col) -> float:
    """BCE with the confidence weight on the positive term only."""
    s, m, w = _vec(s_col), _vec(m_col), _vec(w_col)
    _check_pair(s, m)
    _check_pair(s, w)
    if s.size == 0:
        raise ValueError("empty input")
    ls, l1s = _log_terms(s)
    return float(-np.mean(w * m * ls + (1.0 - m) * l1s))


def confidence_weight(S, alpha: float = 0.6, epsilon: float = 0.1) -> np.ndarray:
    """``max(ε, 1 - α(1 - S))`` elementwise."""
    S = np.asarray(S, dtype=np.float64)
    return np.maximum(epsilon, 1.0 - alpha * (1.0 - S))


def cost_matrix(S, M, lambda_dice: float = 2.0, lambda_bce: float = 5.0) -> np.ndarray:
    """``(N_q, N_o)`` matching costs ``λ_dice·(1 - dice) + λ_bce·bce``."""
    S = np.atleast_2d(np.asarray(S, dtype=np.float64))
    M = np.atleast_2d(np.asarray(M, dtype=np.float64))
    if S.shape[0] != M.shape[0]:
        raise ValueError(f"dimension mismatch: S has {S.shape[0]} points, M has {M.shape[0]}")
    n_p = S.shape[0]
    if n_p == 0:
        raise ValueError("no points")
    den = (S * S).sum(axis=0)[:, None] + (M * M).sum(axis=0)[None, :]
    if (den == 0).any():
        raise ValueError("degenerate dice: both vectors are all zero")
    dice = 2.0 * (S.T @ M) / den
    ls, l1s = _log_terms(S)
    bce = -(ls.T @ M + l1s.T @ (1.0 - M)) / n_p
    return lambda_dice * (1.0 - dice) + lambda_bce * bce


@dataclass(frozen=True)
class Matching:
    """``query_of[o]`` is the query matched to object ``o``."""

    query_of: dict
    cost: float

    def __len__(self):
        return len(self.query_of)

    def pairs(self):
        return sorted(self.query_of.items())


def hungarian(C) -> Matching:
    """Minimum-cost matching of queries (rows) to objects (columns).

    Rectangular inputs are padded to square with a constant above the largest
    entry. Among equal-cost optima the assignment whose row-to-column
    sequence is lexicographically smallest wins.
    """
    C = np.asarray(C, dtype=np.float64)
    if C.ndim != 2:
        raise ValueError("cost matrix must be 2-D")
    if np.isnan(C).any():
        raise ValueError("cost matrix contains NaN")
    if not np.isfinite(C).all():
        raise ValueError("cost matrix must be finite")
    n_q, n_o = C.shape
    if n_q == 0 or n_o == 0:
        return Matching({}, 0.0)
    n = max(n_q, n_o)
    scale = max(1.0, float(np.abs(C).max()))
    if n_q != n_o:
        pad = float(C.max()) + 1.0
        sq = np.full((n, n), pad)
        sq[:n_q, :n_o] = C
        scale = max(scale, abs(pad))
    else:
        sq = C
    col = kernels.assign_square(sq, 1e-13 * scale)
    query_of = {int(col[q]): int(q) for q in range(n_q) if col[q] < n_o}
    cost = float(sum(C[q, o] for o, q in query_of.items()))
    return Matching(query_of, cost)


def motion_weights(centroids_t, centroids_tk, presence, beta: float = 0.2) -> np.ndarray:
    """Normalized motion weights ``(A + β) / Σ(A + β)``.

    ``A`` is the squared centroid displacement, or 0 for objects not present
    in both frames (``presence`` rows are ``(at_t, at_tk)``).
    """
    if beta <= 0:
        raise ValueError("beta must be positive")
    presence = np.asarray(presence, dtype=bool).reshape(-1, 2)
    n_o = presence.shape[0]
    if n_o == 0:
        return np.zeros(0)
    c_t = np.asarray(centroids_t, dtype=np.float64).reshape(n_o, -1)
    c_tk = np.asarray(centroids_tk, dtype=np.float64).reshape(n_o, -1)
    both = presence.all(axis=1)
    motion = np.zeros(n_o)
    d = c_tk[both] - c_t[both]
    motion[both] = (d * d).sum(axis=1)
    a = motion + beta
    return a / a.sum()


def softmax_query_distribution(avg_scores) -> np.ndarray:
    x = _vec(avg_scores)
    e = np.exp(x - x.max())
    return e / e.sum()


def consistency_loss(H_t, H_tk) -> float:
    """``KL(H_t || H_tk)`` with ``0·log 0 = 0`` and ``H_tk`` floored at 1e-12."""
    p, q = _vec(H_t), _vec(H_tk)
    _check_pair(p, q)
    for name, v in (("H_t", p), ("H_tk", q)):
        if (v < 0).any() or abs(v.sum() - 1.0) > 1e-6:
            raise ValueError(f"{name} is not a probability vector")
    nz = p > 0
    return float(np.sum(p[nz] * (np.log(p[nz]) - np.log(np.maximum(q[nz], KL_FLOOR)))))


def _object_distribution(raw, m_col):
    w = m_col.sum()
    return softmax_query_distribution((m_col @ raw) / w)


@dataclass
class ObjectTerms:
    object: int
    query: int
    motion_weight: float
    dice: float
    bce: float
    consistency: float
    dice_tk: float = 0.0
    bce_tk: float = 0.0

    def bracket(self, cfg: LossConfig):
        return (
            cfg.lambda_dice * (self.dice + self.dice_tk)
            + cfg.lambda_bce * (self.bce + self.bce_tk)
            + cfg.lambda_cons * self.consistency
        )


@dataclass
class LossBreakdown:
    total: float
    n_matched: int
    matching: Matching
    motion_weights: np.ndarray
    objects: list = field(default_factory=list)

    def lines(self):
        out = [f"total = {self.total:.17g}", f"n_matched = {self.n_matched}"]
        for t in self.objects:
            out.append(
                f"object {t.object} query {t.query} weight {t.motion_weight:.17g} dice {t.dice:.17g} "
                f"bce {t.bce:.17g} cons {t.consistency:.17g} dice_tk {t.dice_tk:.17g} bce_tk {t.bce_tk:.17g}"
            )
        return out


def total_loss(S_t, S_tk, M_t, M_tk, raw_t, raw_tk, cfg: LossConfig = LossConfig(),
               centroids_t=None, centroids_tk=None) -> LossBreakdown:
    """Motion-weighted, confidence-scaled objective for one frame pair.

    Columns of ``M_t`` and ``M_tk`` refer to the same pseudo-instance. Objects
    present at ``t`` are matched to queries by :func:`hungarian` on
    :func:`cost_matrix`; each matched object contributes
    ``A_o·[λ_dice·dice + λ_bce·bce + λ_cons·KL]`` and the sum is divided by
    ``N = min(N_q, N_o at t)``. Without centroids every motion term is 0,
    which leaves uniform motion weights.

    ``cfg.tk_mask`` optionally adds the mask terms at ``t+k`` as well,
    either reusing the query matched at ``t`` ("reuse") or matching afresh
    ("fresh").
    """
    cfg.validate()
    S_t, S_tk = np.atleast_2d(S_t).astype(np.float64), np.atleast_2d(S_tk).astype(np.float64)
    M_t, M_tk = np.atleast_2d(M_t).astype(np.float64), np.atleast_2d(M_tk).astype(np.float64)
    raw_t, raw_tk = np.atleast_2d(raw_t).astype(np.float64), np.atleast_2d(raw_tk).astype(np.float64)
    n_q = S_t.shape[1]
    n_o = M_t.shape[1]
    if S_tk.shape[1] != n_q or M_tk.shape[1] != n_o:
        raise ValueError("frame t and t+k must share query and object dimensions")
    if raw_t.shape != S_t.shape or raw_tk.shape != S_tk.shape:
        raise ValueError("raw score shapes must match similarity shapes")
    if M_t.shape[0] != S_t.shape[0] or M_tk.shape[0] != S_tk.shape[0]:
        raise ValueError("point counts of S and M differ")

    at_t = M_t.sum(axis=0) > 0
    at_tk = M_tk.sum(axis=0) > 0
    presence = np.column_stack([at_t, at_tk])
    if centroids_t is None or centroids_tk is None:
        centroids_t = centroids_tk = np.zeros((n_o, 3))
    weights = motion_weights(centroids_t, centroids_tk, presence, cfg.beta)

    present = np.nonzero(at_t)[0]
    if n_q == 0 or present.size == 0:
        return LossBreakdown(0.0, 0, Matching({}, 0.0), weights)
    C = cost_matrix(S_t, M_t[:, present], cfg.lambda_dice, cfg.lambda_bce)
    local = hungarian(C)
    matching = Matching({int(present[o]): q for o, q in local.query_of.items()}, local.cost)

    tk_query = {}
    if cfg.tk_mask == "reuse":
        tk_query = {o: q for o, q in matching.query_of.items() if at_tk[o]}
    elif cfg.tk_mask == "fresh":
        present_tk = np.nonzero(at_tk)[0]
        if present_tk.size:
            m_tk = hungarian(cost_matrix(S_tk, M_tk[:, present_tk], cfg.lambda_dice, cfg.lambda_bce))
            tk_query = {int(present_tk[o]): q for o, q in m_tk.query_of.items()}

    W_t = confidence_weight(S_t, cfg.alpha, cfg.epsilon)
    W_tk = confidence_weight(S_tk, cfg.alpha, cfg.epsilon)
    n = min(n_q, present.size)
    terms = []
    acc = 0.0
    for o, q in matching.pairs():
        t = ObjectTerms(
            object=o,
            query=q,
            motion_weight=float(weights[o]),
            dice=scaled_dice(S_t[:, q], M_t[:, o], W_t[:, q]),
            bce=scaled_bce(S_t[:, q], M_t[:, o], W_t[:, q]),
            consistency=0.0,
        )
        if at_tk[o]:
            t.consistency = consistency_loss(
                _object_distribution(raw_t, M_t[:, o]), _object_distribution(raw_tk, M_tk[:, o])
            )
        if o in tk_query:
            qk = tk_query[o]
            t.dice_tk = scaled_dice(S_tk[:, qk], M_tk[:, o], W_tk[:, qk])
            t.bce_tk = scaled_bce(S_tk[:, qk], M_tk[:, o], W_tk[:, qk])
        acc += t.motion_weight * t.bracket(cfg)
        terms.append(t)
    return LossBreakdown(acc / n, n, matching, weights, terms)


def centroids_from_points(points, M) -> np.ndarray:
    """Indicator-weighted centroid of each object column (NaN when absent)."""
    points = np.asarray(points, dtype=np.float64)[:, :3]
    M = np.asarray(M, dtype=np.float64)
    w = M.sum(axis=0)
    with np.errstate(invalid="ignore", divide="ignore"):
        return (M.T @ points) / w[:, None]
