import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lidar4d.config import LossConfig
from lidar4d.loss import (
    bce_loss, confidence_weight, consistency_loss, cost_matrix, dice_coefficient, hungarian, motion_weights,
    scaled_bce, scaled_dice, softmax_query_distribution, total_loss,
)
from oracles import brute_assignment


# -- scalar reference built from the raw formulas with plain Python loops ---


def _clamp(p):
    return min(max(p, 1e-7), 1 - 1e-7)


def ref_total(S, S_k, M, M_k, raw, raw_k, c_t, c_k, lam=(2.0, 5.0, 1.0), alpha=0.6, eps=0.1, beta=0.2):
    n_p, n_q = len(S), len(S[0])
    n_o = len(M[0])

    def w(x):
        return max(eps, 1 - alpha * (1 - x))

    def dice(j, o, weighted):
        num = sum(2 * (w(S[i][j]) if weighted else 1) * S[i][j] * M[i][o] for i in range(n_p))
        den = sum(S[i][j] ** 2 for i in range(n_p)) + sum(M[i][o] ** 2 for i in range(n_p))
        return 1 - num / den

    def bce(j, o, weighted):
        tot = 0.0
        for i in range(n_p):
            p = _clamp(S[i][j])
            ww = w(S[i][j]) if weighted else 1
            tot += ww * M[i][o] * math.log(p) + (1 - M[i][o]) * math.log(1 - p)
        return -tot / n_p

    def dist(rawm, Mm, o):
        pts = [i for i in range(len(Mm)) if Mm[i][o]]
        avg = [sum(rawm[i][j] for i in pts) / len(pts) for j in range(n_q)]
        mx = max(avg)
        e = [math.exp(a - mx) for a in avg]
        return [x / sum(e) for x in e]

    cost = [[lam[0] * dice(j, o, False) + lam[1] * bce(j, o, False) for o in range(n_o)] for j in range(n_q)]
    best = None
    for perm in itertools.permutations(range(n_q), n_o):
        c = sum(cost[perm[o]][o] for o in range(n_o))
        if best is None or c < best[0]:
            best = (c, perm)
    motion = []
    for o in range(n_o):
        motion.append(sum((c_k[o][d] - c_t[o][d]) ** 2 for d in range(3)))
    denom = sum(a + beta for a in motion)
    A = [(a + beta) / denom for a in motion]
    total = 0.0
    for o, j in enumerate(best[1]):
        p, q = dist(raw, M, o), dist(raw_k, M_k, o)
        kl = sum(pp * math.log(pp / max(qq, 1e-12)) for pp, qq in zip(p, q) if pp > 0)
        total += A[o] * (lam[0] * dice(j, o, True) + lam[1] * bce(j, o, True) + lam[2] * kl)
    return total / min(n_q, n_o)


HAND = dict(
    raw=np.array([[2.0, -1.0], [1.0, 0.5], [-1.5, 2.0]]),
    raw_k=np.array([[1.5, -0.5], [0.0, 1.0], [-2.0, 1.5]]),
    M=np.array([[1.0, 0.0], [1.0, 0.0], [0.0, 1.0]]),
    M_k=np.array([[1.0, 0.0], [0.0, 1.0], [0.0, 1.0]]),
    c_t=np.array([[0.0, 0.0, 0.0], [5.0, 5.0, 0.0]]),
    c_k=np.array([[1.0, 2.0, 0.0], [5.0, 5.0, 0.0]]),
)


def _sig(x):
    return 1 / (1 + np.exp(-x))


def test_hand_case_matches_scalar_reference():
    h = HAND
    S, S_k = _sig(h["raw"]), _sig(h["raw_k"])
    got = total_loss(S, S_k, h["M"], h["M_k"], h["raw"], h["raw_k"], LossConfig(), h["c_t"], h["c_k"])
    ref = ref_total(S.tolist(), S_k.tolist(), h["M"].tolist(), h["M_k"].tolist(), h["raw"].tolist(),
                    h["raw_k"].tolist(), h["c_t"].tolist(), h["c_k"].tolist())
    assert got.total == pytest.approx(ref, abs=1e-10)
    assert got.matching.query_of == {0: 0, 1: 1}
    assert got.n_matched == 2


@pytest.mark.parametrize("seed", range(25))
def test_random_cases_match_scalar_reference(seed):
    rng = np.random.default_rng(seed)
    n_p, n_q, n_o = int(rng.integers(3, 9)), int(rng.integers(2, 5)), int(rng.integers(1, 3))
    lab = np.concatenate([np.arange(n_o), rng.integers(0, n_o + 1, n_p - n_o)])
    M = (lab[:, None] == np.arange(n_o)).astype(float)
    lab_k = np.concatenate([np.arange(n_o), rng.integers(0, n_o + 1, n_p - n_o)])[rng.permutation(n_p)]
    M_k = (lab_k[:, None] == np.arange(n_o)).astype(float)
    raw, raw_k = rng.normal(size=(n_p, n_q)) * 2, rng.normal(size=(n_p, n_q)) * 2
    c_t, c_k = rng.normal(size=(n_o, 3)), rng.normal(size=(n_o, 3))
    got = total_loss(_sig(raw), _sig(raw_k), M, M_k, raw, raw_k, LossConfig(), c_t, c_k)
    ref = ref_total(_sig(raw).tolist(), _sig(raw_k).tolist(), M.tolist(), M_k.tolist(), raw.tolist(),
                    raw_k.tolist(), c_t.tolist(), c_k.tolist())
    assert got.total == pytest.approx(ref, abs=1e-10)


# -- scalar examples ----------------------------------------------------------


def test_dice_examples():
    assert dice_coefficient([1, 1, 0, 0], [1, 1, 0, 0]) == 1.0
    assert dice_coefficient([1, 1, 0, 0], [0, 0, 1, 1]) == 0.0
    assert dice_coefficient([1, 1, 0, 0], [1, 0, 0, 0]) == pytest.approx(2 / 3, abs=1e-10)
    with pytest.raises(ValueError, match="degenerate dice"):
        dice_coefficient([0, 0], [0, 0])


def test_bce_examples():
    assert bce_loss([0.5, 0.5], [1, 0]) == pytest.approx(math.log(2), abs=1e-10)
    assert bce_loss([1 - 1e-7] * 3, [1, 1, 1]) < 1e-6
    assert bce_loss([1.0, 0.0], [1, 0]) == pytest.approx(-math.log(1 - 1e-7), abs=1e-12)
    assert bce_loss([0.5], [0]) == bce_loss([0.5], [1])


def test_confidence_weight_examples():
    assert confidence_weight(1.0) == 1.0
    assert confidence_weight(0.0, 0.6, 0.1) == pytest.approx(0.4, abs=1e-10)
    assert confidence_weight(0.5, 0.6, 0.1) == pytest.approx(0.7, abs=1e-10)
    assert confidence_weight(0.0, 1.0, 0.1) == 0.1


def test_scaled_examples():
    s, m = np.array([0.3, 0.8, 0.1]), np.array([0.0, 1.0, 1.0])
    assert scaled_dice(s, m, np.ones(3)) == 1 - dice_coefficient(s, m)
    assert scaled_bce(s, m, np.ones(3)) == bce_loss(s, m)
    assert scaled_dice([1, 0], [1, 0], [0.5, 0.5]) == pytest.approx(0.5, abs=1e-10)


def test_scaled_dice_monotone_in_weight():
    rng = np.random.default_rng(0)
    for _ in range(100):
        s, m, w = rng.random(6), rng.integers(0, 2, 6).astype(float), rng.random(6)
        m[0] = 1
        w2 = w.copy()
        w2[0] *= 0.5
        assert scaled_dice(s, m, w2) >= scaled_dice(s, m, w)


def test_alpha_zero_reduction():
    rng = np.random.default_rng(7)
    for _ in range(100):
        n = int(rng.integers(1, 20))
        s = rng.uniform(0.01, 0.99, n)
        m = rng.integers(0, 2, n).astype(float)
        m[0] = 1
        w = confidence_weight(s, alpha=0.0, epsilon=0.1)
        assert scaled_dice(s, m, w) == 1 - dice_coefficient(s, m)
        assert scaled_bce(s, m, w) == bce_loss(s, m)


def test_motion_weight_examples():
    assert np.allclose(motion_weights(np.zeros((3, 3)), np.zeros((3, 3)), np.ones((3, 2), bool)), 1 / 3)
    w = motion_weights([[0, 0, 0], [1, 1, 1]], [[3, 4, 0], [1, 1, 1]], np.ones((2, 2), bool), 0.2)
    assert np.allclose(w, [25.2 / 25.4, 0.2 / 25.4], atol=1e-12)
    w = motion_weights([[0, 0, 0], [0, 0, 0]], [[9, 9, 9], [3, 4, 0]], [[True, False], [True, True]], 0.2)
    assert w[0] == pytest.approx(0.2 / 25.4)
    assert motion_weights([], [], np.zeros((0, 2), bool)).size == 0


def test_softmax_examples():
    assert np.allclose(softmax_query_distribution([3, 3, 3, 3]), 0.25)
    assert np.allclose(softmax_query_distribution([0, math.log(3)]), [0.25, 0.75], atol=1e-12)
    x = np.array([1.0, -2.0, 0.5])
    assert np.allclose(softmax_query_distribution(x + 100), softmax_query_distribution(x), atol=1e-15)


def test_consistency_examples():
    assert consistency_loss([0.2, 0.8], [0.2, 0.8]) == 0.0
    assert consistency_loss([1, 0], [0.5, 0.5]) == pytest.approx(math.log(2), abs=1e-10)
    assert consistency_loss([0.5, 0.5], [1.0, 0.0]) == pytest.approx(0.5 * math.log(0.5) + 0.5 * math.log(0.5 / 1e-12), abs=1e-9)
    with pytest.raises(ValueError):
        consistency_loss([0.5, 0.6], [0.5, 0.5])


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(0.01, 10), min_size=2, max_size=6), st.data())
def test_consistency_non_negative(p, data):
    q = data.draw(st.lists(st.floats(0.01, 10), min_size=len(p), max_size=len(p)))
    p, q = np.array(p) / sum(p), np.array(q) / sum(q)
    assert consistency_loss(p, q) >= -1e-15


# -- matching -----------------------------------------------------------------


def test_cost_matrix_matches_per_entry():
    rng = np.random.default_rng(1)
    S = rng.uniform(0.05, 0.95, (5, 2))
    M = np.array([[1, 0], [1, 0], [0, 1], [0, 1], [0, 0]], dtype=float)
    C = cost_matrix(S, M, 1.0, 1.0)
    for j in range(2):
        for o in range(2):
            ref = (1 - dice_coefficient(S[:, j], M[:, o])) + bce_loss(S[:, j], M[:, o])
            assert C[j, o] == pytest.approx(ref, abs=1e-12)
    assert np.allclose(cost_matrix(S, M[:, ::-1], 1.0, 1.0), C[:, ::-1])
    with pytest.raises(ValueError):
        cost_matrix(S, M[:4])


def test_cost_matrix_perfect_query():
    M = np.array([[1.0], [0.0], [1.0]])
    C = cost_matrix(M.copy(), M, 1.0, 1.0)
    assert C[0, 0] == pytest.approx(0, abs=1e-6)


def test_hungarian_examples():
    m = hungarian([[0, 9], [9, 0]])
    assert m.query_of == {0: 0, 1: 1} and m.cost == 0
    base = np.array([[1.0, 2.0], [2.0, 1.0]])
    for k in (0.5, 3.0, 1e6):
        assert hungarian(base * k).query_of == {0: 0, 1: 1}
    with pytest.raises(ValueError):
        hungarian([[np.nan, 1], [1, 1]])


def test_hungarian_ties_lexicographic():
    assert hungarian(np.ones((3, 3))).query_of == {0: 0, 1: 1, 2: 2}
    assert hungarian(np.zeros((2, 3))).query_of == {0: 0, 1: 1}
    assert hungarian(np.zeros((3, 2))).query_of == {0: 0, 1: 1}


@pytest.mark.parametrize("shape", [(2, 2), (3, 3), (4, 4), (5, 5), (4, 2), (2, 5), (7, 5), (6, 6)])
def test_hungarian_brute_force(shape):
    rng = np.random.default_rng(shape[0] * 10 + shape[1])
    for _ in range(30):
        C = rng.normal(size=shape) * rng.choice([1e-3, 1, 1e3])
        m = hungarian(C)
        assert len(m) == min(shape)
        assert len(set(m.query_of.values())) == len(m)
        assert abs(m.cost - brute_assignment(C)) <= 1e-12 * max(1, np.abs(C).max())


def test_hungarian_shift_invariance():
    rng = np.random.default_rng(3)
    for _ in range(50):
        C = rng.normal(size=(4, 4))
        assert hungarian(C + 17.0).query_of == hungarian(C).query_of


# -- total loss ---------------------------------------------------------------


def test_perfect_static_object_near_zero():
    M = np.array([[1.0], [1.0], [0.0]])
    S = np.clip(M, 1e-9, 1 - 1e-9)
    res = total_loss(S, S, M, M, S * 10, S * 10, LossConfig())
    assert res.total == pytest.approx(0, abs=1e-5)


def test_uniform_weight_reduction():
    rng = np.random.default_rng(11)
    n_p, n_q, n_o = 8, 3, 2
    M = np.zeros((n_p, n_o))
    M[:4, 0] = 1
    M[4:7, 1] = 1
    S, S_k = rng.uniform(0.05, 0.95, (n_p, n_q)), rng.uniform(0.05, 0.95, (n_p, n_q))
    cfg = LossConfig(alpha=0.0, lambda_cons=0.0)
    res = total_loss(S, S_k, M, M, np.log(S / (1 - S)), np.log(S_k / (1 - S_k)), cfg)
    unscaled = sum(
        cfg.lambda_dice * (1 - dice_coefficient(S[:, q], M[:, o])) + cfg.lambda_bce * bce_loss(S[:, q], M[:, o])
        for o, q in res.matching.query_of.items()
    )
    n = min(n_q, n_o)
    # uniform weights are 1/N_o each, so the sum carries that factor too
    assert res.total == pytest.approx(unscaled / (n * n_o), abs=1e-12)


def test_permutation_equivariance():
    h = HAND
    S, S_k = _sig(h["raw"]), _sig(h["raw_k"])
    a = total_loss(S, S_k, h["M"], h["M_k"], h["raw"], h["raw_k"], LossConfig(), h["c_t"], h["c_k"])
    p = [1, 0]
    b = total_loss(S, S_k, h["M"][:, p], h["M_k"][:, p], h["raw"], h["raw_k"], LossConfig(), h["c_t"][p], h["c_k"][p])
    assert b.total == pytest.approx(a.total, abs=1e-12)


def test_absent_objects_and_tk_modes():
    h = HAND
    S, S_k = _sig(h["raw"]), _sig(h["raw_k"])
    M_k = h["M_k"].copy()
    M_k[:, 1] = 0
    res = total_loss(S, S_k, h["M"], M_k, h["raw"], h["raw_k"], LossConfig(), h["c_t"], h["c_k"])
    by_obj = {t.object: t for t in res.objects}
    assert by_obj[1].consistency == 0.0
    for mode in ("reuse", "fresh"):
        r = total_loss(S, S_k, h["M"], h["M_k"], h["raw"], h["raw_k"], LossConfig(tk_mask=mode), h["c_t"], h["c_k"])
        assert all(t.dice_tk > 0 for t in r.objects)
        assert r.total > total_loss(S, S_k, h["M"], h["M_k"], h["raw"], h["raw_k"], LossConfig(),
                                    h["c_t"], h["c_k"]).total
