"""Hot numeric kernels.

Every public function here dispatches to a numba-compiled loop or to a
vectorized numpy implementation, depending on :mod:`lidar4d._backend`.
Both paths perform the same floating point operations in the same order
where that matters, so results agree bit for bit on the tested inputs.
"""

from itertools import product

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from ._backend import njit, use_numba

# Cells are padded a hair above eps so that two points within eps can never
# land two cells apart after floating point rounding of coord / cell.
_CELL_PAD = 1.0 + 1e-6
_STENCIL = np.array(list(product(range(3), repeat=3)), dtype=np.int64)


# ---------------------------------------------------------------------------
# eps-neighborhoods via integer cell hashing
# ---------------------------------------------------------------------------


def _cell_index(points, eps):
    """Rank-compressed cell keys plus the 3x3 neighbor-rank table per point.

    ``ranks[i, axis, k]`` is the rank of cell coordinate ``c + (k - 1)``
    along ``axis`` among occupied coordinates, or -1 when that coordinate
    holds no point.
    """
    cells = np.floor(points / (eps * _CELL_PAD)).astype(np.int64)
    n = points.shape[0]
    ranks = np.empty((n, 3, 3), dtype=np.int64)
    sizes = []
    for axis in range(3):
        c = cells[:, axis]
        uniq = np.unique(c)
        sizes.append(len(uniq))
        for k, d in enumerate((-1, 0, 1)):
            v = c + d
            pos = np.searchsorted(uniq, v)
            hit = uniq[np.minimum(pos, len(uniq) - 1)] == v
            ranks[:, axis, k] = np.where(hit, pos, -1)
    ny, nz = sizes[1], sizes[2]
    keys = (ranks[:, 0, 1] * ny + ranks[:, 1, 1]) * nz + ranks[:, 2, 1]
    order = np.argsort(keys, kind="stable")
    ukeys, starts = np.unique(keys[order], return_index=True)
    ends = np.append(starts[1:], n)
    return ranks, ny, nz, ukeys, starts.astype(np.int64), ends.astype(np.int64), order


@njit(cache=True, nogil=True)
def _neighbor_pass_nb(points, ranks, ny, nz, ukeys, starts, ends, order, eps2, indptr, indices, fill):
    n = points.shape[0]
    m = ukeys.shape[0]
    for i in range(n):
        cnt = 0
        base = indptr[i] if fill else 0
        xi = points[i, 0]
        yi = points[i, 1]
        zi = points[i, 2]
        for a in range(3):
            ra = ranks[i, 0, a]
            if ra < 0:
                continue
            for b in range(3):
                rb = ranks[i, 1, b]
                if rb < 0:
                    continue
                for c in range(3):
                    rc = ranks[i, 2, c]
                    if rc < 0:
                        continue
                    key = (ra * ny + rb) * nz + rc
                    pos = np.searchsorted(ukeys, key)
                    if pos >= m or ukeys[pos] != key:
                        continue
                    for s in range(starts[pos], ends[pos]):
                        j = order[s]
                        dx = points[j, 0] - xi
                        dy = points[j, 1] - yi
                        dz = points[j, 2] - zi
                        if dx * dx + dy * dy + dz * dz <= eps2:
                            if fill:
                                indices[base + cnt] = j
                            cnt += 1
        if not fill:
            indptr[i + 1] = cnt
    return indptr


def _eps_graph_numba(points, eps):
    ranks, ny, nz, ukeys, starts, ends, order = _cell_index(points, eps)
    n = points.shape[0]
    indptr = np.zeros(n + 1, dtype=np.int64)
    dummy = np.empty(0, dtype=np.int64)
    eps2 = eps * eps
    _neighbor_pass_nb(points, ranks, ny, nz, ukeys, starts, ends, order, eps2, indptr, dummy, False)
    np.cumsum(indptr, out=indptr)
    indices = np.empty(indptr[-1], dtype=np.int64)
    _neighbor_pass_nb(points, ranks, ny, nz, ukeys, starts, ends, order, eps2, indptr, indices, True)
    return indptr, indices


def _eps_graph_numpy(points, eps):
    ranks, ny, nz, ukeys, starts, ends, order = _cell_index(points, eps)
    eps2 = eps * eps
    rows, cols = [], []
    for a, b, c in _STENCIL:
        ra, rb, rc = ranks[:, 0, a], ranks[:, 1, b], ranks[:, 2, c]
        idx = np.nonzero((ra >= 0) & (rb >= 0) & (rc >= 0))[0]
        if idx.size == 0:
            continue
        key = (ra[idx] * ny + rb[idx]) * nz + rc[idx]
        pos = np.searchsorted(ukeys, key)
        hit = ukeys[np.minimum(pos, len(ukeys) - 1)] == key
        idx, pos = idx[hit], pos[hit]
        cnt = ends[pos] - starts[pos]
        total = int(cnt.sum())
        if total == 0:
            continue
        ii = np.repeat(idx, cnt)
        offs = np.arange(total) - np.repeat(np.cumsum(cnt) - cnt, cnt)
        jj = order[np.repeat(starts[pos], cnt) + offs]
        dx = points[jj, 0] - points[ii, 0]
        dy = points[jj, 1] - points[ii, 1]
        dz = points[jj, 2] - points[ii, 2]
        keep = dx * dx + dy * dy + dz * dz <= eps2
        rows.append(ii[keep])
        cols.append(jj[keep])
    n = points.shape[0]
    if rows:
        r = np.concatenate(rows)
        c = np.concatenate(cols)
    else:
        r = c = np.empty(0, dtype=np.int64)
    srt = np.lexsort((c, r))
    r, c = r[srt], c[srt]
    indptr = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(np.bincount(r, minlength=n), out=indptr[1:])
    return indptr, c


def eps_neighbors(points, eps):
    """CSR adjacency of the inclusive eps-graph (self loops included)."""
    points = np.ascontiguousarray(points, dtype=np.float64)
    if points.shape[0] == 0:
        return np.zeros(1, dtype=np.int64), np.empty(0, dtype=np.int64)
    if use_numba():
        return _eps_graph_numba(points, float(eps))
    return _eps_graph_numpy(points, float(eps))


# ---------------------------------------------------------------------------
# DBSCAN labeling on a precomputed eps-graph
# ---------------------------------------------------------------------------


@njit(cache=True, nogil=True)
def _dbscan_labels_nb(indptr, indices, min_pts):
    n = indptr.shape[0] - 1
    core = np.empty(n, dtype=np.bool_)
    for i in range(n):
        core[i] = indptr[i + 1] - indptr[i] >= min_pts
    labels = np.zeros(n, dtype=np.int64)
    stack = np.empty(n, dtype=np.int64)
    cid = 0
    for i in range(n):
        if not core[i] or labels[i] != 0:
            continue
        cid += 1
        labels[i] = cid
        stack[0] = i
        top = 1
        while top > 0:
            top -= 1
            p = stack[top]
            for k in range(indptr[p], indptr[p + 1]):
                q = indices[k]
                if core[q] and labels[q] == 0:
                    labels[q] = cid
                    stack[top] = q
                    top += 1
    for i in range(n):
        if core[i]:
            continue
        best = -1
        for k in range(indptr[i], indptr[i + 1]):
            q = indices[k]
            if core[q] and (best < 0 or q < best):
                best = q
        if best >= 0:
            labels[i] = labels[best]
    return labels


def _dbscan_labels_numpy(indptr, indices, min_pts):
    n = indptr.shape[0] - 1
    deg = np.diff(indptr)
    core = deg >= min_pts
    labels = np.zeros(n, dtype=np.int64)
    if not core.any():
        return labels
    rows = np.repeat(np.arange(n), deg)
    cc = core[rows] & core[indices]
    graph = coo_matrix((np.ones(cc.sum(), dtype=np.int8), (rows[cc], indices[cc])), shape=(n, n))
    _, comp = connected_components(graph, directed=False)
    core_idx = np.nonzero(core)[0]
    first = np.full(comp.max() + 1, n, dtype=np.int64)
    np.minimum.at(first, comp[core_idx], core_idx)
    # clusters are numbered by their lowest-index core point
    used = np.unique(comp[core_idx])
    rank = np.empty(comp.max() + 1, dtype=np.int64)
    rank[used[np.argsort(first[used], kind="stable")]] = np.arange(1, len(used) + 1)
    labels[core_idx] = rank[comp[core_idx]]
    border = ~core[rows] & core[indices]
    if border.any():
        best = np.full(n, n, dtype=np.int64)
        np.minimum.at(best, rows[border], indices[border])
        has = (best < n) & ~core
        labels[has] = labels[best[has]]
    return labels


def dbscan_labels(indptr, indices, min_pts):
    """Cluster ids (1..K, 0 = noise) from an eps-graph in CSR form."""
    if use_numba():
        return _dbscan_labels_nb(indptr, indices, int(min_pts))
    return _dbscan_labels_numpy(indptr, indices, int(min_pts))


# ---------------------------------------------------------------------------
# RANSAC plane scoring
# ---------------------------------------------------------------------------


@njit(cache=True, nogil=True)
def _plane_inlier_counts_nb(points, planes, thr):
    k = planes.shape[0]
    n = points.shape[0]
    counts = np.zeros(k, dtype=np.int64)
    for p in range(k):
        a = planes[p, 0]
        b = planes[p, 1]
        c = planes[p, 2]
        d = planes[p, 3]
        cnt = 0
        for i in range(n):
            r = a * points[i, 0] + b * points[i, 1] + c * points[i, 2] + d
            if abs(r) <= thr:
                cnt += 1
        counts[p] = cnt
    return counts


def _plane_inlier_counts_numpy(points, planes, thr, chunk=1 << 22):
    n = points.shape[0]
    counts = np.zeros(planes.shape[0], dtype=np.int64)
    step = max(1, chunk // max(n, 1))
    x, y, z = points[:, 0], points[:, 1], points[:, 2]
    for s in range(0, planes.shape[0], step):
        pl = planes[s : s + step]
        r = pl[:, 0:1] * x + pl[:, 1:2] * y + pl[:, 2:3] * z + pl[:, 3:4]
        counts[s : s + step] = (np.abs(r) <= thr).sum(axis=1)
    return counts


def plane_inlier_counts(points, planes, thr):
    """Number of points within ``thr`` of each plane ``(a, b, c, d)``, unit normals."""
    points = np.ascontiguousarray(points[:, :3], dtype=np.float64)
    planes = np.ascontiguousarray(planes, dtype=np.float64)
    if use_numba():
        return _plane_inlier_counts_nb(points, planes, float(thr))
    return _plane_inlier_counts_numpy(points, planes, float(thr))


# ---------------------------------------------------------------------------
# Square linear assignment (shortest augmenting path with potentials)
# ---------------------------------------------------------------------------


@njit(cache=True, nogil=True)
def _assign_nb(a):
    n = a.shape[0]
    inf = np.inf
    u = np.zeros(n + 1)
    v = np.zeros(n + 1)
    p = np.zeros(n + 1, dtype=np.int64)
    way = np.zeros(n + 1, dtype=np.int64)
    minv = np.empty(n + 1)
    used = np.empty(n + 1, dtype=np.bool_)
    for i in range(1, n + 1):
        p[0] = i
        j0 = 0
        minv[:] = inf
        used[:] = False
        while True:
            used[j0] = True
            i0 = p[j0]
            delta = inf
            j1 = 0
            for j in range(1, n + 1):
                if not used[j]:
                    cur = a[i0 - 1, j - 1] - u[i0] - v[j]
                    if cur < minv[j]:
                        minv[j] = cur
                        way[j] = j0
                    if minv[j] < delta:
                        delta = minv[j]
                        j1 = j
            for j in range(n + 1):
                if used[j]:
                    u[p[j]] += delta
                    v[j] -= delta
                else:
                    minv[j] -= delta
            j0 = j1
            if p[j0] == 0:
                break
        while True:
            j1 = way[j0]
            p[j0] = p[j1]
            j0 = j1
            if j0 == 0:
                break
    col = np.empty(n, dtype=np.int64)
    for j in range(1, n + 1):
        col[p[j] - 1] = j - 1
    return col, u, v


def _assign_numpy(a):
    n = a.shape[0]
    u = np.zeros(n + 1)
    v = np.zeros(n + 1)
    p = np.zeros(n + 1, dtype=np.int64)
    way = np.zeros(n + 1, dtype=np.int64)
    for i in range(1, n + 1):
        p[0] = i
        j0 = 0
        minv = np.full(n + 1, np.inf)
        used = np.zeros(n + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = p[j0]
            free = ~used[1:]
            cur = a[i0 - 1] - u[i0] - v[1:]
            upd = free & (cur < minv[1:])
            minv[1:][upd] = cur[upd]
            way[1:][upd] = j0
            masked = np.where(free, minv[1:], np.inf)
            j1 = int(np.argmin(masked)) + 1
            delta = masked[j1 - 1]
            u[p[used]] += delta
            v[used] -= delta
            minv[~used] -= delta
            j0 = j1
            if p[j0] == 0:
                break
        while True:
            j1 = way[j0]
            p[j0] = p[j1]
            j0 = j1
            if j0 == 0:
                break
    col = np.empty(n, dtype=np.int64)
    col[p[1:] - 1] = np.arange(n)
    return col, u, v


def _lex_refine(a, u, v, col, tol):
    # Any optimal assignment uses only edges that are tight under the final
    # potentials, so walk rows in order and move each one to its smallest
    # tight column reachable by an alternating path over unfixed rows.
    n = a.shape[0]
    row = np.empty(n, dtype=np.int64)
    for i in range(n):
        row[col[i]] = i
    tight = np.empty((n, n), dtype=np.bool_)
    for i in range(n):
        for j in range(n):
            tight[i, j] = a[i, j] - u[i + 1] - v[j + 1] <= tol
        tight[i, col[i]] = True
    fixed = np.zeros(n, dtype=np.bool_)
    seen = np.zeros(n, dtype=np.bool_)
    via = np.empty(n, dtype=np.int64)
    queue = np.empty(n, dtype=np.int64)
    for r in range(n):
        target = col[r]
        for c in range(target):
            if not tight[r, c]:
                continue
            s = row[c]
            if fixed[s]:
                continue
            seen[:] = False
            seen[c] = True
            head = 0
            tail = 1
            queue[0] = s
            found = False
            while head < tail and not found:
                x = queue[head]
                head += 1
                for y in range(n):
                    if seen[y] or not tight[x, y]:
                        continue
                    if y == target:
                        via[y] = x
                        found = True
                        break
                    x2 = row[y]
                    if fixed[x2] or x2 == r:
                        continue
                    seen[y] = True
                    via[y] = x
                    queue[tail] = x2
                    tail += 1
            if found:
                y = target
                while True:
                    x = via[y]
                    old = col[x]
                    col[x] = y
                    row[y] = x
                    if x == s:
                        break
                    y = old
                col[r] = c
                row[c] = r
                break
        fixed[r] = True
    return col


_lex_refine_nb = njit(cache=True, nogil=True)(_lex_refine)


def assign_square(a, tol):
    """Minimum-cost perfect assignment of a square matrix.

    Returns ``col`` with ``col[i]`` the column assigned to row ``i``. Among
    optimal assignments the lexicographically smallest ``col`` is returned,
    treating reduced costs within ``tol`` of zero as ties.
    """
    a = np.ascontiguousarray(a, dtype=np.float64)
    if a.shape[0] == 0:
        return np.empty(0, dtype=np.int64)
    if use_numba():
        col, u, v = _assign_nb(a)
        return _lex_refine_nb(a, u, v, col, tol)
    col, u, v = _assign_numpy(a)
    return _lex_refine(a, u, v, col, tol)


# ---------------------------------------------------------------------------
# Pair counting for contingency tables
# ---------------------------------------------------------------------------


@njit(cache=True, nogil=True)
def _pair_counts_nb(codes, size):
    cnt = np.zeros(size, dtype=np.int64)
    for c in codes:
        cnt[c] += 1
    m = 0
    for c in range(size):
        if cnt[c]:
            m += 1
    uniq = np.empty(m, dtype=np.int64)
    out = np.empty(m, dtype=np.int64)
    m = 0
    for c in range(size):
        if cnt[c]:
            uniq[m] = c
            out[m] = cnt[c]
            m += 1
    return uniq, out


def pair_counts(a, b):
    """Distinct ``(a[i], b[i])`` pairs with multiplicities, sorted by (a, b)."""
    a = np.asarray(a, dtype=np.int64)
    b = np.asarray(b, dtype=np.int64)
    if a.size == 0:
        e = np.empty(0, dtype=np.int64)
        return e, e.copy(), e.copy()
    if a.min() < 0 or b.min() < 0:
        raise ValueError("pair_counts expects non-negative ids")
    base = int(b.max()) + 1
    codes = a * base + b
    size = (int(a.max()) + 1) * base
    # a dense histogram beats sorting while the code range stays small
    if use_numba() and size <= 4 * codes.size + (1 << 16):
        uniq, cnt = _pair_counts_nb(codes, size)
    else:
        uniq, cnt = np.unique(codes, return_counts=True)
    return uniq // base, uniq % base, cnt


# ---------------------------------------------------------------------------
# BEV box collision
# ---------------------------------------------------------------------------


@njit(cache=True, nogil=True)
def _any_overlap_nb(boxes, box):
    for k in range(boxes.shape[0]):
        if (
            boxes[k, 0] <= box[1]
            and box[0] <= boxes[k, 1]
            and boxes[k, 2] <= box[3]
            and box[2] <= boxes[k, 3]
        ):
            return True
    return False


def any_overlap(boxes, box):
    """True if ``box`` touches or overlaps any row of ``boxes`` (x0, x1, y0, y1)."""
    boxes = np.ascontiguousarray(boxes, dtype=np.float64).reshape(-1, 4)
    box = np.ascontiguousarray(box, dtype=np.float64)
    if boxes.shape[0] == 0:
        return False
    if use_numba():
        return bool(_any_overlap_nb(boxes, box))
    hit = (
        (boxes[:, 0] <= box[1])
        & (box[0] <= boxes[:, 1])
        & (boxes[:, 2] <= box[3])
        & (box[2] <= boxes[:, 3])
    )
    return bool(hit.any())
