"""Hot numeric kernels.

Each kernel has a numba path (``jit``) and a numpy path. For the geometry
kernels the numpy path is the same source run by the interpreter, plus a
batch-vectorized BEV clipper; the assignment solver has a separate
vectorized implementation with identical tie-breaking.

Box parameter rows are ``(x, y, z, h, w, l, yaw)`` in KITTI camera
coordinates: y points down and ``(x, y, z)`` is the bottom-face center.
"""

import numpy as np

from ._accel import USE_NUMBA, jit

AREA_EPS = 1e-12


@jit
def bev_corners(x, z, w, l, yaw):
    """Footprint corners in the x-z plane, counter-clockwise, shape (4, 2)."""
    c = np.cos(yaw)
    s = np.sin(yaw)
    out = np.empty((4, 2))
    lx = (0.5 * l, -0.5 * l, -0.5 * l, 0.5 * l)
    wz = (0.5 * w, 0.5 * w, -0.5 * w, -0.5 * w)
    for k in range(4):
        out[k, 0] = x + c * lx[k] + s * wz[k]
        out[k, 1] = z - s * lx[k] + c * wz[k]
    return out


@jit
def polygon_area(px, pz, n):
    acc = 0.0
    for k in range(n):
        j = (k + 1) % n
        acc += px[k] * pz[j] - px[j] * pz[k]
    return 0.5 * acc


@jit
def convex_clip_area(subject, clip):
    """Area of the intersection of two convex CCW quadrilaterals.

    Sutherland-Hodgman: clip ``subject`` successively against each edge of
    ``clip``. Two convex quads intersect in at most 8 vertices.
    """
    sx = np.empty(16)
    sz = np.empty(16)
    tx = np.empty(16)
    tz = np.empty(16)
    n = 4
    for k in range(4):
        sx[k] = subject[k, 0]
        sz[k] = subject[k, 1]
    for e in range(4):
        ax = clip[e, 0]
        az = clip[e, 1]
        ex = clip[(e + 1) % 4, 0] - ax
        ez = clip[(e + 1) % 4, 1] - az
        m = 0
        for k in range(n):
            px = sx[k - 1] if k > 0 else sx[n - 1]
            pz = sz[k - 1] if k > 0 else sz[n - 1]
            cx = sx[k]
            cz = sz[k]
            dp = ex * (pz - az) - ez * (px - ax)
            dc = ex * (cz - az) - ez * (cx - ax)
            if dc >= 0.0:
                if dp < 0.0:
                    t = dp / (dp - dc)
                    tx[m] = px + t * (cx - px)
                    tz[m] = pz + t * (cz - pz)
                    m += 1
                tx[m] = cx
                tz[m] = cz
                m += 1
            elif dp >= 0.0:
                t = dp / (dp - dc)
                tx[m] = px + t * (cx - px)
                tz[m] = pz + t * (cz - pz)
                m += 1
        if m < 3:
            return 0.0
        for k in range(m):
            sx[k] = tx[k]
            sz[k] = tz[k]
        n = m
    area = polygon_area(sx, sz, n)
    if area < AREA_EPS:
        return 0.0
    return area


@jit
def _lex_greater(a, b):
    for k in range(a.shape[0]):
        if a[k] > b[k]:
            return True
        if a[k] < b[k]:
            return False
    return False


@jit
def iou3d_params(a, b):
    """Volume IoU of two boxes given as 7-parameter rows."""
    # canonical argument order makes the result exactly symmetric
    if _lex_greater(a, b):
        a, b = b, a
    top = max(a[1] - a[3], b[1] - b[3])
    bottom = min(a[1], b[1])
    h_overlap = bottom - top
    if h_overlap <= 0.0:
        return 0.0
    pa = bev_corners(a[0], a[2], a[4], a[5], a[6])
    pb = bev_corners(b[0], b[2], b[4], b[5], b[6])
    inter = convex_clip_area(pa, pb) * h_overlap
    union = a[3] * a[4] * a[5] + b[3] * b[4] * b[5] - inter
    if union <= 0.0 or inter <= 0.0:
        return 0.0
    r = inter / union
    return min(max(r, 0.0), 1.0)


@jit
def iou3d_matrix_kernel(A, B):
    n = A.shape[0]
    m = B.shape[0]
    out = np.zeros((n, m))
    for i in range(n):
        for j in range(m):
            out[i, j] = iou3d_params(A[i], B[j])
    return out


@jit
def iou2d_matrix_kernel(A, B):
    n = A.shape[0]
    m = B.shape[0]
    out = np.zeros((n, m))
    for i in range(n):
        area_a = (A[i, 2] - A[i, 0]) * (A[i, 3] - A[i, 1])
        for j in range(m):
            iw = min(A[i, 2], B[j, 2]) - max(A[i, 0], B[j, 0])
            ih = min(A[i, 3], B[j, 3]) - max(A[i, 1], B[j, 1])
            if iw <= 0.0 or ih <= 0.0:
                continue
            inter = iw * ih
            union = area_a + (B[j, 2] - B[j, 0]) * (B[j, 3] - B[j, 1]) - inter
            if union > 0.0:
                out[i, j] = inter / union
    return out


def iou2d_matrix_numpy(A, B):
    A = np.asarray(A, dtype=np.float64).reshape(-1, 4)
    B = np.asarray(B, dtype=np.float64).reshape(-1, 4)
    iw = np.minimum(A[:, None, 2], B[None, :, 2]) - np.maximum(A[:, None, 0], B[None, :, 0])
    ih = np.minimum(A[:, None, 3], B[None, :, 3]) - np.maximum(A[:, None, 1], B[None, :, 1])
    inter = np.where((iw > 0) & (ih > 0), iw * ih, 0.0)
    area_a = (A[:, 2] - A[:, 0]) * (A[:, 3] - A[:, 1])
    area_b = (B[:, 2] - B[:, 0]) * (B[:, 3] - B[:, 1])
    union = area_a[:, None] + area_b[None, :] - inter
    with np.errstate(invalid="ignore", divide="ignore"):
        out = np.where((inter > 0) & (union > 0), inter / np.where(union > 0, union, 1.0), 0.0)
    return out


def _bev_corners_batch(P):
    c = np.cos(P[:, 6])
    s = np.sin(P[:, 6])
    lx = np.array([0.5, -0.5, -0.5, 0.5])[None, :] * P[:, 5:6]
    wz = np.array([0.5, 0.5, -0.5, -0.5])[None, :] * P[:, 4:5]
    xs = P[:, 0:1] + c[:, None] * lx + s[:, None] * wz
    zs = P[:, 2:3] - s[:, None] * lx + c[:, None] * wz
    return xs, zs


def clip_area_batch(sub_x, sub_z, clip_x, clip_z):
    """Vectorized Sutherland-Hodgman over a batch of quad pairs, shape (P, 4)."""
    P = sub_x.shape[0]
    cap = 16
    sx = np.zeros((P, cap))
    sz = np.zeros((P, cap))
    sx[:, :4] = sub_x
    sz[:, :4] = sub_z
    n = np.full(P, 4)
    rows = np.arange(P)
    for e in range(4):
        ax = clip_x[:, e]
        az = clip_z[:, e]
        ex = clip_x[:, (e + 1) % 4] - ax
        ez = clip_z[:, (e + 1) % 4] - az
        tx = np.zeros((P, cap))
        tz = np.zeros((P, cap))
        m = np.zeros(P, dtype=np.int64)
        for k in range(int(n.max(initial=0))):
            live = k < n
            prev = np.where(k > 0, k - 1, n - 1)
            px = sx[rows, prev]
            pz = sz[rows, prev]
            cx = sx[:, k]
            cz = sz[:, k]
            dp = ex * (pz - az) - ez * (px - ax)
            dc = ex * (cz - az) - ez * (cx - ax)
            cur_in = dc >= 0.0
            prev_in = dp >= 0.0
            cross = live & (cur_in != prev_in)
            with np.errstate(invalid="ignore", divide="ignore"):
                t = np.where(cross, dp / np.where(cross, dp - dc, 1.0), 0.0)
            ix = px + t * (cx - px)
            iz = pz + t * (cz - pz)
            # crossing point first, then the current vertex if inside
            w = np.nonzero(cross)[0]
            tx[w, m[w]] = ix[w]
            tz[w, m[w]] = iz[w]
            m[w] += 1
            w = np.nonzero(live & cur_in)[0]
            tx[w, m[w]] = cx[w]
            tz[w, m[w]] = cz[w]
            m[w] += 1
        sx, sz, n = tx, tz, np.where(m < 3, 0, m)
    nxt = (np.arange(cap)[None, :] + 1) % np.maximum(n, 1)[:, None]
    valid = np.arange(cap)[None, :] < n[:, None]
    terms = sx * sz[rows[:, None], nxt] - sx[rows[:, None], nxt] * sz
    area = 0.5 * np.where(valid, terms, 0.0).sum(axis=1)
    return np.where(area < AREA_EPS, 0.0, area)


def iou3d_matrix_numpy(A, B):
    A = np.asarray(A, dtype=np.float64).reshape(-1, 7)
    B = np.asarray(B, dtype=np.float64).reshape(-1, 7)
    n, m = A.shape[0], B.shape[0]
    out = np.zeros((n, m))
    if n == 0 or m == 0:
        return out
    ii, jj = np.meshgrid(np.arange(n), np.arange(m), indexing="ij")
    Pa = A[ii.ravel()]
    Pb = B[jj.ravel()]
    # same canonical order as the scalar kernel
    swap = np.zeros(Pa.shape[0], dtype=bool)
    decided = np.zeros(Pa.shape[0], dtype=bool)
    for k in range(7):
        gt = ~decided & (Pa[:, k] > Pb[:, k])
        lt = ~decided & (Pa[:, k] < Pb[:, k])
        swap |= gt
        decided |= gt | lt
    Pa, Pb = np.where(swap[:, None], Pb, Pa), np.where(swap[:, None], Pa, Pb)
    top = np.maximum(Pa[:, 1] - Pa[:, 3], Pb[:, 1] - Pb[:, 3])
    bottom = np.minimum(Pa[:, 1], Pb[:, 1])
    h_overlap = bottom - top
    ax, az = _bev_corners_batch(Pa)
    bx, bz = _bev_corners_batch(Pb)
    area = clip_area_batch(ax, az, bx, bz)
    inter = area * np.maximum(h_overlap, 0.0)
    union = Pa[:, 3] * Pa[:, 4] * Pa[:, 5] + Pb[:, 3] * Pb[:, 4] * Pb[:, 5] - inter
    ok = (h_overlap > 0) & (inter > 0) & (union > 0)
    with np.errstate(invalid="ignore", divide="ignore"):
        r = np.where(ok, inter / np.where(union > 0, union, 1.0), 0.0)
    return np.clip(r, 0.0, 1.0).reshape(n, m)


# ---------------------------------------------------------------------------
# Rectangular linear assignment, shortest augmenting path with dual updates.
#
# Rows are inserted in ascending order. While growing a path the next column
# is the one with the smallest tentative distance; among equal distances an
# unassigned column is preferred, and otherwise the lowest column index.
# Both implementations below follow this rule exactly.
# ---------------------------------------------------------------------------


@jit
def lap_kernel(cost):
    """Solve a rows <= cols assignment; returns the column for every row."""
    n = cost.shape[0]
    m = cost.shape[1]
    u = np.zeros(n)
    v = np.zeros(m)
    col4row = np.full(n, -1, dtype=np.int64)
    row4col = np.full(m, -1, dtype=np.int64)
    path = np.full(m, -1, dtype=np.int64)
    shortest = np.empty(m)
    seen_rows = np.zeros(n, dtype=np.bool_)
    seen_cols = np.zeros(m, dtype=np.bool_)
    for cur in range(n):
        shortest[:] = np.inf
        path[:] = -1
        seen_rows[:] = False
        seen_cols[:] = False
        min_val = 0.0
        i = cur
        sink = -1
        while sink == -1:
            seen_rows[i] = True
            lowest = np.inf
            index = -1
            for j in range(m):
                if seen_cols[j]:
                    continue
                r = min_val + cost[i, j] - u[i] - v[j]
                if r < shortest[j]:
                    path[j] = i
                    shortest[j] = r
                if index == -1 or shortest[j] < lowest:
                    lowest = shortest[j]
                    index = j
                elif shortest[j] == lowest and row4col[j] == -1 and row4col[index] != -1:
                    index = j
            if lowest == np.inf:
                return col4row
            min_val = lowest
            seen_cols[index] = True
            if row4col[index] == -1:
                sink = index
            else:
                i = row4col[index]
        u[cur] += min_val
        for r_ in range(n):
            if seen_rows[r_] and r_ != cur:
                u[r_] += min_val - shortest[col4row[r_]]
        for j in range(m):
            if seen_cols[j]:
                v[j] -= min_val - shortest[j]
        j = sink
        while True:
            i = path[j]
            row4col[j] = i
            nxt = col4row[i]
            col4row[i] = j
            j = nxt
            if i == cur:
                break
    return col4row


def lap_numpy(cost):
    """Vectorized twin of :func:`lap_kernel` (same algorithm and tie rules)."""
    cost = np.asarray(cost, dtype=np.float64)
    n, m = cost.shape
    u = np.zeros(n)
    v = np.zeros(m)
    col4row = np.full(n, -1, dtype=np.int64)
    row4col = np.full(m, -1, dtype=np.int64)
    for cur in range(n):
        shortest = np.full(m, np.inf)
        path = np.full(m, -1, dtype=np.int64)
        seen_rows = np.zeros(n, dtype=bool)
        seen_cols = np.zeros(m, dtype=bool)
        min_val = 0.0
        i = cur
        sink = -1
        while sink == -1:
            seen_rows[i] = True
            open_ = ~seen_cols
            r = min_val + cost[i] - u[i] - v
            upd = open_ & (r < shortest)
            path[upd] = i
            shortest[upd] = r[upd]
            cand = np.where(open_, shortest, np.inf)
            lowest = cand.min()
            if lowest == np.inf:
                return col4row
            ties = np.flatnonzero(open_ & (cand == lowest))
            free = ties[row4col[ties] == -1]
            index = int(free[0]) if free.size else int(ties[0])
            min_val = lowest
            seen_cols[index] = True
            if row4col[index] == -1:
                sink = index
            else:
                i = int(row4col[index])
        u[cur] += min_val
        others = seen_rows.copy()
        others[cur] = False
        idx = np.flatnonzero(others)
        u[idx] += min_val - shortest[col4row[idx]]
        v[seen_cols] -= min_val - shortest[seen_cols]
        j = sink
        while True:
            i = int(path[j])
            row4col[j] = i
            col4row[i], j = j, int(col4row[i])
            if i == cur:
                break
    return col4row


if USE_NUMBA:
    iou3d_matrix = iou3d_matrix_kernel
    iou2d_matrix = iou2d_matrix_kernel
    lap_solve = lap_kernel
else:
    iou3d_matrix = iou3d_matrix_numpy
    iou2d_matrix = iou2d_matrix_numpy
    lap_solve = lap_numpy
