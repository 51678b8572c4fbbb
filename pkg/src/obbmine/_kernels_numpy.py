"""Pure-numpy implementations of the rotated-box geometry kernels.

Fallback backend used when OBBMINE_BACKEND=numpy or when numba is not
installed. The clipping algorithm mirrors _kernels_numba step for step
(same edge order, same emission order, same intersection formula), run
batched over pairs instead of in scalar loops.
"""

import numpy as np

_AREA_EPS = 1e-9
_EDGE_EPS = 1e-9
# A convex quad clipped by 4 half-planes gains at most ~2 vertices per clip;
# 24 slots is double the theoretical 12-vertex worst case.
_BUF = 24
_CHUNK = 32768


def corners_of(boxes):
    """Counter-clockwise corner coordinates, (N,5) -> (N,4,2)."""
    cx = boxes[:, 0]
    cy = boxes[:, 1]
    hw = 0.5 * boxes[:, 2]
    hh = 0.5 * boxes[:, 3]
    c = np.cos(boxes[:, 4])
    s = np.sin(boxes[:, 4])
    out = np.empty((boxes.shape[0], 4, 2), dtype=np.float64)
    out[:, 0, 0] = cx - hw * c + hh * s
    out[:, 0, 1] = cy - hw * s - hh * c
    out[:, 1, 0] = cx + hw * c + hh * s
    out[:, 1, 1] = cy + hw * s - hh * c
    out[:, 2, 0] = cx + hw * c - hh * s
    out[:, 2, 1] = cy + hw * s + hh * c
    out[:, 3, 0] = cx - hw * c - hh * s
    out[:, 3, 1] = cy - hw * s + hh * c
    return out


def _clip_areas(ca, cb):
    """Intersection areas of paired convex CCW quads, (N,4,2) x (N,4,2) -> (N,)."""
    n = ca.shape[0]
    if n == 0:
        return np.zeros(0, dtype=np.float64)
    xs = np.zeros((n, _BUF), dtype=np.float64)
    ys = np.zeros((n, _BUF), dtype=np.float64)
    xs[:, :4] = ca[:, :, 0]
    ys[:, :4] = ca[:, :, 1]
    cnt = np.full(n, 4, dtype=np.int64)
    slot = np.arange(_BUF)[None, :]
    for e in range(4):
        x1 = cb[:, e, 0][:, None]
        y1 = cb[:, e, 1][:, None]
        x2 = cb[:, (e + 1) % 4, 0][:, None]
        y2 = cb[:, (e + 1) % 4, 1][:, None]
        ex = x2 - x1
        ey = y2 - y1
        d = ex * (ys - y1) - ey * (xs - x1)
        valid = slot < cnt[:, None]
        prev = np.where(slot == 0, cnt[:, None] - 1, slot - 1)
        prev = np.clip(prev, 0, _BUF - 1)
        sx = np.take_along_axis(xs, prev, axis=1)
        sy = np.take_along_axis(ys, prev, axis=1)
        ds = np.take_along_axis(d, prev, axis=1)
        t_in = d >= 0.0
        s_in = ds >= 0.0
        crossing = t_in != s_in
        denom = ds - d
        with np.errstate(divide="ignore", invalid="ignore"):
            tau = np.where(crossing, ds / np.where(denom == 0.0, 1.0, denom), 0.0)
        ix = sx + tau * (xs - sx)
        iy = sy + tau * (ys - sy)
        # Emission order matches the scalar algorithm: the edge-line
        # intersection (if the segment crosses) precedes the vertex itself.
        candx = np.empty((n, 2 * _BUF), dtype=np.float64)
        candy = np.empty((n, 2 * _BUF), dtype=np.float64)
        emit = np.zeros((n, 2 * _BUF), dtype=bool)
        candx[:, 0::2] = ix
        candy[:, 0::2] = iy
        candx[:, 1::2] = xs
        candy[:, 1::2] = ys
        emit[:, 0::2] = crossing & valid
        emit[:, 1::2] = t_in & valid
        pos = np.cumsum(emit, axis=1) - 1
        cnt = emit.sum(axis=1)
        rows, cols = np.nonzero(emit)
        xs = np.zeros((n, _BUF), dtype=np.float64)
        ys = np.zeros((n, _BUF), dtype=np.float64)
        xs[rows, pos[rows, cols]] = candx[rows, cols]
        ys[rows, pos[rows, cols]] = candy[rows, cols]
        if not cnt.any():
            break
    valid = slot < cnt[:, None]
    nxt = np.where(slot + 1 >= cnt[:, None], 0, slot + 1)
    nxt = np.clip(nxt, 0, _BUF - 1)
    xn = np.take_along_axis(xs, nxt, axis=1)
    yn = np.take_along_axis(ys, nxt, axis=1)
    terms = np.where(valid, xs * yn - xn * ys, 0.0)
    area = 0.5 * terms.sum(axis=1)
    area[(cnt < 3) | (area < _AREA_EPS)] = 0.0
    return area


def _iou_from_corners(boxes_a, boxes_b, ca, cb):
    inter = _clip_areas(ca, cb)
    union = boxes_a[:, 2] * boxes_a[:, 3] + boxes_b[:, 2] * boxes_b[:, 3] - inter
    good = (inter > 0.0) & (union > 0.0)
    iou = np.zeros(boxes_a.shape[0], dtype=np.float64)
    iou[good] = inter[good] / union[good]
    np.minimum(iou, 1.0, out=iou)
    return iou


def iou_pairs(boxes_a, boxes_b):
    """Elementwise IoU of paired boxes, (N,5) x (N,5) -> (N,)."""
    if boxes_a.shape[0] == 0:
        return np.zeros(0, dtype=np.float64)
    return _iou_from_corners(boxes_a, boxes_b, corners_of(boxes_a), corners_of(boxes_b))


def iou_matrix(boxes_a, boxes_b):
    """Full IoU matrix, (N,5) x (M,5) -> (N,M), computed in flat chunks."""
    n = boxes_a.shape[0]
    m = boxes_b.shape[0]
    out = np.zeros((n, m), dtype=np.float64)
    if n == 0 or m == 0:
        return out
    ca = corners_of(boxes_a)
    cb = corners_of(boxes_b)
    flat = out.reshape(-1)
    total = n * m
    for lo in range(0, total, _CHUNK):
        hi = min(lo + _CHUNK, total)
        idx = np.arange(lo, hi)
        ia = idx // m
        ib = idx % m
        flat[lo:hi] = _iou_from_corners(boxes_a[ia], boxes_b[ib], ca[ia], cb[ib])
    return out


def points_in_box(px, py, box):
    """Inclusive membership test of points against one box, with a 1e-9
    boundary slack so exactly-on-edge pixel centers land inside."""
    c = np.cos(box[4])
    s = np.sin(box[4])
    hw = 0.5 * box[2] + _EDGE_EPS
    hh = 0.5 * box[3] + _EDGE_EPS
    dx = px - box[0]
    dy = py - box[1]
    u = dx * c + dy * s
    v = -dx * s + dy * c
    return (np.abs(u) <= hw) & (np.abs(v) <= hh)


def _in_box_raw(x, y, cx, cy, hw, hh, c, s):
    dx = x - cx
    dy = y - cy
    u = dx * c + dy * s
    v = -dx * s + dy * c
    return (np.abs(u) <= hw) & (np.abs(v) <= hh)


def mc_iou_pairs(boxes_a, boxes_b, u, v):
    """Monte-Carlo IoU estimate per pair from shared sample coordinates.

    Mirrors the numba kernel: samples in [0,1) are mapped onto each pair's
    joint AABB and IoU is estimated as hits(a and b) / hits(a or b).
    """
    n = boxes_a.shape[0]
    out = np.empty(n, dtype=np.float64)
    for i in range(n):
        acx, acy = boxes_a[i, 0], boxes_a[i, 1]
        ahw, ahh = 0.5 * boxes_a[i, 2], 0.5 * boxes_a[i, 3]
        ac, as_ = np.cos(boxes_a[i, 4]), np.sin(boxes_a[i, 4])
        bcx, bcy = boxes_b[i, 0], boxes_b[i, 1]
        bhw, bhh = 0.5 * boxes_b[i, 2], 0.5 * boxes_b[i, 3]
        bc, bs = np.cos(boxes_b[i, 4]), np.sin(boxes_b[i, 4])
        aex = ahw * np.abs(ac) + ahh * np.abs(as_)
        aey = ahw * np.abs(as_) + ahh * np.abs(ac)
        bex = bhw * np.abs(bc) + bhh * np.abs(bs)
        bey = bhw * np.abs(bs) + bhh * np.abs(bc)
        xmin = min(acx - aex, bcx - bex)
        xmax = max(acx + aex, bcx + bex)
        ymin = min(acy - aey, bcy - bey)
        ymax = max(acy + aey, bcy + bey)
        x = xmin + (xmax - xmin) * u
        y = ymin + (ymax - ymin) * v
        in_a = _in_box_raw(x, y, acx, acy, ahw, ahh, ac, as_)
        in_b = _in_box_raw(x, y, bcx, bcy, bhw, bhh, bc, bs)
        n_both = int(np.count_nonzero(in_a & in_b))
        n_either = int(np.count_nonzero(in_a | in_b))
        out[i] = n_both / n_either if n_either > 0 else 0.0
    return out


def nms_keep(boxes, thr):
    """Greedy suppression over boxes already sorted by descending score.
    Returns the survivor mask; overlaps strictly above thr are suppressed."""
    n = boxes.shape[0]
    corners = corners_of(boxes)
    alive = np.ones(n, dtype=bool)
    for i in range(n):
        if not alive[i]:
            continue
        rest = np.nonzero(alive[i + 1:])[0] + i + 1
        if rest.size == 0:
            continue
        reps = np.full(rest.size, i)
        ious = _iou_from_corners(boxes[reps], boxes[rest], corners[reps], corners[rest])
        alive[rest[ious > thr]] = False
    return alive
