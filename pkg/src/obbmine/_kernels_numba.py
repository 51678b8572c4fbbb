"""Numba implementations of the rotated-box geometry kernels.

Compiled on first call; cache=True persists the compilation on disk so later
processes skip the warmup. The pure-numpy twin of this module is
_kernels_numpy; both expose the same functions and agree numerically.
"""

import numpy as np
from numba import njit

_AREA_EPS = 1e-9
_EDGE_EPS = 1e-9


@njit(cache=True, nogil=True)
def corners_of(boxes):
    """Counter-clockwise corner coordinates, (N,5) -> (N,4,2)."""
    n = boxes.shape[0]
    out = np.empty((n, 4, 2), dtype=np.float64)
    for i in range(n):
        cx = boxes[i, 0]
        cy = boxes[i, 1]
        hw = 0.5 * boxes[i, 2]
        hh = 0.5 * boxes[i, 3]
        c = np.cos(boxes[i, 4])
        s = np.sin(boxes[i, 4])
        out[i, 0, 0] = cx - hw * c + hh * s
        out[i, 0, 1] = cy - hw * s - hh * c
        out[i, 1, 0] = cx + hw * c + hh * s
        out[i, 1, 1] = cy + hw * s - hh * c
        out[i, 2, 0] = cx + hw * c - hh * s
        out[i, 2, 1] = cy + hw * s + hh * c
        out[i, 3, 0] = cx - hw * c - hh * s
        out[i, 3, 1] = cy - hw * s + hh * c
    return out


@njit(cache=True, nogil=True)
def _clip_area(ca, cb):
    """Area of the intersection of two convex CCW quads (Sutherland-Hodgman
    clip of `ca` against `cb`, then shoelace)."""
    px = np.empty(32, dtype=np.float64)
    py = np.empty(32, dtype=np.float64)
    qx = np.empty(32, dtype=np.float64)
    qy = np.empty(32, dtype=np.float64)
    n = 4
    for i in range(4):
        px[i] = ca[i, 0]
        py[i] = ca[i, 1]
    for e in range(4):
        if n == 0:
            break
        x1 = cb[e, 0]
        y1 = cb[e, 1]
        x2 = cb[(e + 1) % 4, 0]
        y2 = cb[(e + 1) % 4, 1]
        ex = x2 - x1
        ey = y2 - y1
        m = 0
        sx = px[n - 1]
        sy = py[n - 1]
        ds = ex * (sy - y1) - ey * (sx - x1)
        for j in range(n):
            tx = px[j]
            ty = py[j]
            dt = ex * (ty - y1) - ey * (tx - x1)
            if dt >= 0.0:
                if ds < 0.0:
                    tau = ds / (ds - dt)
                    qx[m] = sx + tau * (tx - sx)
                    qy[m] = sy + tau * (ty - sy)
                    m += 1
                qx[m] = tx
                qy[m] = ty
                m += 1
            elif ds >= 0.0:
                tau = ds / (ds - dt)
                qx[m] = sx + tau * (tx - sx)
                qy[m] = sy + tau * (ty - sy)
                m += 1
            sx = tx
            sy = ty
            ds = dt
        n = m
        for j in range(m):
            px[j] = qx[j]
            py[j] = qy[j]
    if n < 3:
        return 0.0
    area = 0.0
    for j in range(n):
        k = (j + 1) % n
        area += px[j] * py[k] - px[k] * py[j]
    area = 0.5 * area
    if area < _AREA_EPS:
        return 0.0
    return area


@njit(cache=True, nogil=True)
def _iou_one(box_a, box_b, ca, cb):
    inter = _clip_area(ca, cb)
    if inter <= 0.0:
        return 0.0
    union = box_a[2] * box_a[3] + box_b[2] * box_b[3] - inter
    if union <= 0.0:
        return 0.0
    iou = inter / union
    if iou > 1.0:
        iou = 1.0
    return iou


@njit(cache=True, nogil=True)
def iou_pairs(boxes_a, boxes_b):
    """Elementwise IoU of paired boxes, (N,5) x (N,5) -> (N,)."""
    n = boxes_a.shape[0]
    ca = corners_of(boxes_a)
    cb = corners_of(boxes_b)
    out = np.empty(n, dtype=np.float64)
    for i in range(n):
        out[i] = _iou_one(boxes_a[i], boxes_b[i], ca[i], cb[i])
    return out


@njit(cache=True, nogil=True)
def iou_matrix(boxes_a, boxes_b):
    """Full IoU matrix, (N,5) x (M,5) -> (N,M)."""
    n = boxes_a.shape[0]
    m = boxes_b.shape[0]
    ca = corners_of(boxes_a)
    cb = corners_of(boxes_b)
    out = np.empty((n, m), dtype=np.float64)
    for i in range(n):
        for j in range(m):
            out[i, j] = _iou_one(boxes_a[i], boxes_b[j], ca[i], cb[j])
    return out


@njit(cache=True, nogil=True)
def points_in_box(px, py, box):
    """Inclusive membership test of points against one box, with a 1e-9
    boundary slack so exactly-on-edge pixel centers land inside."""
    cx = box[0]
    cy = box[1]
    c = np.cos(box[4])
    s = np.sin(box[4])
    hw = 0.5 * box[2] + _EDGE_EPS
    hh = 0.5 * box[3] + _EDGE_EPS
    n = px.shape[0]
    out = np.empty(n, dtype=np.bool_)
    for i in range(n):
        dx = px[i] - cx
        dy = py[i] - cy
        u = dx * c + dy * s
        v = -dx * s + dy * c
        out[i] = (np.abs(u) <= hw) and (np.abs(v) <= hh)
    return out


@njit(cache=True, nogil=True)
def mc_iou_pairs(boxes_a, boxes_b, u, v):
    """Monte-Carlo IoU estimate per pair from shared sample coordinates.

    u, v are sample positions in [0,1) (stratified jitter supplied by the
    caller); each pair maps them onto the joint axis-aligned bounding box and
    estimates IoU as hits(a and b) / hits(a or b).
    """
    n = boxes_a.shape[0]
    ns = u.shape[0]
    out = np.empty(n, dtype=np.float64)
    for i in range(n):
        acx = boxes_a[i, 0]
        acy = boxes_a[i, 1]
        ahw = 0.5 * boxes_a[i, 2]
        ahh = 0.5 * boxes_a[i, 3]
        ac = np.cos(boxes_a[i, 4])
        as_ = np.sin(boxes_a[i, 4])
        bcx = boxes_b[i, 0]
        bcy = boxes_b[i, 1]
        bhw = 0.5 * boxes_b[i, 2]
        bhh = 0.5 * boxes_b[i, 3]
        bc = np.cos(boxes_b[i, 4])
        bs = np.sin(boxes_b[i, 4])
        aex = ahw * np.abs(ac) + ahh * np.abs(as_)
        aey = ahw * np.abs(as_) + ahh * np.abs(ac)
        bex = bhw * np.abs(bc) + bhh * np.abs(bs)
        bey = bhw * np.abs(bs) + bhh * np.abs(bc)
        xmin = min(acx - aex, bcx - bex)
        xmax = max(acx + aex, bcx + bex)
        ymin = min(acy - aey, bcy - bey)
        ymax = max(acy + aey, bcy + bey)
        wx = xmax - xmin
        wy = ymax - ymin
        n_both = 0
        n_either = 0
        for k in range(ns):
            x = xmin + wx * u[k]
            y = ymin + wy * v[k]
            dxa = x - acx
            dya = y - acy
            ua = dxa * ac + dya * as_
            va = -dxa * as_ + dya * ac
            in_a = (np.abs(ua) <= ahw) and (np.abs(va) <= ahh)
            dxb = x - bcx
            dyb = y - bcy
            ub = dxb * bc + dyb * bs
            vb = -dxb * bs + dyb * bc
            in_b = (np.abs(ub) <= bhw) and (np.abs(vb) <= bhh)
            if in_a and in_b:
                n_both += 1
            if in_a or in_b:
                n_either += 1
        if n_either > 0:
            out[i] = n_both / n_either
        else:
            out[i] = 0.0
    return out


@njit(cache=True, nogil=True)
def nms_keep(boxes, thr):
    """Greedy suppression over boxes already sorted by descending score.
    Returns the survivor mask; overlaps strictly above thr are suppressed."""
    n = boxes.shape[0]
    corners = corners_of(boxes)
    alive = np.ones(n, dtype=np.bool_)
    for i in range(n):
        if not alive[i]:
            continue
        for j in range(i + 1, n):
            if not alive[j]:
                continue
            if _iou_one(boxes[i], boxes[j], corners[i], corners[j]) > thr:
                alive[j] = False
    return alive
