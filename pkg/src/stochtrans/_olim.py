"""Compiled kernel for the ordered line-integral quasipotential solver.

Dijkstra-like ordered solve on a rectangular grid: the node holding the
reference attractor starts at zero; the smallest-valued considered node is
accepted repeatedly, and every non-accepted node within the update radius
K*h of a newly accepted node receives candidate values through straight
line segments.  A candidate is the interpolated value on a simplex edge
formed by the new node and one of its accepted 8-neighbors, plus the
midpoint-rule geometric action of the segment to the target node; the
position on the edge is optimized by golden-section search.  One-point
updates (from the accepted node itself) seed fresh nodes; the simplex
refinement runs whenever the one-point candidate is competitive.
"""

from __future__ import annotations

import numpy as np
from numba import njit

from ._kernels import _drift2

UNKNOWN = 0
CONSIDERED = 1
ACCEPTED = 2

QI_IDENTITY = 0
QI_CONST_DIAG = 1
QI_STATE_DIAG = 2  # covariance diag(x, y)

_GOLD = 0.5 * (np.sqrt(5.0) - 1.0)


@njit(cache=True, inline="always")
def _qinv2(qcode: int, qp, x: float, y: float) -> tuple:
    if qcode == QI_IDENTITY:
        return 1.0, 1.0
    if qcode == QI_CONST_DIAG:
        return 1.0 / qp[0], 1.0 / qp[1]
    return 1.0 / x, 1.0 / y  # diag(x, y); caller guarantees positivity


@njit(cache=True, inline="always")
def _seg_action(code, p, qcode, qp, ax, ay, bx, by) -> float:
    """Midpoint-rule geometric action of the straight segment a -> b."""
    mx = 0.5 * (ax + bx)
    my = 0.5 * (ay + by)
    fx, fy = _drift2(code, p, mx, my)
    w1, w2 = _qinv2(qcode, qp, mx, my)
    dx = bx - ax
    dy = by - ay
    nd2 = dx * dx * w1 + dy * dy * w2
    nb2 = fx * fx * w1 + fy * fy * w2
    val = np.sqrt(nd2 * nb2) - (dx * fx * w1 + dy * fy * w2)
    return val if val > 0.0 else 0.0


@njit(cache=True, inline="always")
def _edge_value(code, p, qcode, qp, zx, zy, vz, ex, ey, ve, yx, yy, t) -> float:
    ax = zx + t * (ex - zx)
    ay = zy + t * (ey - zy)
    return (1.0 - t) * vz + t * ve + _seg_action(code, p, qcode, qp, ax, ay, yx, yy)


@njit(cache=True)
def _golden_min(code, p, qcode, qp, zx, zy, vz, ex, ey, ve, yx, yy, tol) -> float:
    """Golden-section minimum of the edge-interpolated candidate over t in [0,1]."""
    a, b = 0.0, 1.0
    c = b - _GOLD * (b - a)
    d = a + _GOLD * (b - a)
    fc = _edge_value(code, p, qcode, qp, zx, zy, vz, ex, ey, ve, yx, yy, c)
    fd = _edge_value(code, p, qcode, qp, zx, zy, vz, ex, ey, ve, yx, yy, d)
    while b - a > tol:
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - _GOLD * (b - a)
            fc = _edge_value(code, p, qcode, qp, zx, zy, vz, ex, ey, ve, yx, yy, c)
        else:
            a, c, fc = c, d, fd
            d = a + _GOLD * (b - a)
            fd = _edge_value(code, p, qcode, qp, zx, zy, vz, ex, ey, ve, yx, yy, d)
    t = 0.5 * (a + b)
    return _edge_value(code, p, qcode, qp, zx, zy, vz, ex, ey, ve, yx, yy, t)


@njit(cache=True, nogil=True)
def olim_solve(
    code, p, qcode, qp,
    x0, y0, hx, hy, nx, ny,
    src_i, src_j,
    offs_i, offs_j,
    triangle_margin, golden_tol,
):
    """Ordered solve; returns (values, status, accept_log, n_accepted)."""
    n = nx * ny
    values = np.full(n, np.inf)
    status = np.zeros(n, dtype=np.int8)
    accept_log = np.empty(n, dtype=np.float64)
    n_acc = 0

    cap = 8 * n
    heap_v = np.empty(cap, dtype=np.float64)
    heap_i = np.empty(cap, dtype=np.int64)
    hs = 0

    src = src_i * ny + src_j
    values[src] = 0.0
    heap_v[0] = 0.0
    heap_i[0] = src
    hs = 1
    status[src] = CONSIDERED

    nb8_i = np.array([-1, -1, -1, 0, 0, 1, 1, 1], dtype=np.int64)
    nb8_j = np.array([-1, 0, 1, -1, 1, -1, 0, 1], dtype=np.int64)

    while hs > 0:
        top_v = heap_v[0]
        top = heap_i[0]
        # pop
        hs -= 1
        heap_v[0] = heap_v[hs]
        heap_i[0] = heap_i[hs]
        k = 0
        while True:
            l = 2 * k + 1
            r = l + 1
            m = k
            if l < hs and heap_v[l] < heap_v[m]:
                m = l
            if r < hs and heap_v[r] < heap_v[m]:
                m = r
            if m == k:
                break
            heap_v[k], heap_v[m] = heap_v[m], heap_v[k]
            heap_i[k], heap_i[m] = heap_i[m], heap_i[k]
            k = m
        if status[top] == ACCEPTED or top_v > values[top] + 1e-12:
            continue  # stale heap entry
        status[top] = ACCEPTED
        accept_log[n_acc] = values[top]
        n_acc += 1

        zi = top // ny
        zj = top % ny
        zx = x0 + zi * hx
        zy = y0 + zj * hy
        vz = values[top]

        for t in range(offs_i.shape[0]):
            yi = zi + offs_i[t]
            yj = zj + offs_j[t]
            if yi < 0 or yi >= nx or yj < 0 or yj >= ny:
                continue
            yidx = yi * ny + yj
            if status[yidx] == ACCEPTED:
                continue
            vy = values[yidx]
            if vz >= vy:
                continue  # segment actions are non-negative
            yx = x0 + yi * hx
            yy = y0 + yj * hy
            s1 = vz + _seg_action(code, p, qcode, qp, zx, zy, yx, yy)
            best = s1 if s1 < vy else vy
            # refine through the accepted neighbors of z when competitive
            if s1 <= vy * (1.0 + triangle_margin) + 1e-300:
                for e in range(8):
                    ei = zi + nb8_i[e]
                    ej = zj + nb8_j[e]
                    if ei < 0 or ei >= nx or ej < 0 or ej >= ny:
                        continue
                    eidx = ei * ny + ej
                    if status[eidx] != ACCEPTED:
                        continue
                    cand = _golden_min(
                        code, p, qcode, qp,
                        zx, zy, vz,
                        x0 + ei * hx, y0 + ej * hy, values[eidx],
                        yx, yy, golden_tol,
                    )
                    if cand < best:
                        best = cand
            if best < vy - 1e-15:
                values[yidx] = best
                status[yidx] = CONSIDERED
                if hs >= cap:
                    # grow the heap storage
                    cap2 = 2 * cap
                    nhv = np.empty(cap2, dtype=np.float64)
                    nhi = np.empty(cap2, dtype=np.int64)
                    nhv[:hs] = heap_v[:hs]
                    nhi[:hs] = heap_i[:hs]
                    heap_v = nhv
                    heap_i = nhi
                    cap = cap2
                heap_v[hs] = best
                heap_i[hs] = yidx
                k = hs
                hs += 1
                while k > 0:
                    par = (k - 1) // 2
                    if heap_v[par] <= heap_v[k]:
                        break
                    heap_v[par], heap_v[k] = heap_v[k], heap_v[par]
                    heap_i[par], heap_i[k] = heap_i[k], heap_i[par]
                    k = par

    return values, status, accept_log[:n_acc], n_acc
