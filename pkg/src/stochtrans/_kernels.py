"""Compiled kernels for the stochastic integrator and transition harvesting.

The harvesting state machine lives in a single nopython kernel so that the
waiting phase of rare transitions (the dominant cost) runs at a few tens of
nanoseconds per step.  Gaussian increments are pre-generated in chunks by
the caller, which keeps the random stream an explicit, reproducible input.

Boundary crossings are detected by exact segment-segment intersection
against the basin-boundary polyline, accelerated by a uniform spatial hash
over the polyline segments; only the 3x3 block of cells around the current
point needs scanning because the cell size exceeds the step length (a brute
scan covers the rare oversized step).
"""

from __future__ import annotations

import numpy as np
from numba import njit

Array = np.ndarray

# kernel_code values of the builtin models
KERNEL_FHN = 0
KERNEL_COMP = 1
KERNEL_COMP_T = 2
KERNEL_DW2D = 3
KERNEL_LIN2D = 4

# harvest_chunk status codes
NEED_NORMALS = 0
DONE = 1
HIT_OTHER = 2
PATH_OVERFLOW = 4

# float-state slots
_X, _Y, _T = 0, 1, 2
_CLOCK_T0 = 3  # start of the current attempt ("last L/R-reset")
_EXIT_T, _EXIT_X, _EXIT_Y = 4, 5, 6
_FE_T, _FE_X, _FE_Y, _FE_ARC = 7, 8, 9, 10  # first boundary exit since the reset
_LC_T, _LC_X, _LC_Y, _LC_ARC = 11, 12, 13, 14  # last crossing of the final path
_ENTRY_T, _ENTRY_X, _ENTRY_Y = 15, 16, 17
_REFLECTS = 18
NF = 19

# int-state slots
_RECORDING = 0
_N_CROSS = 1
_PATH_LEN = 2
_REC_STEPS = 3
_BRUTE = 4
_CROSS_OVF = 5
_STEPS = 6
_FE_SET = 7
NI = 8


@njit(cache=True, inline="always")
def _drift2(code: int, p: Array, x: float, y: float) -> tuple:
    if code == KERNEL_FHN:
        return (-(x * x * x) + x - y) / p[0], x - p[1] * y
    if code == KERNEL_COMP:
        fx = x * (x - p[0]) * (1.0 - x) - p[2] * x * y
        gy = p[4] * (y * (y - p[1]) * (1.0 - y) - p[3] * x * y)
        return fx, gy
    if code == KERNEL_COMP_T:
        u = x if x > p[6] else p[6]
        w = y if y > p[6] else p[6]
        xx = 0.25 * u * u
        yy = 0.25 * w * w
        fx = xx * (xx - p[0]) * (1.0 - xx) - p[2] * xx * yy
        gy = p[4] * (yy * (yy - p[1]) * (1.0 - yy) - p[3] * xx * yy)
        s2 = p[5] * p[5]
        return 2.0 * fx / u - 0.5 * s2 / u, 2.0 * gy / w - 0.5 * s2 / w
    if code == KERNEL_DW2D:
        return x - x * x * x, -y
    if code == KERNEL_LIN2D:
        return -p[0] * x, -p[1] * y
    return 0.0, 0.0


@njit(cache=True, inline="always")
def _ball_cross_frac(px, py, dx, dy, cx, cy, r2) -> float:
    """Smallest u in [0, 1] with |P + u D - C| = r, or -1 if none."""
    fx, fy = px - cx, py - cy
    a = dx * dx + dy * dy
    b = 2.0 * (fx * dx + fy * dy)
    c = fx * fx + fy * fy - r2
    disc = b * b - 4.0 * a * c
    if disc < 0.0 or a == 0.0:
        return -1.0
    rt = np.sqrt(disc)
    u1 = (-b - rt) / (2.0 * a)
    u2 = (-b + rt) / (2.0 * a)
    if 0.0 <= u1 <= 1.0:
        return u1
    if 0.0 <= u2 <= 1.0:
        return u2
    return -1.0


@njit(cache=True, inline="always")
def _collect_hits(
    px, py, qx, qy,
    bpts, seg_lo, seg_hi, cell_items,
    hit_u, hit_seg, hit_s, n,
):
    """Append intersections of step [P,Q] with the polyline segments listed
    in cell_items[seg_lo:seg_hi], deduplicating segments already seen (a
    segment may be registered in several hash cells).  Returns the new
    hit count; hits are left unsorted."""
    dx, dy = qx - px, qy - py
    cap = hit_u.shape[0]
    for k in range(seg_lo, seg_hi):
        j = cell_items[k]
        dup = False
        for m in range(n):
            if hit_seg[m] == j:
                dup = True
                break
        if dup:
            continue
        b1x, b1y = bpts[j, 0], bpts[j, 1]
        ex, ey = bpts[j + 1, 0] - b1x, bpts[j + 1, 1] - b1y
        denom = dx * ey - dy * ex
        if denom == 0.0:
            continue
        wx, wy = b1x - px, b1y - py
        u = (wx * ey - wy * ex) / denom
        s = (wx * dy - wy * dx) / denom
        if 0.0 <= u < 1.0 and 0.0 <= s < 1.0 and n < cap:
            hit_u[n] = u
            hit_seg[n] = j
            hit_s[n] = s
            n += 1
    return n


@njit(cache=True, inline="always")
def _sort_hits(hit_u, hit_seg, hit_s, n):
    for i in range(1, n):
        u, j, s = hit_u[i], hit_seg[i], hit_s[i]
        m = i
        while m > 0 and hit_u[m - 1] > u:
            hit_u[m] = hit_u[m - 1]
            hit_seg[m] = hit_seg[m - 1]
            hit_s[m] = hit_s[m - 1]
            m -= 1
        hit_u[m] = u
        hit_seg[m] = j
        hit_s[m] = s


@njit(cache=True, nogil=True)
def harvest_chunk(
    code, p, dt, sigma, normals,
    att_x, att_y, r2_src, r2_att, src, tgt,
    bpts, barc,
    hx0, hy0, hcell, hnx, hny, cell_start, cell_items,
    stf, sti, path_buf, cross_buf, stride, max_steps,
):
    """Advance one harvesting run through a chunk of normal increments.

    Returns (status, used) where used is the number of increment pairs
    consumed.  status NEED_NORMALS means the chunk ran out; call again
    with a fresh chunk.
    """
    sqdt = np.sqrt(dt)
    n_att = att_x.shape[0]
    nseg = bpts.shape[0] - 1
    hit_u = np.empty(8, dtype=np.float64)
    hit_seg = np.empty(8, dtype=np.int64)
    hit_s = np.empty(8, dtype=np.float64)
    all_items = np.arange(nseg)
    x = stf[_X]
    y = stf[_Y]
    t = stf[_T]
    recording = sti[_RECORDING]
    path_cap = path_buf.shape[0]
    cross_cap = cross_buf.shape[0]

    for i in range(normals.shape[0]):
        bx, by = _drift2(code, p, x, y)
        if code == KERNEL_COMP:
            # multiplicative noise diag(sqrt x, sqrt y), reflecting at 0
            sx = np.sqrt(x) if x > 0.0 else 0.0
            sy = np.sqrt(y) if y > 0.0 else 0.0
            nx = x + bx * dt + sigma * sx * sqdt * normals[i, 0]
            ny = y + by * dt + sigma * sy * sqdt * normals[i, 1]
            if nx < 0.0:
                nx = -nx
                stf[_REFLECTS] += 1.0
            if ny < 0.0:
                ny = -ny
                stf[_REFLECTS] += 1.0
        else:
            nx = x + bx * dt + sigma * sqdt * normals[i, 0]
            ny = y + by * dt + sigma * sqdt * normals[i, 1]
            if code == KERNEL_COMP_T:
                # transformed chart is clamped at the floor
                if nx < p[6]:
                    nx = p[6]
                    stf[_REFLECTS] += 1.0
                if ny < p[6]:
                    ny = p[6]
                    stf[_REFLECTS] += 1.0

        if recording == 1:
            # boundary crossings along [P, Pnew] via the spatial hash
            dxs = nx - x
            dys = ny - y
            ci = int((x - hx0) / hcell)
            cj = int((y - hy0) / hcell)
            step2 = dxs * dxs + dys * dys
            if step2 > hcell * hcell:
                # oversized step: brute scan (rare)
                sti[_BRUTE] += 1
                nh = _collect_hits(
                    x, y, nx, ny, bpts, 0, nseg, all_items,
                    hit_u, hit_seg, hit_s, 0,
                )
            else:
                nh = 0
                for di in range(-1, 2):
                    ii = ci + di
                    if ii < 0 or ii >= hnx:
                        continue
                    for dj in range(-1, 2):
                        jj = cj + dj
                        if jj < 0 or jj >= hny:
                            continue
                        c = ii * hny + jj
                        lo, hi = cell_start[c], cell_start[c + 1]
                        if lo == hi:
                            continue
                        nh = _collect_hits(
                            x, y, nx, ny, bpts, lo, hi, cell_items,
                            hit_u, hit_seg, hit_s, nh,
                        )
            if nh > 1:
                _sort_hits(hit_u, hit_seg, hit_s, nh)
            for k in range(nh):
                j = hit_seg[k]
                s = hit_s[k]
                cxp = bpts[j, 0] + s * (bpts[j + 1, 0] - bpts[j, 0])
                cyp = bpts[j, 1] + s * (bpts[j + 1, 1] - bpts[j, 1])
                arc = barc[j] + s * (barc[j + 1] - barc[j])
                tc = t + hit_u[k] * dt
                if sti[_FE_SET] == 0:
                    # first basin exit since the clock reset, kept across
                    # failed excursions back into the source ball
                    stf[_FE_T] = tc
                    stf[_FE_X] = cxp
                    stf[_FE_Y] = cyp
                    stf[_FE_ARC] = arc
                    sti[_FE_SET] = 1
                stf[_LC_T] = tc
                stf[_LC_X] = cxp
                stf[_LC_Y] = cyp
                stf[_LC_ARC] = arc
                if sti[_N_CROSS] < cross_cap:
                    cross_buf[sti[_N_CROSS], 0] = tc
                    cross_buf[sti[_N_CROSS], 1] = cxp
                    cross_buf[sti[_N_CROSS], 2] = cyp
                    cross_buf[sti[_N_CROSS], 3] = arc
                else:
                    sti[_CROSS_OVF] = 1
                sti[_N_CROSS] += 1

        # neighborhood bookkeeping
        dsx = nx - att_x[src]
        dsy = ny - att_y[src]
        d2_src = dsx * dsx + dsy * dsy
        if recording == 0:
            if d2_src >= r2_src:
                # exit of the source ball: start a fresh transition path
                u = _ball_cross_frac(x, y, nx - x, ny - y, att_x[src], att_y[src], r2_src)
                if u < 0.0:
                    u = 0.0
                stf[_EXIT_T] = t + u * dt
                stf[_EXIT_X] = x + u * (nx - x)
                stf[_EXIT_Y] = y + u * (ny - y)
                recording = 1
                sti[_N_CROSS] = 0
                sti[_CROSS_OVF] = 0
                sti[_PATH_LEN] = 0
                sti[_REC_STEPS] = 0
        else:
            if d2_src < r2_src:
                # re-entered the source ball: discard the candidate path,
                # but the first-exit clock keeps running
                recording = 0
                sti[_N_CROSS] = 0
                sti[_PATH_LEN] = 0
            else:
                for a in range(n_att):
                    if a == src:
                        continue
                    dax = nx - att_x[a]
                    day = ny - att_y[a]
                    if dax * dax + day * day < r2_att:
                        u = _ball_cross_frac(x, y, nx - x, ny - y, att_x[a], att_y[a], r2_att)
                        if u < 0.0:
                            u = 1.0
                        stf[_ENTRY_T] = t + u * dt
                        stf[_ENTRY_X] = x + u * (nx - x)
                        stf[_ENTRY_Y] = y + u * (ny - y)
                        stf[_X] = nx
                        stf[_Y] = ny
                        stf[_T] = t + dt
                        sti[_RECORDING] = recording
                        sti[_STEPS] += i + 1
                        if a == tgt:
                            return DONE, i + 1
                        return HIT_OTHER, i + 1
                # store the path point (strided)
                if sti[_REC_STEPS] % stride == 0:
                    if sti[_PATH_LEN] >= path_cap:
                        sti[_RECORDING] = recording
                        sti[_STEPS] += i + 1
                        return PATH_OVERFLOW, i + 1
                    path_buf[sti[_PATH_LEN], 0] = t + dt
                    path_buf[sti[_PATH_LEN], 1] = nx
                    path_buf[sti[_PATH_LEN], 2] = ny
                    sti[_PATH_LEN] += 1
                sti[_REC_STEPS] += 1

        x = nx
        y = ny
        t += dt
        if sti[_STEPS] + i + 1 >= max_steps:
            stf[_X] = x
            stf[_Y] = y
            stf[_T] = t
            sti[_RECORDING] = recording
            sti[_STEPS] += i + 1
            return NEED_NORMALS, i + 1  # caller notices max_steps

    stf[_X] = x
    stf[_Y] = y
    stf[_T] = t
    sti[_RECORDING] = recording
    sti[_STEPS] += normals.shape[0]
    return NEED_NORMALS, normals.shape[0]


@njit(cache=True, nogil=True)
def path_polyline_crossings(pts, bpts, barc):
    """All crossings of a polyline path with the boundary polyline.

    Returns (count, first_arc, last_arc, first_idx, last_idx, arcs) where
    arcs holds up to 64 crossing arclengths in order.
    """
    nseg = bpts.shape[0] - 1
    arcs = np.empty(64, dtype=np.float64)
    hit_u = np.empty(8, dtype=np.float64)
    hit_seg = np.empty(8, dtype=np.int64)
    hit_s = np.empty(8, dtype=np.float64)
    items = np.arange(nseg)
    count = 0
    first_arc = np.nan
    last_arc = np.nan
    first_idx = -1
    last_idx = -1
    for i in range(pts.shape[0] - 1):
        nh = _collect_hits(
            pts[i, 0], pts[i, 1], pts[i + 1, 0], pts[i + 1, 1],
            bpts, 0, nseg, items, hit_u, hit_seg, hit_s, 0,
        )
        if nh > 1:
            _sort_hits(hit_u, hit_seg, hit_s, nh)
        for k in range(nh):
            j = hit_seg[k]
            arc = barc[j] + hit_s[k] * (barc[j + 1] - barc[j])
            if count == 0:
                first_arc = arc
                first_idx = i
            last_arc = arc
            last_idx = i
            if count < 64:
                arcs[count] = arc
            count += 1
    return count, first_arc, last_arc, first_idx, last_idx, arcs[: min(count, 64)]


@njit(cache=True, nogil=True)
def max_distance_to_polyline(pts, ref):
    """max over path points of the distance to the reference polyline."""
    worst = 0.0
    for i in range(pts.shape[0]):
        px, py = pts[i, 0], pts[i, 1]
        best = 1e300
        for j in range(ref.shape[0] - 1):
            ax, ay = ref[j, 0], ref[j, 1]
            bx, by = ref[j + 1, 0] - ax, ref[j + 1, 1] - ay
            denom = bx * bx + by * by
            if denom > 0.0:
                tt = ((px - ax) * bx + (py - ay) * by) / denom
                if tt < 0.0:
                    tt = 0.0
                elif tt > 1.0:
                    tt = 1.0
            else:
                tt = 0.0
            dx = px - (ax + tt * bx)
            dy = py - (ay + tt * by)
            d2 = dx * dx + dy * dy
            if d2 < best:
                best = d2
        if best > worst:
            worst = best
    return np.sqrt(worst)


@njit(cache=True, nogil=True)
def frechet_distance(a, b):
    """Discrete Frechet distance between two polylines (same dimension)."""
    n, m = a.shape[0], b.shape[0]
    ca = np.empty((n, m), dtype=np.float64)
    for i in range(n):
        for j in range(m):
            d = 0.0
            for k in range(a.shape[1]):
                diff = a[i, k] - b[j, k]
                d += diff * diff
            d = np.sqrt(d)
            if i == 0 and j == 0:
                prev = 0.0
            elif i == 0:
                prev = ca[0, j - 1]
            elif j == 0:
                prev = ca[i - 1, 0]
            else:
                prev = min(ca[i - 1, j], ca[i - 1, j - 1], ca[i, j - 1])
            ca[i, j] = max(d, prev) if not (i == 0 and j == 0) else d
    return ca[n - 1, m - 1]


def build_polyline_hash(bpts: Array, cell: float, pad: float = 1e-9):
    """CSR spatial hash of polyline segments over a uniform grid.

    Each segment is registered in every cell its bounding box touches, so a
    point query plus its 3x3 ring is a superset of all segments within one
    cell size of the point.
    """
    lo = bpts.min(axis=0) - 2 * cell
    hi = bpts.max(axis=0) + 2 * cell
    nx = max(1, int(np.ceil((hi[0] - lo[0]) / cell)))
    ny = max(1, int(np.ceil((hi[1] - lo[1]) / cell)))
    pairs: list[tuple[int, int]] = []
    for j in range(bpts.shape[0] - 1):
        x0 = min(bpts[j, 0], bpts[j + 1, 0]) - pad
        x1 = max(bpts[j, 0], bpts[j + 1, 0]) + pad
        y0 = min(bpts[j, 1], bpts[j + 1, 1]) - pad
        y1 = max(bpts[j, 1], bpts[j + 1, 1]) + pad
        i0 = max(0, int((x0 - lo[0]) / cell))
        i1 = min(nx - 1, int((x1 - lo[0]) / cell))
        k0 = max(0, int((y0 - lo[1]) / cell))
        k1 = min(ny - 1, int((y1 - lo[1]) / cell))
        for ii in range(i0, i1 + 1):
            for kk in range(k0, k1 + 1):
                pairs.append((ii * ny + kk, j))
    pairs.sort()
    cell_start = np.zeros(nx * ny + 1, dtype=np.int64)
    cell_items = np.empty(len(pairs), dtype=np.int64)
    for n, (c, j) in enumerate(pairs):
        cell_start[c + 1] += 1
        cell_items[n] = j
    cell_start = np.cumsum(cell_start)
    return float(lo[0]), float(lo[1]), nx, ny, cell_start, cell_items
