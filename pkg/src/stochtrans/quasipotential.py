"""Grid-based quasipotential solver and boundary diagnostics.

``solve_quasipotential`` runs an ordered line-integral solve (see
:mod:`stochtrans._olim`) for the minimal geometric action to reach each
grid node from a reference attractor.  ``restrict_to_boundary`` interpolates
the field onto a basin-boundary polyline; ``danger_zone`` extracts the
boundary sub-level set within sigma^2 of the boundary minimum, and
``plateau_curvature`` measures how sharply the restricted field rises
around its minimum.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from . import _olim
from .landscape import BoundaryPolyline
from .models import ModelSpec

Array = np.ndarray


@dataclass(frozen=True)
class GridSpec:
    """Rectangular grid over [x0, x1] x [y0, y1] with shape (nx, ny)."""

    bounds: tuple[tuple[float, float], tuple[float, float]]
    shape: tuple[int, int]

    @property
    def spacing(self) -> tuple[float, float]:
        (x0, x1), (y0, y1) = self.bounds
        nx, ny = self.shape
        return (x1 - x0) / (nx - 1), (y1 - y0) / (ny - 1)

    @property
    def origin(self) -> tuple[float, float]:
        return self.bounds[0][0], self.bounds[1][0]

    def axes(self) -> tuple[Array, Array]:
        (x0, x1), (y0, y1) = self.bounds
        return np.linspace(x0, x1, self.shape[0]), np.linspace(y0, y1, self.shape[1])

    def contains(self, pts: Array) -> Array:
        (x0, x1), (y0, y1) = self.bounds
        pts = np.atleast_2d(pts)
        return (
            (pts[:, 0] >= x0) & (pts[:, 0] <= x1)
            & (pts[:, 1] >= y0) & (pts[:, 1] <= y1)
        )


def default_grid(model: ModelSpec) -> GridSpec:
    if model.name == "fhn":
        return GridSpec(bounds=((-1.6, 1.6), (-0.9, 0.9)), shape=(800, 450))
    if model.name == "comp_transformed":
        side = 2.0 * math.sqrt(1.2)
        return GridSpec(bounds=((0.0, side), (0.0, side)), shape=(600, 600))
    return GridSpec(bounds=((-1.6, 1.6), (-1.6, 1.6)), shape=(400, 400))


@dataclass(frozen=True)
class QuasipotentialField:
    grid: GridSpec
    values: Array  # (nx, ny); +inf where unreached
    status: Array  # (nx, ny) in {0 unknown, 1 considered, 2 accepted}
    reference: Array
    accept_log: Array

    def interpolate(self, pts: Array) -> Array:
        """Bilinear interpolation at points (n, 2); NaN outside the grid."""
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        hx, hy = self.grid.spacing
        x0, y0 = self.grid.origin
        nx, ny = self.grid.shape
        fx = (pts[:, 0] - x0) / hx
        fy = (pts[:, 1] - y0) / hy
        out = np.full(len(pts), np.nan)
        ok = (fx >= 0) & (fx <= nx - 1) & (fy >= 0) & (fy <= ny - 1)
        i = np.clip(np.floor(fx[ok]).astype(int), 0, nx - 2)
        j = np.clip(np.floor(fy[ok]).astype(int), 0, ny - 2)
        tx = fx[ok] - i
        ty = fy[ok] - j
        v = self.values
        out[ok] = (
            v[i, j] * (1 - tx) * (1 - ty)
            + v[i + 1, j] * tx * (1 - ty)
            + v[i, j + 1] * (1 - tx) * ty
            + v[i + 1, j + 1] * tx * ty
        )
        return out


@dataclass(frozen=True)
class DangerZone:
    """Boundary sub-level set {V <= min V + sigma^2} as arclength intervals."""

    intervals: tuple[tuple[float, float], ...]
    threshold: float
    sigma: float
    total_arclength: float
    full_span: bool

    def contains(self, s: float) -> bool:
        return any(a <= s <= b for a, b in self.intervals)


def _q_dispatch(model: ModelSpec) -> tuple[int, Array]:
    if model.noise_kind == "identity":
        return _olim.QI_IDENTITY, np.ones(2)
    if model.noise_kind == "const_diag":
        return _olim.QI_CONST_DIAG, np.asarray(model.noise_diag, dtype=float)
    return _olim.QI_STATE_DIAG, np.ones(2)


def solve_quasipotential(
    model: ModelSpec,
    x_ref: Array,
    grid: GridSpec | None = None,
    update_radius: int = 12,
    triangle_margin: float = 0.02,
    golden_tol: float = 1e-10,
) -> QuasipotentialField:
    """Ordered line-integral solve of the quasipotential w.r.t. ``x_ref``.

    ``update_radius`` (K) is the neighbor-update radius in units of the
    larger grid spacing; larger K trades speed for accuracy in anisotropic
    drifts.  The drift should not vary too rapidly per cell; a heuristic
    warning fires if it does.
    """
    if model.kernel_code < 0:
        raise ValueError(f"model '{model.name}' has no compiled drift kernel")
    grid = grid if grid is not None else default_grid(model)
    x_ref = np.asarray(x_ref, dtype=float)
    if not bool(grid.contains(x_ref[None, :])[0]):
        raise ValueError("reference point lies outside the grid")
    qcode, qp = _q_dispatch(model)
    (x0b, _x1), (y0b, _y1) = grid.bounds
    if model.noise_kind == "sqrt_diag" and (x0b <= 0.0 or y0b <= 0.0):
        raise ValueError(
            "covariance diag(x, y) is singular on the axes; "
            "solve in the transformed chart instead"
        )
    hx, hy = grid.spacing
    nx, ny = grid.shape

    # drift-resolution heuristic: the drift magnitude should not change by
    # more than ~2x across a single cell
    xs, ys = grid.axes()
    sub_x = xs[:: max(1, nx // 64)]
    sub_y = ys[:: max(1, ny // 64)]
    probe = np.stack(np.meshgrid(sub_x, sub_y, indexing="ij"), axis=-1)
    b = model.drift(probe.reshape(-1, 2)).reshape(probe.shape)
    db_x = np.diff(b, axis=0) / (sub_x[1] - sub_x[0])
    scale = np.linalg.norm(b, axis=-1).max()
    if scale > 0 and np.linalg.norm(db_x, axis=-1).max() * max(hx, hy) > 2.0 * scale:
        warnings.warn(
            "grid may be too coarse for the drift variation; consider refining",
            stacklevel=2,
        )

    src_i = int(round((x_ref[0] - x0b) / hx))
    src_j = int(round((x_ref[1] - y0b) / hy))

    radius = update_radius * max(hx, hy)
    ks = int(math.ceil(radius / hx))
    ms = int(math.ceil(radius / hy))
    offs = [
        (di, dj)
        for di in range(-ks, ks + 1)
        for dj in range(-ms, ms + 1)
        if 0 < (di * hx) ** 2 + (dj * hy) ** 2 <= radius**2
    ]
    offs_i = np.array([o[0] for o in offs], dtype=np.int64)
    offs_j = np.array([o[1] for o in offs], dtype=np.int64)

    values, status, accept_log, _n = _olim.olim_solve(
        model.kernel_code, np.asarray(model.kernel_params, dtype=float),
        qcode, qp,
        x0b, y0b, hx, hy, nx, ny,
        src_i, src_j, offs_i, offs_j,
        triangle_margin, golden_tol,
    )
    return QuasipotentialField(
        grid=grid,
        values=values.reshape(nx, ny),
        status=status.reshape(nx, ny),
        reference=x_ref,
        accept_log=accept_log,
    )


def restrict_to_boundary(
    field: QuasipotentialField, polyline: BoundaryPolyline
) -> BoundaryPolyline:
    """Attach bilinearly interpolated field values to a boundary polyline.

    Points outside the grid are trimmed away (keeping the contiguous
    in-grid stretch around the saddle) and the result is flagged truncated.
    """
    inside = field.grid.contains(polyline.points)
    if not inside[polyline.saddle_index]:
        raise ValueError("polyline saddle point lies outside the field grid")
    lo = polyline.saddle_index
    while lo > 0 and inside[lo - 1]:
        lo -= 1
    hi = polyline.saddle_index
    while hi < len(inside) - 1 and inside[hi + 1]:
        hi += 1
    truncated = bool(lo > 0 or hi < len(inside) - 1)
    pts = polyline.points[lo : hi + 1]
    arc = polyline.arclength[lo : hi + 1]
    vals = field.interpolate(pts)
    return BoundaryPolyline(
        points=pts,
        arclength=arc,
        saddle_index=polyline.saddle_index - lo,
        truncated=polyline.truncated or truncated,
        values=vals,
        value_name="quasipotential",
    )


def danger_zone(restricted: BoundaryPolyline, sigma: float) -> DangerZone:
    """Sub-level intervals {V <= min V + sigma^2} along the boundary."""
    if restricted.values is None:
        raise ValueError("polyline carries no restricted field values")
    v = np.asarray(restricted.values)
    s = restricted.arclength
    thr = float(np.min(v)) + sigma**2
    below = v <= thr
    if np.all(below):
        return DangerZone(
            intervals=((float(s[0]), float(s[-1])),),
            threshold=thr,
            sigma=sigma,
            total_arclength=float(s[-1] - s[0]),
            full_span=True,
        )
    intervals = []
    k = 0
    n = len(v)
    while k < n:
        if not below[k]:
            k += 1
            continue
        j = k
        while j + 1 < n and below[j + 1]:
            j += 1
        a = s[k]
        if k > 0:  # linear interpolation of the threshold crossing
            f = (thr - v[k - 1]) / (v[k] - v[k - 1])
            a = s[k - 1] + f * (s[k] - s[k - 1])
        b = s[j]
        if j + 1 < n:
            f = (thr - v[j]) / (v[j + 1] - v[j])
            b = s[j] + f * (s[j + 1] - s[j])
        intervals.append((float(a), float(b)))
        k = j + 1
    total = float(sum(b - a for a, b in intervals))
    return DangerZone(
        intervals=tuple(intervals),
        threshold=thr,
        sigma=sigma,
        total_arclength=total,
        full_span=False,
    )


def plateau_curvature(restricted: BoundaryPolyline) -> float:
    """Second difference of the restricted field at its minimum, w.r.t.
    arclength; raises if the minimum sits at a polyline end."""
    if restricted.values is None:
        raise ValueError("polyline carries no restricted field values")
    v = np.asarray(restricted.values)
    i = int(np.argmin(v))
    if i == 0 or i == len(v) - 1:
        raise ValueError("restricted minimum lies at the polyline end")
    s = restricted.arclength
    h1 = s[i] - s[i - 1]
    h2 = s[i + 1] - s[i]
    # second difference on a (possibly) nonuniform stencil
    return float(
        2.0 * (h1 * v[i + 1] - (h1 + h2) * v[i] + h2 * v[i - 1])
        / (h1 * h2 * (h1 + h2))
    )
