"""Deterministic phase-space analysis: equilibria, saddle spectra, basin
boundaries and basin classification.

The basin boundary of the two-dimensional models studied here is the stable
manifold of a saddle, so it is traced by integrating the time-reversed flow
from a small offset along the saddle's stable eigenvector.  This yields an
ordered polyline with a signed arclength coordinate (zero at the saddle),
which downstream crossing statistics and quasipotential restrictions use.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import solve_ivp

from .models import ModelSpec, SpecialPoints

Array = np.ndarray

UNCLASSIFIED = "unclassified"


@dataclass(frozen=True)
class SaddleAnalysis:
    """Eigenstructure of the drift Jacobian at a saddle point."""

    location: Array
    lambda_minus: float
    lambda_plus: float
    vec_minus: Array  # unit stable eigenvector
    vec_plus: Array   # unit unstable eigenvector
    mu: float         # |lambda_minus| / lambda_plus
    divergence_at_saddle: float


@dataclass
class BoundaryPolyline:
    """Discretized basin boundary with signed arclength, zero at the saddle.

    ``values`` optionally carries a scalar field restricted to the boundary
    (set by :func:`stochtrans.quasipotential.restrict_to_boundary`).
    """

    points: Array
    arclength: Array
    saddle_index: int
    truncated: bool = False
    values: Array | None = None
    value_name: str | None = None

    def __post_init__(self):
        if np.any(np.diff(self.arclength) <= 0):
            raise ValueError("arclength must be strictly monotone")

    @property
    def n_points(self) -> int:
        return self.points.shape[0]

    def tangent_at_saddle(self) -> Array:
        i = self.saddle_index
        t = self.points[min(i + 1, self.n_points - 1)] - self.points[max(i - 1, 0)]
        return t / np.linalg.norm(t)


def find_equilibria(
    model: ModelSpec,
    search_box: tuple[tuple[float, float], tuple[float, float]],
    grid_density: int = 50,
    tol: float = 1e-12,
    dedup_tol: float = 1e-8,
    max_iter: int = 80,
) -> SpecialPoints:
    """Locate all isolated zeros of the drift inside a box.

    Newton iteration with backtracking, seeded from a uniform
    ``grid_density`` per-side grid; non-convergent seeds are discarded and
    converged roots deduplicated within ``dedup_tol``.  Roots are classified
    by the eigenvalues of the Jacobian.
    """
    (x0, x1), (y0, y1) = search_box
    xs = np.linspace(x0, x1, grid_density)
    ys = np.linspace(y0, y1, grid_density)
    seeds = np.stack(np.meshgrid(xs, ys, indexing="ij"), axis=-1).reshape(-1, 2)

    roots: list[Array] = []
    for seed in seeds:
        x = seed.copy()
        ok = False
        for _ in range(max_iter):
            b = model.drift(x)
            nb = np.linalg.norm(b)
            if nb < tol:
                ok = True
                break
            j = model.jacobian(x)
            try:
                step = np.linalg.solve(j, -b)
            except np.linalg.LinAlgError:
                break
            # backtracking on ||b||
            lam, accepted = 1.0, False
            for _ in range(40):
                x_new = x + lam * step
                if np.linalg.norm(model.drift(x_new)) < nb:
                    accepted = True
                    break
                lam *= 0.5
            if not accepted:
                break
            x = x_new
        if not ok:
            continue
        if not (x0 - 1e-9 <= x[0] <= x1 + 1e-9 and y0 - 1e-9 <= x[1] <= y1 + 1e-9):
            continue
        if not np.all(model.is_admissible(x)):
            continue
        if any(np.linalg.norm(x - r) < dedup_tol for r in roots):
            continue
        roots.append(x)

    attractors: dict[str, Array] = {}
    saddles: dict[str, Array] = {}
    repellers: dict[str, Array] = {}
    known = model.special_points.all_points()
    for x in sorted(roots, key=lambda r: (round(r[0], 9), round(r[1], 9))):
        label = next(
            (name for name, p in known.items() if np.linalg.norm(x - p) < 1e-6), None
        )
        ev = np.linalg.eigvals(model.jacobian(x))
        re = np.real(ev)
        if np.all(re < 0):
            group = attractors
        elif np.all(re > 0):
            group = repellers
        else:
            group = saddles
        group[label or f"p{len(attractors) + len(saddles) + len(repellers)}"] = x
    return SpecialPoints(attractors=attractors, saddles=saddles, repellers=repellers)


def saddle_analysis(model: ModelSpec, saddle: Array) -> SaddleAnalysis:
    """Exact eigen-decomposition of the 2x2 Jacobian at a saddle.

    Uses the closed-form eigenvalues (tr +- sqrt(tr^2 - 4 det)) / 2 and
    raises if both eigenvalues share a sign.
    """
    saddle = np.asarray(saddle, dtype=float)
    j = model.jacobian(saddle)
    tr = j[0, 0] + j[1, 1]
    det = j[0, 0] * j[1, 1] - j[0, 1] * j[1, 0]
    disc = tr * tr - 4.0 * det
    if det >= 0 or disc <= 0:
        raise ValueError("point is not a saddle: eigenvalues are not of opposite sign")
    rt = math.sqrt(disc)
    lam_plus = 0.5 * (tr + rt)
    lam_minus = 0.5 * (tr - rt)

    def unit_eigvec(lam: float) -> Array:
        # (J - lam I) w = 0; pick the better-conditioned row.
        r1 = np.array([j[0, 0] - lam, j[0, 1]])
        r2 = np.array([j[1, 0], j[1, 1] - lam])
        row = r1 if np.linalg.norm(r1) > np.linalg.norm(r2) else r2
        w = np.array([-row[1], row[0]])
        w = w / np.linalg.norm(w)
        # orient deterministically: positive second component, else positive first
        if w[1] < 0 or (w[1] == 0 and w[0] < 0):
            w = -w
        return w

    return SaddleAnalysis(
        location=saddle,
        lambda_minus=lam_minus,
        lambda_plus=lam_plus,
        vec_minus=unit_eigvec(lam_minus),
        vec_plus=unit_eigvec(lam_plus),
        mu=abs(lam_minus) / lam_plus,
        divergence_at_saddle=float(model.divergence(saddle)),
    )


def _trace_halfline(
    model: ModelSpec,
    start: Array,
    half_length: float,
    rtol: float,
    bbox: tuple | None,
) -> tuple[Array, bool]:
    """Integrate the reversed flow xdot = -b(x) until the requested arclength.

    Stops early (with the truncation flag set) if the trajectory leaves the
    admissible domain / bounding box or converges onto another equilibrium
    of the reversed flow.
    """

    def rhs(_t, x):
        return -model.drift(x)

    def speed_floor(_t, x):
        return float(np.linalg.norm(model.drift(x))) - 1e-12

    speed_floor.terminal = True

    def inside(seg: Array) -> Array:
        ok = model.is_admissible(seg)
        if bbox is not None:
            (bx0, bx1), (by0, by1) = bbox
            ok = ok & (seg[..., 0] >= bx0) & (seg[..., 0] <= bx1)
            ok = ok & (seg[..., 1] >= by0) & (seg[..., 1] <= by1)
        return ok

    x_cur = np.asarray(start, dtype=float)
    chunks = [x_cur[None, :]]
    arc = 0.0
    t_span = 1.0
    truncated = False
    for _ in range(400):
        sol = solve_ivp(
            rhs, (0.0, t_span), x_cur, rtol=rtol, atol=rtol,
            dense_output=True, events=[speed_floor],
        )
        tt = np.linspace(0.0, sol.t[-1], max(256, 16 * len(sol.t)))
        seg = sol.sol(tt).T[1:]
        ok = inside(seg)
        if not np.all(ok):
            seg = seg[: int(np.argmin(ok))]
            truncated = True
        if len(seg):
            prev = chunks[-1][-1]
            lens = np.linalg.norm(np.diff(np.vstack([prev[None, :], seg]), axis=0), axis=1)
            cum = arc + np.cumsum(lens)
            if cum[-1] >= half_length:
                cut = int(np.searchsorted(cum, half_length, side="left")) + 1
                chunks.append(seg[:cut])
                arc = cum[min(cut - 1, len(cum) - 1)]
                break
            chunks.append(seg)
            arc = cum[-1]
            x_cur = seg[-1]
        if truncated:
            break
        if sol.status == 1:  # reached an equilibrium of the reversed flow
            truncated = True
            break
        t_span *= 2.0
    return np.vstack(chunks), truncated


def basin_boundary(
    model: ModelSpec,
    saddle: Array,
    half_length: float = 1.2,
    step: float = 2e-3,
    offset: float = 1e-6,
    rtol: float = 1e-10,
    bbox: tuple | None = None,
) -> BoundaryPolyline:
    """Trace the basin boundary (the saddle's stable manifold) as a polyline.

    Both halves are integrated in reversed time from ``saddle +- offset * w_s``
    with ``w_s`` the stable eigenvector, then resampled at uniform arclength
    spacing ``step``.  The positive-arclength side is the one along ``+w_s``
    (oriented with positive second component).
    """
    sa = saddle_analysis(model, saddle)
    w = sa.vec_minus
    halves = []
    truncated = False
    for sign in (+1.0, -1.0):
        raw, trunc = _trace_halfline(
            model, np.asarray(saddle) + sign * offset * w, half_length, rtol, bbox
        )
        truncated = truncated or trunc
        s_raw = np.concatenate([[0.0], np.cumsum(np.linalg.norm(np.diff(raw, axis=0), axis=1))])
        s_out = np.arange(step, s_raw[-1], step)
        half = np.stack([np.interp(s_out, s_raw, raw[:, k]) for k in range(2)], axis=1)
        halves.append((half, s_out))

    plus_pts, plus_s = halves[0]
    minus_pts, minus_s = halves[1]
    points = np.vstack([minus_pts[::-1], np.asarray(saddle)[None, :], plus_pts])
    arclength = np.concatenate([-minus_s[::-1], [0.0], plus_s])
    return BoundaryPolyline(
        points=points,
        arclength=arclength,
        saddle_index=len(minus_s),
        truncated=truncated,
    )


def classify_basin(
    model: ModelSpec,
    x: Array,
    attractor_radius: float = 1e-3,
    horizon: float = 1e4,
    rtol: float = 1e-8,
) -> str:
    """Label of the attractor reached by the noise-free flow from x."""
    attractors = model.special_points.attractors
    if not attractors:
        raise ValueError(f"model '{model.name}' declares no attractors")
    names = list(attractors)
    centers = np.stack([attractors[n] for n in names])
    x = np.asarray(x, dtype=float)

    d0 = np.linalg.norm(centers - x, axis=1)
    if np.any(d0 < attractor_radius):
        return names[int(np.argmin(d0))]

    def rhs(_t, y):
        return model.drift(y)

    events = []
    for c in centers:
        def hit(_t, y, c=c):
            return float(np.linalg.norm(y - c)) - attractor_radius
        hit.terminal = True
        events.append(hit)

    sol = solve_ivp(rhs, (0.0, horizon), x, rtol=rtol, atol=rtol, events=events)
    for k, te in enumerate(sol.t_events):
        if len(te):
            return names[k]
    return UNCLASSIFIED


def critical_manifold_fhn(
    v_range: tuple[float, float] = (-0.6, 0.6),
    samples: int = 400,
) -> dict:
    """Cubic slow manifold {v = -u^3 + u} of the fast-slow neuron model.

    Returns the sampled curve, a per-sample stability flag for the fast
    subsystem (stable where 1 - 3u^2 < 0), and the two fold points
    v = +- sqrt(4/27) where the stable and unstable branches meet.
    """
    v_fold = math.sqrt(4.0 / 27.0)
    # v(u) = -u^3 + u is multivalued in v: the outer branches reach the
    # requested v-extremes, so span u between them
    u_lo = _smallest_u_root(max(v_range))
    u_hi = _largest_u_root(min(v_range))
    u = np.linspace(u_lo, u_hi, samples)
    v = -(u**3) + u
    stable = 1.0 - 3.0 * u**2 < 0.0
    return {
        "u": u,
        "v": v,
        "stable": stable,
        "fold_v": (-v_fold, v_fold),
        "fold_u": (-1.0 / math.sqrt(3.0), 1.0 / math.sqrt(3.0)),
    }


def _real_u_roots(v: float) -> Array:
    roots = np.roots([-1.0, 0.0, 1.0, -v])
    return roots[np.abs(roots.imag) < 1e-9].real


def _smallest_u_root(v: float) -> float:
    return float(np.min(_real_u_roots(v)))


def _largest_u_root(v: float) -> float:
    return float(np.max(_real_u_roots(v)))
