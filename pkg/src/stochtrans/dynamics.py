"""Stochastic simulation: Euler-Maruyama integration, transition-event
harvesting, ensembles, the mean transition path, and noise calibration
against the rarity ratio.

A transition event is harvested by simulating from the source attractor
until the trajectory, after leaving a small ball around the source for the
last time, enters the ball around the target attractor.  Per event we
record the waiting time since the last entry into the source ball until the
first crossing of the basin boundary, the transition path itself, and every
boundary crossing along it.  Events are independent restarts; each draws
its Gaussian increments from a counter-based stream keyed by
``(seed, event_index)``, so ensembles are bit-reproducible for a fixed
config regardless of worker count.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from . import _kernels
from .action import DiscretePath, resample_path
from .landscape import BoundaryPolyline
from .models import ModelSpec

Array = np.ndarray


class CalibrationError(RuntimeError):
    """Noise-calibration bracket does not straddle the target rarity."""


def default_dt(model: ModelSpec) -> float:
    """Timestep resolving the fastest timescale of a builtin model."""
    if model.name == "fhn":
        return min(model.params["epsilon"], 1.0) / 50.0
    if model.name in ("comp", "comp_transformed"):
        return 1e-3 * min(1.0, 1.0 / model.params["epsilon"])
    return 1e-3


def default_radius(model: ModelSpec) -> float:
    return 0.02 if model.name.startswith("comp") else 0.05


@dataclass(frozen=True)
class SimConfig:
    """Simulation parameters; ``dt`` and ``radius`` fall back to model defaults."""

    sigma: float
    seed: int = 0
    dt: float | None = None
    radius: float | None = None
    max_steps: int = 20_000_000_000
    boundary_policy: str = "reflect"  # or "clamp", for states leaving the domain
    path_stride: int = 1
    max_path_points: int = 400_000
    max_crossings: int = 512
    chunk_steps: int = 1_000_000
    mtp_points: int = 200

    def __post_init__(self):
        if self.sigma < 0:
            raise ValueError("sigma must be non-negative")
        if self.dt is not None and self.dt <= 0:
            raise ValueError("dt must be positive")
        if self.radius is not None and self.radius <= 0:
            raise ValueError("radius must be positive")
        if self.boundary_policy not in ("reflect", "clamp"):
            raise ValueError("boundary_policy must be 'reflect' or 'clamp'")


@dataclass(frozen=True)
class TransitionRecord:
    """One harvested transition with timing and boundary-crossing metadata."""

    path: DiscretePath
    first_exit_time: float
    transition_time: float
    first_exit_point: Array
    first_exit_arclength: float
    final_crossing_point: Array
    final_crossing_arclength: float
    n_crossings: int
    crossings: Array  # (k, 4) columns: time, x, y, arclength
    n_reflections: int
    crossings_truncated: bool
    event_index: int
    n_discarded: int  # completions into non-target attractors before this one


@dataclass
class Ensemble:
    """A set of transition records with summary statistics."""

    records: list[TransitionRecord]
    model_name: str
    from_label: str
    to_label: str
    config: SimConfig
    n_timeouts: int
    n_discarded: int
    n_overflows: int
    mtp: DiscretePath | None = None

    @property
    def mean_first_exit(self) -> float:
        taus = [r.first_exit_time for r in self.records if np.isfinite(r.first_exit_time)]
        return float(np.mean(taus)) if taus else math.nan

    @property
    def mean_transition(self) -> float:
        return float(np.mean([r.transition_time for r in self.records]))

    @property
    def rarity(self) -> float:
        return self.mean_first_exit / self.mean_transition


# ---------------------------------------------------------------------------
# plain integration


def _noise_factors(model: ModelSpec, x: Array, sigma: float) -> Array:
    if model.noise_kind == "identity":
        return np.full_like(x, sigma)
    if model.noise_kind == "const_diag":
        return sigma * np.sqrt(np.asarray(model.noise_diag))[None, :] * np.ones_like(x)
    if model.noise_kind == "sqrt_diag":
        return sigma * np.sqrt(np.maximum(x, 0.0))
    raise ValueError(f"unknown noise kind '{model.noise_kind}'")


def integrate_em_batch(
    model: ModelSpec,
    x0: Array,
    config: SimConfig,
    horizon: float,
    n_paths: int,
    record: bool = False,
) -> tuple[Array, Array, int]:
    """Euler-Maruyama for a batch of paths from a common start.

    Returns (times, states, boundary_events); states has shape
    ``(n_steps+1, n_paths, D)`` when recording, else ``(1, n_paths, D)``
    holding only the final states.
    """
    dt = config.dt if config.dt is not None else default_dt(model)
    n_steps = max(1, int(round(horizon / dt)))
    rng = np.random.default_rng(config.seed)
    d = model.dimension
    x = np.broadcast_to(np.asarray(x0, dtype=float), (n_paths, d)).copy()
    sqdt = math.sqrt(dt)
    clamped = model.admissible is not None
    times = np.linspace(0.0, n_steps * dt, n_steps + 1)
    states = np.empty((n_steps + 1, n_paths, d)) if record else None
    if record:
        states[0] = x
    events = 0
    for k in range(n_steps):
        xi = rng.standard_normal((n_paths, d))
        x = x + model.drift(x) * dt + _noise_factors(model, x, config.sigma) * sqdt * xi
        if clamped and np.any(x < 0.0):
            events += int(np.count_nonzero(x < 0.0))
            x = np.abs(x) if config.boundary_policy == "reflect" else np.maximum(x, 0.0)
        if record:
            states[k + 1] = x
    if not record:
        states = x[None, :, :]
    return times, states, events


def integrate_em(
    model: ModelSpec, x0: Array, config: SimConfig, horizon: float
) -> DiscretePath:
    """Single-path Euler-Maruyama trajectory as a timed path."""
    times, states, _ = integrate_em_batch(model, x0, config, horizon, 1, record=True)
    return DiscretePath(points=states[:, 0, :], times=times)


# ---------------------------------------------------------------------------
# transition harvesting


def _harvest_setup(model: ModelSpec, config: SimConfig, from_label: str, to_label: str,
                   boundary: BoundaryPolyline) -> dict:
    if model.kernel_code < 0:
        raise ValueError(f"model '{model.name}' has no compiled simulation kernel")
    att = model.special_points.attractors
    if from_label not in att or to_label not in att:
        raise ValueError(f"unknown attractor labels {from_label!r}, {to_label!r}")
    names = list(att)
    centers = np.array([att[n] for n in names], dtype=float)
    dt = config.dt if config.dt is not None else default_dt(model)
    radius = config.radius if config.radius is not None else default_radius(model)
    bpts = np.ascontiguousarray(boundary.points, dtype=float)
    barc = np.ascontiguousarray(boundary.arclength, dtype=float)
    # the hash cell must exceed the step length; bound the drift near the
    # boundary and the attractors, with the brute-scan fallback covering
    # tail steps
    probe = np.vstack([bpts, centers])
    bmax = float(np.max(np.linalg.norm(model.drift(probe), axis=1)))
    step_bound = 3.0 * bmax * dt + 6.0 * config.sigma * math.sqrt(dt)
    cell = max(2.0 * step_bound, 0.02)
    hx0, hy0, hnx, hny, cell_start, cell_items = _kernels.build_polyline_hash(bpts, cell)
    return {
        "code": model.kernel_code,
        "p": np.asarray(model.kernel_params, dtype=float),
        "dt": dt,
        "radius": radius,
        "att_x": np.ascontiguousarray(centers[:, 0]),
        "att_y": np.ascontiguousarray(centers[:, 1]),
        "src": names.index(from_label),
        "tgt": names.index(to_label),
        "bpts": bpts,
        "barc": barc,
        "hash": (hx0, hy0, cell, hnx, hny, cell_start, cell_items),
    }


def _event_rng(seed: int, event_index: int) -> np.random.Generator:
    ss = np.random.SeedSequence(entropy=seed, spawn_key=(event_index,))
    return np.random.Generator(np.random.Philox(ss))


def _run_event(setup: dict, config: SimConfig, event_index: int):
    """Simulate until one transition completes; returns (record | None, stats)."""
    rng = _event_rng(config.seed, event_index)
    stf = np.zeros(_kernels.NF, dtype=float)
    sti = np.zeros(_kernels.NI, dtype=np.int64)
    path_buf = np.empty((config.max_path_points, 3), dtype=float)
    cross_buf = np.empty((config.max_crossings, 4), dtype=float)
    hx0, hy0, cell, hnx, hny, cell_start, cell_items = setup["hash"]
    src = setup["src"]
    stf[_kernels._X] = setup["att_x"][src]
    stf[_kernels._Y] = setup["att_y"][src]
    n_discarded = 0
    n_overflows = 0
    r2 = setup["radius"] ** 2
    chunk = min(32_768, config.chunk_steps)

    while True:
        normals = rng.standard_normal((chunk, 2))
        chunk = min(4 * chunk, config.chunk_steps)
        status, _used = _kernels.harvest_chunk(
            setup["code"], setup["p"], setup["dt"], config.sigma, normals,
            setup["att_x"], setup["att_y"], r2, r2, src, setup["tgt"],
            setup["bpts"], setup["barc"],
            hx0, hy0, cell, hnx, hny, cell_start, cell_items,
            stf, sti, path_buf, cross_buf, config.path_stride, config.max_steps,
        )
        if status == _kernels.DONE:
            break
        if status == _kernels.NEED_NORMALS:
            if sti[_kernels._STEPS] >= config.max_steps:
                return None, {"timeout": 1, "discarded": n_discarded, "overflows": n_overflows}
            continue
        # a completion into the wrong attractor or a path overflow: restart
        # from the source on the same stream with a fresh clock
        if status == _kernels.HIT_OTHER:
            n_discarded += 1
        else:
            n_overflows += 1
        stf[_kernels._X] = setup["att_x"][src]
        stf[_kernels._Y] = setup["att_y"][src]
        stf[_kernels._CLOCK_T0] = stf[_kernels._T]
        sti[_kernels._RECORDING] = 0
        sti[_kernels._N_CROSS] = 0
        sti[_kernels._PATH_LEN] = 0
        sti[_kernels._FE_SET] = 0

    n_pts = int(sti[_kernels._PATH_LEN])
    t_exit = stf[_kernels._EXIT_T]
    t_entry = stf[_kernels._ENTRY_T]
    raw_t = np.concatenate([[t_exit], path_buf[:n_pts, 0], [t_entry]])
    raw_xy = np.vstack([
        [stf[_kernels._EXIT_X], stf[_kernels._EXIT_Y]],
        path_buf[:n_pts, 1:3],
        [stf[_kernels._ENTRY_X], stf[_kernels._ENTRY_Y]],
    ])
    keep = np.concatenate([[True], np.diff(raw_t) > 0.0])
    path = DiscretePath(points=raw_xy[keep], times=raw_t[keep])

    n_cross = int(sti[_kernels._N_CROSS])
    fe_set = bool(sti[_kernels._FE_SET])
    rec = TransitionRecord(
        path=path,
        first_exit_time=stf[_kernels._FE_T] - stf[_kernels._CLOCK_T0]
        if fe_set else math.nan,
        transition_time=t_entry - t_exit,
        first_exit_point=np.array([stf[_kernels._FE_X], stf[_kernels._FE_Y]])
        if fe_set else np.full(2, math.nan),
        first_exit_arclength=stf[_kernels._FE_ARC] if fe_set else math.nan,
        final_crossing_point=np.array([stf[_kernels._LC_X], stf[_kernels._LC_Y]])
        if n_cross else np.full(2, math.nan),
        final_crossing_arclength=stf[_kernels._LC_ARC] if n_cross else math.nan,
        n_crossings=n_cross,
        crossings=cross_buf[: min(n_cross, config.max_crossings)].copy(),
        n_reflections=int(stf[_kernels._REFLECTS]),
        crossings_truncated=bool(sti[_kernels._CROSS_OVF]),
        event_index=event_index,
        n_discarded=n_discarded,
    )
    return rec, {"timeout": 0, "discarded": n_discarded, "overflows": n_overflows}


def sample_transition(
    model: ModelSpec,
    config: SimConfig,
    from_label: str,
    to_label: str,
    boundary: BoundaryPolyline,
    event_index: int = 0,
) -> TransitionRecord:
    """Harvest a single complete transition event.

    Raises TimeoutError when ``config.max_steps`` is exhausted first.
    """
    setup = _harvest_setup(model, config, from_label, to_label, boundary)
    rec, stats = _run_event(setup, config, event_index)
    if rec is None:
        raise TimeoutError(
            f"no transition within {config.max_steps} steps "
            f"(discarded {stats['discarded']} completions into other attractors)"
        )
    return rec


def harvest_ensemble(
    model: ModelSpec,
    config: SimConfig,
    from_label: str,
    to_label: str,
    boundary: BoundaryPolyline,
    n_events: int,
    n_workers: int = 1,
    first_event_index: int = 0,
    progress=None,
) -> Ensemble:
    """Harvest ``n_events`` independent transitions, optionally in parallel.

    Each event owns the stream keyed by its index, so the ensemble is
    identical for any worker count.  Timed-out events are dropped and
    counted in ``n_timeouts``.
    """
    setup = _harvest_setup(model, config, from_label, to_label, boundary)
    indices = list(range(first_event_index, first_event_index + n_events))
    results: list = [None] * n_events

    def work(pair):
        k, idx = pair
        results[k] = _run_event(setup, config, idx)
        if progress is not None:
            progress(k)

    if n_workers > 1:
        with ThreadPoolExecutor(max_workers=n_workers) as ex:
            list(ex.map(work, enumerate(indices)))
    else:
        for pair in enumerate(indices):
            work(pair)

    records = [r for r, _s in results if r is not None]
    ens = Ensemble(
        records=records,
        model_name=model.name,
        from_label=from_label,
        to_label=to_label,
        config=config,
        n_timeouts=sum(s["timeout"] for _r, s in results),
        n_discarded=sum(s["discarded"] for _r, s in results),
        n_overflows=sum(s["overflows"] for _r, s in results),
    )
    if len(records) >= 2:
        ens.mtp = mean_transition_path(ens, config.mtp_points)
    return ens


def mean_transition_path(ensemble: Ensemble, n_resample: int = 200) -> DiscretePath:
    """Spatial average of the ensemble paths.

    Every path is first reparametrized to normalized arclength with
    ``n_resample`` points, then averaged pointwise.  Zero-length paths are
    excluded.
    """
    stacks = []
    for rec in ensemble.records:
        pts = rec.path.points
        if np.linalg.norm(pts[-1] - pts[0]) == 0.0:
            continue
        stacks.append(resample_path(pts, n_resample))
    if len(stacks) < 2:
        raise ValueError("need at least 2 non-degenerate paths for an average")
    return DiscretePath(points=np.mean(np.stack(stacks), axis=0))


# ---------------------------------------------------------------------------
# noise calibration


def estimate_rarity(
    model: ModelSpec,
    config: SimConfig,
    from_label: str,
    to_label: str,
    boundary: BoundaryPolyline,
    n_pilot: int = 24,
    seed_salt: int = 0,
) -> tuple[float, float, float]:
    """Pilot estimate of (rarity, mean_first_exit, mean_transition).

    Returns rarity = +inf when most pilot events time out, which suffices
    for bracketing decisions.
    """
    pilot_cfg = replace(config, seed=config.seed + 7_919 * (seed_salt + 1))
    ens = harvest_ensemble(model, pilot_cfg, from_label, to_label, boundary, n_pilot)
    if len(ens.records) < max(2, n_pilot // 2):
        return math.inf, math.nan, math.nan
    return ens.rarity, ens.mean_first_exit, ens.mean_transition


def calibrate_sigma(
    model: ModelSpec,
    target_r: float,
    bracket: tuple[float, float],
    config: SimConfig,
    from_label: str,
    to_label: str,
    boundary: BoundaryPolyline,
    n_pilot: int = 24,
    factor_tol: float = 2.0,
    max_iter: int = 12,
) -> tuple[float, float]:
    """Bisection on log rarity; returns (sigma, measured_rarity).

    Rarity is monotonically decreasing in sigma, so the bracket must
    satisfy r(sigma_lo) > target_r > r(sigma_hi).  Pilot runs at small
    sigma are cost-capped: events beyond a step budget derived from the
    target rarity are abandoned and count as "rare enough".
    """
    sig_lo, sig_hi = bracket
    if not 0 < sig_lo < sig_hi:
        raise CalibrationError("bracket must satisfy 0 < sigma_lo < sigma_hi")

    # cheap side first: transitions at sigma_hi are frequent
    r_hi, _tau, t_mean = estimate_rarity(
        model, replace(config, sigma=sig_hi), from_label, to_label, boundary, n_pilot, 0
    )
    if not math.isfinite(r_hi) or r_hi >= target_r:
        raise CalibrationError(
            f"rarity at sigma_hi={sig_hi} is {r_hi:.3g}, not below target {target_r:.3g}"
        )
    dt = config.dt if config.dt is not None else default_dt(model)
    budget = int(40.0 * target_r * max(t_mean, dt) / dt)
    capped = replace(config, max_steps=min(config.max_steps, budget))

    r_lo, *_ = estimate_rarity(
        model, replace(capped, sigma=sig_lo), from_label, to_label, boundary, n_pilot, 1
    )
    if r_lo <= target_r:
        raise CalibrationError(
            f"rarity at sigma_lo={sig_lo} is {r_lo:.3g}, not above target {target_r:.3g}"
        )

    lo, hi = math.log(sig_lo), math.log(sig_hi)
    best = (sig_hi, r_hi)
    for it in range(max_iter):
        mid = 0.5 * (lo + hi)
        sig = math.exp(mid)
        r_mid, *_ = estimate_rarity(
            model, replace(capped, sigma=sig), from_label, to_label, boundary, n_pilot, 2 + it
        )
        if math.isfinite(r_mid) and max(r_mid / target_r, target_r / r_mid) <= factor_tol:
            return sig, r_mid
        if r_mid > target_r:
            lo = mid
        else:
            hi = mid
            best = (sig, r_mid)
    return best
