"""Variational solvers for most-probable transition paths.

``gmam_instanton`` minimizes the time-free geometric action over
arclength-parametrized curves with pinned endpoints.  The update is a
preconditioned descent on the exact gradient of the discretized action: the
stiff second-derivative (curve-tension) part of the dynamics is handled by
an implicit tridiagonal solve, which is what makes the fast-slow cases
tractable; a backtracking line search plus spline redistribution to equal
arclength completes each iteration, and a step is only accepted if the
action does not increase (so the retained action log is monotone).

``om_minimize`` minimizes the finite-noise action at fixed travel time T
over uniformly timed paths, by (optionally Sobolev-preconditioned) gradient
descent with Armijo backtracking on the interior points.

``reparametrize_to_time`` realizes the optimal time parametrization of a
geometric path, where the speed equals the drift speed in the Q-metric
(floored near equilibria).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.interpolate import PchipInterpolator
from scipy.linalg import solve_banded

from .action import (
    ActionValue,
    DiscretePath,
    geometric_action,
    om_action,
    path_arclength,
)
from .models import ModelSpec

Array = np.ndarray


@dataclass(frozen=True)
class MinimizerReport:
    path: DiscretePath
    action: ActionValue
    iterations: int
    residual: float  # first-order optimality measure at exit
    residual_tol: float  # threshold the convergence flag was judged against
    converged: bool
    action_log: Array  # action after every accepted iteration


def _qdiag(model: ModelSpec) -> Array:
    if model.noise_kind == "identity":
        return np.ones(model.dimension)
    if model.noise_kind == "const_diag":
        return np.asarray(model.noise_diag, dtype=float)
    raise ValueError(
        f"model '{model.name}' has state-dependent noise; "
        "minimize in the transformed (additive-noise) chart"
    )


def _redistribute(pts: Array, n: int) -> Array:
    """Spline-resample a curve to n points at uniform arclength.

    Uses a shape-preserving cubic (PCHIP) spline: an ordinary cubic spline
    overshoots at the sharp corners fast-slow minimizers develop, which
    would perturb the action at every redistribution.
    """
    s = path_arclength(pts)
    if s[-1] <= 0:
        raise ValueError("curve collapsed to zero length")
    # guard against coincident interior points
    keep = np.concatenate([[True], np.diff(s) > 1e-15 * max(s[-1], 1e-300)])
    spl = PchipInterpolator(s[keep], pts[keep], axis=0)
    return spl(np.linspace(0.0, s[-1], n))


def _geometric_grad(phi: Array, model: ModelSpec, qinv: Array, c: float) -> tuple[float, Array]:
    """Discrete geometric action (for drift c*b) and its exact gradient."""
    delta = np.diff(phi, axis=0)
    mid = 0.5 * (phi[1:] + phi[:-1])
    b = model.drift(mid) * c
    jac = model.jacobian(mid) * c
    nd = np.sqrt(np.sum(delta * delta * qinv, axis=1))
    nb = np.sqrt(np.sum(b * b * qinv, axis=1))
    val = float(np.sum(nd * nb - np.sum(delta * qinv * b, axis=1)))

    nd_safe = np.maximum(nd, 1e-300)[:, None]
    nb_safe = np.maximum(nb, 1e-300)[:, None]
    u = qinv * delta / nd_safe                      # d|Delta|_Q / dDelta
    w = np.einsum("nji,nj->ni", jac, qinv * b) / nb_safe  # J^T Q^-1 b / |b|_Q
    v = qinv * b
    z = np.einsum("nji,nj->ni", jac, qinv * delta)  # J^T Q^-1 Delta
    seg_mid = 0.5 * (nd[:, None] * w - z)
    grad = np.zeros_like(phi)
    grad[1:] += u * nb[:, None] + seg_mid - v
    grad[:-1] += -u * nb[:, None] + seg_mid + v
    return val, grad


def gmam_instanton(
    model: ModelSpec,
    x_from: Array,
    x_to: Array,
    n_points: int = 400,
    tol: float = 1e-8,
    max_iter: int = 20_000,
    dtau: float | None = None,
    init: Array | None = None,
    drift_scale: float = 1.0,
) -> MinimizerReport:
    """Minimum of the geometric action over curves from x_from to x_to.

    Iterates (a) a semi-implicit descent step on the interior points, where
    the stiff curve-tension part (the lam^2 phi'' term of the descent flow,
    lam = |b|_Q/|phi'|_Q) enters through an implicit tridiagonal solve
    applied to the exact discrete action gradient, and (b) redistribution
    of the points to equal arclength by spline interpolation.  The
    backtracking line search only accepts non-increasing actions; it stops
    when the sup-norm path update falls below ``tol``, when no acceptable
    step remains, or at ``max_iter``.

    ``drift_scale`` exploits the positive homogeneity of the geometric
    action in the drift: the minimizer for c*b equals the minimizer for b
    while the numerical stiffness scales with c.  Passing the fast-slow
    timescale parameter here (so the fast term becomes O(1)) speeds up the
    stiff cases dramatically; the returned action refers to the original
    drift.
    """
    if n_points < 50:
        raise ValueError("n_points must be at least 50")
    if drift_scale <= 0:
        raise ValueError("drift_scale must be positive")
    q = _qdiag(model)
    qinv = 1.0 / q
    x_from = np.asarray(x_from, dtype=float)
    x_to = np.asarray(x_to, dtype=float)
    if init is None and n_points >= 200:
        # coarse-to-fine continuation: resolve the channel cheaply first
        coarse = gmam_instanton(
            model, x_from, x_to, n_points=max(60, n_points // 4),
            tol=max(tol, 1e-7), max_iter=max_iter, dtau=dtau,
            drift_scale=drift_scale,
        )
        init = coarse.path.points
    if init is None:
        phi = np.linspace(0.0, 1.0, n_points)[:, None] * (x_to - x_from) + x_from
    else:
        phi = _redistribute(np.asarray(init, dtype=float), n_points)
        phi[0], phi[-1] = x_from, x_to
    ds = 1.0 / (n_points - 1)
    c = drift_scale

    current, grad = _geometric_grad(phi, model, qinv, c)
    log = [current]
    step = dtau if dtau is not None else 1.0
    residual = math.inf
    res_tol = math.nan
    it = 0
    while it < max_iter:
        it += 1
        # first-order optimality: normal component of the gradient (the
        # tangential part is pure reparametrization)
        dphi = np.empty_like(phi)
        dphi[1:-1] = phi[2:] - phi[:-2]
        dphi[0] = phi[1] - phi[0]
        dphi[-1] = phi[-1] - phi[-2]
        that = dphi / np.maximum(np.linalg.norm(dphi, axis=1), 1e-300)[:, None]
        g_n = grad - np.sum(grad * that, axis=1)[:, None] * that
        residual = float(np.max(np.linalg.norm(g_n[1:-1], axis=1))) / ds
        if it == 1:
            res_tol = max(1e-4 * residual, 1e-10)
        if residual < res_tol:
            break

        b_all = model.drift(phi) * c
        lam2 = np.sum(b_all[1:-1] ** 2 * qinv, axis=1) / np.maximum(
            np.sum((dphi[1:-1] / (2 * ds)) ** 2 * qinv, axis=1), 1e-300
        )

        accepted = False
        update = math.inf
        for _ in range(60):
            # semi-implicit stabilization: d = (I - step lam^2 D_ss)^-1 g
            coef = step * lam2 / ds**2
            ab = np.zeros((3, n_points - 2))
            ab[0, 1:] = -coef[1:]
            ab[1, :] = 1.0 + 2.0 * coef
            ab[2, :-1] = -coef[:-1]
            direction = np.stack(
                [
                    solve_banded((1, 1), ab, grad[1:-1, k])
                    for k in range(phi.shape[1])
                ],
                axis=1,
            )
            slope = float(np.sum(grad[1:-1] * direction))
            cand = phi.copy()
            cand[1:-1] = phi[1:-1] - step * direction
            cand = _redistribute(cand, n_points)
            cand[0], cand[-1] = x_from, x_to
            new_val, new_grad = _geometric_grad(cand, model, qinv, c)
            if np.isfinite(new_val) and new_val <= current - 1e-5 * step * slope + 1e-14:
                accepted = True
                break
            step *= 0.5
            if step < 1e-16:
                break
        if not accepted:
            break
        update = float(np.max(np.abs(cand - phi)))
        phi, current, grad = cand, new_val, new_grad
        log.append(current)
        step = min(step * 2.0, 1e6)
        if update < tol:
            break
        # stagnation: negligible relative progress over a 100-step window
        if len(log) > 100 and log[-101] - log[-1] < 1e-9 * max(abs(log[-1]), 1e-30):
            break

    if np.any(np.linalg.norm(np.diff(phi, axis=0), axis=1) < 1e-300):
        raise RuntimeError("gMAM curve degenerated: consecutive duplicate points")
    path = DiscretePath(points=phi)
    total = current / c
    act = ActionValue(total=total, fw_part=total, divergence_correction=0.0)
    return MinimizerReport(
        path=path,
        action=act,
        iterations=it,
        residual=residual,
        residual_tol=res_tol,
        converged=bool(residual < res_tol),
        action_log=np.asarray(log) / c,
    )


def reparametrize_to_time(
    path: DiscretePath, model: ModelSpec, clamp: float | None = None
) -> DiscretePath:
    """Assign times to a geometric path with speed |b|_Q, floored at ``clamp``.

    The default clamp is 1e-4 times the drift speed at the middle of the
    path, which keeps the total time finite near equilibrium endpoints.
    """
    pts = path.points
    qinv = 1.0 / _qdiag(model)
    mid = 0.5 * (pts[1:] + pts[:-1])
    b = model.drift(mid)
    speed = np.sqrt(np.sum(b * b * qinv, axis=1))
    if clamp is None:
        mid_speed = speed[len(speed) // 2]
        clamp = 1e-4 * max(mid_speed, 1e-12)
    seg = np.sqrt(np.sum(np.diff(pts, axis=0) ** 2 * qinv, axis=1))
    dts = seg / np.maximum(speed, clamp)
    times = np.concatenate([[0.0], np.cumsum(dts)])
    return DiscretePath(points=pts, times=times, labels=path.labels)


def _om_objective_grad(
    phi: Array, dt: float, model: ModelSpec, sigma: float
) -> tuple[float, Array]:
    """Discrete finite-noise action and its gradient w.r.t. all points."""
    mid = 0.5 * (phi[1:] + phi[:-1])
    vel = np.diff(phi, axis=0) / dt
    b = model.drift(mid)
    resid = vel - b
    div = model.divergence(mid)
    val = float(np.sum(0.5 * np.sum(resid**2, axis=1) * dt + 0.5 * sigma**2 * div * dt))

    jac = model.jacobian(mid)
    dgrad = model.div_grad(mid)
    jt_resid = np.einsum("nji,nj->ni", jac, resid)
    grad = np.zeros_like(phi)
    grad[:-1] += -resid - 0.5 * dt * jt_resid + 0.25 * sigma**2 * dt * dgrad
    grad[1:] += resid - 0.5 * dt * jt_resid + 0.25 * sigma**2 * dt * dgrad
    return val, grad


def _sobolev_solve(g: Array, dt: float) -> Array:
    """Apply (I - D_tt)^-1 to the interior gradient rows, per component."""
    n_in = g.shape[0]
    coef = 1.0 / dt**2
    ab = np.zeros((3, n_in))
    ab[0, 1:] = -coef
    ab[1, :] = 1.0 + 2.0 * coef
    ab[2, :-1] = -coef
    return np.stack(
        [solve_banded((1, 1), ab, g[:, k]) for k in range(g.shape[1])], axis=1
    )


def om_minimize(
    model: ModelSpec,
    x_from: Array,
    x_to: Array,
    T: float,
    sigma: float,
    n_points: int = 300,
    tol: float = 1e-8,
    max_iter: int = 100_000,
    init: str | Array = "instanton",
    precondition: bool = True,
) -> MinimizerReport:
    """Fixed-T minimizer of the finite-noise action between pinned endpoints.

    Gradient descent with Armijo backtracking on the interior points of an
    ``n_points``-point path uniformly timed over [0, T].  By default the
    descent direction is smoothed through the inverse discrete
    (I - d^2/dt^2) operator, a Sobolev-metric gradient that removes the
    stiff conditioning of the kinetic term; ``precondition=False`` gives the
    plain Euclidean gradient.  The travel time is always an explicit input:
    minimizing over T is not part of this functional.

    ``init`` may be "straight", "instanton" (a geometric minimizer computed
    on the fly, optimally timed, then rescaled to T), or an explicit array
    of points to resample.
    """
    if T <= 0:
        raise ValueError("T must be positive")
    if n_points < 50:
        raise ValueError("n_points must be at least 50")
    if model.noise_kind != "identity":
        raise ValueError("om_minimize requires an additive-noise chart")
    x_from = np.asarray(x_from, dtype=float)
    x_to = np.asarray(x_to, dtype=float)
    dt = T / (n_points - 1)

    if isinstance(init, str):
        if init == "straight":
            phi = np.linspace(0.0, 1.0, n_points)[:, None] * (x_to - x_from) + x_from
        elif init == "instanton":
            rep = gmam_instanton(model, x_from, x_to, n_points=max(100, n_points // 2))
            timed = reparametrize_to_time(rep.path, model)
            u = timed.times / timed.times[-1]
            phi = np.stack(
                [
                    np.interp(np.linspace(0, 1, n_points), u, timed.points[:, k])
                    for k in range(timed.points.shape[1])
                ],
                axis=1,
            )
        else:
            raise ValueError(f"unknown init '{init}'")
    else:
        phi = _redistribute(np.asarray(init, dtype=float), n_points)
    phi[0], phi[-1] = x_from, x_to

    val, grad = _om_objective_grad(phi, dt, model, sigma)
    log = [val]
    step = 1.0 if precondition else dt
    converged = False
    residual = math.inf
    it = 0
    while it < max_iter:
        it += 1
        g_in = grad[1:-1]
        residual = float(np.max(np.abs(g_in)))
        if residual < tol:
            converged = True
            break
        direction = _sobolev_solve(g_in, dt) if precondition else g_in
        slope = float(np.sum(g_in * direction))
        accepted = False
        for _ in range(60):
            cand = phi.copy()
            cand[1:-1] = phi[1:-1] - step * direction
            new_val, new_grad = _om_objective_grad(cand, dt, model, sigma)
            if np.isfinite(new_val) and new_val <= val - 1e-4 * step * slope:
                accepted = True
                break
            step *= 0.5
            if step < 1e-16:
                break
        if not accepted:
            break
        phi, val, grad = cand, new_val, new_grad
        log.append(val)
        step = min(step * 1.3, 1e3)

    times = np.linspace(0.0, T, n_points)
    path = DiscretePath(points=phi, times=times)
    act = om_action(path, model, sigma)
    return MinimizerReport(
        path=path,
        action=act,
        iterations=it,
        residual=residual,
        residual_tol=tol,
        converged=converged,
        action_log=np.asarray(log),
    )
