"""Built-in drift/diffusion systems and their exact derivative information.

Every model is a :class:`ModelSpec` bundling vectorized evaluators for the
drift b(x), its Jacobian, its divergence, the gradient of the divergence,
and the noise structure (diffusion matrix ``Sigma`` and covariance
``Q = Sigma Sigma^T``).  All evaluators accept arrays of shape ``(..., D)``
and are pure functions, so they can be shared freely across workers.

Available models:

* ``fhn``              -- bistable fast-slow neuron model, additive noise
* ``comp``             -- two competing species with Allee effects,
                          multiplicative noise with covariance diag(x, y)
* ``comp_transformed`` -- the competition model mapped through
                          (x, y) -> (2 sqrt x, 2 sqrt y), which renders the
                          noise additive; the drift carries the Ito
                          correction of the change of variables
* ``double_well_1d`` / ``double_well_2d`` -- gradient systems with an
                          analytic quasipotential (used as oracles)
* ``linear``           -- b = -A x with A symmetric positive definite,
                          also with an analytic quasipotential
* ``rotation``         -- divergence-free solid rotation (test model)
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

Array = np.ndarray

# Floor applied to the transformed competition chart near the axes, where
# the Ito correction -sigma^2/(2u) is singular.
TRANSFORM_FLOOR = 1e-8


class DomainError(ValueError):
    """State outside a model's admissible domain (e.g. negative population)."""


class SingularNoiseError(ValueError):
    """Noise covariance not invertible at the requested state."""


@dataclass(frozen=True)
class SpecialPoints:
    """Known equilibria of a model, grouped by linear stability."""

    attractors: dict[str, Array] = field(default_factory=dict)
    saddles: dict[str, Array] = field(default_factory=dict)
    repellers: dict[str, Array] = field(default_factory=dict)

    def all_points(self) -> dict[str, Array]:
        out: dict[str, Array] = {}
        out.update(self.attractors)
        out.update(self.saddles)
        out.update(self.repellers)
        return out


@dataclass(frozen=True)
class ModelSpec:
    """A drift/diffusion system with analytic derivative information.

    Attributes
    ----------
    name : str
        Registry identifier.
    dimension : int
        State-space dimension D.
    params : dict
        Named parameters used to build the evaluators.
    drift, jacobian, divergence, div_grad :
        Vectorized evaluators; ``drift`` maps ``(..., D) -> (..., D)``,
        ``jacobian`` to ``(..., D, D)``, ``divergence`` to ``(...)`` and
        ``div_grad`` (gradient of the divergence) to ``(..., D)``.
    noise_kind : str
        One of ``"identity"``, ``"const_diag"`` (diagonal entries in
        ``noise_diag``) or ``"sqrt_diag"`` (Sigma = diag(sqrt(x_i)),
        i.e. covariance diag(x)).
    noise_diag : tuple or None
        Diagonal of the constant covariance Q for ``const_diag``.
    admissible : callable or None
        Predicate marking valid states; ``None`` means all of R^D.
    special_points : SpecialPoints
        Analytically known equilibria (may be empty; more can be found
        numerically with :func:`stochtrans.landscape.find_equilibria`).
    kernel_code : int
        Dispatch code for the compiled simulation kernels; -1 when the
        model has no compiled fast path.
    kernel_params : tuple
        Parameter vector consumed by the compiled kernels.
    to_chart, from_chart : callable or None
        Coordinate maps for transformed charts (state arrays in, out).
    base : ModelSpec or None
        Original model for transformed charts.
    """

    name: str
    dimension: int
    params: dict
    drift: Callable[[Array], Array]
    jacobian: Callable[[Array], Array]
    divergence: Callable[[Array], Array]
    div_grad: Callable[[Array], Array]
    noise_kind: str = "identity"
    noise_diag: tuple | None = None
    admissible: Callable[[Array], Array] | None = None
    special_points: SpecialPoints = field(default_factory=SpecialPoints)
    kernel_code: int = -1
    kernel_params: tuple = ()
    to_chart: Callable[[Array], Array] | None = None
    from_chart: Callable[[Array], Array] | None = None
    base: "ModelSpec | None" = None

    def is_admissible(self, x: Array) -> Array:
        if self.admissible is None:
            return np.ones(np.shape(x)[:-1], dtype=bool)
        return self.admissible(np.asarray(x, dtype=float))


# ---------------------------------------------------------------------------
# operations


def drift(model: ModelSpec, x: Array) -> Array:
    """Evaluate b(x), rejecting states outside the admissible domain."""
    x = np.asarray(x, dtype=float)
    ok = model.is_admissible(x)
    if not np.all(ok):
        raise DomainError(f"state outside admissible domain of model '{model.name}'")
    return model.drift(x)


def jacobian(model: ModelSpec, x: Array) -> Array:
    x = np.asarray(x, dtype=float)
    return model.jacobian(x)


def divergence(model: ModelSpec, x: Array) -> Array:
    """Divergence of the drift, from the analytically differentiated form."""
    x = np.asarray(x, dtype=float)
    ok = model.is_admissible(x)
    if not np.all(ok):
        raise DomainError(f"state outside admissible domain of model '{model.name}'")
    return model.divergence(x)


def diffusion(model: ModelSpec, x: Array) -> tuple[Array, Array, Array | None]:
    """Return (Sigma, Q, Q^-1) at x; Q^-1 is None where Q is singular."""
    x = np.asarray(x, dtype=float)
    d = model.dimension
    shape = x.shape[:-1]
    if model.noise_kind == "identity":
        eye = np.broadcast_to(np.eye(d), shape + (d, d)).copy()
        return eye, eye.copy(), eye.copy()
    if model.noise_kind == "const_diag":
        q = np.zeros(shape + (d, d))
        sig = np.zeros(shape + (d, d))
        qinv = np.zeros(shape + (d, d))
        for i, qi in enumerate(model.noise_diag):
            q[..., i, i] = qi
            sig[..., i, i] = math.sqrt(qi)
            qinv[..., i, i] = 1.0 / qi
        return sig, q, qinv
    if model.noise_kind == "sqrt_diag":
        if np.any(x < 0):
            raise DomainError("covariance diag(x) undefined for negative states")
        q = np.zeros(shape + (d, d))
        sig = np.zeros(shape + (d, d))
        for i in range(d):
            q[..., i, i] = x[..., i]
            sig[..., i, i] = np.sqrt(x[..., i])
        if np.any(x <= 0.0):
            return sig, q, None
        qinv = np.zeros(shape + (d, d))
        for i in range(d):
            qinv[..., i, i] = 1.0 / x[..., i]
        return sig, q, qinv
    raise ValueError(f"unknown noise kind '{model.noise_kind}'")


# ---------------------------------------------------------------------------
# FitzHugh-Nagumo


def fhn(epsilon: float = 0.1, beta: float = 3.0) -> ModelSpec:
    """Bistable fast-slow model: du = (-u^3 + u - v)/epsilon, dv = u - beta v."""
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    if beta <= 1:
        raise ValueError("bistability requires beta > 1")
    inv_eps = 1.0 / epsilon

    def _drift(x: Array) -> Array:
        u, v = x[..., 0], x[..., 1]
        out = np.empty_like(x)
        out[..., 0] = inv_eps * (-(u**3) + u - v)
        out[..., 1] = -beta * v + u
        return out

    def _jac(x: Array) -> Array:
        u = x[..., 0]
        out = np.empty(x.shape[:-1] + (2, 2))
        out[..., 0, 0] = inv_eps * (1.0 - 3.0 * u**2)
        out[..., 0, 1] = -inv_eps
        out[..., 1, 0] = 1.0
        out[..., 1, 1] = -beta
        return out

    def _div(x: Array) -> Array:
        u = x[..., 0]
        return inv_eps * (1.0 - 3.0 * u**2) - beta

    def _div_grad(x: Array) -> Array:
        out = np.zeros_like(x)
        out[..., 0] = -6.0 * inv_eps * x[..., 0]
        return out

    u_star = math.sqrt(1.0 - 1.0 / beta)
    v_star = u_star / beta
    pts = SpecialPoints(
        attractors={"R": np.array([u_star, v_star]), "L": np.array([-u_star, -v_star])},
        saddles={"M": np.array([0.0, 0.0])},
    )
    return ModelSpec(
        name="fhn",
        dimension=2,
        params={"epsilon": epsilon, "beta": beta},
        drift=_drift,
        jacobian=_jac,
        divergence=_div,
        div_grad=_div_grad,
        noise_kind="identity",
        special_points=pts,
        kernel_code=0,
        kernel_params=(epsilon, beta),
    )


def critical_manifold_residual(model: ModelSpec, u: Array) -> Array:
    """epsilon * (u-component of the drift) on the cubic nullcline; zero there."""
    u = np.asarray(u, dtype=float)
    pts = np.stack([u, -(u**3) + u], axis=-1)
    return model.params["epsilon"] * model.drift(pts)[..., 0]


# ---------------------------------------------------------------------------
# two competing species with Allee effects


def _comp_fg(x: Array, y: Array, p: dict) -> tuple[Array, Array]:
    fx = x * (x - p["alpha_a"]) * (1.0 - x) - p["beta_a"] * x * y
    gy = p["epsilon"] * (y * (y - p["alpha_b"]) * (1.0 - y) - p["beta_b"] * x * y)
    return fx, gy


def comp(
    alpha_a: float = 0.1,
    alpha_b: float = 0.3,
    beta_a: float = 0.18,
    beta_b: float = 0.1,
    epsilon: float = 1.0,
) -> ModelSpec:
    """Two competing species with Allee effects; covariance diag(x, y)."""
    p = {
        "alpha_a": alpha_a,
        "alpha_b": alpha_b,
        "beta_a": beta_a,
        "beta_b": beta_b,
        "epsilon": epsilon,
    }

    def _drift(x: Array) -> Array:
        fx, gy = _comp_fg(x[..., 0], x[..., 1], p)
        return np.stack([fx, gy], axis=-1)

    def _jac(x: Array) -> Array:
        xx, yy = x[..., 0], x[..., 1]
        out = np.empty(x.shape[:-1] + (2, 2))
        out[..., 0, 0] = -3.0 * xx**2 + 2.0 * (1.0 + alpha_a) * xx - alpha_a - beta_a * yy
        out[..., 0, 1] = -beta_a * xx
        out[..., 1, 0] = -epsilon * beta_b * yy
        out[..., 1, 1] = epsilon * (
            -3.0 * yy**2 + 2.0 * (1.0 + alpha_b) * yy - alpha_b - beta_b * xx
        )
        return out

    def _div(x: Array) -> Array:
        j = _jac(x)
        return j[..., 0, 0] + j[..., 1, 1]

    def _div_grad(x: Array) -> Array:
        xx, yy = x[..., 0], x[..., 1]
        out = np.empty_like(x)
        out[..., 0] = (-6.0 * xx + 2.0 * (1.0 + alpha_a)) - epsilon * beta_b
        out[..., 1] = -beta_a + epsilon * (-6.0 * yy + 2.0 * (1.0 + alpha_b))
        return out

    def _admissible(x: Array) -> Array:
        return np.all(x >= -1e-12, axis=-1)

    pts = SpecialPoints(
        attractors={
            "E": np.array([0.0, 0.0]),
            "A": np.array([1.0, 0.0]),
            "B": np.array([0.0, 1.0]),
        },
        saddles={
            "a0": np.array([alpha_a, 0.0]),
            "b0": np.array([0.0, alpha_b]),
        },
    )
    return ModelSpec(
        name="comp",
        dimension=2,
        params=p,
        drift=_drift,
        jacobian=_jac,
        divergence=_div,
        div_grad=_div_grad,
        noise_kind="sqrt_diag",
        admissible=_admissible,
        special_points=pts,
        kernel_code=1,
        kernel_params=(alpha_a, alpha_b, beta_a, beta_b, epsilon),
    )


def transform_comp(model: ModelSpec, sigma: float, floor: float = TRANSFORM_FLOOR) -> ModelSpec:
    """Map the competition model through (x, y) -> (2 sqrt x, 2 sqrt y).

    In the new coordinates (u, w) the noise is additive with identity
    covariance, and the drift acquires the Ito correction of the change
    of variables, -sigma^2/(2u) and -sigma^2/(2w).  The correction is
    singular on the axes, so evaluations clamp u, w at ``floor``.
    """
    if model.name != "comp":
        raise ValueError("transform_comp expects the competition model")
    p = dict(model.params)
    eps = p["epsilon"]
    alpha_a, alpha_b = p["alpha_a"], p["alpha_b"]
    beta_a, beta_b = p["beta_a"], p["beta_b"]
    sig2 = sigma * sigma

    def _clamp(x: Array) -> tuple[Array, Array]:
        u = np.maximum(x[..., 0], floor)
        w = np.maximum(x[..., 1], floor)
        return u, w

    def _drift(x: Array) -> Array:
        u, w = _clamp(x)
        xx, yy = 0.25 * u**2, 0.25 * w**2
        fx, gy = _comp_fg(xx, yy, p)
        out = np.empty(np.broadcast(u, w).shape + (2,))
        out[..., 0] = 2.0 * fx / u - 0.5 * sig2 / u
        out[..., 1] = 2.0 * gy / w - 0.5 * sig2 / w
        return out

    def _jac(x: Array) -> Array:
        u, w = _clamp(x)
        xx, yy = 0.25 * u**2, 0.25 * w**2
        fx, gy = _comp_fg(xx, yy, p)
        jb = model.jacobian(np.stack([xx, yy], axis=-1))
        f_x, f_y = jb[..., 0, 0], jb[..., 0, 1]
        g_x, g_y = jb[..., 1, 0], jb[..., 1, 1]
        out = np.empty(np.broadcast(u, w).shape + (2, 2))
        # d/du [2 f(u^2/4, w^2/4)/u] = f_x - 2 f/u^2 ; Ito part adds +sig2/(2u^2)
        out[..., 0, 0] = f_x - 2.0 * fx / u**2 + 0.5 * sig2 / u**2
        out[..., 0, 1] = (w / u) * f_y
        out[..., 1, 0] = (u / w) * g_x
        out[..., 1, 1] = g_y - 2.0 * gy / w**2 + 0.5 * sig2 / w**2
        return out

    def _div(x: Array) -> Array:
        j = _jac(x)
        return j[..., 0, 0] + j[..., 1, 1]

    def _div_grad(x: Array) -> Array:
        u, w = _clamp(x)
        xx, yy = 0.25 * u**2, 0.25 * w**2
        fx, gy = _comp_fg(xx, yy, p)
        jb = model.jacobian(np.stack([xx, yy], axis=-1))
        f_x, g_x = jb[..., 0, 0], jb[..., 1, 0]
        f_y, g_y = jb[..., 0, 1], jb[..., 1, 1]
        f_xx = -6.0 * xx + 2.0 * (1.0 + alpha_a)
        f_xy = np.full_like(xx, -beta_a)
        g_yy = eps * (-6.0 * yy + 2.0 * (1.0 + alpha_b))
        g_yx = np.full_like(xx, -eps * beta_b)
        out = np.empty(np.broadcast(u, w).shape + (2,))
        out[..., 0] = (
            0.5 * u * (f_xx + g_yx)
            - f_x / u
            + 4.0 * fx / u**3
            - u * g_x / w**2
            - sig2 / u**3
        )
        out[..., 1] = (
            0.5 * w * (f_xy + g_yy)
            - g_y / w
            + 4.0 * gy / w**3
            - w * f_y / u**2
            - sig2 / w**3
        )
        return out

    def _admissible(x: Array) -> Array:
        return np.all(x >= -1e-12, axis=-1)

    def _to_chart(x: Array) -> Array:
        return 2.0 * np.sqrt(np.maximum(np.asarray(x, dtype=float), 0.0))

    def _from_chart(x: Array) -> Array:
        return 0.25 * np.asarray(x, dtype=float) ** 2

    return ModelSpec(
        name="comp_transformed",
        dimension=2,
        params={**p, "sigma": sigma, "floor": floor},
        drift=_drift,
        jacobian=_jac,
        divergence=_div,
        div_grad=_div_grad,
        noise_kind="identity",
        admissible=_admissible,
        special_points=SpecialPoints(),
        kernel_code=2,
        kernel_params=(alpha_a, alpha_b, beta_a, beta_b, eps, sigma, floor),
        to_chart=_to_chart,
        from_chart=_from_chart,
        base=model,
    )


# ---------------------------------------------------------------------------
# validation models with analytic quasipotentials


def double_well_1d() -> ModelSpec:
    """Gradient drift b = -(x^3 - x); quasipotential barrier 2 * (1/4)."""

    def _drift(x: Array) -> Array:
        xx = x[..., 0]
        return np.stack([-(xx**3) + xx], axis=-1)

    def _jac(x: Array) -> Array:
        out = np.empty(x.shape[:-1] + (1, 1))
        out[..., 0, 0] = 1.0 - 3.0 * x[..., 0] ** 2
        return out

    def _div(x: Array) -> Array:
        return 1.0 - 3.0 * x[..., 0] ** 2

    def _div_grad(x: Array) -> Array:
        return -6.0 * x

    pts = SpecialPoints(
        attractors={"minus": np.array([-1.0]), "plus": np.array([1.0])},
        saddles={"top": np.array([0.0])},
    )
    return ModelSpec(
        name="double_well_1d",
        dimension=1,
        params={},
        drift=_drift,
        jacobian=_jac,
        divergence=_div,
        div_grad=_div_grad,
        special_points=pts,
    )


def double_well_2d() -> ModelSpec:
    """b = -grad(x^4/4 - x^2/2 + y^2/2): minima (+-1, 0), saddle at the origin."""

    def _drift(x: Array) -> Array:
        out = np.empty_like(x)
        out[..., 0] = -(x[..., 0] ** 3) + x[..., 0]
        out[..., 1] = -x[..., 1]
        return out

    def _jac(x: Array) -> Array:
        out = np.zeros(x.shape[:-1] + (2, 2))
        out[..., 0, 0] = 1.0 - 3.0 * x[..., 0] ** 2
        out[..., 1, 1] = -1.0
        return out

    def _div(x: Array) -> Array:
        return -3.0 * x[..., 0] ** 2

    def _div_grad(x: Array) -> Array:
        out = np.zeros_like(x)
        out[..., 0] = -6.0 * x[..., 0]
        return out

    pts = SpecialPoints(
        attractors={"minus": np.array([-1.0, 0.0]), "plus": np.array([1.0, 0.0])},
        saddles={"top": np.array([0.0, 0.0])},
    )
    return ModelSpec(
        name="double_well_2d",
        dimension=2,
        params={},
        drift=_drift,
        jacobian=_jac,
        divergence=_div,
        div_grad=_div_grad,
        special_points=pts,
        kernel_code=3,
        kernel_params=(),
    )


def potential_double_well(x: Array) -> Array:
    """Potential x^4/4 - x^2/2 (+ y^2/2 in 2-D) of the double-well models."""
    x = np.asarray(x, dtype=float)
    v = 0.25 * x[..., 0] ** 4 - 0.5 * x[..., 0] ** 2
    if x.shape[-1] == 2:
        v = v + 0.5 * x[..., 1] ** 2
    return v


def linear(a_diag: tuple = (1.0, 2.0), q_diag: tuple = (1.0, 1.0)) -> ModelSpec:
    """b = -A x with A = diag(a_diag) and constant covariance diag(q_diag).

    The quasipotential about the origin is sum_i (a_i / q_i) x_i^2.
    """
    a = np.asarray(a_diag, dtype=float)
    if np.any(a <= 0):
        raise ValueError("A must be positive definite")
    d = len(a)
    amat = np.diag(a)

    def _drift(x: Array) -> Array:
        return -x * a

    def _jac(x: Array) -> Array:
        return np.broadcast_to(-amat, x.shape[:-1] + (d, d)).copy()

    def _div(x: Array) -> Array:
        return np.full(x.shape[:-1], -float(np.sum(a)))

    def _div_grad(x: Array) -> Array:
        return np.zeros_like(x)

    pts = SpecialPoints(attractors={"origin": np.zeros(d)})
    ident = bool(np.all(np.asarray(q_diag) == 1.0))
    return ModelSpec(
        name="linear",
        dimension=d,
        params={"a_diag": tuple(a), "q_diag": tuple(q_diag)},
        drift=_drift,
        jacobian=_jac,
        divergence=_div,
        div_grad=_div_grad,
        noise_kind="identity" if ident else "const_diag",
        noise_diag=None if ident else tuple(q_diag),
        special_points=pts,
        kernel_code=4 if d == 2 else -1,
        kernel_params=tuple(a) if d == 2 else (),
    )


def linear_quasipotential(model: ModelSpec, x: Array) -> Array:
    """Analytic quasipotential of the ``linear`` model."""
    a = np.asarray(model.params["a_diag"])
    q = np.asarray(model.params["q_diag"])
    x = np.asarray(x, dtype=float)
    return np.sum((a / q) * x**2, axis=-1)


def rotation() -> ModelSpec:
    """Divergence-free solid rotation b = (-y, x); no attractors."""

    def _drift(x: Array) -> Array:
        out = np.empty_like(x)
        out[..., 0] = -x[..., 1]
        out[..., 1] = x[..., 0]
        return out

    def _jac(x: Array) -> Array:
        out = np.zeros(x.shape[:-1] + (2, 2))
        out[..., 0, 1] = -1.0
        out[..., 1, 0] = 1.0
        return out

    def _div(x: Array) -> Array:
        return np.zeros(x.shape[:-1])

    def _div_grad(x: Array) -> Array:
        return np.zeros_like(x)

    return ModelSpec(
        name="rotation",
        dimension=2,
        params={},
        drift=_drift,
        jacobian=_jac,
        divergence=_div,
        div_grad=_div_grad,
    )


# ---------------------------------------------------------------------------
# registry

_BUILDERS: dict[str, Callable[..., ModelSpec]] = {
    "fhn": fhn,
    "comp": comp,
    "double_well_1d": double_well_1d,
    "double_well_2d": double_well_2d,
    "linear": linear,
    "rotation": rotation,
}


def model_names() -> list[str]:
    return sorted(_BUILDERS)


def build_model(name: str, params: dict | None = None) -> ModelSpec:
    """Instantiate a registered model, overriding default parameters."""
    try:
        builder = _BUILDERS[name]
    except KeyError:
        raise ValueError(f"unknown model '{name}'; known: {model_names()}") from None
    return builder(**(params or {}))
