"""Built-in equations with closed-form facts used as test oracles.

Each constructor returns ``BuiltModel(model, facts)``.  ``facts.declared``
holds the constants a user would declare for the condition checkers
(monotonicity constant, Hoelder exponent, growth constants, ...).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Sequence

import numpy as np
from scipy import integrate as spi

from .measures import (
    LayeredMeasure,
    empty_measure,
    integrate,
    measure_from_config,
    point_masses,
    power_law,
    uniform_box,
)
from .sde import ModelSpec, validate_model

__all__ = [
    "AnalyticFacts",
    "BuiltModel",
    "Declared",
    "IdentityCheck",
    "OdeSolution",
    "h_alpha",
    "counterexample_phi",
    "y1",
    "y2",
    "y2_prime",
    "q_kernel",
    "db_kernel",
    "model_h_alpha",
    "model_counterexample",
    "model_interval_flow",
    "model_positive_branching",
    "model_bounded_jump",
    "model_brownian",
    "model_constant_drift",
    "model_ou",
    "model_custom",
    "ode_residual",
    "build_model",
    "MODEL_NAMES",
]

_RULE_ORDER = 24


@dataclass(frozen=True)
class OdeSolution:
    """``y`` solves ``dx = -sign * phi(x) dt`` (``sign=+1``: decay, ``-1``: growth)."""

    name: str
    phi: Callable[[np.ndarray], np.ndarray]
    y: Callable[[np.ndarray], np.ndarray]
    y_prime: Callable[[np.ndarray], np.ndarray] | None
    sign: int
    kinks: tuple[float, ...] = ()


@dataclass(frozen=True)
class IdentityCheck:
    """A closed form and an independent quadrature of the same quantity."""

    name: str
    closed_form: Callable[..., float]
    quadrature: Callable[..., float]


@dataclass(frozen=True)
class Declared:
    """Constants declared for the condition checkers.

    ``K_l2(m)`` is the constant of the squared-increment bound on ``[-m, m]``;
    ``growth`` maps ``"bounded"``, ``"linear_growth"`` and ``"drift_growth"``
    to a constant and ``"diffusion_envelope"`` to a non-decreasing function ``L``.  ``modulus`` is ``(family, L)`` for the
    drift/uncompensated modulus.  ``f(marks)`` is the mark envelope of the
    Hoelder bound with exponent ``p``.  ``alpha_data`` optionally gives a
    lower-dimensional ``(measure, f)`` with the same tail index as
    ``(mu0, f)`` (e.g. with a uniform auxiliary coordinate integrated out).
    """

    c: float = 1.0
    p: float = 0.5
    f: Callable[[np.ndarray], np.ndarray] | None = None
    K_l2: Callable[[float], float] = lambda m: 0.0
    modulus: tuple[str, float] = ("linear", 1.0)
    growth: dict = field(default_factory=dict)
    alpha_data: tuple | None = None


@dataclass(frozen=True)
class AnalyticFacts:
    closed_form_compensator: Callable[[np.ndarray, int], np.ndarray] | None = None
    invariant_interval: tuple[float, float] | None = None
    ode_solutions: tuple[OdeSolution, ...] = ()
    identity_checks: tuple[IdentityCheck, ...] = ()
    declared: Declared = field(default_factory=Declared)


class BuiltModel(NamedTuple):
    model: ModelSpec
    facts: AnalyticFacts


def _check_registration(model: ModelSpec) -> ModelSpec:
    problems = validate_model(model)
    if problems:
        raise ValueError(f"model {model.name!r} fails registration checks: {problems}")
    return model


# -- scalar kernels --------------------------------------------------------------

def h_alpha(x, alpha: float):
    """``(1-alpha)^{-1} x^alpha`` for ``x >= 0``, zero otherwise."""
    x = np.asarray(x, dtype=float)
    return np.where(x >= 0, np.maximum(x, 0.0) ** alpha / (1.0 - alpha), 0.0)


def counterexample_phi(x, alpha: float):
    """Bounded alpha-Hoelder bump on ``[0, 1]`` vanishing at both ends."""
    x = np.asarray(x, dtype=float)
    inside = (x >= 0) & (x <= 1)
    xc = np.clip(x, 0.0, 1.0)
    return np.where(inside, np.minimum(xc ** alpha, (1.0 - xc) ** alpha) / (1.0 - alpha), 0.0)


def y1(t):
    return np.ones_like(np.asarray(t, dtype=float))


def _y2_breaks(alpha):
    return 2.0 ** (alpha - 1.0), 2.0 ** alpha


def y2(t, alpha: float):
    """Second solution from ``x(0) = 1``: leaves 1 at once and reaches 0 at ``t = 2^alpha``."""
    t = np.asarray(t, dtype=float)
    t1, t2 = _y2_breaks(alpha)
    e = 1.0 / (1.0 - alpha)
    a = 1.0 - np.clip(t, 0, t1) ** e
    b = np.clip(t2 - t, 0, None) ** e
    return np.where(t < t1, a, np.where(t < t2, b, 0.0))


def y2_prime(t, alpha: float):
    t = np.asarray(t, dtype=float)
    t1, t2 = _y2_breaks(alpha)
    e = alpha / (1.0 - alpha)
    a = -np.clip(t, 0, t1) ** e / (1.0 - alpha)
    b = -np.clip(t2 - t, 0, None) ** e / (1.0 - alpha)
    return np.where(t < t1, a, np.where(t < t2, b, 0.0))


def q_kernel(x, r):
    """Resampling kernel ``1{r <= 1 ^ x} - (1 ^ x) 1{x >= 0}``."""
    x = np.asarray(x, dtype=float)
    m = np.minimum(1.0, x)
    return (np.asarray(r) <= m).astype(float) - np.where(x >= 0, m, 0.0)


def db_kernel(x, u, r):
    """``-1{r x <= 1} x (1 - e^{-u})``."""
    x = np.asarray(x, dtype=float)
    return -np.where(np.asarray(r) * x <= 1.0, x * -np.expm1(-np.asarray(u)), 0.0)


# -- ODE residual ----------------------------------------------------------------

def ode_residual(phi, y, grid, sign: int = 1, y_prime=None, step: float = 1e-6) -> float:
    """Max of ``|y'(t) + sign * phi(y(t))|`` over ``grid``.

    ``sign = +1`` tests ``dx = -phi(x) dt``; ``sign = -1`` tests ``dx = +phi(x) dt``.
    Without ``y_prime`` the derivative is a centred difference of width ``2 step``.
    """
    if sign not in (1, -1):
        raise ValueError("sign must be +1 or -1")
    t = np.asarray(grid, dtype=float)
    if y_prime is not None:
        d = np.asarray(y_prime(t), dtype=float)
    else:
        d = (np.asarray(y(t + step)) - np.asarray(y(t - step))) / (2 * step)
    yt = np.asarray(y(t), dtype=float)
    return float(np.max(np.abs(d + sign * np.asarray(phi(yt)))))


# -- single-atom driven models ---------------------------------------------------

def _single_atom(name, kernel, lam, params, domain="full"):
    if lam < 0:
        raise ValueError("rate must be non-negative")
    mu0 = point_masses([[1.0]], [lam])

    def g0(x, marks):
        return kernel(x) + 0.0 * marks[..., 0]

    def comp(x, n):
        return lam * kernel(x) if n >= 1 else np.zeros(np.shape(x))

    def law(x, n):
        x = np.atleast_1d(np.asarray(x, dtype=float))
        if n < 1:
            return np.zeros((x.size, 0)), np.zeros((x.size, 0))
        return kernel(x)[:, None], np.full((x.size, 1), float(lam))

    model = ModelSpec(
        name=name, mu0=mu0, mu1=empty_measure(1), g0=g0, compensator0=comp, jump_law0=law,
        tail0=lambda x, n: (0.0 if n >= 1 else lam) * kernel(np.asarray(x, dtype=float)) ** 2,
        domain=domain, params=params,
    )
    return _check_registration(model), comp


def model_h_alpha(alpha: float = 0.5, lam: float = 1.0) -> BuiltModel:
    """Compensated Poisson driver of rate ``lam`` with jump ``h_alpha(x)``."""
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")
    kern = lambda x: h_alpha(x, alpha)  # noqa: E731
    model, comp = _single_atom("h_alpha", kern, lam, {"alpha": alpha, "lam": lam})
    e = 1.0 / (1.0 - alpha)
    sols = (
        OdeSolution("x1_zero", kern, lambda t: np.zeros_like(np.asarray(t, float)), lambda t: np.zeros_like(np.asarray(t, float)), -1),
        OdeSolution("x2_power", kern, lambda t: np.asarray(t, float) ** e,
                    lambda t: e * np.asarray(t, float) ** (e - 1.0), -1, (0.0,)),
        # between jumps the compensator drives dx = -lam h_alpha(x) dt
        OdeSolution("between_jumps_from_1", lambda x: lam * kern(x),
                    lambda t: np.clip(1.0 - lam * np.asarray(t, float), 0, None) ** e,
                    lambda t: -lam * e * np.clip(1.0 - lam * np.asarray(t, float), 0, None) ** (e - 1.0),
                    1, (1.0 / lam if lam else math.inf,)),
    )
    p = min(alpha, 0.5)
    declared = Declared(
        c=1.0, p=p,
        f=_holder_envelope(alpha, p),
        K_l2=lambda m: lam * (2.0 * m) ** (2 * alpha - 1) / (1 - alpha) ** 2 if alpha >= 0.5 else math.inf,
        modulus=("linear", 1.0),
        growth={"linear_growth": lam / (1 - alpha) ** 2, "drift_growth": 0.0, "diffusion_envelope": lambda x: lam * h_alpha(x, alpha) ** 2},
    )
    return BuiltModel(model, AnalyticFacts(closed_form_compensator=comp, ode_solutions=sols, declared=declared))


def _holder_envelope(alpha, p):
    # |x^a - y^a| <= |x-y|^a <= (2m)^{a-p} |x-y|^p on [-m, m]; m passed by the checker
    def f(marks, m: float = 1.0):
        return np.full(np.shape(marks)[:-1], (2.0 * m) ** (alpha - p) / (1.0 - alpha))
    return f


def model_counterexample(alpha: float = 0.5, lam: float = 1.0) -> BuiltModel:
    """Single-atom driver with the bounded non-monotone bump kernel; uniqueness fails."""
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")
    kern = lambda x: counterexample_phi(x, alpha)  # noqa: E731
    model, comp = _single_atom("counterexample", kern, lam, {"alpha": alpha, "lam": lam})
    phi_max = 2.0 ** (-alpha) / (1.0 - alpha)
    t1, t2 = _y2_breaks(alpha)
    sols = (
        OdeSolution("y1", kern, y1, lambda t: np.zeros_like(np.asarray(t, float)), 1),
        OdeSolution("y2", kern, lambda t: y2(t, alpha), lambda t: y2_prime(t, alpha), 1, (0.0, t1, t2)),
    )
    p = min(alpha, 0.5)
    declared = Declared(
        c=1.0, p=p, f=_holder_envelope(alpha, p),
        K_l2=lambda m: lam * (2.0 * m) ** (2 * alpha - 1) / (1 - alpha) ** 2 if alpha >= 0.5 else math.inf,
        modulus=("linear", 1.0),
        growth={"bounded": lam * phi_max ** 2, "linear_growth": lam * phi_max ** 2, "drift_growth": 0.0,
                "diffusion_envelope": lambda x: lam * phi_max ** 2 + 0.0 * np.asarray(x)},
    )
    return BuiltModel(model, AnalyticFacts(closed_form_compensator=comp, invariant_interval=(0.0, 1.0),
                                           ode_solutions=sols, declared=declared))



# -- Fleming-Viot one-point motion ---------------------------------------------------

def _nu_preset(nu: str | LayeredMeasure | dict, **kw) -> LayeredMeasure:
    if isinstance(nu, LayeredMeasure):
        return nu
    if isinstance(nu, dict):
        return measure_from_config(nu)
    if nu == "point":
        return point_masses([[kw.get("z", 0.5)]], [kw.get("weight", 1.0)])
    if nu == "uniform":
        return uniform_box(0.0, 1.0, kw.get("weight", 1.0))
    if nu == "power":
        return power_law(kw.get("beta", 1.5), lo=0.0, hi=1.0, max_layers=kw.get("max_layers", 64))
    raise ValueError(f"unknown nu preset {nu!r}")


def model_interval_flow(nu: str | LayeredMeasure | dict = "uniform", **kw) -> BuiltModel:
    """Compensated driver on marks ``(z, r)`` with jump ``z q(x, r)``; the state stays in ``[0, 1]``."""
    nu_m = _nu_preset(nu, **kw)
    if nu_m.dimension != 1:
        raise ValueError("nu must be one-dimensional")
    z2 = [float(l.integrate(lambda u: u[:, 0] ** 2)) for l in nu_m.layers]
    z2_cum = np.r_[0.0, np.cumsum(z2)]
    if not np.isfinite(z2_cum[-1]):
        raise ValueError("nu must have a finite second moment")
    _refuse_divergent_layers(np.asarray(z2), "z^2")
    mu0 = nu_m.times_uniform(0.0, 1.0)

    def g0(x, marks):
        return marks[..., 0] * q_kernel(x, marks[..., 1])

    def comp(x, n):
        return np.zeros(np.shape(x))

    def law(x, n):
        x = np.clip(np.atleast_1d(np.asarray(x, dtype=float)), 0.0, 1.0)
        if n == 0:
            return np.zeros((x.size, 0)), np.zeros((x.size, 0))
        z, w = nu_m.rule(n, _RULE_ORDER)
        z = z[:, 0]
        sizes = np.concatenate([z[None, :] * (1 - x)[:, None], -z[None, :] * x[:, None]], axis=1)
        weights = np.concatenate([w[None, :] * x[:, None], w[None, :] * (1 - x)[:, None]], axis=1)
        return sizes, weights

    def l0_sq(x, y, n):
        xc, yc = np.clip(x, 0, 1), np.clip(y, 0, 1)
        d = np.abs(xc - yc)
        return (d - d * d) * z2_cum[min(n, nu_m.n_layers)]

    def tail0(x, n):
        xc = np.clip(np.asarray(x, dtype=float), 0, 1)
        tb = nu_m.tail_bound(n) if nu_m.tail_bound is not None else z2_cum[-1] - z2_cum[min(n, nu_m.n_layers)]
        return xc * (1 - xc) * tb

    model = ModelSpec(
        name="bertoin_legall", mu0=mu0, mu1=empty_measure(1), g0=g0, compensator0=comp,
        jump_law0=law, tail0=tail0, l0_sq_integral=l0_sq, domain="nonnegative",
        params={"nu": nu_m.description, "z2": float(z2_cum[-1])},
    )
    _check_registration(model)
    Z2 = float(z2_cum[-1])

    def closed(x, y):
        d = abs(x - y)
        return (d - d * d) * Z2

    def quad(x, y):
        # r-integral by adaptive quadrature split at the jumps, z-integral per layer
        pts = sorted({min(max(x, 0.0), 1.0), min(max(y, 0.0), 1.0)} - {0.0, 1.0})
        r_int, _ = spi.quad(lambda r: (q_kernel(x, r) - q_kernel(y, r)) ** 2, 0.0, 1.0,
                            points=pts or None, epsabs=1e-13, epsrel=1e-12, limit=200)
        z_int = float(integrate(nu_m, lambda u: u[:, 0] ** 2, nu_m.n_layers, 1e-12))
        return r_int * z_int

    def comp_quad(x):
        val, _ = spi.quad(lambda r: q_kernel(x, r), 0.0, 1.0,
                          points=[min(max(x, 0.0), 1.0)] if 0 < x < 1 else None, epsabs=1e-14)
        return val

    checks = (
        IdentityCheck("squared_increment", closed, quad),
        IdentityCheck("compensator_vanishes", lambda x: 0.0, comp_quad),
    )
    declared = Declared(
        c=1.0, p=0.5, f=lambda marks, m=1.0: 2.0 * marks[..., 0],
        K_l2=lambda m: Z2, modulus=("linear", 1.0),
        growth={"bounded": Z2 / 4, "linear_growth": Z2 / 4, "drift_growth": 0.0, "diffusion_envelope": lambda x: Z2 / 4 + 0.0 * np.asarray(x)},
        alpha_data=(nu_m, lambda u: 2.0 * u[..., 0]),
    )
    return BuiltModel(model, AnalyticFacts(closed_form_compensator=comp, invariant_interval=(0.0, 1.0),
                                           identity_checks=checks, declared=declared))


# -- self-similar Markov process equation ---------------------------------------------

def _mu_preset(mu, **kw) -> LayeredMeasure:
    if isinstance(mu, LayeredMeasure):
        return mu
    if isinstance(mu, dict):
        return measure_from_config(mu)
    if mu == "power":
        return power_law(kw.get("alpha", 0.5), max_layers=kw.get("max_layers", 64))
    if mu == "point":
        return point_masses([[kw.get("u", math.log(2.0))]], [kw.get("weight", 1.0)])
    if mu == "exponential":
        from .measures import tilted_power_law
        return tilted_power_law(-1.0, kw.get("theta", 1.0), max_layers=kw.get("max_layers", 64))
    raise ValueError(f"unknown mu preset {mu!r}")


def _refuse_divergent_layers(contrib: np.ndarray, what: str) -> None:
    # A convergent layered integral has shrinking layer contributions; a cut-off
    # list whose last contributions do not shrink would be silently truncated.
    if contrib.size >= 3 and contrib[-1] > 0 and contrib[-1] >= contrib[-2] * (1 - 1e-9):
        raise ValueError(f"the layer integrals of {what} do not decay: the full integral appears "
                         "to diverge, which is not supported")


def model_positive_branching(mu="power", r_max: float = 4.0, **kw) -> BuiltModel:
    """Compensated driver on marks ``(u, r)``, ``r <= r_max``, with jump ``-1{rx<=1} x (1-e^{-u})``.

    The kernel is zero for ``x <= 0``.  Truncating ``r`` is exact while the
    state stays at or above ``1/r_max``; paths record a flag otherwise.
    """
    if r_max <= 0:
        raise ValueError("r_max must be positive")
    mu_m = _mu_preset(mu, **kw)
    if mu_m.dimension != 1:
        raise ValueError("mu must be one-dimensional")
    e1 = np.r_[0.0, np.cumsum([float(l.integrate(lambda u: -np.expm1(-u[:, 0]))) for l in mu_m.layers])]
    e2 = np.r_[0.0, np.cumsum([float(l.integrate(lambda u: np.expm1(-u[:, 0]) ** 2)) for l in mu_m.layers])]
    if not (np.isfinite(e1[-1]) and np.isfinite(e2[-1])):
        raise ValueError("mu must integrate 1 - e^{-u}; the general case is not supported")
    _refuse_divergent_layers(np.diff(e1), "1 - e^{-u}")
    mu0 = mu_m.times_uniform(0.0, r_max)

    def g0(x, marks):
        x = np.asarray(x, dtype=float)
        return np.where(x > 0, db_kernel(x, marks[..., 0], marks[..., 1]), 0.0)

    def reach(x):
        # int_0^{r_max} 1{r x <= 1} dr * x = min(1, r_max x) for x > 0
        x = np.asarray(x, dtype=float)
        return np.where(x > 0, np.minimum(1.0, r_max * np.maximum(x, 0.0)), 0.0)

    def comp(x, n):
        return -reach(x) * e1[min(n, mu_m.n_layers)]

    def law(x, n):
        x = np.atleast_1d(np.asarray(x, dtype=float))
        if n == 0:
            return np.zeros((x.size, 0)), np.zeros((x.size, 0))
        u, w = mu_m.rule(n, _RULE_ORDER)
        xp = np.maximum(x, 0.0)
        sizes = -xp[:, None] * (-np.expm1(-u[:, 0]))[None, :]
        rate = np.where(x > 0, np.minimum(1.0 / np.where(x > 0, x, 1.0), r_max), 0.0)
        return sizes, rate[:, None] * w[None, :]

    def l0_sq(x, y, n):
        a = np.maximum(np.minimum(x, y), 0.0)
        b = np.maximum(np.maximum(x, y), 0.0)
        ra = np.where(a > 0, np.minimum(1.0 / np.where(a > 0, a, 1.0), r_max), r_max)
        rb = np.where(b > 0, np.minimum(1.0 / np.where(b > 0, b, 1.0), r_max), r_max)
        val = (b - a) ** 2 * rb + a * a * np.maximum(ra - rb, 0.0)
        return val * e2[min(n, mu_m.n_layers)]

    def tail0(x, n):
        tb = mu_m.tail_bound(n) if mu_m.tail_bound is not None else e2[-1] - e2[min(n, mu_m.n_layers)]
        return reach(x) * np.maximum(np.asarray(x, dtype=float), 0.0) * tb

    model = ModelSpec(
        name="doering_barczy", mu0=mu0, mu1=empty_measure(1), g0=g0, compensator0=comp,
        jump_law0=law, tail0=tail0, l0_sq_integral=l0_sq, domain="nonnegative", exact_floor=1.0 / r_max,
        params={"mu": mu_m.description, "r_max": r_max},
    )
    _check_registration(model)
    E1, E2 = float(e1[-1]), float(e2[-1])

    def closed(x, y):
        return abs(x - y) * E2

    def quad(x, y):
        # untruncated r-range: the integrand vanishes beyond r = 1 / min(x, y)
        lo = min(x, y)
        top = 1.0 / lo if lo > 0 else 1.0 / max(x, y)
        pts = sorted({1.0 / v for v in (x, y) if v > 0})
        r_int, _ = spi.quad(lambda r: ((db_kernel(x, 1.0, r) - db_kernel(y, 1.0, r)) / -math.expm1(-1.0)) ** 2,
                            0.0, 2.0 * top, points=pts, epsabs=1e-13, epsrel=1e-12, limit=200)
        u_int = float(integrate(mu_m, lambda u: np.expm1(-u[:, 0]) ** 2, mu_m.n_layers, 1e-12))
        return r_int * u_int

    def reach_quad(x):
        val, _ = spi.quad(lambda r: float(r * x <= 1.0), 0.0, r_max, points=[1.0 / x] if x > 0 and 1 / x < r_max else None)
        return val * x

    checks = (
        IdentityCheck("squared_increment", closed, quad),
        IdentityCheck("compensator_reach", lambda x: float(reach(x)), reach_quad),
    )
    declared = Declared(
        c=1.0, p=0.5, f=lambda marks, m=1.0: -np.expm1(-marks[..., 0]),
        K_l2=lambda m: E2, modulus=("linear", 1.0),
        growth={"linear_growth": E2, "drift_growth": E1, "diffusion_envelope": lambda x: E2 * np.maximum(np.asarray(x, float), 0.0)},
        alpha_data=(mu_m, lambda u: -np.expm1(-u[..., 0])),
    )
    return BuiltModel(model, AnalyticFacts(closed_form_compensator=comp, identity_checks=checks,
                                           declared=declared))


# -- simple presets --------------------------------------------------------------------

def model_bounded_jump(points: Sequence[float] = (0.5, 1.0), weights: Sequence[float] = (1.0, 0.5)) -> BuiltModel:
    """Finite compensated driver with jump ``u cos(x)``."""
    pts = np.asarray(points, dtype=float)
    w = np.asarray(weights, dtype=float)
    if np.any(np.abs(pts) > 1):
        raise ValueError("marks must lie in [-1, 1] so that x + u cos x is non-decreasing")
    mu0 = point_masses(pts[:, None], w)
    cum_u = np.r_[0.0, np.cumsum(w * pts)]
    cum_u2 = np.r_[0.0, np.cumsum(w * pts ** 2)]

    def g0(x, marks):
        return marks[..., 0] * np.cos(x)

    def comp(x, n):
        return cum_u[min(n, pts.size)] * np.cos(x)

    def law(x, n):
        x = np.atleast_1d(np.asarray(x, dtype=float))
        k = min(n, pts.size)
        return pts[None, :k] * np.cos(x)[:, None], np.broadcast_to(w[None, :k], (x.size, k)).copy()

    def l0_sq(x, y, n):
        return cum_u2[min(n, pts.size)] * (np.cos(x) - np.cos(y)) ** 2

    model = ModelSpec(
        name="bounded_jump", mu0=mu0, mu1=empty_measure(1), g0=g0, compensator0=comp, jump_law0=law,
        l0_sq_integral=l0_sq,
        tail0=lambda x, n: (cum_u2[-1] - cum_u2[min(n, pts.size)]) * np.cos(x) ** 2,
        params={"points": pts.tolist(), "weights": w.tolist()},
    )
    U2 = float(cum_u2[-1])
    declared = Declared(
        c=1.0, p=0.5, f=lambda marks, m=1.0: np.abs(marks[..., 0]) * np.sqrt(2.0 * m),
        K_l2=lambda m: U2 * 2.0 * m, modulus=("linear", 1.0),
        growth={"bounded": U2, "linear_growth": U2},
    )
    return BuiltModel(_check_registration(model), AnalyticFacts(closed_form_compensator=comp, declared=declared))


def _const(v):
    return lambda x: np.full(np.shape(x), float(v))


def model_brownian(sigma: float = 1.0) -> BuiltModel:
    model = ModelSpec("brownian", empty_measure(1), empty_measure(1), sigma=_const(sigma),
                      params={"sigma": sigma})
    declared = Declared(K_l2=lambda m: 0.0, growth={"bounded": sigma ** 2, "linear_growth": sigma ** 2})
    return BuiltModel(_check_registration(model), AnalyticFacts(declared=declared))


def model_constant_drift(b: float = 1.0) -> BuiltModel:
    model = ModelSpec("constant_drift", empty_measure(1), empty_measure(1), b1=_const(b), params={"b": b})
    declared = Declared(K_l2=lambda m: 0.0, modulus=("linear", 1.0),
                        growth={"bounded": abs(b), "linear_growth": b * b, "drift_growth": max(b, 0.0)})
    return BuiltModel(_check_registration(model), AnalyticFacts(declared=declared))


def model_ou(theta: float = 1.0, sigma: float = 1.0) -> BuiltModel:
    """``dx = -theta x dt + sigma dB``."""
    model = ModelSpec("ou", empty_measure(1), empty_measure(1), sigma=_const(sigma),
                      b1=lambda x: -theta * np.asarray(x, dtype=float), params={"theta": theta, "sigma": sigma})
    declared = Declared(K_l2=lambda m: 0.0, modulus=("linear", abs(theta)),
                        growth={"linear_growth": max(theta ** 2, sigma ** 2)})
    return BuiltModel(_check_registration(model), AnalyticFacts(declared=declared))


# -- custom models from coefficient families ----------------------------------------------

_COEF_FAMILIES = {
    "zero": lambda p: (lambda x: np.zeros(np.shape(x))),
    "constant": lambda p: _const(p.get("value", 0.0)),
    "affine": lambda p: (lambda x: p.get("slope", 0.0) * np.asarray(x, float) + p.get("intercept", 0.0)),
    "sqrt_pos": lambda p: (lambda x: p.get("scale", 1.0) * np.sqrt(np.maximum(np.asarray(x, float), 0.0))),
    "cos": lambda p: (lambda x: p.get("scale", 1.0) * np.cos(x)),
    "sin": lambda p: (lambda x: p.get("scale", 1.0) * np.sin(x)),
    "square": lambda p: (lambda x: p.get("scale", 1.0) * np.asarray(x, float) ** 2),
    "tanh": lambda p: (lambda x: p.get("scale", 1.0) * np.tanh(x)),
}


def _coef(spec):
    if spec is None:
        return None
    spec = dict(spec)
    fam = spec.pop("family", None)
    if fam not in _COEF_FAMILIES:
        raise ValueError(f"unknown coefficient family {fam!r}; expected one of {sorted(_COEF_FAMILIES)}")
    return _COEF_FAMILIES[fam](spec)


def _jump(spec):
    """``{"family": "mark"}`` gives ``u``; ``{"family": "mark_times", "coef": {...}}`` gives ``u c(x)``."""
    if spec is None:
        return None
    spec = dict(spec)
    fam = spec.pop("family", None)
    if fam == "mark":
        return lambda x, marks: marks[..., 0] + 0.0 * np.asarray(x)
    if fam == "mark_times":
        c = _coef(spec.get("coef"))
        return lambda x, marks: marks[..., 0] * c(x)
    raise ValueError(f"unknown jump family {fam!r}; expected 'mark' or 'mark_times'")


def model_custom(sigma=None, b1=None, b2=None, g0=None, g1=None, mu0=None, mu1=None,
                 domain: str = "full", u2_layers=None, declared: dict | None = None) -> BuiltModel:
    """Combine built-in coefficient families and measure families from a config map."""
    m0 = measure_from_config(mu0) if mu0 else empty_measure(1)
    m1 = measure_from_config(mu1) if mu1 else empty_measure(1)
    model = ModelSpec(
        name="custom", mu0=m0, mu1=m1, sigma=_coef(sigma), b1=_coef(b1), b2=_coef(b2),
        g0=_jump(g0), g1=_jump(g1), domain=domain,
        u2_layers=frozenset(u2_layers) if u2_layers is not None else None,
        params={"sigma": sigma, "b1": b1, "b2": b2, "g0": g0, "g1": g1, "mu0": mu0, "mu1": mu1},
    )
    d = dict(declared or {})
    K_l2_value = d.pop("K_l2", 0.0)
    growth = d.pop("growth", {})
    modulus = tuple(d.pop("modulus", ("linear", 1.0)))
    f_scale = d.pop("f_scale", 1.0)
    dec = Declared(K_l2=lambda m: K_l2_value, growth=growth, modulus=modulus,
                   f=lambda marks, m=1.0: f_scale * np.abs(marks[..., 0]), **d)
    return BuiltModel(_check_registration(model), AnalyticFacts(declared=dec))


_BUILDERS: dict[str, Callable[..., BuiltModel]] = {
    "h_alpha": model_h_alpha,
    "counterexample": model_counterexample,
    "bertoin_legall": model_interval_flow,
    "doering_barczy": model_positive_branching,
    "bounded_jump": model_bounded_jump,
    "brownian": model_brownian,
    "constant_drift": model_constant_drift,
    "ou": model_ou,
    "custom": model_custom,
}
MODEL_NAMES = tuple(_BUILDERS)


def build_model(name: str, params: dict | None = None) -> BuiltModel:
    if name not in _BUILDERS:
        raise ValueError(f"unknown model {name!r}; expected one of {list(MODEL_NAMES)}")
    return _BUILDERS[name](**(params or {}))
