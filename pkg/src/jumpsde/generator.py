"""Integro-differential generator and the Monte Carlo martingale check.

``apply_generator`` evaluates

    A f(x) = 1/2 sigma(x)^2 f''(x) + b(x) f'(x)
             + int [f(x + g0) - f(x) - f'(x) g0] mu0(du)
             + int_{U2} [f(x + g1) - f(x)] mu1(du)

over the retained layers; passing ``m`` evaluates the coefficients at the
clamped state (the truncated generator).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .measures import integrate
from .noise import coarsen
from .sde import ModelSpec, Observer, TruncationParams, _eval, ensemble_noises, run_batch

__all__ = [
    "TestFunction",
    "cos_function",
    "gaussian_bump",
    "capped_linear",
    "combine",
    "test_function",
    "GeneratorValue",
    "second_difference",
    "apply_generator",
    "MartingaleReport",
    "martingale_residual",
]

Fn = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class TestFunction:
    """``f`` with two derivatives and declared sup-norms.

    ``bounds`` holds ``"f"``, ``"f1"``, ``"f2"`` and, when known, ``"f3"``,
    ``"f4"`` for the third and fourth derivatives.
    """

    __test__ = False  # keep pytest from collecting this class

    name: str
    f: Fn
    f_prime: Fn
    f_second: Fn
    bounds: dict = field(default_factory=dict)

    def __post_init__(self):
        for key in ("f", "f1", "f2"):
            if not math.isfinite(self.bounds.get(key, math.inf)):
                raise ValueError(f"test function needs a finite bound {key!r}")

    def consistency(self, grid: np.ndarray, step: float = 1e-4) -> tuple[float, float]:
        """Largest centred-difference mismatch of ``f'`` and ``f''`` on ``grid``."""
        g = np.asarray(grid, dtype=float)
        d1 = (self.f(g + step) - self.f(g - step)) / (2 * step)
        d2 = (self.f_prime(g + step) - self.f_prime(g - step)) / (2 * step)
        return float(np.max(np.abs(d1 - self.f_prime(g)))), float(np.max(np.abs(d2 - self.f_second(g))))


def cos_function() -> TestFunction:
    return TestFunction("cos", np.cos, lambda x: -np.sin(x), lambda x: -np.cos(x),
                        {"f": 1.0, "f1": 1.0, "f2": 1.0, "f3": 1.0, "f4": 1.0})


def gaussian_bump(scale: float = 1.0) -> TestFunction:
    """``exp(-x^2 / (2 s^2))``."""
    s = float(scale)

    def f(x):
        return np.exp(-0.5 * (np.asarray(x, float) / s) ** 2)

    def f1(x):
        return -np.asarray(x, float) / s ** 2 * f(x)

    def f2(x):
        z = np.asarray(x, float) / s
        return (z * z - 1.0) / s ** 2 * f(x)

    # sup norms of the Hermite-function profiles He_k(z) e^{-z^2/2}
    bounds = {"f": 1.0, "f1": math.exp(-0.5) / s, "f2": 1.0 / s ** 2,
              "f3": 1.3802 / s ** 3, "f4": 3.0 / s ** 4}
    return TestFunction("gaussian-bump", f, f1, f2, bounds)


def capped_linear(radius: float = 10.0, width: float = 1.0) -> TestFunction:
    """Odd function equal to ``x`` on ``[-radius, radius]`` and constant beyond ``radius + width``.

    The slope falls from 1 to 0 along a quintic smoothstep, so ``f`` is ``C^3``.
    """
    R, w = float(radius), float(width)

    def parts(x):
        x = np.asarray(x, dtype=float)
        r = np.abs(x)
        t = np.clip((r - R) / w, 0.0, 1.0)
        return x, np.sign(x), r, t, (r > R) & (r < R + w)

    def f(x):
        x, s, r, t, _ = parts(x)
        ramp = R + w * (t - (t ** 6 - 3 * t ** 5 + 2.5 * t ** 4))
        return np.where(r <= R, x, s * ramp)

    def f1(x):
        _, _, _, t, _ = parts(x)
        return 1.0 - (6 * t ** 5 - 15 * t ** 4 + 10 * t ** 3)

    def f2(x):
        _, s, _, t, mid = parts(x)
        return np.where(mid, -s * 30 * t ** 2 * (t - 1) ** 2 / w, 0.0)

    bounds = {"f": R + w / 2, "f1": 1.0, "f2": 1.875 / w, "f3": (10 / math.sqrt(3)) / w ** 2,
              "f4": 60.0 / w ** 3}
    return TestFunction("capped-linear", f, f1, f2, bounds)


def combine(coeffs: Sequence[float], fns: Sequence[TestFunction]) -> TestFunction:
    """Linear combination with triangle-inequality bounds."""
    cs = [float(c) for c in coeffs]
    keys = set.intersection(*(set(fn.bounds) for fn in fns))
    bounds = {k: sum(abs(c) * fn.bounds[k] for c, fn in zip(cs, fns)) for k in keys}

    def lin(attr):
        return lambda x: sum(c * getattr(fn, attr)(x) for c, fn in zip(cs, fns))

    return TestFunction("+".join(fn.name for fn in fns), lin("f"), lin("f_prime"), lin("f_second"), bounds)


_TEST_FUNCTIONS = {"cos": cos_function, "capped-linear": capped_linear, "gaussian-bump": gaussian_bump}


def test_function(name: str, **params) -> TestFunction:
    if name not in _TEST_FUNCTIONS:
        raise ValueError(f"unknown test function {name!r}; expected one of {sorted(_TEST_FUNCTIONS)}")
    return _TEST_FUNCTIONS[name](**params)


test_function.__test__ = False


@dataclass
class GeneratorValue:
    value: np.ndarray | float
    error_bound: np.ndarray | float


_SMALL_JUMP = 1e-3
_GL_NODES = 0.5 - 0.5 / math.sqrt(3.0), 0.5 + 0.5 / math.sqrt(3.0)


def second_difference(f: TestFunction, x, g):
    """``f(x + g) - f(x) - f'(x) g`` without cancellation for small ``g``.

    Below ``|g| = 1e-3`` the integral form ``g^2 int_0^1 (1-t) f''(x + t g) dt``
    is evaluated by two-point Gauss-Legendre (error of order ``g^5``); the
    direct difference would lose all digits there, and layers of small jumps
    carry enormous mass.
    """
    x, g = np.broadcast_arrays(np.asarray(x, dtype=float), np.asarray(g, dtype=float))
    direct = f.f(x + g) - f.f(x) - f.f_prime(x) * g
    small = np.abs(g) < _SMALL_JUMP
    if not np.any(small):
        return direct
    t1, t2 = _GL_NODES
    xs, gs = x[small], g[small]
    out = np.array(direct, dtype=float)
    out[small] = 0.5 * gs * gs * ((1 - t1) * f.f_second(xs + t1 * gs) + (1 - t2) * f.f_second(xs + t2 * gs))
    return out


def _u2_layers(model: ModelSpec, n1: int) -> list[int]:
    return [i for i in range(1, n1 + 1) if model.in_u2(i)]


def apply_generator(
    model: ModelSpec,
    f: TestFunction,
    x,
    n0: int | None = None,
    n1: int | None = None,
    tol: float = 1e-10,
    m: float | None = None,
    truncate_g1: bool = False,
    with_error: bool = True,
) -> GeneratorValue:
    """``A f(x)`` over the first ``n0``/``n1`` layers (all layers by default).

    ``error_bound`` covers the discarded layers:
    ``1/2 |f''| tail0 + |f'| tail1`` (``inf`` when the model gives no tail bound).
    """
    scalar = np.ndim(x) == 0
    x = np.atleast_1d(np.asarray(x, dtype=float))
    n0 = model.mu0.n_layers if n0 is None else n0
    n1 = model.mu1.n_layers if n1 is None else n1
    xc = np.clip(x, -m, m) if m is not None else x
    fx, f1x, f2x = f.f(x), f.f_prime(x), f.f_second(x)

    val = 0.5 * _eval(model.sigma, xc) ** 2 * f2x + model.b(xc) * f1x
    err = np.zeros_like(x)

    if model.g0 is not None and n0 > 0:
        if model.jump_law0 is not None:
            sizes, w = model.jump_law0(xc, n0)
            xs = x[:, None]
            val = val + np.sum(w * second_difference(f, xs, sizes), axis=1)
        else:
            def d_integrand(u):
                return second_difference(f, x[None, :], model.g0(xc[None, :], u[:, None, :]))
            val = val + np.asarray(integrate(model.mu0, d_integrand, n0, tol)).reshape(x.shape)
    if model.g0 is not None and with_error:
        if model.tail0 is not None:
            err = err + 0.5 * f.bounds["f2"] * np.asarray(model.tail0(xc, n0), dtype=float)
        elif n0 < model.mu0.n_layers:
            err = err + math.inf

    if model.g1 is not None and n1 > 0:
        def jump1(z):
            return np.clip(z, -m, m) if (truncate_g1 and m is not None) else z
        if model.jump_law1 is not None and not truncate_g1:
            sizes, w = model.jump_law1(xc, n1)
            val = val + np.sum(w * (f.f(x[:, None] + sizes) - fx[:, None]), axis=1)
        else:
            for i in _u2_layers(model, n1):
                layer = model.mu1.layer(i)
                if layer.mass == 0:
                    continue
                res = layer.integrate(
                    lambda u: f.f(x[None, :] + jump1(model.g1(xc[None, :], u[:, None, :]))) - fx[None, :], tol)
                val = val + np.asarray(res).reshape(x.shape)
    if model.g1 is not None and with_error:
        if model.tail1 is not None:
            err = err + f.bounds["f1"] * np.asarray(model.tail1(xc, n1), dtype=float)
        elif n1 < model.mu1.n_layers:
            err = err + math.inf

    if scalar:
        return GeneratorValue(float(val[0]), float(err[0]))
    return GeneratorValue(val, err)


class _ResidualObserver(Observer):
    def __init__(self, P, af):
        self.acc = np.zeros(P)
        self.af = af

    def segment(self, idx, t0, t1, x_left):
        self.acc[idx] += self.af(x_left) * (t1 - t0)


@dataclass
class MartingaleReport:
    mean: float
    se: float
    bias_budget: float
    passed: bool
    n_paths: int
    coarse_mean: float
    step: float

    def as_dict(self) -> dict:
        return {"mean": self.mean, "se": self.se, "bias_budget": self.bias_budget,
                "pass": self.passed, "n_paths": self.n_paths, "coarse_mean": self.coarse_mean,
                "h": self.step}


def martingale_residual(
    model: ModelSpec,
    trunc: TruncationParams,
    f: TestFunction,
    x0: float,
    t: float,
    n_paths: int,
    seed: int,
    chunk: int = 2048,
    tol: float = 1e-10,
) -> MartingaleReport:
    """Sample mean and standard error of ``Z = f(x(t)) - f(x0) - int_0^t A f(x(s)) ds``.

    The time integral uses the left-endpoint rule on the event timeline, with
    the truncated generator matching the simulated equation.  Each path is also
    run at step ``2h`` on the coarsened noise; since the discretisation bias is
    first order, ``mean(Z_2h - Z_h)`` estimates the bias at ``h`` and its
    absolute value plus three standard errors is the declared budget.  The
    check passes when ``|mean Z| <= 3 se + budget``.
    """
    if n_paths < 2:
        raise ValueError("need at least two paths for a standard error")
    m = trunc.m if trunc.clamp else None

    def af(xs):
        return apply_generator(model, f, xs, trunc.n0, trunc.n1, tol, m, trunc.truncate_g1,
                               with_error=False).value

    coarse = TruncationParams(trunc.m, trunc.n0, trunc.n1, 2 * trunc.h, trunc.truncate_g1, trunc.clamp)
    z_fine, z_coarse = [], []
    for start in range(0, n_paths, chunk):
        stop = min(start + chunk, n_paths)
        noises = ensemble_noises(model, trunc, seed, t, start, stop)
        for tp, nz, out in ((trunc, noises, z_fine), (coarse, [coarsen(n, 2) for n in noises], z_coarse)):
            obs = _ResidualObserver(stop - start, af)
            xt = run_batch(model, tp, nz, x0, t, obs)
            out.append(f.f(xt) - f.f(np.float64(x0)) - obs.acc)
    zf = np.concatenate(z_fine)
    zc = np.concatenate(z_coarse)
    n = zf.size
    mean = float(zf.mean())
    se = float(zf.std(ddof=1) / math.sqrt(n))
    diff = zc - zf
    budget = abs(float(diff.mean())) + 3.0 * float(diff.std(ddof=1) / math.sqrt(n))
    passed = abs(mean) <= 3.0 * se + budget
    return MartingaleReport(mean, se, budget, bool(passed), n, float(zc.mean()), trunc.h)
