"""Empirical probes of the coefficient conditions on finite grids.

A passing check means the inequality held at every probed point; it is
evidence, not a proof.  Constants (``K``, ``c``, ``p``, envelopes, moduli)
are declared by the caller and only verified here.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .measures import QuadratureError, estimate_alpha, integrate
from .sde import ModelSpec, _eval

__all__ = [
    "Modulus",
    "make_modulus",
    "CheckResult",
    "ConditionCertificate",
    "check_coefficient_modulus",
    "check_monotone",
    "check_kernel_l2",
    "check_kernel_holder",
    "check_growth",
    "certify",
    "sample_marks",
    "default_grid",
    "pair_grid",
]


@dataclass(frozen=True)
class Modulus:
    """Concave non-decreasing ``r`` with ``int_{0+} dz / r(z) = infinity``.

    ``linear``: ``r(z) = L z``.  ``zlog``: ``r(z) = L z log(1/z)`` up to
    ``cutoff`` (at most ``1/e``), continued by its tangent line.
    """

    family: str
    L: float = 1.0
    cutoff: float = 0.25

    def __call__(self, z):
        z = np.asarray(z, dtype=float)
        if self.family == "linear":
            return self.L * z
        d = self.cutoff
        zc = np.clip(z, 1e-300, d)
        head = self.L * zc * np.log(1.0 / zc)
        slope = self.L * (math.log(1.0 / d) - 1.0)
        tail = self.L * d * math.log(1.0 / d) + slope * (z - d)
        return np.where(z <= 0, 0.0, np.where(z <= d, head, tail))


def make_modulus(family: str, L: float = 1.0, cutoff: float = 0.25) -> Modulus:
    """Only families whose reciprocal integral diverges at ``0+`` are accepted."""
    if family not in ("linear", "zlog"):
        raise ValueError(
            f"modulus family {family!r} is not supported: the divergence of int dz/r(z) at 0+ "
            "is only known for 'linear' and 'zlog'"
        )
    if L < 0:
        raise ValueError("modulus constant must be non-negative")
    if family == "zlog" and not 0 < cutoff <= math.exp(-1):
        raise ValueError("zlog cutoff must lie in (0, 1/e] for concavity")
    return Modulus(family, float(L), float(cutoff))


@dataclass
class CheckResult:
    name: str
    passed: bool
    worst_ratio: float
    witness_x: float = math.nan
    witness_y: float = math.nan
    detail: str = ""

    def row(self) -> tuple:
        return (self.name, int(self.passed), self.worst_ratio, self.witness_x, self.witness_y)


def default_grid(lo: float, hi: float, n: int = 512) -> np.ndarray:
    return np.linspace(lo, hi, n)


def pair_grid(lo: float, hi: float, n: int = 32) -> tuple[np.ndarray, np.ndarray]:
    """All ordered pairs ``x < y`` of an ``n``-point uniform grid."""
    g = np.linspace(lo, hi, n)
    i, j = np.triu_indices(n, k=1)
    return g[i], g[j]


def sample_marks(measure, n_layers: int | None = None, per_layer: int = 64, seed: int = 0) -> np.ndarray:
    """``per_layer`` marks from each of the first ``n_layers`` non-empty layers."""
    n = measure.n_layers if n_layers is None else n_layers
    rng = np.random.default_rng(seed)
    parts = [measure.layer(i).sample(rng, per_layer) for i in range(1, n + 1) if measure.layer(i).mass > 0]
    return np.concatenate(parts) if parts else np.zeros((0, measure.dimension))


def _ratio(lhs, rhs, tol):
    lhs = np.asarray(lhs, float)
    rhs = np.asarray(rhs, float)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(rhs > 0, lhs / rhs, np.where(lhs > 0, np.inf, 0.0))
    ok = lhs <= rhs * (1 + tol) + 1e-300
    return ratio, ok


def _result(name, lhs, rhs, xs, ys, tol, detail=""):
    if not np.all(np.isfinite(lhs)):
        raise ValueError(f"{name}: integral not finite at some point")
    ratio, ok = _ratio(lhs, rhs, tol)
    k = int(np.argmax(ratio)) if ratio.size else 0
    if ratio.size == 0:
        return CheckResult(name, True, 0.0, detail=detail)
    if not ok.all():
        k = int(np.flatnonzero(~ok)[np.argmax(ratio[~ok])])
    return CheckResult(name, bool(ok.all()), float(ratio[k]), float(xs[k]), float(ys[k]), detail)


def _check_in_band(m, *arrays):
    for a in arrays:
        if np.any(np.abs(a) > m * (1 + 1e-12)):
            raise ValueError(f"grid points must lie in [-{m}, {m}]")


def _pair_integral(measure, fn, x, y, layers, tol):
    """``sum over layers of int fn(x, y, u) mu(du)`` vectorised over pairs."""
    total = np.zeros_like(x)
    for i in layers:
        layer = measure.layer(i)
        if layer.mass == 0:
            continue
        total = total + np.asarray(layer.integrate(lambda u: fn(x[None, :], y[None, :], u[:, None, :]), tol))
    return total


def _u2(model: ModelSpec, n1: int):
    return [i for i in range(1, n1 + 1) if model.in_u2(i)]


def check_coefficient_modulus(model: ModelSpec, m: float, modulus: Modulus, x_grid=None, n_layers: int | None = None,
             tol: float = 1e-9, quad_tol: float = 1e-9) -> CheckResult:
    """``|b1(x) - b1(y)| + int_{U2} |g1(x,u) - g1(y,u)| mu1(du) <= r(|x - y|)`` over grid pairs."""
    if not isinstance(modulus, Modulus):
        raise TypeError("modulus must come from make_modulus")
    if x_grid is None:
        xs, ys = pair_grid(-m, m)
    else:
        g = np.sort(np.asarray(x_grid, dtype=float))
        i, j = np.triu_indices(g.size, k=1)
        xs, ys = g[i], g[j]
    _check_in_band(m, xs, ys)
    lhs = np.abs(_eval(model.b1, xs) - _eval(model.b1, ys))
    if model.g1 is not None:
        n1 = model.mu1.n_layers if n_layers is None else n_layers
        lhs = lhs + _pair_integral(model.mu1, lambda x, y, u: np.abs(model.g1(x, u) - model.g1(y, u)),
                                   xs, ys, _u2(model, n1), quad_tol)
    return _result("modulus", lhs, modulus(np.abs(xs - ys)), xs, ys, tol, f"modulus={modulus.family}(L={modulus.L})")


def check_monotone(model: ModelSpec, c: float, x_grid, mark_sample=None, tol: float = 1e-12,
                   name: str | None = None) -> CheckResult:
    """``c x + g0(x, u)`` non-decreasing along ``x_grid`` for every sampled mark."""
    if not 0 <= c <= 1:
        raise ValueError("c must lie in [0, 1]")
    g = np.asarray(x_grid, dtype=float)
    if np.any(np.diff(g) <= 0):
        raise ValueError("x_grid must be strictly increasing")
    label = name or ("monotone" if c == 1 else f"monotone_c={c:g}")
    if model.g0 is None:
        return CheckResult(label, True, 0.0)
    marks = sample_marks(model.mu0) if mark_sample is None else np.asarray(mark_sample, dtype=float)
    vals = c * g[None, :] + model.g0(g[None, :], marks[:, None, :])
    drop = vals[:, :-1] - vals[:, 1:]  # positive where the map decreases
    k = np.unravel_index(int(np.argmax(drop)), drop.shape)
    worst = float(drop[k])
    passed = worst <= tol
    detail = "" if passed else f"mark={marks[k[0]].tolist()}"
    return CheckResult(label, bool(passed), max(worst, 0.0), float(g[k[1]]), float(g[k[1] + 1]), detail)


def check_kernel_l2(model: ModelSpec, m: float, K: float, pairs=None, n_layers: int | None = None,
             tol: float = 1e-9, quad_tol: float = 1e-10) -> CheckResult:
    """``|sigma(x) - sigma(y)|^2 + int (g0(x,u) - g0(y,u))^2 mu0(du) <= K |x - y|``."""
    xs, ys = pair_grid(-m, m) if pairs is None else (np.asarray(pairs[0], float), np.asarray(pairs[1], float))
    _check_in_band(m, xs, ys)
    lhs = (_eval(model.sigma, xs) - _eval(model.sigma, ys)) ** 2
    if model.g0 is not None:
        n0 = model.mu0.n_layers if n_layers is None else n_layers
        if model.l0_sq_integral is not None:
            lhs = lhs + np.asarray(model.l0_sq_integral(xs, ys, n0), dtype=float)
        else:
            lhs = lhs + _pair_integral(model.mu0, lambda x, y, u: (model.g0(x, u) - model.g0(y, u)) ** 2,
                                       xs, ys, range(1, n0 + 1), quad_tol)
    return _result("kernel_l2", lhs, K * np.abs(xs - ys), xs, ys, tol, f"K={K:g}")


def check_kernel_holder(model: ModelSpec, m: float, c: float, p: float, f: Callable[[np.ndarray], np.ndarray],
             pairs=None, mark_sample=None, n_layers: int | None = None, tol: float = 1e-12,
             quad_tol: float = 1e-8) -> CheckResult:
    """``|g0(x,u) - g0(y,u)| <= |x - y|^p f(u)`` on sampled pairs and marks, and
    ``int (f ^ f^2) dmu0 < infinity``; ``c`` is recorded, its monotonicity is checked separately."""
    if not p > 0:
        raise ValueError("p must be positive")
    xs, ys = pair_grid(-m, m) if pairs is None else (np.asarray(pairs[0], float), np.asarray(pairs[1], float))
    _check_in_band(m, xs, ys)
    if model.g0 is None:
        return CheckResult("kernel_holder", True, 0.0, detail=f"c={c:g}, p={p:g}")
    n0 = model.mu0.n_layers if n_layers is None else n_layers
    marks = sample_marks(model.mu0, n0) if mark_sample is None else np.asarray(mark_sample, dtype=float)
    env = np.asarray(f(marks), dtype=float)
    if np.any(env <= 0):
        raise ValueError("envelope f must be strictly positive on the sampled marks")
    lhs = np.abs(model.g0(xs[None, :], marks[:, None, :]) - model.g0(ys[None, :], marks[:, None, :]))
    rhs = np.abs(xs - ys)[None, :] ** p * env[:, None]
    excess = lhs - rhs
    ok = excess <= tol
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(rhs > 0, lhs / rhs, np.where(lhs > 0, np.inf, 0.0))
    if ok.all():
        k = np.unravel_index(int(np.argmax(ratio)), ratio.shape)
    else:
        bad = np.where(ok, -np.inf, ratio)
        k = np.unravel_index(int(np.argmax(bad)), ratio.shape)
    try:
        fint = float(integrate(model.mu0, lambda u: np.minimum(f(u), f(u) ** 2), n0, quad_tol))
    except QuadratureError as exc:
        fint = math.inf
        detail = f"int(f^f^2) quadrature failed: {exc}"
    else:
        detail = f"int(f^f^2)={fint:.6g}"
    passed = bool(ok.all()) and math.isfinite(fint)
    return CheckResult("kernel_holder", passed, float(ratio[k]), float(xs[k[1]]), float(ys[k[1]]),
                       f"c={c:g}, p={p:g}, {detail}")


def _jump_moments(model: ModelSpec, x: np.ndarray, n0: int, n1: int, tol: float) -> dict:
    """``int g0^2 dmu0``, ``int_{U2} g1^2``, ``int_{U2} |g1|`` and ``int_{U2} max(|g1|, g1^2)``."""
    out = {k: np.zeros_like(x) for k in ("g0_sq", "g1_sq", "g1_abs", "g1_max")}
    if model.g0 is not None and n0 > 0:
        if model.jump_law0 is not None:
            s, w = model.jump_law0(x, n0)
            out["g0_sq"] = np.sum(w * s * s, axis=1)
        else:
            out["g0_sq"] = np.asarray(integrate(model.mu0, lambda u: model.g0(x[None, :], u[:, None, :]) ** 2,
                                                n0, tol)).reshape(x.shape)
    if model.g1 is not None and n1 > 0:
        for i in _u2(model, n1):
            layer = model.mu1.layer(i)
            if layer.mass == 0:
                continue
            res = np.asarray(layer.integrate(
                lambda u: np.stack([np.abs(model.g1(x[None, :], u[:, None, :])) ** e for e in (1, 2)]
                                   + [np.maximum(np.abs(model.g1(x[None, :], u[:, None, :])),
                                                 model.g1(x[None, :], u[:, None, :]) ** 2)], axis=1),
                tol))
            out["g1_abs"] = out["g1_abs"] + res[0]
            out["g1_sq"] = out["g1_sq"] + res[1]
            out["g1_max"] = out["g1_max"] + res[2]
    return out


def check_growth(model: ModelSpec, kind: str, x_grid, K_or_L, n_layers: tuple[int, int] | None = None,
                 tol: float = 1e-9, quad_tol: float = 1e-10) -> CheckResult:
    """Growth bounds on ``x_grid``.

    ``bounded``: ``|b| + sigma^2 + int g0^2 + int_U2 max(|g1|, g1^2) <= K``.
    ``linear_growth``: ``sigma^2 + int g0^2 + int g1^2 + b^2 + (int |g1|)^2 <= K (1 + x^2)``.
    ``drift_growth`` (``x >= 0``): ``b + int |g1| <= K (1 + x)``.
    ``diffusion_envelope`` (``x >= 0``): ``sigma^2 + int g0^2 <= L(x)`` with ``L`` non-decreasing.
    """
    x = np.asarray(x_grid, dtype=float)
    if kind in ("drift_growth", "diffusion_envelope") and np.any(x < 0):
        raise ValueError(f"condition {kind} is stated for x >= 0 only")
    n0, n1 = n_layers if n_layers is not None else (model.mu0.n_layers, model.mu1.n_layers)
    jm = _jump_moments(model, x, n0, n1, quad_tol)
    sig2 = _eval(model.sigma, x) ** 2
    b = model.b(x)
    detail = ""
    if kind == "bounded":
        lhs = np.abs(b) + sig2 + jm["g0_sq"] + jm["g1_max"]
        rhs = np.full_like(x, float(K_or_L))
    elif kind == "linear_growth":
        lhs = sig2 + jm["g0_sq"] + jm["g1_sq"] + b * b + jm["g1_abs"] ** 2
        rhs = float(K_or_L) * (1 + x * x)
    elif kind == "drift_growth":
        lhs = b + jm["g1_abs"]
        rhs = float(K_or_L) * (1 + x)
    elif kind == "diffusion_envelope":
        L = K_or_L if callable(K_or_L) else (lambda v, c=float(K_or_L): np.full_like(v, c))
        lhs = sig2 + jm["g0_sq"]
        rhs = np.asarray(L(x), dtype=float)
        order = np.argsort(x)
        if np.any(np.diff(rhs[order]) < -1e-12):
            return CheckResult(kind, False, math.inf, detail="L is not non-decreasing")
    else:
        raise ValueError(f"unknown growth condition {kind!r}; expected bounded, linear_growth, drift_growth or diffusion_envelope")
    return _result(kind, lhs, rhs, x, x, tol, detail)


@dataclass
class ConditionCertificate:
    m: float
    c: float
    K_m: float
    p_m: float
    r_m: Modulus
    f_m: Callable | None
    alpha_m: float
    case: str | None
    checks: dict[str, CheckResult] = field(default_factory=dict)
    verdicts: dict[str, bool] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.checks.values())

    def rows(self) -> list[tuple]:
        return [r.row() for r in self.checks.values()]


def certify(built, m: float, case: str | None = None, c: float | None = None,
            x_points: int = 512, pair_points: int = 32, marks_per_layer: int = 64,
            seed: int = 0) -> ConditionCertificate:
    """Run the checks for one built model with its declared constants.

    ``case=None`` probes the monotone-kernel hypotheses (coefficient modulus,
    squared-increment kernel bound, ``x + g0`` non-decreasing); ``"i"`` and
    ``"ii"`` probe the Hoelder-kernel hypotheses in their two regimes.
    """
    if case not in (None, "i", "ii"):
        raise ValueError("case must be None, 'i' or 'ii'")
    model, facts = built
    dec = facts.declared
    modulus = make_modulus(dec.modulus[0], dec.modulus[1])
    xg = default_grid(-m, m, x_points)
    pairs = pair_grid(-m, m, pair_points)
    marks = sample_marks(model.mu0, per_layer=marks_per_layer, seed=seed)
    checks: dict[str, CheckResult] = {}
    checks["modulus"] = check_coefficient_modulus(model, m, modulus, np.linspace(-m, m, pair_points))
    K_m = float(dec.K_l2(m))
    p_m = dec.p
    f_m = (lambda u: dec.f(u, m=m)) if dec.f is not None else (lambda u: np.ones(np.shape(u)[:-1]))
    alpha = 1.0  # a zero kernel has T(x) = 0, so the infimum is 1
    if model.g0 is not None and model.mu0.n_layers:
        a_measure, a_f = dec.alpha_data if dec.alpha_data is not None else (model.mu0, f_m)
        try:
            alpha = estimate_alpha(a_measure, a_f, np.logspace(-1, -4, 13))
        except (ValueError, QuadratureError):
            alpha = math.nan
    if case is None:
        cc = 1.0
        checks["monotone"] = check_monotone(model, 1.0, xg, marks)
        checks["kernel_l2"] = check_kernel_l2(model, m, K_m, pairs)
    else:
        if case == "i":
            cc, p_m = 1.0, 0.5
            # alpha_m <= 2 always holds, so the regime needs no estimate
            alpha_case = 2.0
        else:
            cc = c if c is not None else (dec.c if dec.c < 1 else 0.5)
            if not cc < 1:
                raise ValueError("case ii needs c < 1")
            alpha_case = alpha
        checks["monotone" if cc == 1 else f"monotone_c={cc:g}"] = check_monotone(model, cc, xg, marks)
        if not 0 < p_m <= 0.5:
            raise ValueError("declared p_m must lie in (0, 1/2]")
        checks["kernel_holder"] = check_kernel_holder(model, m, cc, p_m, f_m, pairs, marks)
        if case == "ii":
            ok = (alpha_case < 2) and (p_m > 1 - 1 / alpha_case) and p_m <= 0.5
            checks["case_ii"] = CheckResult("case_ii", bool(ok), alpha_case, detail=f"p_m={p_m:g}")
        alpha = alpha_case if case == "i" else alpha
    for kind, val in dec.growth.items():
        if kind in ("drift_growth", "diffusion_envelope"):
            if model.domain != "nonnegative":
                continue
            grid = default_grid(0.0, m, x_points)
        elif kind == "bounded":
            grid = xg
        else:
            grid = xg
        checks[kind] = check_growth(model, kind, grid, val)
    verdicts = {}
    if case is None:
        verdicts["monotone_kernel_uniqueness"] = all(checks[k].passed for k in ("modulus", "kernel_l2", "monotone"))
    else:
        keys = [k for k in checks if k.startswith(("modulus", "kernel_holder", "monotone", "case_ii"))]
        verdicts[f"holder_kernel_case_{case}"] = all(checks[k].passed for k in keys)
    return ConditionCertificate(m, cc, K_m, p_m, modulus, f_m, float(alpha), case, checks, verdicts)
