"""Smooth even approximations of ``|z|`` with controlled curvature, and their numerical certification.

For ``k >= 1`` let ``a_k = exp(-k(k+1)/2)``, so ``log(a_{k-1}/a_k) = k``.  The
bump ``psi_k`` lives on ``(a_k, a_{k-1})``.  Working in ``s = log x`` the
support is ``[s0, s3]`` of length ``k``; ``psi_k(x) = C tau(log x) / x`` where
``tau`` is the trapezoid rising on the first quarter ``[s0, s1]``, flat on the
middle half and falling on the last quarter, and ``C = 4/(3k)`` makes the mass
one.  Hence ``x psi_k(x) <= 4/(3k) < 2/k``.

``phi_k(z) = int_0^{|z|} dy int_0^y psi_k``.  All three of ``phi_k``, ``phi_k'``
and ``phi_k''`` are evaluated from closed-form piecewise antiderivatives
(``int p(s) e^s ds = e^s (p - p' + p'')`` for quadratic ``p``), no runtime
quadrature.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import integrate as _spi

__all__ = [
    "YWFunctions",
    "make_yw",
    "a",
    "d_phi",
    "d_phi_quadrature",
    "verify_properties",
    "PropertyReport",
    "log_increment_identity",
    "second_order_bound_check",
    "vanishing_check",
]

_SERIES_TERMS = 40
# coefficients (n-1)(n-2)/(2 n!) of e^d (1 - d + d^2/2) - 1, n = 0.._SERIES_TERMS
_SERIES = np.array(
    [(n - 1) * (n - 2) / (2.0 * math.factorial(n)) if n >= 3 else 0.0
     for n in range(_SERIES_TERMS + 1)]
)


def a(k: int) -> float:
    """``a_k = exp(-k(k+1)/2)``; ``a_0 = 1``."""
    return math.exp(-k * (k + 1) / 2.0)


@dataclass(frozen=True)
class YWFunctions:
    k: int
    a_lo: float
    a_hi: float
    norm_const: float
    # knots in log coordinates and derived constants
    s: tuple[float, float, float, float] = field(repr=False)
    C: float = field(repr=False)
    w: float = field(repr=False)
    _phi_knots: tuple[float, float, float] = field(repr=False)

    # -- psi and its integrals in log coordinates --------------------------------
    def _tau(self, s: np.ndarray) -> np.ndarray:
        s0, s1, s2, s3 = self.s
        up = (s - s0) / self.w
        down = (s3 - s) / self.w
        return np.clip(np.minimum(up, down), 0.0, 1.0)

    def _Tau(self, s: np.ndarray) -> np.ndarray:
        # int_{s0}^{s} tau
        s0, s1, s2, s3 = self.s
        w = self.w
        out = np.zeros_like(s)
        m = (s > s0) & (s <= s1)
        out[m] = (s[m] - s0) ** 2 / (2 * w)
        m = (s > s1) & (s <= s2)
        out[m] = w / 2 + (s[m] - s1)
        m = (s > s2) & (s < s3)
        d = s[m] - s2
        out[m] = w / 2 + (s2 - s1) + d - d * d / (2 * w)
        out[s >= s3] = w + (s2 - s1)
        return out

    def psi(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        out = np.zeros_like(x)
        pos = (x > self.a_lo) & (x < self.a_hi)
        out[pos] = self.C * self._tau(np.log(x[pos])) / x[pos]
        return out

    def psi_cdf(self, y) -> np.ndarray:
        """``int_0^y psi_k`` for ``y >= 0``."""
        y = np.asarray(y, dtype=float)
        out = np.zeros_like(y)
        pos = y > self.a_lo
        out[pos] = np.minimum(self.C * self._Tau(np.log(y[pos])), 1.0)
        out[y >= self.a_hi] = 1.0
        return out

    def _phi_abs(self, y: np.ndarray) -> np.ndarray:
        s0, s1, s2, s3 = self.s
        C, w = self.C, self.w
        phiA, phiAB, phiABC = self._phi_knots
        out = np.zeros_like(y)
        pos = y > self.a_lo
        s = np.full_like(y, -np.inf)
        s[pos] = np.log(y[pos])

        m = pos & (s <= s1)
        d = s[m] - s0
        out[m] = C * math.exp(s0) / w * _series(d)

        m = pos & (s > s1) & (s <= s2)
        out[m] = phiA + _FB(s[m], self) - _FB(s1, self)

        m = pos & (s > s2) & (y < self.a_hi)
        out[m] = phiAB + _FC(s[m], self) - _FC(s2, self)

        m = y >= self.a_hi
        out[m] = phiABC + (y[m] - self.a_hi)
        return out

    def phi(self, z) -> np.ndarray:
        z = np.asarray(z, dtype=float)
        return self._phi_abs(np.abs(z))

    def phi_prime(self, z) -> np.ndarray:
        z = np.asarray(z, dtype=float)
        return np.sign(z) * self.psi_cdf(np.abs(z))

    def phi_second(self, z) -> np.ndarray:
        z = np.asarray(z, dtype=float)
        return self.psi(np.abs(z))

    def support_hit(self, lo, hi) -> np.ndarray:
        """Whether the segment ``[lo, hi]`` meets ``{a_k < |s| < a_{k-1}}``."""
        lo = np.asarray(lo, dtype=float)
        hi = np.asarray(hi, dtype=float)
        straddles = (lo < 0) & (hi > 0)
        amax = np.maximum(np.abs(lo), np.abs(hi))
        amin = np.where(straddles, 0.0, np.minimum(np.abs(lo), np.abs(hi)))
        return (amax > self.a_lo) & (amin < self.a_hi)


def _series(d: np.ndarray) -> np.ndarray:
    # e^d (1 - d + d^2/2) - 1, all terms positive
    out = np.zeros_like(d)
    for c in _SERIES[::-1]:
        out = out * d + c
    return out


def _FB(s, yw: YWFunctions):
    s1 = yw.s[1]
    return yw.C * np.exp(s) * (yw.w / 2 + (s - s1) - 1.0)


def _FC(s, yw: YWFunctions):
    s0, s1, s2, s3 = yw.s
    w = yw.w
    d = s - s2
    p = w / 2 + (s2 - s1) + d - d * d / (2 * w)
    dp = 1.0 - d / w
    ddp = -1.0 / w
    return yw.C * np.exp(s) * (p - dp + ddp)


def make_yw(k: int) -> YWFunctions:
    if k < 1:
        raise ValueError("k must be >= 1")
    if k * (k + 1) / 2 > 700:
        raise ValueError(f"a_k underflows for k = {k}")
    s0 = -k * (k + 1) / 2.0
    s3 = s0 + k
    w = k / 4.0
    s = (s0, s0 + w, s3 - w, s3)
    C = 4.0 / (3.0 * k)
    stub = YWFunctions(k, a(k), a(k - 1), 1.5, s, C, w, (0.0, 0.0, 0.0))
    phiA = C * math.exp(s0) / w * float(_series(np.array([w]))[0])
    phiAB = phiA + float(_FB(s[2], stub) - _FB(s[1], stub))
    phiABC = phiAB + float(_FC(s[3], stub) - _FC(s[2], stub))
    return YWFunctions(k, a(k), a(k - 1), 1.5, s, C, w, (phiA, phiAB, phiABC))


def d_phi(yw: YWFunctions, zeta, h):
    """``phi_k(zeta+h) - phi_k(zeta) - phi_k'(zeta) h``.

    Exactly zero when the segment between ``zeta`` and ``zeta+h`` avoids the
    support of ``phi_k''``, and never negative.
    """
    zeta = np.asarray(zeta, dtype=float)
    h = np.asarray(h, dtype=float)
    end = zeta + h
    val = yw.phi(end) - yw.phi(zeta) - yw.phi_prime(zeta) * h
    hit = yw.support_hit(np.minimum(zeta, end), np.maximum(zeta, end)) & (h != 0)
    out = np.where(hit, np.maximum(val, 0.0), 0.0)
    return out[()] if out.ndim == 0 else out


def d_phi_quadrature(yw: YWFunctions, zeta: float, h: float) -> float:
    """``h^2 int_0^1 psi_k(|zeta + t h|)(1-t) dt`` by adaptive quadrature.

    The substitution ``|zeta + t h| = e^s`` turns the narrow spike of
    ``psi_k`` into the bounded integrand ``psi_k(e^s) e^s`` on each knot
    interval, so every piece is integrated in ``s``.
    """
    if h == 0:
        return 0.0
    lo, hi = min(zeta, zeta + h), max(zeta, zeta + h)
    total = 0.0
    for sgn in (-1.0, 1.0):
        # values sgn * e^s inside [lo, hi]
        a_, b_ = (max(lo, 0.0), hi) if sgn > 0 else (max(-hi, 0.0), -lo)
        if b_ <= a_ or b_ <= 0.0:
            continue
        s_lo = math.log(a_) if a_ > 0 else -math.inf
        s_hi = math.log(b_)
        for left, right in zip(yw.s[:-1], yw.s[1:]):
            u, v = max(left, s_lo), min(right, s_hi)
            if v <= u:
                continue
            val, _ = _spi.quad(
                lambda s: float(yw.psi(np.array(math.exp(s)))) * math.exp(s)
                * (1.0 - (sgn * math.exp(s) - zeta) / h),
                u, v, epsabs=1e-15, epsrel=1e-13, limit=200,
            )
            total += val
    return h * h * total / abs(h)


@dataclass
class PropertyReport:
    k: int
    violations: dict[str, float]
    witnesses: dict[str, float]
    tol: float

    @property
    def passed(self) -> bool:
        return all(v <= self.tol for v in self.violations.values())

    def failures(self) -> dict[str, tuple[float, float]]:
        return {n: (v, self.witnesses[n]) for n, v in self.violations.items() if v > self.tol}


def _psi_mass_quadrature(yw: YWFunctions) -> float:
    # int psi dx = int psi(e^s) e^s ds over the log-support, split at the knots
    tot = 0.0
    for lo, hi in zip(yw.s[:-1], yw.s[1:]):
        v, _ = _spi.quad(lambda s: float(yw.psi(np.array(math.exp(s)))) * math.exp(s),
                         lo, hi, epsabs=1e-16, epsrel=1e-13, limit=200)
        tot += v
    return tot


def verify_properties(yw: YWFunctions, grid, tol: float = 1e-12) -> PropertyReport:
    """Check the defining constraints and the listed properties of ``phi_k`` on ``grid``.

    Each entry of ``violations`` is the worst amount by which a property is
    broken (``<= 0`` means satisfied everywhere); ``witnesses`` holds the
    grid point where that worst value occurs.
    """
    z = np.asarray(grid, dtype=float)
    k = yw.k
    nxt = make_yw(k + 1)
    phi = yw.phi(z)
    dphi = yw.phi_prime(z)
    absz = np.abs(z)
    curv = absz * yw.phi_second(z)

    checks: dict[str, np.ndarray] = {
        "phi_nonnegative": -phi,
        "phi_below_abs": phi - absz,
        "phi_monotone_in_k": phi - nxt.phi(z),
        "phi_prime_bounded": np.abs(dphi) - 1.0,
        "phi_prime_sign": -np.sign(z) * dphi,
        "curvature_nonnegative": -curv,
        "curvature_bound": curv - 2.0 / k,
    }
    inside = (absz > yw.a_lo) & (absz < yw.a_hi)
    psi_excess = np.full_like(z, -np.inf)
    psi_excess[inside] = yw.psi(absz[inside]) - 2.0 / (k * absz[inside])
    checks["psi_bound"] = psi_excess

    violations, witnesses = {}, {}
    for name, arr in checks.items():
        i = int(np.argmax(arr))
        violations[name] = float(arr[i])
        witnesses[name] = float(z[i])
    violations["psi_unit_mass"] = abs(_psi_mass_quadrature(yw) - 1.0)
    witnesses["psi_unit_mass"] = math.nan
    violations["log_gap"] = abs((math.log(yw.a_hi) - math.log(yw.a_lo)) - k) / k
    witnesses["log_gap"] = math.nan
    return PropertyReport(k, violations, witnesses, tol)


def log_increment_identity(delta, l):
    """Closed form of ``int_0^1 l^2 (1-t) / |delta + t l| dt`` when ``delta`` and ``delta+l`` share sign."""
    delta = np.asarray(delta, dtype=float)
    l = np.asarray(l, dtype=float)
    sg = np.sign(delta)
    out = (np.abs(delta) + sg * l) * np.log1p(l / delta) - sg * l
    return out[()] if out.ndim == 0 else out


def _log_increment_quadrature(delta: float, l: float) -> float:
    if l == 0:
        return 0.0
    v, _ = _spi.quad(lambda t: l * l * (1 - t) / abs(delta + t * l), 0.0, 1.0,
                     epsabs=1e-15, epsrel=1e-12, limit=200)
    return v


def second_order_bound_check(x: float, y: float, l: float, k: int) -> dict:
    """Evaluate both sides of the second-order bound for ``D_l phi_k(x - y)``.

    Returns the closed-form and quadrature values of the auxiliary integral and
    the three terms of the chain ``D_l phi_k <= (2/k) Q <= 2 l^2 / (k |x-y|)``.
    ``status`` is ``"bound vacuous"`` when ``x - y`` and ``x - y + l`` do not
    share a strict sign.
    """
    delta = x - y
    if delta == 0 or np.sign(delta + l) != np.sign(delta):
        return {"status": "bound vacuous"}
    yw = make_yw(k)
    closed = float(log_increment_identity(delta, l))
    quad = _log_increment_quadrature(delta, l)
    lhs = float(d_phi(yw, delta, l))
    mid = 2.0 / k * quad
    rhs = 2.0 * l * l / (k * abs(delta))
    return {
        "status": "ok",
        "identity_closed": closed,
        "identity_quadrature": quad,
        "identity_error": abs(closed - quad),
        "d_phi": lhs,
        "middle": mid,
        "upper": rhs,
        "slack_lower": mid - lhs,
        "slack_upper": rhs - mid,
    }


def vanishing_check(c: float, x: float, y: float, l: float, k: int) -> bool:
    """Whether ``D_l phi_k(x-y)`` is exactly zero.

    Requires the monotone regime: ``c(x-y) + l`` has the sign of ``x-y``
    (or vanishes).
    """
    if not 0.0 <= c <= 1.0:
        raise ValueError("c must lie in [0, 1]")
    delta = x - y
    if delta != 0 and (c * delta + l) * np.sign(delta) < 0:
        raise ValueError("c(x-y) + l must share the sign of x-y")
    return bool(d_phi(make_yw(k), delta, l) == 0.0)


