"""Sigma-finite intensity measures on Euclidean mark spaces.

A measure is stored as an ordered sequence of finite-mass layers.  Every layer
is a product of one-dimensional factors, each factor being either a finite
set of weighted points or a continuous law given by a quantile map on
``[0, 1]`` (optionally with a bounded density weight).  This covers point
masses, uniform boxes, power-law densities and their exponentially tilted
versions, and lets every layer be sampled exactly and integrated by adaptive
Gauss-Kronrod cubature in quantile coordinates.

Mark-functions ``f`` passed to :func:`integrate` are vectorised: they receive
an array of marks of shape ``(k, dim)`` and return an array of shape ``(k,)``
or ``(k, *out)``.  The integral then has shape ``out``.
"""

from __future__ import annotations

import functools
import itertools
import math
from dataclasses import dataclass, field
from typing import Any, Callable, Iterator, Sequence

import numpy as np
from scipy import integrate as _spi

__all__ = [
    "QuadratureError",
    "ContinuousFactor",
    "PointFactor",
    "Layer",
    "LayeredMeasure",
    "Atoms",
    "sample_atoms",
    "integrate",
    "tail_functional",
    "estimate_alpha",
    "power_law",
    "tilted_power_law",
    "point_masses",
    "uniform_box",
    "empty_measure",
    "measure_from_config",
]

MarkFunction = Callable[[np.ndarray], np.ndarray]

_EPS_T = 1e-300


@functools.lru_cache(maxsize=None)
def _unit_gauss_legendre(order: int) -> tuple[np.ndarray, np.ndarray]:
    """Gauss-Legendre nodes and weights on ``[0, 1]`` (read-only)."""
    x, w = np.polynomial.legendre.leggauss(order)
    x, w = 0.5 * (x + 1.0), 0.5 * w
    x.flags.writeable = w.flags.writeable = False
    return x, w


class QuadratureError(RuntimeError):
    """Adaptive cubature over a layer did not reach the requested tolerance."""

    def __init__(self, layer_index: int, estimate: Any, error: Any):
        self.layer_index = layer_index
        self.estimate = estimate
        self.error = error
        super().__init__(
            f"quadrature did not converge on layer {layer_index} "
            f"(max error estimate {np.max(np.abs(error)):.3e})"
        )


@dataclass(frozen=True)
class ContinuousFactor:
    """Law ``base_mass * weight(u) * (Q_# Leb[0,1])(du)`` on a real interval.

    ``weight`` must be bounded by ``weight_max`` on the support; it is used
    for rejection sampling and folded into the cubature integrand.
    """

    base_mass: float
    quantile: Callable[[np.ndarray], np.ndarray]
    weight: Callable[[np.ndarray], np.ndarray] | None = None
    weight_max: float = 1.0
    mass: float = field(init=False)

    def __post_init__(self):
        if self.weight is None:
            mass = float(self.base_mass)
        else:
            avg, _ = _spi.quad(
                lambda t: float(self.weight(self.quantile(np.array([t])))[0]),
                0.0, 1.0, epsabs=0.0, epsrel=1e-13, limit=200,
            )
            mass = float(self.base_mass) * avg
        object.__setattr__(self, "mass", mass)

    def density(self, u: np.ndarray) -> np.ndarray:
        if self.weight is None:
            return np.full(np.shape(u), float(self.base_mass))
        return float(self.base_mass) * self.weight(u)

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        if self.weight is None:
            return self.quantile(rng.random(size))
        out = np.empty(size)
        filled = 0
        while filled < size:
            need = size - filled
            cand = self.quantile(rng.random(need))
            keep = cand[rng.random(need) * self.weight_max <= self.weight(cand)]
            out[filled:filled + keep.size] = keep
            filled += keep.size
        return out


@dataclass(frozen=True)
class PointFactor:
    points: np.ndarray
    weights: np.ndarray

    @property
    def mass(self) -> float:
        return float(np.sum(self.weights))

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        p = self.weights / np.sum(self.weights)
        return self.points[rng.choice(self.points.size, size=size, p=p)]


Factor = ContinuousFactor | PointFactor


class Layer:
    """One finite-mass piece of a layered measure (a product of factors)."""

    def __init__(self, index: int, factors: Sequence[Factor]):
        if index < 1:
            raise ValueError("layer indices start at 1")
        self.index = int(index)
        self.factors = tuple(factors)
        self.dim = len(self.factors)
        self.mass = float(math.prod(fa.mass for fa in self.factors))
        if not math.isfinite(self.mass) or self.mass < 0:
            raise ValueError(f"layer {index} has invalid mass {self.mass}")
        self._cont = [i for i, fa in enumerate(self.factors) if isinstance(fa, ContinuousFactor)]
        disc = [i for i, fa in enumerate(self.factors) if isinstance(fa, PointFactor)]
        self._disc = disc
        if disc:
            combos = list(itertools.product(*(range(self.factors[i].points.size) for i in disc)))
            self._disc_points = np.array(
                [[self.factors[i].points[j] for i, j in zip(disc, c)] for c in combos]
            )
            self._disc_weights = np.array(
                [math.prod(self.factors[i].weights[j] for i, j in zip(disc, c)) for c in combos]
            )
        else:
            self._disc_points = np.zeros((1, 0))
            self._disc_weights = np.ones(1)

    def __repr__(self):
        return f"Layer(index={self.index}, mass={self.mass:.6g}, dim={self.dim})"

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        """Draw ``size`` marks from the normalised layer law."""
        out = np.empty((size, self.dim))
        if size == 0 or self.mass == 0.0:
            return out[:0] if size == 0 else out
        for j, fa in enumerate(self.factors):
            out[:, j] = fa.sample(rng, size)
        return out

    def _assemble(self, t: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        # t: (npts, n_cont) quantile coordinates -> marks (npts*J, dim), weights (npts*J,)
        npts = t.shape[0]
        J = self._disc_weights.size
        marks = np.empty((npts, J, self.dim))
        w = np.broadcast_to(self._disc_weights, (npts, J)).copy()
        for col, i in enumerate(self._cont):
            fa = self.factors[i]
            u = fa.quantile(t[:, col])
            marks[:, :, i] = u[:, None]
            w *= fa.density(u)[:, None]
        for col, i in enumerate(self._disc):
            marks[:, :, i] = self._disc_points[None, :, col]
        return marks.reshape(npts * J, self.dim), w.reshape(npts * J)

    def integrate(self, f: MarkFunction, tol: float = 1e-10) -> Any:
        """Integral of ``f`` against this layer.

        Discrete layers are summed exactly; continuous coordinates are handled
        by adaptive Gauss-Kronrod cubature with error below ``tol*(1+|I|)``.
        """
        if self.mass == 0.0:
            return 0.0
        if not self._cont:
            vals = np.asarray(f(self._disc_points), dtype=float)
            return np.tensordot(self._disc_weights, vals, axes=(0, 0))[()]
        J = self._disc_weights.size

        def integrand(t):
            marks, w = self._assemble(t)
            vals = np.asarray(f(marks), dtype=float)
            vals = vals.reshape((t.shape[0], J) + vals.shape[1:])
            w = w.reshape(t.shape[0], J)
            return np.einsum("pj,pj...->p...", w, vals)

        nc = len(self._cont)
        res = _spi.cubature(
            integrand, np.zeros(nc), np.ones(nc), rule="gk21",
            rtol=tol, atol=tol, max_subdivisions=20000,
        )
        est = np.asarray(res.estimate)
        if res.status != "converged" or not np.all(np.isfinite(est)):
            raise QuadratureError(self.index, est, res.error)
        return est[()]

    def rule(self, order: int = 16) -> tuple[np.ndarray, np.ndarray]:
        """Fixed tensor Gauss-Legendre rule: marks ``(K, dim)`` and weights ``(K,)``.

        Exact for discrete layers; for continuous coordinates it is the
        ``order``-point rule in quantile coordinates.
        """
        if not self._cont:
            return self._disc_points.copy(), self._disc_weights.copy()
        x, w = _unit_gauss_legendre(order)
        grids = np.meshgrid(*([x] * len(self._cont)), indexing="ij")
        wgrids = np.meshgrid(*([w] * len(self._cont)), indexing="ij")
        t = np.stack([g.ravel() for g in grids], axis=1)
        wt = np.prod(np.stack([g.ravel() for g in wgrids], axis=1), axis=1)
        marks, wm = self._assemble(t)
        return marks, wm * np.repeat(wt, self._disc_weights.size)


@dataclass(frozen=True)
class LayeredMeasure:
    """A sigma-finite measure presented as disjoint finite-mass layers.

    ``tail_bound(n)``, when given, bounds the integral of the family's square
    envelope (``|u|^2`` for one-dimensional power laws, scaled by any product
    factors) over everything beyond layer ``n``.
    """

    layers: tuple[Layer, ...]
    dimension: int
    tail_bound: Callable[[int], float] | None = None
    description: dict = field(default_factory=dict)

    def __post_init__(self):
        for i, layer in enumerate(self.layers, start=1):
            if layer.index != i:
                raise ValueError("layers must be indexed 1..n in order")
            if layer.dim != self.dimension:
                raise ValueError(f"layer {i} has dimension {layer.dim}, expected {self.dimension}")

    @property
    def n_layers(self) -> int:
        return len(self.layers)

    def layer(self, i: int) -> Layer:
        if not 1 <= i <= self.n_layers:
            raise IndexError(f"layer {i} is absent (measure has {self.n_layers} layers)")
        return self.layers[i - 1]

    def masses(self) -> np.ndarray:
        return np.array([layer.mass for layer in self.layers])

    def cumulative_mass(self, n: int) -> float:
        return float(np.sum(self.masses()[:n]))

    def times_uniform(self, lo: float, hi: float) -> "LayeredMeasure":
        """Product with Lebesgue measure on ``(lo, hi]`` appended as a new coordinate."""
        fac = _uniform_factor(lo, hi)
        layers = tuple(Layer(l.index, l.factors + (fac,)) for l in self.layers)
        tb = None
        if self.tail_bound is not None:
            base = self.tail_bound
            tb = lambda n: base(n) * (hi - lo)  # noqa: E731
        desc = dict(self.description, product_uniform=[lo, hi])
        return LayeredMeasure(layers, self.dimension + 1, tb, desc)

    def rule(self, n_layers: int, order: int = 16) -> tuple[np.ndarray, np.ndarray]:
        """Concatenated fixed rules of the first ``n_layers`` layers."""
        _check_layers(self, n_layers)
        parts = [self.layers[i].rule(order) for i in range(n_layers) if self.layers[i].mass > 0]
        if not parts:
            return np.zeros((0, self.dimension)), np.zeros(0)
        return np.concatenate([p[0] for p in parts]), np.concatenate([p[1] for p in parts])


def _check_layers(measure: LayeredMeasure, n_layers: int) -> None:
    if n_layers < 0:
        raise ValueError("n_layers must be non-negative")
    if n_layers > measure.n_layers:
        raise ValueError(
            f"requested layer {n_layers} is absent (measure has {measure.n_layers} layers)"
        )


@dataclass(frozen=True)
class Atoms:
    """Marked Poisson atoms sorted by time, then layer, then draw order."""

    times: np.ndarray
    layers: np.ndarray
    marks: np.ndarray

    def __len__(self):
        return int(self.times.size)

    def __iter__(self) -> Iterator[tuple[float, int, tuple[float, ...]]]:
        for t, i, m in zip(self.times, self.layers, self.marks):
            yield float(t), int(i), tuple(float(v) for v in m)

    def restrict(self, n_layers: int, horizon: float | None = None) -> "Atoms":
        keep = self.layers <= n_layers
        if horizon is not None:
            keep &= self.times <= horizon
        return Atoms(self.times[keep], self.layers[keep], self.marks[keep])

    @classmethod
    def empty(cls, dim: int) -> "Atoms":
        return cls(np.zeros(0), np.zeros(0, dtype=np.int64), np.zeros((0, dim)))


def sample_atoms(
    measure: LayeredMeasure,
    n_layers: int,
    horizon: float,
    stream: np.random.Generator | Callable[[int], np.random.Generator],
) -> Atoms:
    """Poisson atoms of ``ds x measure`` on ``(0, horizon]`` restricted to the first layers.

    ``stream`` is either one generator shared by all layers (drawn in layer
    order) or a callable giving an independent generator per layer index.
    """
    if horizon <= 0:
        raise ValueError("horizon must be positive")
    if n_layers < 1:
        raise ValueError("n_layers must be >= 1")
    _check_layers(measure, n_layers)
    times, layers, marks = [], [], []
    for i in range(1, n_layers + 1):
        rng = stream(i) if callable(stream) else stream
        layer = measure.layers[i - 1]
        count = int(rng.poisson(layer.mass * horizon)) if layer.mass > 0 else 0
        t = horizon - rng.uniform(0.0, horizon, count)
        times.append(t)
        layers.append(np.full(count, i, dtype=np.int64))
        marks.append(layer.sample(rng, count))
    t = np.concatenate(times)
    lay = np.concatenate(layers)
    mk = np.concatenate(marks).reshape(-1, measure.dimension)
    draw = np.arange(t.size)
    order = np.lexsort((draw, lay, t))
    return Atoms(t[order], lay[order], mk[order])


def integrate(measure: LayeredMeasure, f: MarkFunction, n_layers: int, tol: float = 1e-10) -> Any:
    """Sum of the layer integrals of ``f`` over the first ``n_layers`` layers."""
    _check_layers(measure, n_layers)
    total = 0.0
    for layer in measure.layers[:n_layers]:
        total = total + layer.integrate(f, tol)
    return total


def tail_functional(
    measure: LayeredMeasure,
    f: MarkFunction,
    x: np.ndarray,
    n_layers: int | None = None,
    tol: float = 1e-11,
) -> np.ndarray:
    """``T(x) = int f(u) 1{f(u) >= x} measure(du)`` for every ``x`` in the array."""
    x = np.asarray(x, dtype=float)
    n = measure.n_layers if n_layers is None else n_layers

    def g(marks):
        fu = np.asarray(f(marks), dtype=float)[:, None]
        return np.where(fu >= x[None, :], fu, 0.0)

    return np.asarray(integrate(measure, g, n, tol), dtype=float)


def estimate_alpha(
    measure: LayeredMeasure,
    f: MarkFunction,
    x_grid: Sequence[float],
    n_layers: int | None = None,
) -> float:
    """Tail index of ``f`` under ``measure`` from the log-log slope of ``T`` near zero.

    Near zero ``T(x) = C + c x^{-s}``: the constant collects the mass of
    large marks and biases a direct fit of ``log T``.  The slope is therefore
    fitted to the difference quotient ``-dT/dx ~ x^{-s-1}`` over the smallest
    decade of the grid, and ``1 + s`` is clamped to ``[1, 2]``.  A ``T`` that
    is flat on the window (bounded tail) gives 1.
    """
    x = np.sort(np.asarray(x_grid, dtype=float))
    if x.size < 3 or x[0] <= 0:
        raise ValueError("x_grid needs at least three positive points")
    if x[-1] / x[0] < 100.0 * (1 - 1e-12):
        raise ValueError("x_grid must span at least two decades")
    window = x[x <= 10.0 * x[0] * (1 + 1e-12)]
    if window.size < 3:
        raise ValueError("x_grid has fewer than three points in its smallest decade")
    T = tail_functional(measure, f, window, n_layers)
    if not np.all(np.isfinite(T)) or np.any(T <= 0):
        raise ValueError(f"tail functional is not finite and positive on the grid: {T}")
    drop = T[:-1] - T[1:]
    if np.all(drop <= 1e-12 * T[0]):
        return 1.0
    if np.any(drop <= 0):
        raise ValueError("tail functional is not strictly decreasing on the fitting window")
    mid = np.sqrt(window[:-1] * window[1:])
    slope = np.polyfit(np.log(mid), np.log(drop / np.diff(window)), 1)[0]
    return float(np.clip(-slope, 1.0, 2.0))


# -- families -----------------------------------------------------------------

def _uniform_factor(lo: float, hi: float) -> ContinuousFactor:
    lo, hi = float(lo), float(hi)
    if not hi > lo:
        raise ValueError("uniform factor needs hi > lo")
    return ContinuousFactor(hi - lo, lambda t: lo + (hi - lo) * t)


def _power_quantile(a: float, b: float, alpha: float) -> Callable[[np.ndarray], np.ndarray]:
    # inverse of the normalised CDF of u^{-1-alpha} on [a, b)
    if alpha == 0.0:
        la, lr = math.log(a), math.log(b / a)
        return lambda t: np.exp(la + lr * t)
    pa = a ** (-alpha)
    pb = 0.0 if math.isinf(b) else b ** (-alpha)
    if pb == 0.0:
        # unbounded top layer: reversed orientation puts the pole at t = 0,
        # where floating point resolves it
        return lambda t: (pa * np.maximum(t, _EPS_T)) ** (-1.0 / alpha)
    return lambda t: (pa - t * (pa - pb)) ** (-1.0 / alpha)


def _power_mass(a: float, b: float, alpha: float, scale: float) -> float:
    if alpha == 0.0:
        return scale * math.log(b / a)
    pb = 0.0 if math.isinf(b) else b ** (-alpha)
    return scale * (a ** (-alpha) - pb) / alpha


def _geometric_breaks(lo: float, hi: float, ratio: float, max_layers: int) -> list[float]:
    # descending boundaries hi = b_0 > b_1 = 1 (if inside) > 1/ratio > ... > lo
    breaks = [hi]
    b = 1.0
    while b >= hi:
        b /= ratio
    while b > lo and len(breaks) <= max_layers:
        breaks.append(b)
        b /= ratio
    if lo > 0 and len(breaks) <= max_layers:
        breaks.append(lo)
    return breaks


def power_law(
    alpha: float,
    scale: float = 1.0,
    lo: float = 0.0,
    hi: float = math.inf,
    ratio: float = 2.0,
    max_layers: int = 64,
) -> LayeredMeasure:
    """``scale * u^{-1-alpha} du`` on ``(lo, hi)`` in geometric layers.

    Layer 1 is ``[1, hi)`` when ``hi > 1``; subsequent layers are
    ``[ratio^{-i}, ratio^{-i+1})`` down to ``lo``.  With ``lo = 0`` the list is
    cut after ``max_layers`` layers.
    """
    if hi <= lo or lo < 0:
        raise ValueError("need 0 <= lo < hi")
    if math.isinf(hi) and alpha <= 0:
        raise ValueError("power law with alpha <= 0 has infinite mass near infinity")
    breaks = _geometric_breaks(lo, hi, ratio, max_layers)
    layers = []
    for i, (b, a) in enumerate(zip(breaks[:-1], breaks[1:]), start=1):
        fac = ContinuousFactor(_power_mass(a, b, alpha, scale), _power_quantile(a, b, alpha))
        layers.append(Layer(i, [fac]))
    edges = breaks

    def tail(n: int) -> float:
        # int u^2 scale u^{-1-alpha} du over (lo, b_n)
        top = edges[min(n, len(edges) - 1)]
        if alpha >= 2.0 and lo == 0.0:
            return math.inf
        if alpha == 2.0:
            return scale * math.log(top / lo) if top > lo else 0.0
        return max(scale * (top ** (2 - alpha) - lo ** (2 - alpha)) / (2 - alpha), 0.0)

    desc = {"family": "power_law", "alpha": alpha, "scale": scale, "lo": lo, "hi": hi, "ratio": ratio}
    return LayeredMeasure(tuple(layers), 1, tail, desc)


def tilted_power_law(
    alpha: float,
    theta: float,
    scale: float = 1.0,
    lo: float = 0.0,
    hi: float = math.inf,
    ratio: float = 2.0,
    max_layers: int = 64,
) -> LayeredMeasure:
    """``scale * u^{-1-alpha} e^{-theta u} du``: exponential tilt of :func:`power_law`.

    With ``theta > 0`` an unbounded range is allowed for any ``alpha >= -1``.
    """
    if theta < 0:
        raise ValueError("theta must be non-negative")
    breaks = _geometric_breaks(lo, hi, ratio, max_layers)
    layers = []
    for i, (b, a) in enumerate(zip(breaks[:-1], breaks[1:]), start=1):
        if math.isinf(b) and alpha <= 0:
            if theta == 0:
                raise ValueError("untilted power law with alpha <= 0 has infinite mass")
            # base power law is not finite here; switch to a shifted exponential base
            base = ContinuousFactor(
                scale * a ** (-1 - alpha) * math.exp(-theta * a) / theta,
                _exp_quantile(a, theta),
                weight=_ratio_weight(a, alpha),
                weight_max=1.0,
            )
            # mass is scale-base * int weight, base already carries the normalisation
            layers.append(Layer(i, [base]))
            continue
        wmax = math.exp(-theta * a)
        fac = ContinuousFactor(
            _power_mass(a, b, alpha, scale),
            _power_quantile(a, b, alpha),
            weight=(lambda u, th=theta: np.exp(-th * u)),
            weight_max=wmax,
        )
        layers.append(Layer(i, [fac]))
    desc = {"family": "tilted_power_law", "alpha": alpha, "theta": theta, "scale": scale,
            "lo": lo, "hi": hi, "ratio": ratio}
    return LayeredMeasure(tuple(layers), 1, None, desc)


def _exp_quantile(a: float, theta: float):
    return lambda t: a - np.log(np.maximum(t, _EPS_T)) / theta


def _ratio_weight(a: float, alpha: float):
    # (u/a)^{-1-alpha} <= 1 for u >= a when alpha >= -1
    if alpha < -1:
        raise ValueError("tilted power law needs alpha >= -1 on an unbounded range")
    return lambda u: (u / a) ** (-1.0 - alpha)


def point_masses(points: Sequence[Sequence[float]] | Sequence[float], weights: Sequence[float]) -> LayeredMeasure:
    """Finite measure ``sum_j w_j delta_{p_j}``: one layer per point, in the given order."""
    pts = np.asarray(points, dtype=float)
    if pts.ndim == 1:
        pts = pts[:, None]
    w = np.asarray(weights, dtype=float)
    if w.shape != (pts.shape[0],) or np.any(w < 0):
        raise ValueError("need one non-negative weight per point")
    layers = []
    for i, (p, wi) in enumerate(zip(pts, w), start=1):
        layers.append(Layer(i, [PointFactor(np.array([c]), np.array([wi if j == 0 else 1.0]))
                                for j, c in enumerate(p)]))
    desc = {"family": "point_masses", "points": pts.tolist(), "weights": w.tolist()}
    return LayeredMeasure(tuple(layers), pts.shape[1], lambda n: 0.0 if n >= len(layers) else math.inf, desc)


def uniform_box(lo: Sequence[float] | float, hi: Sequence[float] | float, total_mass: float | None = None) -> LayeredMeasure:
    """Lebesgue measure on a box (optionally rescaled to ``total_mass``) as a single layer."""
    lo_a = np.atleast_1d(np.asarray(lo, dtype=float))
    hi_a = np.atleast_1d(np.asarray(hi, dtype=float))
    factors: list[Factor] = [_uniform_factor(a, b) for a, b in zip(lo_a, hi_a)]
    if total_mass is not None:
        vol = float(np.prod(hi_a - lo_a))
        f0 = factors[0]
        factors[0] = ContinuousFactor(f0.base_mass * total_mass / vol, f0.quantile)
    desc = {"family": "uniform_box", "lo": lo_a.tolist(), "hi": hi_a.tolist(), "total_mass": total_mass}
    return LayeredMeasure((Layer(1, factors),), lo_a.size, lambda n: 0.0 if n >= 1 else math.inf, desc)


def empty_measure(dim: int = 1) -> LayeredMeasure:
    return LayeredMeasure((), dim, lambda n: 0.0, {"family": "empty"})


def measure_from_config(spec: dict) -> LayeredMeasure:
    """Build a measure from ``{"family": name, ...params}``."""
    spec = dict(spec)
    family = spec.pop("family", None)
    builders = {
        "power_law": power_law,
        "tilted_power_law": tilted_power_law,
        "point_masses": point_masses,
        "uniform_box": uniform_box,
        "empty": empty_measure,
    }
    if family not in builders:
        raise ValueError(f"unknown measure family {family!r}; expected one of {sorted(builders)}")
    for key in ("hi", "lo"):
        if spec.get(key) == "inf":
            spec[key] = math.inf
    return builders[family](**spec)
