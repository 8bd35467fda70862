"""Jump-adapted Euler scheme for truncated jump-type stochastic equations.

The simulated equation keeps the first ``n0`` layers of the compensated driver
(with their compensator as drift) and the first ``n1`` layers of the
uncompensated driver, and evaluates every coefficient at ``chi_m(x)``.  The
event timeline of a path is the union of the grid ``{i h}`` and the atom
times.  Between events the state moves by one Euler update with the state held
at its value at the start of the gap; at an atom the matching jump is applied.

Coefficient conventions: ``sigma``, ``b1``, ``b2`` map arrays of states to
arrays; ``g0``/``g1`` take ``(x, marks)`` with ``marks[..., j]`` the ``j``-th
mark coordinate and broadcast like numpy ufuncs.  ``None`` stands for the zero
coefficient.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from .measures import LayeredMeasure, integrate
from .noise import NoiseRealization, coarsen, generate

__all__ = [
    "ModelSpec",
    "TruncationParams",
    "Path",
    "SimulationError",
    "Observer",
    "chi",
    "drift",
    "run_batch",
    "simulate",
    "simulate_paths",
    "ensemble_noises",
    "simulate_ensemble",
    "EnsembleStats",
    "uniqueness_experiment",
    "moment_check",
    "validate_model",
]

Coef = Callable[[np.ndarray], np.ndarray]
JumpCoef = Callable[[np.ndarray, np.ndarray], np.ndarray]
JumpLaw = Callable[[np.ndarray, int], tuple[np.ndarray, np.ndarray]]


class SimulationError(RuntimeError):
    def __init__(self, time: float, state: float, message: str = "non-finite state"):
        self.time = time
        self.state = state
        super().__init__(f"{message} at t={time!r} (state {state!r})")


@dataclass(frozen=True, eq=False)
class ModelSpec:
    """Coefficients ``(sigma, b1 - b2, g0, g1)`` with their intensity measures.

    ``compensator0(x, n)`` is the closed form of ``int g0(x, u) mu0(du)`` over the
    first ``n`` layers.  ``jump_law0(x, n)``, when given, returns a discrete
    measure ``(sizes, weights)`` of shape ``(len(x), K)`` equal (or quadrature
    equivalent) to the image of ``mu0`` restricted to the first ``n`` layers
    under ``u -> g0(x, u)``; the generator uses it for fast evaluation.
    ``tail0(x, n)`` bounds ``int g0(x,u)^2`` beyond layer ``n``; ``tail1(x, n)``
    bounds ``int |g1(x,u)|`` over the uncompensated layers beyond ``n``.
    ``l0_sq_integral(x, y, n)`` is an optional closed form of
    ``int (g0(x,u) - g0(y,u))^2 mu0(du)`` over the first ``n`` layers.
    """

    name: str
    mu0: LayeredMeasure
    mu1: LayeredMeasure
    sigma: Coef | None = None
    b1: Coef | None = None
    b2: Coef | None = None
    g0: JumpCoef | None = None
    g1: JumpCoef | None = None
    u2_layers: frozenset[int] | None = None
    compensator0: Callable[[np.ndarray, int], np.ndarray] | None = None
    jump_law0: JumpLaw | None = None
    jump_law1: JumpLaw | None = None
    tail0: Callable[[np.ndarray, int], np.ndarray] | None = None
    tail1: Callable[[np.ndarray, int], np.ndarray] | None = None
    l0_sq_integral: Callable[[np.ndarray, np.ndarray, int], np.ndarray] | None = None
    domain: str = "full"
    exact_floor: float | None = None
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.domain not in ("full", "nonnegative"):
            raise ValueError("domain must be 'full' or 'nonnegative'")

    def in_u2(self, layer: int) -> bool:
        return self.u2_layers is None or layer in self.u2_layers

    def b(self, x):
        x = np.asarray(x, dtype=float)
        return _eval(self.b1, x) - _eval(self.b2, x)


def _eval(fn, x):
    if fn is None:
        return np.zeros(np.shape(x))
    return np.asarray(fn(x), dtype=float) + np.zeros(np.shape(x))


@dataclass(frozen=True)
class TruncationParams:
    m: float = 1e6
    n0: int = 0
    n1: int = 0
    h: float = 2.0 ** -8
    truncate_g1: bool = False
    clamp: bool = True

    def __post_init__(self):
        if self.m < 1:
            raise ValueError("truncation level m must be >= 1")
        if not self.h > 0:
            raise ValueError("step h must be positive")
        if self.n0 < 0 or self.n1 < 0:
            raise ValueError("layer counts must be non-negative")


def chi(m: float, x):
    """Clamp ``x`` to ``[-m, m]``."""
    if m < 1:
        raise ValueError("m must be >= 1")
    out = np.clip(x, -m, m)
    return float(out) if np.ndim(out) == 0 else out


@dataclass(frozen=True, eq=False)
class Path:
    """A cadlag path on its event timeline (time, left limit, value), starting at ``t = 0``."""

    times: np.ndarray
    left: np.ndarray
    values: np.ndarray
    initial: float
    horizon: float
    flags: tuple[str, ...] = ()

    @property
    def events(self) -> list[tuple[float, float, float]]:
        return list(zip(self.times.tolist(), self.left.tolist(), self.values.tolist()))

    def at(self, t: float) -> float:
        i = int(np.searchsorted(self.times, t, side="right")) - 1
        return float(self.values[max(i, 0)])

    def identical(self, other: "Path") -> bool:
        return (np.array_equal(self.times, other.times) and np.array_equal(self.left, other.left)
                and np.array_equal(self.values, other.values))


class Observer:
    """Hooks called by :func:`run_batch`; ``idx`` selects paths (slice or index array)."""

    def segment(self, idx, t0: np.ndarray, t1, x_left: np.ndarray) -> None:
        pass

    def event(self, idx, t, left: np.ndarray, value: np.ndarray) -> None:
        pass

    def grid(self, i: int, x: np.ndarray) -> None:
        pass


def _steps(T: float, h: float) -> int:
    n = round(T / h)
    if n < 1 or abs(n * h - T) > 4 * np.spacing(T):
        raise ValueError(f"step {h!r} does not divide horizon {T!r}")
    return int(n)


def drift(model: ModelSpec, trunc: TruncationParams, xc: np.ndarray, tol: float = 1e-10) -> np.ndarray:
    """``b1 - b2 - C_n0`` at already-clamped states ``xc``."""
    out = model.b(xc)
    if model.g0 is not None and trunc.n0 > 0:
        if model.compensator0 is not None:
            out = out - np.asarray(model.compensator0(xc, trunc.n0), dtype=float)
        else:
            xr = np.atleast_1d(xc)
            comp = integrate(model.mu0, lambda u: model.g0(xr[None, :], u[:, None, :]), trunc.n0, tol)
            out = out - np.reshape(comp, np.shape(xc))
    return out


def run_batch(
    model: ModelSpec,
    trunc: TruncationParams,
    noises: Sequence[NoiseRealization],
    x0: float,
    T: float,
    observer: Observer | None = None,
    u2_only: bool = False,
) -> np.ndarray:
    """Advance one path per noise realisation to time ``T``; returns the final states.

    Paths are processed together, interval by interval of the grid, so the
    work vectorises over the batch.  Each path only ever sees its own noise.
    Overflow surfaces as :class:`SimulationError` rather than a numpy warning.
    """
    with np.errstate(over="ignore", invalid="ignore"):
        return _run_batch(model, trunc, noises, x0, T, observer, u2_only)


def _run_batch(model, trunc, noises, x0, T, observer, u2_only):
    obs = observer or Observer()
    P = len(noises)
    if P == 0:
        raise ValueError("need at least one noise realisation")
    if model.domain == "nonnegative" and x0 < 0:
        raise ValueError("non-negative model needs x0 >= 0")
    h = float(trunc.h)
    n_steps = _steps(T, h)
    hf = noises[0].finest_step
    for nz in noises:
        if nz.finest_step != hf:
            raise ValueError("all noises in a batch must share the finest step")
        if nz.horizon < T * (1 - 1e-12):
            raise ValueError("noise horizon shorter than T")
        if nz.n_layers0 < trunc.n0 or nz.n_layers1 < trunc.n1:
            raise ValueError("noise carries fewer layers than requested")
    ratio = round(h / hf)
    if ratio < 1 or abs(ratio * hf - h) > 4 * np.spacing(h):
        raise ValueError("step h must be a multiple of the noise finest step")

    m = trunc.m
    clamp = (lambda v: np.clip(v, -m, m)) if trunc.clamp else (lambda v: v)
    has_sigma = model.sigma is not None
    grid_t = np.arange(n_steps + 1) * h

    # -- flatten atoms of all paths ------------------------------------------------
    cols = {k: [] for k in ("path", "time", "kind", "seq", "mark")}
    marks = {0: [], 1: []}
    offset = {0: 0, 1: 0}
    for p, nz in enumerate(noises):
        for kind, atoms, n_keep in ((0, nz.atoms0, trunc.n0), (1, nz.atoms1, trunc.n1)):
            if n_keep == 0 or len(atoms) == 0 or (kind == 0 and model.g0 is None) or (kind == 1 and model.g1 is None):
                continue
            keep = (atoms.layers <= n_keep) & (atoms.times <= T)
            if kind == 1 and u2_only and model.u2_layers is not None:
                keep &= np.isin(atoms.layers, sorted(model.u2_layers))
            cnt = int(keep.sum())
            if cnt == 0:
                continue
            cols["path"].append(np.full(cnt, p))
            cols["time"].append(atoms.times[keep])
            cols["kind"].append(np.full(cnt, kind))
            cols["seq"].append(np.arange(cnt))
            cols["mark"].append(offset[kind] + np.arange(cnt))
            marks[kind].append(atoms.marks[keep])
            offset[kind] += cnt
    if cols["time"]:
        A = {k: np.concatenate(v) for k, v in cols.items()}
    else:
        A = {k: np.zeros(0, dtype=float if k == "time" else np.int64) for k in cols}
    M0 = np.concatenate(marks[0]) if marks[0] else np.zeros((0, model.mu0.dimension))
    M1 = np.concatenate(marks[1]) if marks[1] else np.zeros((0, model.mu1.dimension))

    n_atoms = A["time"].size
    if n_atoms:
        interval = np.clip(np.searchsorted(grid_t, A["time"], side="left") - 1, 0, n_steps - 1)
        order = np.lexsort((A["seq"], A["kind"], A["time"], A["path"], interval))
        A = {k: v[order] for k, v in A.items()}
        interval = interval[order]
        group = interval * P + A["path"]
        first = np.r_[0, np.flatnonzero(np.diff(group)) + 1]
        rank = np.arange(n_atoms) - np.repeat(first, np.diff(np.r_[first, n_atoms]))
        order = np.lexsort((A["path"], rank, interval))
        A = {k: v[order] for k, v in A.items()}
        interval, rank = interval[order], rank[order]
        key = interval * (int(rank.max()) + 1) + rank
        ukey, ustart = np.unique(key, return_index=True)
        uend = np.r_[ustart[1:], n_atoms]
        uint = interval[ustart]
        if has_sigma:
            A["B"] = _brownian_at(noises, A["path"], A["time"])
    else:
        uint = np.zeros(0, dtype=np.int64)
        ustart = uend = uint

    if has_sigma:
        bpaths = np.stack([nz.brownian_path for nz in noises])
    x = np.full(P, float(x0))
    cur = np.zeros(P)
    bcur = np.zeros(P)
    obs.grid(0, x)

    def advance(idx, tnew, bnew):
        xs = x[idx]
        t0 = cur[idx]
        dt = tnew - t0
        xc = clamp(xs)
        new = xs + drift(model, trunc, xc) * dt
        if has_sigma:
            new = new + _eval(model.sigma, xc) * (bnew - bcur[idx])
        _check_finite(new, tnew)
        obs.segment(idx, t0, tnew, xs)
        x[idx] = new
        cur[idx] = tnew
        if has_sigma:
            bcur[idx] = bnew

    g = 0
    n_groups = uint.size
    for i in range(n_steps):
        while g < n_groups and uint[g] == i:
            s = slice(ustart[g], uend[g])
            pth = A["path"][s]
            t = A["time"][s]
            advance(pth, t, A["B"][s] if has_sigma else None)
            left = x[pth]
            kind = A["kind"][s]
            new = left.copy()
            k0 = kind == 0
            if k0.any():
                new[k0] = left[k0] + model.g0(clamp(left[k0]), M0[A["mark"][s][k0]])
            k1 = ~k0
            if k1.any():
                jump = model.g1(clamp(left[k1]), M1[A["mark"][s][k1]])
                if trunc.truncate_g1:
                    jump = np.clip(jump, -m, m)
                new[k1] = left[k1] + jump
            _check_finite(new, t)
            x[pth] = new
            obs.event(pth, t, left, new)
            g += 1
        t_end = grid_t[i + 1]
        b_end = bpaths[:, (i + 1) * ratio] if has_sigma else None
        pending = cur < t_end
        if pending.all():
            advance(slice(None), t_end, b_end)
            obs.event(slice(None), t_end, x, x)
        elif pending.any():
            idx = np.flatnonzero(pending)
            advance(idx, t_end, b_end[idx] if has_sigma else None)
            obs.event(idx, t_end, x[idx], x[idx])
        obs.grid(i + 1, x)
    return x


def _brownian_at(noises, paths, times):
    hf = noises[0].finest_step
    out = np.empty(times.size)
    for p in np.unique(paths):
        sel = paths == p
        out[sel] = noises[p].brownian_at(times[sel])
    return out


def _check_finite(v, t):
    if not np.all(np.isfinite(v)):
        bad = np.flatnonzero(~np.isfinite(np.atleast_1d(v)))[0]
        tt = np.atleast_1d(t)
        raise SimulationError(float(tt[bad] if tt.size > 1 else tt[0]), float(np.atleast_1d(v)[bad]))


class _PathRecorder(Observer):
    def __init__(self, P: int):
        self.P = P
        self.chunks: list[tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]] = []

    def event(self, idx, t, left, value):
        if isinstance(idx, slice):
            idx = np.arange(self.P)
        n = len(idx)
        self.chunks.append((np.asarray(idx), np.broadcast_to(t, (n,)).astype(float),
                            np.array(left, dtype=float), np.array(value, dtype=float)))

    def paths(self, x0: float, T: float, floor: float | None) -> list[Path]:
        if self.chunks:
            pid = np.concatenate([c[0] for c in self.chunks])
            tt = np.concatenate([c[1] for c in self.chunks])
            ll = np.concatenate([c[2] for c in self.chunks])
            vv = np.concatenate([c[3] for c in self.chunks])
            order = np.argsort(pid, kind="stable")
            pid, tt, ll, vv = pid[order], tt[order], ll[order], vv[order]
            bounds = np.searchsorted(pid, np.arange(self.P + 1))
        else:
            tt = ll = vv = np.zeros(0)
            bounds = np.zeros(self.P + 1, dtype=np.int64)
        out = []
        for p in range(self.P):
            s = slice(bounds[p], bounds[p + 1])
            times = np.r_[0.0, tt[s]]
            left = np.r_[x0, ll[s]]
            values = np.r_[x0, vv[s]]
            flags = ()
            if floor is not None and np.min(values) < floor:
                flags = ("below_exact_floor",)
            out.append(Path(times, left, values, float(x0), float(T), flags))
        return out


def simulate(model: ModelSpec, trunc: TruncationParams, noise: NoiseRealization, x0: float, T: float) -> Path:
    """Simulate one path of the truncated equation against a fixed noise realisation."""
    rec = _PathRecorder(1)
    run_batch(model, trunc, [noise], x0, T, rec)
    return rec.paths(x0, T, model.exact_floor)[0]


def ensemble_noises(model: ModelSpec, trunc: TruncationParams, seed: int, T: float,
                    start: int, stop: int) -> list[NoiseRealization]:
    """Independent noises for paths ``start..stop-1`` (stream key ``(seed, path)``)."""
    return [generate(seed, T, trunc.h, model.mu0, trunc.n0, model.mu1, trunc.n1, path_index=p)
            for p in range(start, stop)]


def simulate_paths(model: ModelSpec, trunc: TruncationParams, seed: int, x0: float, T: float,
                   n_paths: int) -> list[Path]:
    rec = _PathRecorder(n_paths)
    run_batch(model, trunc, ensemble_noises(model, trunc, seed, T, 0, n_paths), x0, T, rec)
    return rec.paths(x0, T, model.exact_floor)


class _StatsRecorder(Observer):
    def __init__(self, P: int, n_steps: int):
        self.grid_vals = np.empty((n_steps + 1, P))
        self.sup2 = np.zeros(P)
        self.vmin = np.full(P, np.inf)

    def event(self, idx, t, left, value):
        l2 = np.maximum(left * left, value * value)
        self.sup2[idx] = np.maximum(self.sup2[idx], l2)
        self.vmin[idx] = np.minimum(self.vmin[idx], np.minimum(left, value))

    def grid(self, i, x):
        self.grid_vals[i] = x
        if i == 0:
            self.sup2 = np.maximum(self.sup2, x * x)
            self.vmin = np.minimum(self.vmin, x)


@dataclass
class EnsembleStats:
    t: np.ndarray
    mean: np.ndarray
    var: np.ndarray
    min: np.ndarray
    max: np.ndarray
    se: np.ndarray
    sup2_mean: float
    sup2_se: float
    n_paths: int
    min_value: float
    flags: tuple[str, ...] = ()

    def rows(self):
        return zip(self.t, self.mean, self.var, self.min, self.max, self.se)


def _merge(a, b):
    # Chan et al. pairwise update of (n, mean, M2)
    na, ma, Ma = a
    nb, mb, Mb = b
    n = na + nb
    d = mb - ma
    return n, ma + d * (nb / n), Ma + Mb + d * d * (na * nb / n)


def simulate_ensemble(
    model: ModelSpec,
    trunc: TruncationParams,
    seed: int,
    x0: float,
    T: float,
    n_paths: int,
    threads: int = 1,
    chunk: int = 1024,
) -> EnsembleStats:
    """Grid-time statistics over ``n_paths`` independent paths.

    Paths are processed in fixed chunks whose partial moments are merged in
    chunk order, so results do not depend on ``threads``.
    """
    if n_paths < 1:
        raise ValueError("n_paths must be >= 1")
    n_steps = _steps(T, trunc.h)
    starts = list(range(0, n_paths, chunk))

    def work(start):
        stop = min(start + chunk, n_paths)
        rec = _StatsRecorder(stop - start, n_steps)
        run_batch(model, trunc, ensemble_noises(model, trunc, seed, T, start, stop), x0, T, rec)
        g = rec.grid_vals
        mean = g.mean(axis=1)
        M2 = ((g - mean[:, None]) ** 2).sum(axis=1)
        s2 = 1.0 + rec.sup2
        s2m = s2.mean()
        return ((stop - start, mean, M2), (stop - start, s2m, ((s2 - s2m) ** 2).sum()),
                g.min(axis=1), g.max(axis=1), rec.vmin.min())

    if threads > 1:
        with ThreadPoolExecutor(threads) as ex:
            parts = list(ex.map(work, starts))
    else:
        parts = [work(s) for s in starts]

    acc, acc2, lo, hi, vmin = parts[0]
    for part in parts[1:]:
        acc = _merge(acc, part[0])
        acc2 = _merge(acc2, part[1])
        lo = np.minimum(lo, part[2])
        hi = np.maximum(hi, part[3])
        vmin = min(vmin, part[4])
    n, mean, M2 = acc
    var = M2 / (n - 1) if n > 1 else np.zeros_like(M2)
    _, s2m, s2M2 = acc2
    s2se = math.sqrt(s2M2 / (n - 1) / n) if n > 1 else 0.0
    flags = ()
    if model.exact_floor is not None and vmin < model.exact_floor:
        flags = ("below_exact_floor",)
    return EnsembleStats(
        t=np.arange(n_steps + 1) * trunc.h, mean=mean, var=var, min=lo, max=hi,
        se=np.sqrt(var / n), sup2_mean=float(s2m), sup2_se=s2se, n_paths=n,
        min_value=float(vmin), flags=flags,
    )


@dataclass
class UniquenessTable:
    rows: list[tuple[float, float]]
    paths: list[Path]

    @property
    def steps(self) -> list[float]:
        return [r[0] for r in self.rows]

    @property
    def differences(self) -> list[float]:
        return [r[1] for r in self.rows]


def uniqueness_experiment(
    model: ModelSpec,
    trunc: TruncationParams,
    seed: int,
    x0: float,
    T: float,
    refinement_levels: Sequence[float],
) -> UniquenessTable:
    """Cauchy test in the step size on one coupled noise realisation.

    Row ``(h, d)`` reports ``d = sup |x_h(t) - x_{h/2}(t)|`` over the event
    times the two solutions share.
    """
    levels = [float(h) for h in refinement_levels]
    if len(levels) < 2:
        raise ValueError("need at least two refinement levels")
    for a_, b_ in zip(levels, levels[1:]):
        if not math.isclose(a_, 2 * b_, rel_tol=1e-12):
            raise ValueError("each level must halve the previous step")
    finest = levels[-1]
    noise = generate(seed, T, finest, model.mu0, trunc.n0, model.mu1, trunc.n1)
    paths = []
    for h in levels:
        nz = coarsen(noise, round(h / finest))
        paths.append(simulate(model, replace(trunc, h=h), nz, x0, T))
    rows = []
    for h, pa, pb in zip(levels, paths, paths[1:]):
        _, ia, ib = np.intersect1d(pa.times, pb.times, assume_unique=True, return_indices=True)
        rows.append((h, float(np.max(np.abs(pa.values[ia] - pb.values[ib])))))
    return UniquenessTable(rows, paths)


def moment_check(
    model: ModelSpec,
    trunc: TruncationParams,
    seed: int,
    x0: float,
    T: float,
    n_paths: int,
    K: float,
    threads: int = 1,
) -> dict:
    """Monte Carlo ``E[1 + sup_{s<=T} x(s)^2]`` against ``(1 + 6 x0^2) exp(6K(4+T)T)``.

    The linear-growth hypothesis with constant ``K`` is checked first on a
    grid of ``[-m, m]`` (capped at 100).
    """
    from .conditions import check_growth

    span = min(trunc.m, 100.0)
    pre = check_growth(model, "linear_growth", np.linspace(-span, span, 401), K)
    if not pre.passed:
        raise ValueError(f"model violates the linear growth bound with K={K}: {pre}")
    stats = simulate_ensemble(model, trunc, seed, x0, T, n_paths, threads)
    bound = (1.0 + 6.0 * x0 * x0) * math.exp(6.0 * K * (4.0 + T) * T)
    upper = stats.sup2_mean + 3.0 * stats.sup2_se
    return {
        "estimate": stats.sup2_mean,
        "se": stats.sup2_se,
        "upper": upper,
        "bound": bound,
        "passed": bool(upper <= bound),
        "n_paths": n_paths,
    }


def validate_model(model: ModelSpec, grid: np.ndarray | None = None, n_marks: int = 16,
                   n_layers: int = 4, seed: int = 0) -> list[str]:
    """Registration checks: ``b2`` non-decreasing and, for non-negative models,
    the boundary behaviour of the coefficients.  Returns a list of problems."""
    problems = []
    if grid is None:
        grid = np.linspace(-4.0, 4.0, 257)
    grid = np.asarray(grid, dtype=float)
    if model.b2 is not None and np.any(np.diff(_eval(model.b2, grid)) < -1e-12):
        problems.append("b2 is not non-decreasing")
    if model.domain != "nonnegative":
        return problems
    rng = np.random.default_rng(seed)
    neg = grid[grid <= 0]
    pos = grid[grid > 0]
    if np.any(model.b(neg) < 0):
        problems.append("b(x) < 0 for some x <= 0")
    if np.any(_eval(model.sigma, neg) != 0):
        problems.append("sigma(x) != 0 for some x <= 0")
    for measure, g, name in ((model.mu0, model.g0, "g0"), (model.mu1, model.g1, "g1")):
        if g is None:
            continue
        for layer in measure.layers[:n_layers]:
            if layer.mass == 0:
                continue
            u = layer.sample(rng, n_marks)
            if name == "g0":
                if np.any(g(neg[:, None], u[None, :, :]) != 0):
                    problems.append("g0(x, u) != 0 for some x <= 0")
                if np.any(pos[:, None] + g(pos[:, None], u[None, :, :]) < 0):
                    problems.append("x + g0(x, u) < 0 for some x > 0")
            elif np.any(grid[:, None] + g(grid[:, None], u[None, :, :]) < 0):
                problems.append("x + g1(x, u) < 0 for some x")
    return problems
