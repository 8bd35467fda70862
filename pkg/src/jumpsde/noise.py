"""One realisation of the driving noise: a Brownian path plus marked Poisson atoms.

Every random component is drawn from its own stream keyed by
``(seed, path_index, component, layer)``, so adding layers never disturbs the
atoms of existing layers and distinct paths of an ensemble are independent.

The Brownian motion is held as its values on the finest grid (``brownian_path``,
starting at 0).  Coarsening subsamples that path, so a coarse realisation is
exactly the restriction of the fine one.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .measures import Atoms, LayeredMeasure, sample_atoms

__all__ = ["NoiseRealization", "generate", "coarsen", "stream", "dump", "load", "MAGIC"]

MAGIC = b"JSDE-NOISE-1"

_BROWNIAN, _ATOMS0, _ATOMS1 = 0, 1, 2


def stream(seed: int, path_index: int, component: int, layer: int = 0) -> np.random.Generator:
    """Independent generator for one ``(seed, path, component, layer)`` key."""
    return np.random.default_rng(np.random.SeedSequence([seed, path_index, component, layer]))


def _n_steps(T: float, h: float) -> int:
    n = round(T / h)
    if n < 1 or abs(n * h - T) > 4 * np.spacing(T):
        raise ValueError(f"step {h!r} does not divide horizon {T!r}")
    return int(n)


@dataclass(frozen=True, eq=False)
class NoiseRealization:
    seed: int
    horizon: float
    finest_step: float
    brownian_path: np.ndarray
    atoms0: Atoms
    atoms1: Atoms
    n_layers0: int
    n_layers1: int
    path_index: int = 0

    def __post_init__(self):
        n = _n_steps(self.horizon, self.finest_step)
        if self.brownian_path.shape != (n + 1,):
            raise ValueError("brownian_path must have horizon/finest_step + 1 entries")
        for atoms in (self.atoms0, self.atoms1):
            if len(atoms) and (atoms.times[0] <= 0 or atoms.times[-1] > self.horizon):
                raise ValueError("atom times must lie in (0, horizon]")
            if np.any(np.diff(atoms.times) < 0):
                raise ValueError("atoms must be sorted by time")

    @property
    def n_steps(self) -> int:
        return self.brownian_path.size - 1

    @property
    def brownian_increments(self) -> np.ndarray:
        return np.diff(self.brownian_path)

    def brownian_at(self, t: np.ndarray | float) -> np.ndarray:
        """Piecewise-linear interpolation of the stored Brownian path."""
        pos = np.asarray(t, dtype=float) / self.finest_step
        k = np.clip(np.floor(pos).astype(np.int64), 0, self.n_steps - 1)
        frac = pos - k
        return self.brownian_path[k] + frac * (self.brownian_path[k + 1] - self.brownian_path[k])

    def identical(self, other: "NoiseRealization") -> bool:
        """Bitwise equality of every stored field."""
        def same_atoms(a, b):
            return (np.array_equal(a.times, b.times) and np.array_equal(a.layers, b.layers)
                    and np.array_equal(a.marks, b.marks))
        return (
            self.seed == other.seed and self.path_index == other.path_index
            and self.horizon == other.horizon and self.finest_step == other.finest_step
            and self.n_layers0 == other.n_layers0 and self.n_layers1 == other.n_layers1
            and np.array_equal(self.brownian_path, other.brownian_path)
            and same_atoms(self.atoms0, other.atoms0) and same_atoms(self.atoms1, other.atoms1)
        )


def generate(
    seed: int,
    T: float,
    h_min: float,
    mu0: LayeredMeasure,
    n0: int,
    mu1: LayeredMeasure,
    n1: int,
    path_index: int = 0,
) -> NoiseRealization:
    if T <= 0 or h_min <= 0:
        raise ValueError("T and h_min must be positive")
    if seed < 0 or path_index < 0:
        raise ValueError("seed and path_index must be non-negative")
    n = _n_steps(T, h_min)
    rng = stream(seed, path_index, _BROWNIAN)
    path = np.empty(n + 1)
    path[0] = 0.0
    np.cumsum(rng.standard_normal(n) * np.sqrt(h_min), out=path[1:])

    def atoms(measure, n_layers, component):
        if n_layers == 0:
            return Atoms.empty(measure.dimension)
        return sample_atoms(measure, n_layers, T,
                            lambda i: stream(seed, path_index, component, i))

    return NoiseRealization(
        seed=seed,
        horizon=float(T),
        finest_step=float(h_min),
        brownian_path=path,
        atoms0=atoms(mu0, n0, _ATOMS0),
        atoms1=atoms(mu1, n1, _ATOMS1),
        n_layers0=n0,
        n_layers1=n1,
        path_index=path_index,
    )


def coarsen(noise: NoiseRealization, factor: int) -> NoiseRealization:
    """Aggregate Brownian increments in blocks of ``factor``; atoms are unchanged."""
    if factor < 1 or factor & (factor - 1):
        raise ValueError("factor must be a power of two")
    if noise.n_steps % factor:
        raise ValueError(f"factor {factor} does not divide the {noise.n_steps} fine steps")
    if factor == 1:
        return noise
    return NoiseRealization(
        seed=noise.seed,
        horizon=noise.horizon,
        finest_step=noise.finest_step * factor,
        brownian_path=noise.brownian_path[::factor].copy(),
        atoms0=noise.atoms0,
        atoms1=noise.atoms1,
        n_layers0=noise.n_layers0,
        n_layers1=noise.n_layers1,
        path_index=noise.path_index,
    )


# -- binary dump ------------------------------------------------------------------
# MAGIC, then little-endian: u64 seed, path_index, n_layers0, n_layers1, n_steps;
# f64 horizon, finest_step; f64[n_steps+1] brownian path; then for each atom list
# u64 count, dim; f64[count] times; u64[count] layers; f64[count*dim] marks.

def _pack_atoms(atoms: Atoms) -> bytes:
    count, dim = atoms.marks.shape
    return (
        struct.pack("<QQ", count, dim)
        + atoms.times.astype("<f8").tobytes()
        + atoms.layers.astype("<u8").tobytes()
        + atoms.marks.astype("<f8").tobytes()
    )


def dump(noise: NoiseRealization, path: str | Path) -> None:
    head = struct.pack(
        "<QQQQQdd", noise.seed, noise.path_index, noise.n_layers0, noise.n_layers1,
        noise.n_steps, noise.horizon, noise.finest_step,
    )
    body = noise.brownian_path.astype("<f8").tobytes()
    Path(path).write_bytes(MAGIC + head + body + _pack_atoms(noise.atoms0) + _pack_atoms(noise.atoms1))


def load(path: str | Path) -> NoiseRealization:
    buf = Path(path).read_bytes()
    if not buf.startswith(MAGIC):
        raise ValueError("not a noise dump (bad magic header)")
    off = len(MAGIC)
    seed, pidx, n0, n1, n, T, h = struct.unpack_from("<QQQQQdd", buf, off)
    off += struct.calcsize("<QQQQQdd")
    bpath = np.frombuffer(buf, "<f8", n + 1, off).astype(float)
    off += 8 * (n + 1)

    def unpack(off):
        count, dim = struct.unpack_from("<QQ", buf, off)
        off += 16
        times = np.frombuffer(buf, "<f8", count, off).astype(float)
        off += 8 * count
        layers = np.frombuffer(buf, "<u8", count, off).astype(np.int64)
        off += 8 * count
        marks = np.frombuffer(buf, "<f8", count * dim, off).astype(float).reshape(count, dim)
        off += 8 * count * dim
        return Atoms(times, layers, marks), off

    a0, off = unpack(off)
    a1, off = unpack(off)
    if off != len(buf):
        raise ValueError("trailing bytes in noise dump")
    return NoiseRealization(seed, T, h, bpath, a0, a1, n0, n1, pidx)
