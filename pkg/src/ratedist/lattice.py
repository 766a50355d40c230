"""Lattice quantizers, Voronoi dither and the one-bit Lloyd quantizer.

Generators are stored with lattice basis vectors as *rows*, so lattice
points are ``k @ generator`` for integer row vectors ``k``.  All quantizer
functions accept a single vector of length n or an ``(N, n)`` batch.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import integrate, stats
from scipy.special import ndtri

from .errors import ConvergenceError, ValidationError

_D4_BASIS = np.array([
    [-1, -1, 0, 0],
    [1, -1, 0, 0],
    [0, 1, -1, 0],
    [0, 0, 1, -1],
], dtype=float)

_E8_BASIS = np.array([
    [2, 0, 0, 0, 0, 0, 0, 0],
    [-1, 1, 0, 0, 0, 0, 0, 0],
    [0, -1, 1, 0, 0, 0, 0, 0],
    [0, 0, -1, 1, 0, 0, 0, 0],
    [0, 0, 0, -1, 1, 0, 0, 0],
    [0, 0, 0, 0, -1, 1, 0, 0],
    [0, 0, 0, 0, 0, -1, 1, 0],
    [0.5, 0.5, 0.5, 0.5, 0.5, 0.5, 0.5, 0.5],
])


def _round_dn(x: np.ndarray) -> np.ndarray:
    """Nearest point of D_n (integer vectors with even sum), batched.

    Rounds half-to-even, then, where the parity is odd, moves the coordinate
    with the largest rounding error to its second-nearest integer.  Among
    equally bad coordinates the move that gives the lexicographically
    smaller point wins: the first coordinate that can step down, otherwise
    the last one, stepped up.
    """
    f = np.rint(x)
    odd = (f.sum(axis=1) % 2) != 0
    if not odd.any():
        return f
    xo, fo = x[odd], f[odd]
    err = xo - fo
    a = np.abs(err)
    worst = a == a.max(axis=1, keepdims=True)
    # an exact integer coordinate (err == 0) can step either way
    can_down = worst & (err <= 0)
    n = x.shape[1]
    k_down = np.where(can_down.any(axis=1), can_down.argmax(axis=1), -1)
    k_up = n - 1 - worst[:, ::-1].argmax(axis=1)
    rows = np.arange(xo.shape[0])
    step = np.where(k_down >= 0, -1.0, 1.0)
    k = np.where(k_down >= 0, k_down, k_up)
    fo[rows, k] += step
    f[odd] = fo
    return f


def _lex_less(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    diff = a != b
    first = diff.argmax(axis=1)
    rows = np.arange(a.shape[0])
    return diff.any(axis=1) & (a[rows, first] < b[rows, first])


def _round_e8(x: np.ndarray) -> np.ndarray:
    """Nearest point of E8 = D8 union (D8 + 1/2), batched."""
    a = _round_dn(x)
    b = _round_dn(x - 0.5) + 0.5
    da = ((x - a) ** 2).sum(axis=1)
    db = ((x - b) ** 2).sum(axis=1)
    pick_b = (db < da) | ((db == da) & _lex_less(b, a))
    return np.where(pick_b[:, None], b, a)


@dataclass(frozen=True, eq=False)
class Lattice:
    """Scaled copy of Z^n, D4 or E8."""

    name: str
    generator: np.ndarray
    scale: float = 1.0

    def __post_init__(self):
        g = np.array(self.generator, dtype=float)
        if g.ndim != 2 or g.shape[0] != g.shape[1]:
            raise ValidationError("generator must be square")
        if abs(np.linalg.det(g)) < 1e-12:
            raise ValidationError("generator must have full rank")
        if not self.scale > 0:
            raise ValidationError("scale must be positive", scale=self.scale)
        g.setflags(write=False)
        object.__setattr__(self, "generator", g)
        object.__setattr__(self, "scale", float(self.scale))

    @classmethod
    def integer(cls, n: int, scale: float = 1.0) -> "Lattice":
        return cls(f"Z{n}", np.eye(n), scale)

    @classmethod
    def d4(cls, scale: float = 1.0) -> "Lattice":
        return cls("D4", _D4_BASIS, scale)

    @classmethod
    def e8(cls, scale: float = 1.0) -> "Lattice":
        return cls("E8", _E8_BASIS, scale)

    @classmethod
    def by_name(cls, name: str, scale: float = 1.0) -> "Lattice":
        key = name.upper().replace("^", "")
        if key == "D4":
            return cls.d4(scale)
        if key == "E8":
            return cls.e8(scale)
        if key.startswith("Z") and key[1:].isdigit() and int(key[1:]) > 0:
            return cls.integer(int(key[1:]), scale)
        raise ValidationError(f"unknown lattice {name!r}; expected Zn, D4 or E8")

    @property
    def dim(self) -> int:
        return self.generator.shape[0]

    @property
    def basis(self) -> np.ndarray:
        """Scaled generator (rows are basis vectors)."""
        return self.scale * self.generator

    @property
    def cell_volume(self) -> float:
        return abs(float(np.linalg.det(self.basis)))

    def scaled(self, factor: float) -> "Lattice":
        return Lattice(self.name, self.generator, self.scale * factor)

    def _unit_nearest(self, y: np.ndarray) -> np.ndarray:
        if self.name == "D4":
            return _round_dn(y)
        if self.name == "E8":
            return _round_e8(y)
        return np.rint(y)

    def combine(self, coeffs) -> np.ndarray:
        """Points ``coeffs @ basis``, accumulated row by row in a fixed order
        so each result is bit-identical whatever the batch size."""
        c = np.asarray(coeffs, dtype=float)
        b = self.basis
        out = c[..., :1] * b[0]
        for j in range(1, self.dim):
            out = out + c[..., j:j + 1] * b[j]
        return out

    def coordinates(self, points) -> np.ndarray:
        """Real coordinates of ``points`` in the scaled basis."""
        pts = np.asarray(points, dtype=float)
        return np.linalg.solve(self.basis.T, pts.reshape(-1, self.dim).T).T.reshape(pts.shape)

    def contains(self, points, atol: float = 1e-9) -> np.ndarray:
        k = self.coordinates(points)
        return np.all(np.abs(k - np.rint(k)) <= atol, axis=-1)

    def second_moment(self) -> float:
        """Per-dimension second moment of the Voronoi cell (closed form)."""
        nsm = {"D4": 0.0766032346, "E8": 0.0716821803}.get(self.name, 1.0 / 12.0)
        return nsm * self.cell_volume ** (2.0 / self.dim)


def _as_batch(lat: Lattice, x) -> tuple[np.ndarray, bool]:
    arr = np.asarray(x, dtype=float)
    single = arr.ndim <= 1
    arr2 = np.atleast_2d(arr.reshape(1, -1) if single else arr)
    if arr2.ndim != 2 or arr2.shape[1] != lat.dim:
        raise ValidationError(
            f"dimension mismatch: lattice is {lat.dim}-dimensional",
            shape=list(arr.shape), dim=lat.dim,
        )
    return arr2, single


def nearest_point(lat: Lattice, x) -> np.ndarray:
    """Closest lattice point to ``x`` (Euclidean), with deterministic ties."""
    xb, single = _as_batch(lat, x)
    out = lat.scale * lat._unit_nearest(xb / lat.scale)
    return out[0] if single else out


def quantization_error(lat: Lattice, x) -> np.ndarray:
    """``x - nearest_point(x)``; always inside the Voronoi cell of the origin."""
    xb, single = _as_batch(lat, x)
    e = xb - nearest_point(lat, xb)
    return e[0] if single else e


# -- counter-based randomness ---------------------------------------------

def _blocks_per_sample(width: int) -> int:
    return (width + 3) // 4


def counter_uniforms(key: int, start: int, count: int, width: int) -> np.ndarray:
    """Uniforms in (0, 1) addressed by (key, sample index).

    Sample ``i`` always reads the same Philox counter blocks, so any slice
    of the stream can be regenerated independently of the others.
    """
    if count < 0 or start < 0:
        raise ValidationError("start and count must be non-negative")
    blocks = _blocks_per_sample(width)
    bg = np.random.Philox(key=int(key) & (2**64 - 1))
    bg.advance(start * blocks)
    raw = bg.random_raw(count * blocks * 4).reshape(count, blocks * 4)[:, :width]
    return ((raw >> np.uint64(11)).astype(float) + 0.5) * 2.0**-53


def counter_normals(key: int, start: int, count: int, width: int) -> np.ndarray:
    return ndtri(counter_uniforms(key, start, count, width))


def substream_key(seed: int, stream: int) -> int:
    """Independent 64-bit key for a named stream derived from one seed."""
    ss = np.random.SeedSequence([int(seed) & (2**64 - 1), stream])
    return int(ss.generate_state(1, dtype=np.uint64)[0])


DITHER_STREAM = 0


@dataclass(frozen=True)
class DitheredQuantizer:
    lattice: Lattice
    rng_seed: int = 0xC0DEC0DE

    @property
    def dither_key(self) -> int:
        return substream_key(self.rng_seed, DITHER_STREAM)


def sample_dither(q: DitheredQuantizer, count: Optional[int] = None, start: int = 0) -> np.ndarray:
    """Dither vectors uniform over the Voronoi cell, for sample indices
    ``start .. start + count - 1`` (a single vector when ``count`` is None).

    A uniform point of the fundamental parallelepiped is folded back into
    the cell by subtracting its nearest lattice point.
    """
    n = q.lattice.dim
    k = 1 if count is None else count
    u = q.lattice.combine(counter_uniforms(q.dither_key, start, k, n))
    d = u - nearest_point(q.lattice, u)
    return d[0] if count is None else d


def dithered_encode(q: DitheredQuantizer, x, dither) -> np.ndarray:
    """Lattice point ``Q(x + dither)``."""
    return nearest_point(q.lattice, np.asarray(x, float) + np.asarray(dither, float))


def dithered_decode(q: DitheredQuantizer, u, dither) -> np.ndarray:
    """Reconstruction ``u - dither``; the decoder must hold the same dither."""
    return np.asarray(u, float) - np.asarray(dither, float)


# -- one-bit Lloyd quantizer ----------------------------------------------

@dataclass(frozen=True)
class OneBitQuantizer:
    threshold: float
    y0: float
    y1: float
    distortion: float
    iterations: int
    history: tuple = field(default=(), repr=False)

    def quantize(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return np.where(x <= self.threshold, self.y0, self.y1)


class _SampleModel:
    def __init__(self, samples):
        s = np.sort(np.asarray(samples, dtype=float).reshape(-1))
        if s.size < 2 or s[0] == s[-1]:
            raise ValidationError("need at least two distinct samples")
        self.s = s
        self.mean = float(s.mean())

    def region_stats(self, lo, hi):
        sel = self.s[(self.s > lo) & (self.s <= hi)]
        return sel.size / self.s.size, float(sel.sum()) / self.s.size, float((sel**2).sum()) / self.s.size


class _PdfModel:
    def __init__(self, spec: dict):
        kind = spec.get("type")
        if kind == "gaussian":
            extra = set(spec) - {"type", "mean", "std"}
            mean, std = float(spec.get("mean", 0.0)), float(spec.get("std", 1.0))
            if not std > 0:
                raise ValidationError("gaussian pdf needs std > 0")
            self.dist = stats.norm(mean, std)
            self.support = (-math.inf, math.inf)
        elif kind == "uniform":
            extra = set(spec) - {"type", "low", "high"}
            low, high = float(spec.get("low", 0.0)), float(spec.get("high", 1.0))
            if not high > low:
                raise ValidationError("uniform pdf needs high > low")
            self.dist = stats.uniform(low, high - low)
            self.support = (low, high)
        else:
            raise ValidationError(f"unsupported pdf type {kind!r}; use 'gaussian' or 'uniform'")
        if extra:
            raise ValidationError("unknown pdf keys", keys=sorted(extra))
        self.mean = float(self.dist.mean())

    def _quad(self, f, lo, hi):
        lo, hi = max(lo, self.support[0]), min(hi, self.support[1])
        if hi <= lo:
            return 0.0
        pts = None
        if math.isfinite(lo) and math.isfinite(hi) and hi - lo > 20:
            pts = [self.mean]
        val, _ = integrate.quad(f, lo, hi, epsabs=0.0, epsrel=1e-10, limit=200, points=pts)
        return val

    def region_stats(self, lo, hi):
        pdf = self.dist.pdf
        mass = float(self.dist.cdf(hi) - self.dist.cdf(lo))
        first = self._quad(lambda t: t * pdf(t), lo, hi)
        second = self._quad(lambda t: t * t * pdf(t), lo, hi)
        return mass, first, second


def lloyd_one_bit(
    samples=None,
    pdf: Optional[dict] = None,
    tol: float = 1e-12,
    max_iter: int = 1000,
    init_threshold: Optional[float] = None,
) -> OneBitQuantizer:
    """Two-level MSE quantizer by Lloyd iteration.

    Give either ``samples`` (empirical centroids) or ``pdf`` (``{"type":
    "gaussian", "mean", "std"}`` or ``{"type": "uniform", "low", "high"}``,
    integrated numerically).  Region 0 is ``x <= threshold``.  Stops when
    the distortion changes by less than ``tol``.
    """
    if (samples is None) == (pdf is None):
        raise ValidationError("give exactly one of samples or pdf")
    model = _SampleModel(samples) if samples is not None else _PdfModel(pdf)
    t = model.mean if init_threshold is None else float(init_threshold)

    history = []
    prev = math.inf
    for it in range(1, max_iter + 1):
        m0, s0, q0 = model.region_stats(-math.inf, t)
        m1, s1, q1 = model.region_stats(t, math.inf)
        if m0 <= 0 or m1 <= 0:
            raise ValidationError("threshold leaves a region empty", threshold=t)
        y0, y1 = s0 / m0, s1 / m1
        # sum of within-region variances, from raw moments
        dist = max(0.0, (q0 - s0 * y0) + (q1 - s1 * y1))
        history.append(dist)
        if abs(prev - dist) < tol:
            return OneBitQuantizer(t, y0, y1, dist, it, tuple(history))
        prev = dist
        t = 0.5 * (y0 + y1)
    raise ConvergenceError(f"Lloyd iteration did not settle in {max_iter} steps",
                           threshold=t, gap=abs(history[-1] - history[-2]))
