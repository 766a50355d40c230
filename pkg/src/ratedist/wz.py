"""Wyner-Ziv simulation with nested-lattice binning.

Encoder: dithered fine-lattice quantization, then only the coset of the
coarse lattice is sent.  Decoder: picks the member of that coset nearest to
its side information (plus the shared dither).  Ideal coset selection stands
in for a channel code, so the measured gap to the bound is reported rather
than closed.
"""

from __future__ import annotations

import csv
import io
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, fields
from typing import Optional

import numpy as np

from .errors import ValidationError
from .gaussian import JointGaussian, conditional_covariance, wyner_ziv_rate
from .lattice import (
    DitheredQuantizer,
    Lattice,
    counter_normals,
    nearest_point,
    sample_dither,
    substream_key,
)

SOURCE_STREAM = 1
NOISE_STREAM = 2
DEFAULT_SEED = 0xC0DEC0DE


@dataclass(frozen=True)
class NestedPair:
    """Fine lattice and the coarse sublattice ``ratio * fine``."""

    fine: Lattice
    ratio: int

    def __post_init__(self):
        if int(self.ratio) != self.ratio or self.ratio < 1:
            raise ValidationError("nesting ratio must be a positive integer", ratio=self.ratio)
        object.__setattr__(self, "ratio", int(self.ratio))
        # coarse basis vectors must have integer coordinates in the fine basis
        k = self.fine.coordinates(self.coarse.basis)
        if np.abs(k - np.rint(k)).max() > 1e-9:
            raise ValidationError("coarse lattice is not a sublattice of the fine lattice")

    @property
    def coarse(self) -> Lattice:
        return self.fine.scaled(self.ratio)

    @property
    def dim(self) -> int:
        return self.fine.dim

    @property
    def bin_count(self) -> int:
        return int(round(self.coarse.cell_volume / self.fine.cell_volume))

    @property
    def rate_per_dimension(self) -> float:
        return math.log2(self.bin_count) / self.dim


def _pair_of(obj) -> NestedPair:
    return obj.pair if isinstance(obj, WZConfig) else obj


def bin_index(pair, fine_point) -> np.ndarray:
    """Coset label of fine-lattice points modulo the coarse lattice.

    Labels are the fine-basis coordinates reduced mod ``ratio`` and read as
    base-``ratio`` digits, first coordinate least significant.
    """
    pair = _pair_of(pair)
    pts = np.asarray(fine_point, dtype=float)
    single = pts.ndim <= 1
    pts = pts.reshape(-1, pair.dim)
    k = pair.fine.coordinates(pts)
    ki = np.rint(k)
    if np.abs(k - ki).max(initial=0.0) > 1e-6:
        raise ValidationError("point is not on the fine lattice")
    digits = np.mod(ki.astype(np.int64), pair.ratio)
    weights = pair.ratio ** np.arange(pair.dim, dtype=np.int64)
    idx = digits @ weights
    return idx[0] if single else idx


def coset_leader(pair, index) -> np.ndarray:
    """Fine-lattice representative of a coset label."""
    pair = _pair_of(pair)
    idx = np.asarray(index)
    single = idx.ndim == 0
    idx = idx.reshape(-1).astype(np.int64)
    if np.any(idx < 0) or np.any(idx >= pair.bin_count):
        raise ValidationError("coset index out of range", bin_count=pair.bin_count)
    digits = (idx[:, None] // pair.ratio ** np.arange(pair.dim, dtype=np.int64)) % pair.ratio
    pts = pair.fine.combine(digits)
    return pts[0] if single else pts


def wz_encode(pair, x, dither) -> np.ndarray:
    """Coset index of ``Q_fine(x + dither)``."""
    pair = _pair_of(pair)
    u = nearest_point(pair.fine, np.asarray(x, float) + np.asarray(dither, float))
    return bin_index(pair, u)


def _select(pair: NestedPair, index, anchor) -> np.ndarray:
    leader = coset_leader(pair, index)
    return leader + nearest_point(pair.coarse, anchor - leader)


def wz_decode(pair, index, y, dither, side_scale: float = 1.0, alpha: Optional[float] = None) -> np.ndarray:
    """Reconstruct from a coset index and decoder side information.

    Picks the coset member nearest ``side_scale * y + dither`` and subtracts
    the dither.  With ``alpha`` set, the result is shrunk toward
    ``side_scale * y``: ``base + alpha * (xhat - base)``.
    """
    pair = _pair_of(pair)
    y = np.asarray(y, float)
    dither = np.asarray(dither, float)
    base = side_scale * y
    xhat = _select(pair, index, base + dither) - dither
    if alpha is not None:
        xhat = base + alpha * (xhat - base)
    return xhat


@dataclass(frozen=True)
class WZConfig:
    sigma2: float
    noise_var: float
    lattice: str = "Z1"
    fine_scale: float = 0.25
    nesting_ratio: int = 8
    samples: int = 100_000
    seed: int = DEFAULT_SEED
    mmse: bool = False
    fixed_dither: bool = False

    def __post_init__(self):
        if not (self.sigma2 > 0 and self.noise_var > 0):
            raise ValidationError("variances must be positive")
        if self.samples < 1000:
            raise ValidationError("need at least 1000 samples", samples=self.samples)
        if not self.fine_scale > 0:
            raise ValidationError("fine_scale must be positive")
        # builds and validates the nested pair
        self.pair

    @property
    def pair(self) -> NestedPair:
        return NestedPair(Lattice.by_name(self.lattice, self.fine_scale), self.nesting_ratio)

    @property
    def conditional_variance(self) -> float:
        return self.sigma2 * self.noise_var / (self.sigma2 + self.noise_var)

    @classmethod
    def from_dict(cls, obj: dict) -> "WZConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(obj) - known
        if unknown:
            raise ValidationError("unknown WZConfig keys", keys=sorted(unknown))
        return cls(**obj)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class PipelineReport:
    empirical_rate: float
    empirical_distortion: float
    theoretical_rate: float
    gap: float
    decode_failure_fraction: float
    bin_count: int
    dimension: int
    samples: int
    seed: int
    conditional_variance: float

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True, eq=False)
class _Chunk:
    x: np.ndarray
    y: np.ndarray
    dither: np.ndarray
    index: np.ndarray
    xhat: np.ndarray
    failed: np.ndarray


def _run_chunk(cfg: WZConfig, pair: NestedPair, start: int, count: int) -> _Chunk:
    n = pair.dim
    sigma, sigma_n = math.sqrt(cfg.sigma2), math.sqrt(cfg.noise_var)
    x = sigma * counter_normals(substream_key(cfg.seed, SOURCE_STREAM), start, count, n)
    y = x + sigma_n * counter_normals(substream_key(cfg.seed, NOISE_STREAM), start, count, n)
    q = DitheredQuantizer(pair.fine, cfg.seed)
    if cfg.fixed_dither:
        dither = np.broadcast_to(sample_dither(q, 1, 0), (count, n)).copy()
    else:
        dither = sample_dither(q, count, start)

    u = nearest_point(pair.fine, x + dither)
    index = bin_index(pair, u)
    if cfg.mmse:
        c = cfg.sigma2 / (cfg.sigma2 + cfg.noise_var)
        cv = cfg.conditional_variance
        alpha = cv / (cv + pair.fine.second_moment())
    else:
        c, alpha = 1.0, None
    u_hat = _select(pair, index, c * y + dither)
    xhat = u_hat - dither
    if alpha is not None:
        xhat = c * y + alpha * (xhat - c * y)
    failed = np.any(np.abs(u_hat - u) > 1e-9 * max(1.0, pair.fine.scale), axis=1)
    return _Chunk(x, y, dither, index, xhat, failed)


def _simulate(cfg: WZConfig, workers: int = 1) -> _Chunk:
    pair = cfg.pair
    total = cfg.samples
    workers = max(1, int(workers))
    bounds = np.linspace(0, total, workers + 1).astype(int)
    spans = [(int(a), int(b - a)) for a, b in zip(bounds, bounds[1:]) if b > a]
    if len(spans) == 1:
        parts = [_run_chunk(cfg, pair, *spans[0])]
    else:
        with ThreadPoolExecutor(max_workers=len(spans)) as pool:
            parts = list(pool.map(lambda s: _run_chunk(cfg, pair, *s), spans))
    return _Chunk(*(np.concatenate([getattr(p, f.name) for p in parts]) for f in fields(_Chunk)))


def run_pipeline(cfg: WZConfig, workers: int = 1) -> PipelineReport:
    """Simulate ``cfg.samples`` lattice vectors and compare with the bound.

    Rates and distortions are per scalar dimension.  Every random quantity
    is addressed by (seed, sample index), so the report does not depend on
    ``workers``.
    """
    pair = cfg.pair
    sim = _simulate(cfg, workers)
    n = pair.dim
    dist = float(np.mean((sim.xhat - sim.x) ** 2))
    cond = conditional_covariance(JointGaussian.additive_noise(cfg.sigma2 * np.eye(n), cfg.noise_var))
    if dist * n >= cond.total_variance:
        bound = 0.0
    else:
        bound = wyner_ziv_rate(cond, dist * n).total_rate / n
    rate = pair.rate_per_dimension
    return PipelineReport(
        empirical_rate=rate,
        empirical_distortion=dist,
        theoretical_rate=bound,
        gap=rate - bound,
        decode_failure_fraction=float(sim.failed.mean()),
        bin_count=pair.bin_count,
        dimension=n,
        samples=cfg.samples,
        seed=cfg.seed,
        conditional_variance=cfg.conditional_variance,
    )


def pipeline_trace_csv(cfg: WZConfig, workers: int = 1) -> str:
    """Per-coordinate trace ``x,y,dither,index,xhat,err`` for debugging."""
    sim = _simulate(cfg, workers)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["x", "y", "dither", "index", "xhat", "err"])
    for i in range(sim.x.shape[0]):
        for j in range(sim.x.shape[1]):
            w.writerow([repr(float(sim.x[i, j])), repr(float(sim.y[i, j])),
                        repr(float(sim.dither[i, j])), int(sim.index[i]),
                        repr(float(sim.xhat[i, j])), repr(float(sim.xhat[i, j] - sim.x[i, j]))])
    return buf.getvalue()
