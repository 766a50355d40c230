"""Discrete rate-distortion frontier by alternating minimization.

The multiplier ``beta`` lives in natural units (it multiplies distortion
inside ``exp``); rates are reported in bits.  The Lagrangian stored on each
point is in nats: ``I_nats + beta * E[d]``.
"""

from __future__ import annotations

import csv
import io
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import ConvergenceError, NumericalDegeneracyError, RateDistError, ValidationError
from .prob import Distribution, mutual_information_matrix

PRUNE_BELOW = 1e-12
# floor mixed into a warm-start marginal so symbols pruned at a smaller
# beta can re-enter the support
WARM_START_FLOOR = 1e-6
MONOTONE_SLACK = 1e-9


@dataclass(frozen=True, eq=False)
class DistortionMatrix:
    source_alphabet: tuple
    repro_alphabet: tuple
    d: np.ndarray

    def __post_init__(self):
        d = np.array(self.d, dtype=float)
        src, rep = tuple(self.source_alphabet), tuple(self.repro_alphabet)
        if d.shape != (len(src), len(rep)):
            raise ValidationError("DistortionMatrix: shape does not match alphabets",
                                  shape=list(d.shape))
        if not np.all(np.isfinite(d)) or np.any(d < 0):
            raise ValidationError("DistortionMatrix: entries must be finite and >= 0")
        if len(rep) == 0:
            raise ValidationError("DistortionMatrix: empty reproduction alphabet")
        d.setflags(write=False)
        object.__setattr__(self, "source_alphabet", src)
        object.__setattr__(self, "repro_alphabet", rep)
        object.__setattr__(self, "d", d)

    @classmethod
    def hamming(cls, alphabet) -> "DistortionMatrix":
        alphabet = tuple(alphabet)
        n = len(alphabet)
        return cls(alphabet, alphabet, 1.0 - np.eye(n))

    @classmethod
    def squared_error(cls, source_points, repro_points=None) -> "DistortionMatrix":
        xs = np.asarray(source_points, dtype=float)
        ys = xs if repro_points is None else np.asarray(repro_points, dtype=float)
        return cls(tuple(xs.tolist()), tuple(ys.tolist()), (xs[:, None] - ys[None, :]) ** 2)

    def to_dict(self) -> dict:
        return {"source_alphabet": list(self.source_alphabet),
                "repro_alphabet": list(self.repro_alphabet),
                "d": self.d.tolist()}

    @classmethod
    def from_dict(cls, obj: dict) -> "DistortionMatrix":
        keys = {"source_alphabet", "repro_alphabet", "d"}
        if set(obj) != keys:
            raise ValidationError("DistortionMatrix JSON needs keys " + ", ".join(sorted(keys)),
                                  keys=sorted(obj))
        return cls(obj["source_alphabet"], obj["repro_alphabet"], obj["d"])


@dataclass(frozen=True, eq=False)
class RDPoint:
    beta: float
    rate: float
    distortion: float
    test_channel: np.ndarray
    lagrangian: float
    iterations: int
    pruned: tuple = ()
    history: tuple = field(default=(), repr=False)


@dataclass(frozen=True)
class RDCurve:
    points: tuple

    @property
    def betas(self) -> np.ndarray:
        return np.array([p.beta for p in self.points])

    @property
    def rates(self) -> np.ndarray:
        return np.array([p.rate for p in self.points])

    @property
    def distortions(self) -> np.ndarray:
        return np.array([p.distortion for p in self.points])

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["beta", "rate_bits", "distortion"])
        for p in self.points:
            w.writerow([repr(float(p.beta)), repr(float(p.rate)), repr(float(p.distortion))])
        return buf.getvalue()

    def to_dict(self) -> dict:
        return {"points": [{"beta": p.beta, "rate_bits": p.rate, "distortion": p.distortion}
                           for p in self.points]}


def _check_pair(source: Distribution, d: DistortionMatrix) -> None:
    if source.alphabet != d.source_alphabet:
        raise ValidationError("source alphabet does not match the distortion matrix rows")


def _kernel(d: np.ndarray, beta: float) -> np.ndarray:
    # subtracting the row minimum leaves each normalized row unchanged
    return np.exp(-beta * (d - d.min(axis=1, keepdims=True)))


def _gibbs_from_kernel(q: np.ndarray, kernel: np.ndarray, beta: float) -> np.ndarray:
    w = kernel * q[None, :]
    z = w.sum(axis=1, keepdims=True)
    if not np.all(np.isfinite(z)) or np.any(z <= 0):
        bad = np.flatnonzero(~(np.isfinite(z[:, 0]) & (z[:, 0] > 0)))
        raise NumericalDegeneracyError(
            "Gibbs normalizer underflowed; reduce beta or prune the reproduction alphabet",
            rows=bad.tolist(), beta=beta,
        )
    return w / z


def _gibbs(q: np.ndarray, d: np.ndarray, beta: float) -> np.ndarray:
    return _gibbs_from_kernel(q, _kernel(d, beta), beta)


def gibbs_update(source: Distribution, repro_marginal, d: DistortionMatrix, beta: float) -> np.ndarray:
    """Optimal test channel for a fixed reproduction marginal.

    Row ``x`` is ``q(xh) * exp(-beta * d(x, xh))`` normalized over ``xh``.
    Returns an ``(|X|, |Xh|)`` row-stochastic array.
    """
    _check_pair(source, d)
    if not beta > 0:
        raise ValidationError("beta must be positive", beta=beta)
    q = repro_marginal.mass if isinstance(repro_marginal, Distribution) else np.asarray(repro_marginal, float)
    if q.shape != (len(d.repro_alphabet),):
        raise ValidationError("reproduction marginal has the wrong length")
    return _gibbs(q, d.d, float(beta))


def _evaluate(p: np.ndarray, ch: np.ndarray, d: np.ndarray, beta: float):
    joint = p[:, None] * ch
    rate = mutual_information_matrix(joint)
    dist = float((joint * d).sum())
    return rate, dist, rate * math.log(2.0) + beta * dist


def _duality_gap(p: np.ndarray, q: np.ndarray, kernel: np.ndarray) -> float:
    z = kernel @ q
    c = kernel.T @ (p / z)
    return max(0.0, math.log(c.max()))


def solve_rd_point(
    source: Distribution,
    d: DistortionMatrix,
    beta: float,
    tol: float = 1e-10,
    max_iter: int = 20000,
    init_marginal: Optional[np.ndarray] = None,
    channel_tol: Optional[float] = None,
    gap_tol: Optional[float] = None,
) -> RDPoint:
    """Minimize ``I(X; Xh) + beta * E[d]`` over test channels.

    Alternates the Gibbs channel update with the marginal update
    ``q(xh) = sum_x p(x) p(xh | x)`` starting from a uniform marginal, and
    stops once successive Lagrangian values differ by less than ``tol``.
    Reproduction symbols whose marginal drops below 1e-12 are pruned.

    The Lagrangian can be flat in channel space, so a small Lagrangian step
    does not bound the channel step.  Pass ``channel_tol`` to also require
    the max-norm channel change between iterations to fall below it.

    ``gap_tol`` adds a certified stop: ``ln max_k c_k`` with
    ``c_k = sum_x p(x) exp(-beta d(x,k)) / Z(x)`` bounds how far the current
    Lagrangian (in nats) sits above the optimum, and must drop below it.
    """
    _check_pair(source, d)
    if not beta > 0:
        raise ValidationError("beta must be positive", beta=beta)
    if not tol > 0:
        raise ValidationError("tol must be positive", tol=tol)
    beta = float(beta)
    p = source.mass
    m = len(d.repro_alphabet)
    q = np.full(m, 1.0 / m) if init_marginal is None else np.array(init_marginal, dtype=float)

    kernel = _kernel(d.d, beta)
    history = []
    prev = math.inf
    ch = prev_ch = None
    for it in range(1, max_iter + 1):
        ch = _gibbs_from_kernel(q, kernel, beta)
        rate, dist, lag = _evaluate(p, ch, d.d, beta)
        history.append(lag)
        settled = channel_tol is None or (
            prev_ch is not None and np.abs(ch - prev_ch).max() < channel_tol)
        if settled and gap_tol is not None:
            settled = _duality_gap(p, q, kernel) < gap_tol
        if abs(prev - lag) < tol and settled:
            pruned = tuple(int(i) for i in np.flatnonzero(q == 0))
            return RDPoint(beta, rate, dist, ch, lag, it, pruned, tuple(history))
        prev, prev_ch = lag, ch
        q = p @ ch
        q[q < PRUNE_BELOW] = 0.0
        q /= q.sum()

    raise ConvergenceError(
        f"no convergence after {max_iter} iterations",
        beta=beta, gap=abs(history[-1] - history[-2]) if len(history) > 1 else math.inf,
        last_channel=ch,
    )


def trace_curve(
    source: Distribution,
    d: DistortionMatrix,
    betas: Sequence[float],
    tol: float = 1e-10,
    max_iter: int = 20000,
    warm_start: bool = True,
    workers: int = 1,
    gap_tol: Optional[float] = None,
) -> RDCurve:
    """Solve one frontier point per beta and return them sorted by distortion.

    With ``warm_start`` the sweep runs sequentially, each solve starting from
    the previous reproduction marginal.  Without it, points are independent
    cold starts and may run on ``workers`` threads; the result is identical
    to the sequential cold-start sweep.
    """
    betas = [float(b) for b in betas]
    if not betas:
        raise ValidationError("beta list is empty")
    if any(not b > 0 for b in betas):
        raise ValidationError("betas must be positive")
    if any(b2 < b1 for b1, b2 in zip(betas, betas[1:])):
        raise ValidationError("betas must be sorted ascending")

    def solve(beta, init=None):
        try:
            return solve_rd_point(source, d, beta, tol, max_iter, init, gap_tol=gap_tol)
        except RateDistError as exc:
            exc.context.setdefault("beta", beta)
            raise

    if warm_start:
        points = []
        init = None
        m = len(d.repro_alphabet)
        for beta in betas:
            pt = solve(beta, init)
            points.append(pt)
            q = source.mass @ pt.test_channel
            init = (1 - WARM_START_FLOOR) * q + WARM_START_FLOOR / m
    elif workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            points = list(pool.map(solve, betas))
    else:
        points = [solve(b) for b in betas]

    points.sort(key=lambda pt: (pt.distortion, pt.beta))
    for a, b in zip(points, points[1:]):
        if b.rate > a.rate + MONOTONE_SLACK:
            raise ConvergenceError(
                "frontier is not monotone; tighten tol",
                betas=[a.beta, b.beta], rates=[a.rate, b.rate],
            )
    return RDCurve(tuple(points))
