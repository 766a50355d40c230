"""Finite distributions and the information measures built on them.

All logarithms are base 2; results are in bits.  Use ``NATS_PER_BIT`` to
convert for display.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import DomainError, ValidationError

NORM_TOL = 1e-12
NATS_PER_BIT = math.log(2.0)


def _check_mass(mass: np.ndarray, what: str) -> None:
    if not np.all(np.isfinite(mass)):
        raise ValidationError(f"{what}: non-finite mass")
    if np.any(mass < 0):
        raise ValidationError(f"{what}: negative mass", min=float(mass.min()))
    total = float(mass.sum())
    if abs(total - 1.0) > NORM_TOL:
        raise ValidationError(f"{what}: masses sum to {total!r}, not 1", total=total)


def _check_labels(labels: Sequence, what: str) -> tuple:
    labels = tuple(labels)
    if len(set(labels)) != len(labels):
        raise ValidationError(f"{what}: alphabet labels are not distinct")
    return labels


def _plogp_sum(mass: np.ndarray) -> float:
    nz = mass[mass > 0]
    return float(-(nz * np.log2(nz)).sum())


@dataclass(frozen=True, eq=False)
class Distribution:
    """Probability mass function over an ordered, labelled alphabet."""

    alphabet: tuple
    mass: np.ndarray

    def __post_init__(self):
        alphabet = _check_labels(self.alphabet, "Distribution")
        mass = np.array(self.mass, dtype=float).reshape(-1)
        if mass.size != len(alphabet):
            raise ValidationError(
                "Distribution: alphabet and mass lengths differ",
                alphabet=len(alphabet), mass=mass.size,
            )
        if mass.size == 0:
            raise ValidationError("Distribution: empty alphabet")
        _check_mass(mass, "Distribution")
        mass.setflags(write=False)
        object.__setattr__(self, "alphabet", alphabet)
        object.__setattr__(self, "mass", mass)

    def __len__(self):
        return len(self.alphabet)

    def __eq__(self, other):
        if not isinstance(other, Distribution):
            return NotImplemented
        return self.alphabet == other.alphabet and np.array_equal(self.mass, other.mass)

    __hash__ = None

    @classmethod
    def uniform(cls, alphabet) -> "Distribution":
        alphabet = tuple(alphabet)
        return cls(alphabet, np.full(len(alphabet), 1.0 / len(alphabet)))

    @classmethod
    def renormalize(cls, alphabet, weights) -> "Distribution":
        """Build a distribution from non-negative weights by explicit scaling."""
        w = np.asarray(weights, dtype=float)
        if np.any(w < 0) or not np.all(np.isfinite(w)):
            raise ValidationError("renormalize: weights must be finite and >= 0")
        total = w.sum()
        if total <= 0:
            raise ValidationError("renormalize: weights sum to zero")
        return cls(tuple(alphabet), w / total)

    def to_dict(self) -> dict:
        return {"alphabet": list(self.alphabet), "mass": self.mass.tolist()}

    @classmethod
    def from_dict(cls, obj: dict) -> "Distribution":
        if set(obj) != {"alphabet", "mass"}:
            raise ValidationError("Distribution JSON needs exactly 'alphabet' and 'mass'",
                                  keys=sorted(obj))
        return cls(tuple(obj["alphabet"]), obj["mass"])

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> "Distribution":
        return cls.from_dict(json.loads(text))


@dataclass(frozen=True, eq=False)
class JointDistribution:
    """Joint pmf p(row, col) stored as a dense matrix."""

    rows: tuple
    cols: tuple
    mass: np.ndarray

    def __post_init__(self):
        rows = _check_labels(self.rows, "JointDistribution rows")
        cols = _check_labels(self.cols, "JointDistribution cols")
        mass = np.array(self.mass, dtype=float)
        if mass.shape != (len(rows), len(cols)):
            raise ValidationError(
                "JointDistribution: mass shape does not match alphabets",
                shape=list(mass.shape), rows=len(rows), cols=len(cols),
            )
        _check_mass(mass, "JointDistribution")
        mass.setflags(write=False)
        object.__setattr__(self, "rows", rows)
        object.__setattr__(self, "cols", cols)
        object.__setattr__(self, "mass", mass)

    @classmethod
    def from_channel(cls, source: Distribution, channel, cols) -> "JointDistribution":
        """Joint of a source and a row-stochastic channel p(col | row)."""
        channel = np.asarray(channel, dtype=float)
        return cls(source.alphabet, tuple(cols), source.mass[:, None] * channel)

    @classmethod
    def product(cls, a: Distribution, b: Distribution) -> "JointDistribution":
        return cls(a.alphabet, b.alphabet, np.outer(a.mass, b.mass))

    def row_marginal(self) -> Distribution:
        return Distribution.renormalize(self.rows, self.mass.sum(axis=1))

    def col_marginal(self) -> Distribution:
        return Distribution.renormalize(self.cols, self.mass.sum(axis=0))

    def flattened(self) -> Distribution:
        labels = [(r, c) for r in self.rows for c in self.cols]
        return Distribution.renormalize(labels, self.mass.reshape(-1))

    def to_dict(self) -> dict:
        return {"rows": list(self.rows), "cols": list(self.cols), "mass": self.mass.tolist()}

    @classmethod
    def from_dict(cls, obj: dict) -> "JointDistribution":
        if set(obj) != {"rows", "cols", "mass"}:
            raise ValidationError("JointDistribution JSON needs 'rows', 'cols' and 'mass'",
                                  keys=sorted(obj))
        return cls(tuple(obj["rows"]), tuple(obj["cols"]), obj["mass"])


def entropy(d: Distribution) -> float:
    """Shannon entropy in bits, with 0 log 0 = 0."""
    if not isinstance(d, Distribution):
        raise ValidationError("entropy expects a Distribution")
    return max(0.0, _plogp_sum(d.mass))


def kl_divergence(p: Distribution, q: Distribution) -> float:
    """Relative entropy D(p || q) in bits."""
    if p.alphabet != q.alphabet:
        raise DomainError("kl_divergence: alphabets differ")
    support = p.mass > 0
    if np.any(q.mass[support] == 0):
        raise DomainError("kl_divergence: p is not absolutely continuous w.r.t. q")
    pm, qm = p.mass[support], q.mass[support]
    return max(0.0, float((pm * np.log2(pm / qm)).sum()))


def mutual_information_matrix(joint: np.ndarray) -> float:
    """I(row; col) in bits for a raw non-negative joint matrix summing to ~1.

    No validation; callers inside the solver use this on iterates that are
    normalized only to rounding error.
    """
    joint = np.asarray(joint, dtype=float)
    pr = joint.sum(axis=1, keepdims=True)
    pc = joint.sum(axis=0, keepdims=True)
    nz = joint > 0
    outer = (pr * pc)[nz]
    return max(0.0, float((joint[nz] * np.log2(joint[nz] / outer)).sum()))


def mutual_information(j: JointDistribution) -> float:
    """I(X; Y) in bits of a validated joint distribution."""
    if not isinstance(j, JointDistribution):
        raise ValidationError("mutual_information expects a JointDistribution")
    return mutual_information_matrix(j.mass)


def histogram_mutual_information(x, y, bins: int = 32) -> float:
    """Plug-in MI estimate (bits) from paired samples on an equal-width grid.

    The plug-in estimator is biased upward by roughly
    (bins - 1)^2 / (2 N ln 2) when the variables are independent.
    """
    x = np.asarray(x, dtype=float).reshape(-1)
    y = np.asarray(y, dtype=float).reshape(-1)
    if x.size != y.size or x.size == 0:
        raise ValidationError("histogram_mutual_information: need equal, non-empty samples")
    counts, _, _ = np.histogram2d(x, y, bins=bins)
    return mutual_information_matrix(counts / counts.sum())
