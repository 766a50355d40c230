"""Closed-form Gaussian rate-distortion: reverse water-filling over
eigenmodes, conditional covariances for side information, SNR helpers."""

from __future__ import annotations

import csv
import io
import math
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import DomainError, InfeasibleError, ValidationError

ZERO_MODE_REL = 1e-12
PSD_TOL = 1e-10


def _as_symmetric(cov, what: str) -> np.ndarray:
    cov = np.array(cov, dtype=float)
    if cov.ndim == 0:
        cov = cov.reshape(1, 1)
    if cov.ndim != 2 or cov.shape[0] != cov.shape[1]:
        raise ValidationError(f"{what}: covariance must be square", shape=list(cov.shape))
    if not np.all(np.isfinite(cov)):
        raise ValidationError(f"{what}: covariance has non-finite entries")
    scale = max(1.0, float(np.abs(cov).max()))
    if np.abs(cov - cov.T).max() > PSD_TOL * scale:
        raise ValidationError(f"{what}: covariance is not symmetric")
    return 0.5 * (cov + cov.T)


class GaussianSource:
    """Zero-mean Gaussian vector source given by its covariance.

    Eigenvalues are sorted descending; those below ``1e-12 * trace`` are set
    to exactly zero.
    """

    def __init__(self, covariance):
        cov = _as_symmetric(covariance, "GaussianSource")
        lam, vec = np.linalg.eigh(cov)
        scale = max(float(np.abs(cov).max()), 1.0)
        if lam.size and lam.min() < -PSD_TOL * scale:
            raise ValidationError("GaussianSource: covariance is not positive semidefinite",
                                  min_eigenvalue=float(lam.min()))
        order = np.argsort(lam)[::-1]
        lam, vec = lam[order], vec[:, order]
        trace = float(np.clip(lam, 0, None).sum())
        lam = np.where(lam < ZERO_MODE_REL * trace, 0.0, lam)
        self.covariance = cov
        self.eigenvalues = lam
        self.eigenvectors = vec

    @classmethod
    def from_eigenvalues(cls, eigenvalues) -> "GaussianSource":
        return cls(np.diag(np.asarray(eigenvalues, dtype=float)))

    @property
    def dim(self) -> int:
        return self.eigenvalues.size

    @property
    def total_variance(self) -> float:
        return float(self.eigenvalues.sum())

    def __repr__(self):
        return f"GaussianSource(eigenvalues={self.eigenvalues.tolist()})"


@dataclass(frozen=True, eq=False)
class WaterfillResult:
    theta: float
    eigenvalues: np.ndarray
    distortions: np.ndarray
    rates: np.ndarray

    @property
    def total_rate(self) -> float:
        return float(self.rates.sum())

    @property
    def total_distortion(self) -> float:
        return float(self.distortions.sum())

    @property
    def active(self) -> np.ndarray:
        return self.rates > 0

    def to_dict(self) -> dict:
        return {
            "theta": float(self.theta),
            "modes": [{"lambda": float(l), "D_i": float(d), "R_i": float(r)}
                      for l, d, r in zip(self.eigenvalues, self.distortions, self.rates)],
            "total_rate_bits": self.total_rate,
            "total_distortion": self.total_distortion,
        }

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["lambda", "D_i", "R_i"])
        for l, d, r in zip(self.eigenvalues, self.distortions, self.rates):
            w.writerow([repr(float(l)), repr(float(d)), repr(float(r))])
        return buf.getvalue()


def gaussian_rate(sigma2: float, D: float) -> float:
    """Rate in bits to describe N(0, sigma2) at mean squared error D."""
    if not D > 0:
        raise DomainError("distortion must be positive", D=D)
    if sigma2 < 0:
        raise DomainError("variance must be non-negative", sigma2=sigma2)
    return rate_from_snr(sigma2 / D)


def snr_of(sigma2: float, D: float) -> float:
    if not D > 0:
        raise DomainError("distortion must be positive", D=D)
    return sigma2 / D


def snr_db(ratio: float) -> float:
    if not ratio > 0:
        raise DomainError("SNR must be positive to express in dB", snr=ratio)
    return 10.0 * math.log10(ratio)


def rate_from_snr(ratio: float) -> float:
    """Half log2 of the SNR, clamped at zero below unit SNR."""
    if ratio <= 1.0:
        return 0.0
    return 0.5 * math.log2(ratio)


def _water_level(lam: np.ndarray, D: float) -> float:
    # sum(min(lam, theta)) is continuous and increasing in theta; bisect
    # until the interval cannot shrink further in floating point
    lo, hi = 0.0, float(lam.max())
    for _ in range(2000):
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        if np.minimum(lam, mid).sum() < D:
            lo = mid
        else:
            hi = mid
    # prefer the endpoint whose constraint residual is smaller
    r_lo = abs(np.minimum(lam, lo).sum() - D)
    r_hi = abs(np.minimum(lam, hi).sum() - D)
    return lo if r_lo < r_hi else hi


def reverse_waterfill(source: GaussianSource, D: float) -> WaterfillResult:
    """Split a total distortion budget across eigenmodes.

    Every mode gets ``min(lambda_i, theta)`` with the water level ``theta``
    chosen so the allocations sum to ``D``; mode rates are
    ``max(0, 0.5 * log2(lambda_i / theta))``.
    """
    if not D > 0:
        raise DomainError("distortion must be positive", D=D)
    lam = source.eigenvalues
    total = float(lam.sum())
    if D > total * (1 + 1e-12):
        raise InfeasibleError(
            "target distortion exceeds total variance (rate is zero with slack)",
            D=D, total_variance=total,
        )
    if D >= total:
        theta = float(lam.max())
    else:
        theta = _water_level(lam, D)
    dist = np.minimum(lam, theta)
    with np.errstate(divide="ignore"):
        rates = np.where(lam > theta, 0.5 * np.log2(lam / theta), 0.0)
    return WaterfillResult(theta, lam.copy(), dist, rates)


@dataclass(frozen=True, eq=False)
class JointGaussian:
    """Covariance of the stacked vector (X, Y); X occupies the first n_x rows."""

    covariance: np.ndarray
    n_x: int

    def __post_init__(self):
        cov = _as_symmetric(self.covariance, "JointGaussian")
        n = cov.shape[0]
        if not 0 < self.n_x < n:
            raise ValidationError("JointGaussian: need 0 < n_x < dimension", n_x=self.n_x, dim=n)
        lam = np.linalg.eigvalsh(cov)
        if lam.min() < -PSD_TOL * max(1.0, float(np.abs(cov).max())):
            raise ValidationError("JointGaussian: covariance is not positive semidefinite",
                                  min_eigenvalue=float(lam.min()))
        object.__setattr__(self, "covariance", cov)

    @property
    def n_y(self) -> int:
        return self.covariance.shape[0] - self.n_x

    @classmethod
    def additive_noise(cls, cov_x, noise_var) -> "JointGaussian":
        """Joint of X and Y = X + N with N ~ N(0, noise_var * I) independent."""
        cx = np.atleast_2d(np.asarray(cov_x, dtype=float))
        n = cx.shape[0]
        cy = cx + noise_var * np.eye(n)
        return cls(np.block([[cx, cx], [cx, cy]]), n)

    @classmethod
    def scalar(cls, sigma2_x: float, sigma2_y: float, rho: float) -> "JointGaussian":
        c = rho * math.sqrt(sigma2_x * sigma2_y)
        return cls(np.array([[sigma2_x, c], [c, sigma2_y]]), 1)


def conditional_covariance(j: JointGaussian) -> GaussianSource:
    """Covariance of X given Y (Schur complement of the Y block)."""
    k = j.n_x
    sxx = j.covariance[:k, :k]
    sxy = j.covariance[:k, k:]
    syy = j.covariance[k:, k:]
    rank = np.linalg.matrix_rank(syy)
    if rank < syy.shape[0]:
        warnings.warn(f"Y covariance is rank deficient ({rank} < {syy.shape[0]}); using pseudo-inverse",
                      RuntimeWarning, stacklevel=2)
        cond = sxx - sxy @ np.linalg.pinv(syy, hermitian=True) @ sxy.T
    else:
        cond = sxx - sxy @ np.linalg.solve(syy, sxy.T)
    cond = 0.5 * (cond + cond.T)
    lam, vec = np.linalg.eigh(cond)
    cond = (vec * np.clip(lam, 0.0, None)) @ vec.T
    return GaussianSource(0.5 * (cond + cond.T))


def wyner_ziv_rate(cond: GaussianSource, D: float) -> WaterfillResult:
    """Decoder-side-information rate: water-filling over the conditional spectrum."""
    return reverse_waterfill(cond, D)
