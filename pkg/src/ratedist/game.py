"""Rate allocation as a non-cooperative game.

Player ``i`` picks a rate ``R_i >= 0`` and earns ``Q_i(R_i) - mu * R_i``.
With the default Gaussian quality ``Q_i(R) = -lambda_i * 2**(-2R)`` the
equilibrium at the market-clearing price is reverse water-filling with
water level ``theta = mu / (2 ln 2)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import InfeasibleError, ValidationError

TWO_LN2 = 2.0 * math.log(2.0)
ACTIVE_EPS = 1e-12


# -- Gaussian quality -------------------------------------------------------

def quality(R, lam):
    """Negative per-mode distortion after spending ``R`` bits on a mode of variance ``lam``."""
    return -np.asarray(lam, float) * np.exp2(-2.0 * np.asarray(R, float))


def quality_marginal(R, lam):
    return TWO_LN2 * np.asarray(lam, float) * np.exp2(-2.0 * np.asarray(R, float))


def best_response(lam, mu):
    """Rate maximizing ``Q(R) - mu * R`` for a Gaussian mode."""
    if not np.all(np.asarray(mu) > 0):
        raise ValidationError("price must be positive", mu=mu)
    lam = np.asarray(lam, float)
    with np.errstate(divide="ignore"):
        r = 0.5 * np.log2(TWO_LN2 * lam / mu)
    return np.maximum(0.0, r)


class GaussianQuality:
    name = "gaussian"

    def __init__(self, lambdas):
        self.lambdas = np.asarray(lambdas, float)

    def value(self, R):
        return quality(R, self.lambdas)

    def marginal_bounds(self, R):
        m = quality_marginal(R, self.lambdas)
        return m, m

    def best_response(self, mu):
        return best_response(self.lambdas, mu)

    def to_spec(self):
        return "gaussian"


class TableQuality:
    """Piecewise-linear concave, increasing quality curves.

    ``rates`` are shared knots starting at 0; ``values[i]`` holds player
    ``i``'s quality at each knot.  Beyond the last knot the quality is flat.
    """

    name = "table"

    def __init__(self, rates: Sequence[float], values):
        r = np.asarray(rates, float)
        v = np.atleast_2d(np.asarray(values, float))
        if r.ndim != 1 or r.size < 2 or r[0] != 0 or np.any(np.diff(r) <= 0):
            raise ValidationError("table rates must start at 0 and increase strictly")
        if v.shape[1] != r.size:
            raise ValidationError("table values must have one entry per rate knot")
        slopes = np.diff(v, axis=1) / np.diff(r)
        if np.any(slopes < 0) or np.any(np.diff(slopes, axis=1) > 1e-12):
            raise ValidationError("table quality must be non-decreasing and concave")
        self.rates, self.values, self.slopes = r, v, slopes

    def value(self, R):
        R = np.asarray(R, float)
        return np.array([np.interp(ri, self.rates, vi) for ri, vi in zip(R, self.values)])

    def marginal_bounds(self, R):
        """(right derivative, left derivative) per player."""
        R = np.asarray(R, float)
        n_seg = self.slopes.shape[1]
        right = np.zeros(R.size)
        left = np.zeros(R.size)
        for i, ri in enumerate(R):
            seg = np.searchsorted(self.rates, ri, side="right") - 1
            on_knot = np.isclose(ri, self.rates[min(seg, len(self.rates) - 1)], rtol=0, atol=1e-12)
            right[i] = self.slopes[i, seg] if seg < n_seg else 0.0
            if on_knot:
                left[i] = self.slopes[i, seg - 1] if seg >= 1 else math.inf
            else:
                left[i] = right[i]
        return right, left

    def to_spec(self):
        return {"type": "table", "rates": self.rates.tolist(), "values": self.values.tolist()}


# -- game and allocation ----------------------------------------------------

@dataclass(frozen=True, eq=False)
class AllocationGame:
    lambdas: np.ndarray
    budget_type: Optional[str] = "distortion"
    budget: Optional[float] = None
    mu: Optional[float] = None
    quality: object = None

    def __post_init__(self):
        lam = np.asarray(self.lambdas, float).reshape(-1)
        if lam.size == 0 or np.any(~(lam > 0)):
            raise ValidationError("every player needs a positive variance")
        object.__setattr__(self, "lambdas", lam)
        if self.quality is None:
            object.__setattr__(self, "quality", GaussianQuality(lam))
        if self.mu is not None:
            if not self.mu > 0:
                raise ValidationError("fixed price must be positive", mu=self.mu)
        else:
            if self.budget_type not in ("rate", "distortion"):
                raise ValidationError("budget type must be 'rate' or 'distortion'")
            if self.budget is None or not self.budget > 0:
                raise ValidationError("budget must be positive", budget=self.budget)
        if self.budget_type == "distortion" and not isinstance(self.quality, GaussianQuality):
            raise ValidationError("distortion budgets need the gaussian quality")

    @property
    def players(self) -> int:
        return self.lambdas.size

    def best_response(self, i: int, mu: float) -> float:
        return float(self.quality.best_response(mu)[i]) if hasattr(self.quality, "best_response") \
            else float(_table_best_response(self.quality, mu)[i])

    def payoff(self, R, mu):
        return self.quality.value(R) - mu * np.asarray(R, float)

    @classmethod
    def from_dict(cls, obj: dict) -> "AllocationGame":
        unknown = set(obj) - {"lambdas", "budget", "quality", "mu"}
        if unknown:
            raise ValidationError("unknown game keys", keys=sorted(unknown))
        if "lambdas" not in obj:
            raise ValidationError("game spec needs 'lambdas'")
        lam = obj["lambdas"]
        budget = obj.get("budget")
        btype = bval = None
        if budget is not None:
            if not isinstance(budget, dict) or set(budget) != {"type", "value"}:
                raise ValidationError("budget must be {type, value}")
            btype, bval = budget["type"], float(budget["value"])
        q = obj.get("quality", "gaussian")
        if q == "gaussian":
            quality_obj = None
        elif isinstance(q, dict) and q.get("type") == "table":
            if set(q) != {"type", "rates", "values"}:
                raise ValidationError("table quality needs exactly type, rates, values")
            quality_obj = TableQuality(q["rates"], q["values"])
            if quality_obj.values.shape[0] != len(lam):
                raise ValidationError("table needs one row per player")
        else:
            raise ValidationError("quality must be 'gaussian' or a table")
        return cls(lam, btype, bval, obj.get("mu"), quality_obj)


@dataclass(frozen=True, eq=False)
class Allocation:
    R: np.ndarray
    mu: float
    D: Optional[np.ndarray] = None
    theta: Optional[float] = None
    iterations: int = 0

    def to_dict(self) -> dict:
        return {
            "R_i": self.R.tolist(),
            "D_i": None if self.D is None else self.D.tolist(),
            "theta": self.theta,
            "mu": self.mu,
            "total_rate_bits": float(self.R.sum()),
        }


def _table_best_response(q: TableQuality, mu: float) -> np.ndarray:
    # knot after the last segment whose slope is at least mu
    take = q.slopes >= mu
    cum = np.concatenate([np.zeros((take.shape[0], 1)), np.cumprod(take, axis=1)], axis=1)
    last = cum.sum(axis=1).astype(int) - 1
    return q.rates[last]


def _bisect_price(excess, lo: float, hi: float, tol: float = 0.0):
    """Root of a decreasing function on [lo, hi] in the log domain.

    Returns ``(price, iterations)``.
    """
    a, b = math.log(lo), math.log(hi)
    it = 0
    while it < 400:
        mid = 0.5 * (a + b)
        if mid <= a or mid >= b or b - a <= tol:
            break
        it += 1
        if excess(math.exp(mid)) > 0:
            a = mid
        else:
            b = mid
    ea, eb = abs(excess(math.exp(a))), abs(excess(math.exp(b)))
    return (math.exp(a) if ea < eb else math.exp(b)), it


def _gaussian_allocation(game: AllocationGame, mu: float, iterations: int = 0) -> Allocation:
    R = game.quality.best_response(mu)
    D = -game.quality.value(R)
    return Allocation(R, mu, D, mu / TWO_LN2, iterations)


def _table_greedy(game: AllocationGame) -> Allocation:
    q = game.quality
    budget = game.budget
    segs = [(-q.slopes[i, k], i, k) for i in range(game.players) for k in range(q.slopes.shape[1])
            if q.slopes[i, k] > 0]
    segs.sort()
    R = np.zeros(game.players)
    widths = np.diff(q.rates)
    mu = None
    left = budget
    for neg_slope, i, k in segs:
        if left <= 0:
            break
        take = min(widths[k], left)
        R[i] += take
        left -= take
        mu = -neg_slope
    if mu is None:
        raise InfeasibleError("no segment has positive marginal quality")
    if left > 1e-12:
        raise InfeasibleError("rate budget exceeds the total table capacity", slack=left)
    return Allocation(R, float(mu))


def nash_solve(game: AllocationGame, tol: float = 0.0) -> Allocation:
    """Equilibrium allocation at the market-clearing price.

    The price is found by bisection (to floating-point resolution, or until
    the bracket is narrower than ``tol`` in log-price): for a rate budget
    it makes the best responses spend the budget, for a distortion budget
    it makes the resulting per-player distortions sum to the budget.
    """
    if game.mu is not None:
        if isinstance(game.quality, GaussianQuality):
            return _gaussian_allocation(game, game.mu)
        return Allocation(_table_best_response(game.quality, game.mu), game.mu)
    if isinstance(game.quality, TableQuality):
        if game.budget_type != "rate":
            raise ValidationError("table quality supports rate budgets only")
        return _table_greedy(game)

    lam = game.lambdas
    mu_max = TWO_LN2 * float(lam.max())
    if game.budget_type == "rate":
        R = game.budget
        lo = mu_max * 4.0 ** (-(R + 1.0))

        def excess(mu):
            return float(game.quality.best_response(mu).sum()) - R

        return _gaussian_allocation(game, *_bisect_price(excess, lo, mu_max, tol))

    D = game.budget
    total = float(lam.sum())
    if D > total * (1 + 1e-12):
        raise InfeasibleError("distortion budget exceeds total variance", D=D, total=total)
    if D >= total:
        return _gaussian_allocation(game, mu_max)

    def shortfall(mu):
        # distortion left unspent; decreasing in mu
        return D - float((-game.quality.value(game.quality.best_response(mu))).sum())

    lo = TWO_LN2 * D / lam.size * 0.5
    return _gaussian_allocation(game, *_bisect_price(shortfall, lo, mu_max, tol))


def best_response_dynamics(game: AllocationGame, mu: float, start=None, max_rounds: int = 100):
    """Sequential best responses at a fixed price.

    Returns ``(profile, rounds)`` where ``rounds`` counts sweeps until a
    sweep changes nothing.
    """
    R = np.zeros(game.players) if start is None else np.array(start, float)
    if np.any(R < 0):
        raise ValidationError("start profile must be non-negative")
    for rounds in range(1, max_rounds + 1):
        changed = False
        for i in range(game.players):
            br = game.best_response(i, mu)
            if br != R[i]:
                R[i] = br
                changed = True
        if not changed:
            return R, rounds
    return R, max_rounds


@dataclass(frozen=True)
class KKTReport:
    stationarity: float
    primal_feasibility: float
    dual_feasibility: float
    complementary_slackness: float

    @property
    def max_residual(self) -> float:
        return max(self.stationarity, self.primal_feasibility,
                   self.dual_feasibility, self.complementary_slackness)

    def ok(self, tol: float = 1e-8) -> bool:
        return self.max_residual < tol

    def to_dict(self) -> dict:
        return {"stationarity": self.stationarity,
                "primal_feasibility": self.primal_feasibility,
                "dual_feasibility": self.dual_feasibility,
                "complementary_slackness": self.complementary_slackness}


def _interval_gap(mu, right, left):
    return np.maximum(0.0, np.maximum(right - mu, mu - left))


def kkt_verify(alloc: Allocation, game: AllocationGame) -> KKTReport:
    """Residuals of the optimality conditions for ``alloc`` (report only)."""
    R, mu = np.asarray(alloc.R, float), float(alloc.mu)
    right, left = game.quality.marginal_bounds(np.maximum(R, 0.0))
    active = R > ACTIVE_EPS
    gap = _interval_gap(mu, right, left)

    stationarity = float(gap[active].max(initial=0.0))

    primal = max(0.0, -float(R.min()))
    budget_slack = 0.0
    if game.mu is None:
        if game.budget_type == "rate":
            primal = max(primal, float(R.sum()) - game.budget)
            budget_slack = game.budget - float(R.sum())
        else:
            spent = float((-game.quality.value(np.maximum(R, 0.0))).sum())
            primal = max(primal, abs(spent - game.budget))

    dual = max(0.0, -mu)
    inactive = ~active
    if inactive.any():
        dual = max(dual, float(np.maximum(0.0, right[inactive] - mu).max()))

    cs = float(np.abs(R * gap).max(initial=0.0))
    cs = max(cs, abs(mu * budget_slack))
    return KKTReport(stationarity, primal, dual, cs)


def deviation_gain(alloc: Allocation, game: AllocationGame, delta: float = 1e-3) -> float:
    """Largest payoff improvement any single player gets from moving +-delta."""
    R, mu = np.asarray(alloc.R, float), alloc.mu
    base = game.payoff(R, mu)
    best = -math.inf
    for step in (delta, -delta):
        moved = np.maximum(R + step, 0.0)
        best = max(best, float((game.payoff(moved, mu) - base).max()))
    return best
