"""Budget-constrained recrawl interval optimizer.

Given per-source parameters (lambda, P, mu) and a crawl budget of N fetches
per second, solve for recrawl intervals I_i maximizing the expected profit
rate

    Q = sum_i p_i * x_i * (1 - exp(-mu_i / x_i)),   x_i = 1 / I_i,

subject to the resource constraint

    sum_finite 1 / I_i  =  N - sum_finite lambda_i,

where p_i = P_i / (1 - exp(-mu_i / lambda_i)) is the source utility and both
sums run over sources that receive a finite interval.  Stationarity couples
every finite interval to one multiplier omega through

    p_i * g(mu_i * I_i) = omega,      g(x) = 1 - (1 + x) * exp(-x),

so the solver bisects on omega: each trial omega yields intervals
I_i = g_inverse(omega / p_i) / mu_i (infinite once omega >= p_i), and the
bisection narrows until the budget constraint holds to within epsilon.

Because a source stops consuming its lambda_i page-crawl bandwidth the
instant it is dropped, the constraint as a function of omega jumps down by
lambda_i at omega = p_i.  A budget landing inside such a jump has no omega
meeting the constraint; the bisection bracket then collapses onto the
boundary utility.  The solver resolves this by excluding the boundary source
(whose interval at that point is already astronomically long, so the
sacrificed profit is ~0) and re-bisecting over the rest.  Excluded sources
are reported in Schedule.pinched.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .core import SourceId, SourceParams

logger = logging.getLogger(__name__)

# Utilities below this are treated as zero and never scheduled.
_UTILITY_FLOOR = 1e-300

# Absolute floor for the inner g-inversion tolerance; below a few ulps of g
# the bisection would chase floating point noise.
_G_TOL_FLOOR = 5e-16


class ScheduleInfeasibleError(ValueError):
    """Budget cannot be met even with all but one source dropped."""

    def __init__(self, message: str, residual: float):
        super().__init__(f"{message} (residual {residual:.6g} fetches/s)")
        self.residual = residual


class NoConvergenceError(RuntimeError):
    """Outer bisection hit the iteration cap before meeting epsilon."""

    def __init__(self, message: str, residual: float):
        super().__init__(f"{message} (residual {residual:.6g} fetches/s)")
        self.residual = residual


@dataclass(frozen=True, slots=True)
class SolverConfig:
    """Tolerances for the interval solver.

    epsilon is the budget residual target in fetches/second.
    inner_tolerance is relative on g(x) = omega/p, so the stationarity error
    |p*g(mu*I) - omega| stays below inner_tolerance * omega.
    max_iterations caps the outer bisection steps per bracket.
    """

    epsilon: float = 1e-6
    inner_tolerance: float = 1e-9
    max_iterations: int = 200

    def __post_init__(self) -> None:
        if self.epsilon <= 0 or self.inner_tolerance <= 0 or self.max_iterations <= 0:
            raise ValueError("all SolverConfig fields must be positive")


@dataclass(frozen=True)
class Schedule:
    """Solved recrawl intervals, one per input source (math.inf = never)."""

    intervals: "dict[SourceId, float]"
    omega: float
    budget: float
    residual: float
    pinched: frozenset = field(default_factory=frozenset)

    def finite_items(self) -> "list[tuple[SourceId, float]]":
        return [(sid, iv) for sid, iv in self.intervals.items() if math.isfinite(iv)]

    @property
    def infinite_fraction(self) -> float:
        if not self.intervals:
            return 0.0
        n_inf = sum(1 for iv in self.intervals.values() if math.isinf(iv))
        return n_inf / len(self.intervals)


def g(x: float) -> float:
    """1 - (1 + x) * exp(-x): fraction of a page's clicks captured.

    Strictly increasing from g(0) = 0 to 1.  Evaluated as
    (expm1(x) - x) * exp(-x) for small x to dodge the catastrophic
    cancellation of the direct form (for x = 1e-5 the direct form loses
    eleven digits).
    """
    if x < 0:
        raise ValueError(f"g is defined for x >= 0, got {x}")
    if x > 50.0:
        # (1 + x) * exp(-x) < 1e-20 here; the direct form is exact enough
        # and avoids overflowing expm1.
        return 1.0 - (1.0 + x) * math.exp(-x)
    return (math.expm1(x) - x) * math.exp(-x)


def _g_array(x: np.ndarray) -> np.ndarray:
    xs = np.minimum(x, 50.0)
    small = (np.expm1(xs) - xs) * np.exp(-xs)
    big = 1.0 - (1.0 + x) * np.exp(-x)
    return np.where(x <= 50.0, small, big)


def g_inverse(y: float, tolerance: float = 1e-12) -> float:
    """Solve g(x) = y by doubling out a bracket, then bisecting.

    Returns x with |g(x) - y| <= tolerance (best representable x if the
    tolerance is below double precision).  y must lie in [0, 1).
    """
    if not 0.0 <= y < 1.0:
        raise ValueError(f"g_inverse needs 0 <= y < 1, got {y}")
    if tolerance <= 0:
        raise ValueError("tolerance must be > 0")
    if y == 0.0:
        return 0.0

    hi = 1.0
    while g(hi) < y:
        hi *= 2.0
        if hi > 1e6:  # g(64) is already 1.0 in doubles; unreachable in practice
            return hi
    lo = 0.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        val = g(mid)
        if abs(val - y) <= tolerance:
            return mid
        if val < y:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 2.0 * math.ulp(hi):
            break
    return 0.5 * (lo + hi)


def _g_inverse_bulk(y: np.ndarray, tol: np.ndarray, x0: np.ndarray | None) -> np.ndarray:
    """Vectorized g inversion: Newton from an asymptotic guess.

    For y < 1/2 the root is near sqrt(2y) (from g(x) ~ x^2/2); for y -> 1 it
    is near w + log(1+w) with w = -log(1-y) (from 1 - g = (1+x)exp(-x)).
    Warm starts from a previous solution skip most of the iterations.
    Stragglers fall back to the scalar bisection.
    """
    w = -np.log1p(-y)
    fresh = np.where(y < 0.5, np.sqrt(2.0 * y), w + np.log1p(w))
    if x0 is not None and x0.shape == y.shape:
        # A zero warm value means the source was dropped at the previous
        # omega; Newton cannot leave x = 0 (zero slope), so reseed those.
        x = np.where(x0 > 0.0, x0, fresh)
    else:
        x = fresh

    err = _g_array(x) - y
    for _ in range(40):
        if np.all(np.abs(err) <= tol):
            return x
        slope = x * np.exp(-np.minimum(x, 700.0))
        step = np.where(slope > 0.0, err / np.where(slope > 0.0, slope, 1.0), 0.0)
        # Trust region: at most an 8x move per step. A stale warm start can
        # otherwise overshoot to 0 (where Newton stalls on zero slope) or to
        # astronomically large x.
        x = np.clip(x - step, 0.125 * x, 8.0 * x)
        err = _g_array(x) - y

    bad = np.abs(err) > tol
    for idx in np.nonzero(bad)[0]:
        x[idx] = g_inverse(float(y[idx]), float(tol[idx]))
    return x


def solve_schedule(
    sources: "Mapping[SourceId, SourceParams] | Sequence[tuple[SourceId, SourceParams]]",
    budget: float,
    config: SolverConfig | None = None,
) -> Schedule:
    """Find optimal recrawl intervals for the given budget.

    Sources with lambda = 0 or negligible utility are assigned infinite
    intervals up front.  Raises ScheduleInfeasibleError when the budget
    cannot be met even with a single source kept, NoConvergenceError when
    the bisection exhausts max_iterations without meeting epsilon.
    """
    cfg = config or SolverConfig()
    items = list(sources.items()) if isinstance(sources, Mapping) else list(sources)
    if not items:
        raise ValueError("solve_schedule needs at least one source")
    if budget <= 0:
        raise ValueError(f"budget must be > 0, got {budget}")

    items.sort(key=lambda kv: kv[0])
    intervals: dict[SourceId, float] = {}
    ids: list[SourceId] = []
    utility: list[float] = []
    mu: list[float] = []
    lam: list[float] = []
    for sid, sp in items:
        if sp.lambda_rate <= 0.0 or sp.profit <= 0.0 or sp.utility <= _UTILITY_FLOOR:
            intervals[sid] = math.inf
            continue
        ids.append(sid)
        utility.append(sp.utility)
        mu.append(sp.decay)
        lam.append(sp.lambda_rate)

    if not ids:
        raise ScheduleInfeasibleError("no schedulable sources (all pre-filtered)", budget)

    p_arr = np.asarray(utility)
    mu_arr = np.asarray(mu)
    lam_arr = np.asarray(lam)
    active = np.ones(len(ids), dtype=bool)
    pinched: set[SourceId] = set()
    x_warm = np.zeros(len(ids))

    def evaluate(omega: float) -> "tuple[float, np.ndarray, float]":
        """Budget residual and its omega-derivative; updates x_warm."""
        keep = active & (omega < p_arr)
        if not keep.any():
            return -budget, keep, 0.0
        y = omega / p_arr[keep]
        tol = np.maximum(cfg.inner_tolerance * y, _G_TOL_FLOOR)
        x = _g_inverse_bulk(y, tol, x_warm[keep])
        x_warm[keep] = x
        with np.errstate(divide="ignore", over="ignore"):
            rate = np.where(x > 0.0, mu_arr[keep] / x, np.inf)
            # d(mu/x)/d(omega) = -mu e^x / (p x^3), from p g'(x) dx = d(omega)
            dterm = np.where(
                x > 0.0,
                mu_arr[keep] * np.exp(np.minimum(x, 700.0)) / (p_arr[keep] * x**3),
                np.inf,
            )
        residual = float(rate.sum() + lam_arr[keep].sum() - budget)
        return residual, keep, -float(dterm.sum())

    while True:
        lo = 0.0
        hi = float(p_arr[active].max())
        omega = 0.5 * (lo + hi)
        residual = -budget
        collapsed = False
        # Newton on the residual with a bisection safeguard: take the Newton
        # step only while it stays inside the bracket and shrinks faster than
        # halving, otherwise bisect. The bracket also drives gap detection.
        dx_old = hi - lo
        dx = dx_old
        for _ in range(cfg.max_iterations):
            residual, keep, dres = evaluate(omega)
            if abs(residual) <= cfg.epsilon:
                for i, sid in enumerate(ids):
                    if keep[i]:
                        intervals[sid] = float(x_warm[i] / mu_arr[i])
                    else:
                        intervals[sid] = math.inf
                return Schedule(
                    intervals=intervals,
                    omega=omega,
                    budget=budget,
                    residual=residual,
                    pinched=frozenset(pinched),
                )
            if residual < 0.0:  # crawling less than the budget: omega too high
                hi = omega
            else:
                lo = omega
            if hi - lo <= 8.0 * math.ulp(hi):
                collapsed = True
                break
            newton_bad = (
                not math.isfinite(residual)
                or not math.isfinite(dres)
                or dres >= 0.0
                or ((omega - hi) * dres - residual) * ((omega - lo) * dres - residual)
                > 0.0
                or abs(2.0 * residual) > abs(dx_old * dres)
            )
            dx_old = dx
            if newton_bad:
                dx = 0.5 * (hi - lo)
                omega = lo + dx
            else:
                dx = residual / dres
                omega -= dx
        if not collapsed:
            raise NoConvergenceError(
                f"outer iteration did not converge in {cfg.max_iterations} steps",
                residual,
            )

        # The bracket pinched onto a drop discontinuity: the budget falls in
        # the lambda-wide jump at some source's utility. Drop boundary
        # sources (largest lambda first frees the most budget; ties to
        # lowest id) and re-bisect over the rest. Dropping the whole batch
        # needed to push the boundary residual below zero in one pass gives
        # the same exclusion sequence as dropping them one collapse at a
        # time, without paying for a full bisection per exclusion.
        slack = 8.0 * math.ulp(hi) + 1e-300
        candidates = [
            i
            for i in range(len(ids))
            if active[i] and lo - slack <= p_arr[i] <= hi + slack
        ]
        if not candidates:
            # Collapse without a utility boundary in the bracket is a pure
            # granularity shortfall: one ulp of omega moves the spend by
            # more than epsilon. Fold the leftover into the steepest kept
            # source (the one dominating d(spend)/d(omega)); its interval
            # shift is sub-ulp in omega terms, so stationarity moves by far
            # less than the inner tolerance.
            best = -1
            best_dres = 0.0
            for i in range(len(ids)):
                if keep[i] and x_warm[i] > 0.0:
                    d = mu_arr[i] * math.exp(min(x_warm[i], 700.0)) / (
                        p_arr[i] * x_warm[i] ** 3
                    )
                    if d > best_dres:
                        best, best_dres = i, d
            if best >= 0:
                new_spend = mu_arr[best] / x_warm[best] - residual
                if new_spend > 0.0:
                    x_new = mu_arr[best] / new_spend
                    if (
                        math.isfinite(x_new)
                        and abs(p_arr[best] * g(x_new) - omega)
                        <= cfg.inner_tolerance * omega
                    ):
                        polished = residual - mu_arr[best] / x_warm[best] + (
                            mu_arr[best] / x_new
                        )
                        if abs(polished) <= cfg.epsilon:
                            x_warm[best] = x_new
                            for i, sid in enumerate(ids):
                                if keep[i]:
                                    intervals[sid] = float(x_warm[i] / mu_arr[i])
                                else:
                                    intervals[sid] = math.inf
                            return Schedule(
                                intervals=intervals,
                                omega=omega,
                                budget=budget,
                                residual=polished,
                                pinched=frozenset(pinched),
                            )
            # The leftover cannot be folded anywhere: tolerance below what
            # the floating point residual can resolve.
            raise NoConvergenceError(
                "bisection bracket collapsed without meeting epsilon", residual
            )

        # Not every collapse is a drop gap. When the optimal interval lies in
        # g's flat tail (g(x) is within inner_tolerance of 1), omega cannot
        # resolve a boundary source's spend: every interval past the flat
        # edge satisfies its stationarity to within tolerance. The solution
        # completes by hand there: hold omega at the boundary and let the
        # boundary sources absorb exactly the leftover budget, each capped
        # at the flat-edge spend. This only returns when the residual lands
        # at zero; otherwise the collapse really is a lambda-wide drop gap
        # and control falls through to the exclusion pass below.
        for i in candidates:
            active[i] = False
        r_rest, keep_rest, _ = evaluate(hi)
        for i in candidates:
            active[i] = True
        need = -r_rest
        if need > cfg.epsilon:
            x_edge = g_inverse(1.0 - cfg.inner_tolerance, _G_TOL_FLOOR)
            spends: "dict[int, float]" = {}
            rem = need
            for i in sorted(candidates, key=lambda i: (-lam_arr[i], ids[i])):
                if lam_arr[i] < rem:
                    s = min(mu_arr[i] / x_edge, rem - lam_arr[i])
                    spends[i] = s
                    rem -= lam_arr[i] + s
            if spends and abs(rem) <= cfg.epsilon:
                for i in candidates:
                    if i not in spends:
                        pinched.add(ids[i])
                for i, sid in enumerate(ids):
                    if keep_rest[i]:
                        intervals[sid] = float(x_warm[i] / mu_arr[i])
                    elif i in spends:
                        intervals[sid] = 1.0 / spends[i]
                    else:
                        intervals[sid] = math.inf
                return Schedule(
                    intervals=intervals,
                    omega=hi,
                    budget=budget,
                    residual=-rem,
                    pinched=frozenset(pinched),
                )

        if active.sum() <= 1:
            raise ScheduleInfeasibleError(
                "budget infeasible: cannot meet constraint with the last source",
                residual,
            )
        # Residual just below the boundary: candidate intervals are huge
        # there, so each candidate contributes essentially only its lambda.
        need, _, _ = evaluate(lo)
        max_drops = int(active.sum()) - 1
        order = sorted(candidates, key=lambda i: (-lam_arr[i], ids[i]))
        dropped: "list[SourceId]" = []
        for i in order:
            if len(dropped) >= max_drops:
                break
            active[i] = False
            x_warm[i] = 0.0
            pinched.add(ids[i])
            dropped.append(ids[i])
            need -= lam_arr[i]
            if need <= 0.0:
                break
        logger.debug(
            "budget %.6g falls in the drop gap at utility %.6g; excluding %s",
            budget,
            hi,
            dropped,
        )


def closed_form_quality(
    schedule: Schedule,
    sources: "Mapping[SourceId, SourceParams] | Sequence[tuple[SourceId, SourceParams]]",
) -> float:
    """Model-predicted profit rate Q = sum p_i x_i (1 - exp(-mu_i / x_i)).

    Infinite intervals contribute nothing.
    """
    params = dict(sources.items() if isinstance(sources, Mapping) else sources)
    total = 0.0
    for sid, interval in schedule.intervals.items():
        if math.isinf(interval):
            continue
        sp = params[sid]
        x = 1.0 / interval
        total += sp.utility * x * -math.expm1(-sp.decay / x)
    return total
