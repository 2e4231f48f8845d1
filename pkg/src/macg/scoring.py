"""Benchmark-relative objective scores.

Each score compares a candidate episode result with the benchmark (OCPC)
result on the same log. Groups 1-3 are the click, GMV and cart objective
groups; group 0 is every ad, self-bidding ones included.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .domain import EpisodeLog, ObjectiveKind
from .mechanism import EpisodeResult

N_GROUPS = 4
DEFAULT_LAMBDA_M = 1.2
DEFAULT_ETA = 0.05
# M1 when the candidate wins no click-objective auction (its PPC is undefined)
NO_CLICKS_M1 = -1.0


class DegenerateBenchmarkError(ValueError):
    """The benchmark accumulators have a zero where a score divides by them."""


@dataclass(frozen=True)
class Accumulators:
    """Per-group sums of CTR, expected cost, GMV and cart over won auctions.

    Every field is a length-4 array indexed by group 0..3.
    """

    clicks: np.ndarray
    cost: np.ndarray
    gmv: np.ndarray
    cart: np.ndarray

    def scaled_currency(self, c: float) -> Accumulators:
        """Same accumulators with cost and GMV expressed in a currency ``c`` times smaller."""
        return Accumulators(self.clicks, self.cost * c, self.gmv * c, self.cart)


def accumulate(result: EpisodeResult, log: EpisodeLog) -> Accumulators:
    arrays = log.arrays
    if result.ad_ids != arrays.ad_ids or len(result.winners) != arrays.n_auctions:
        raise ValueError("episode result was not produced from this log")
    out = {name: np.zeros(N_GROUPS) for name in ("clicks", "cost", "gmv", "cart")}
    for name in out:
        per_ad = getattr(result, name)
        out[name][0] = per_ad.sum()
        for k in (1, 2, 3):
            out[name][k] = per_ad[arrays.kinds == k].sum()
    return Accumulators(**out)


def _ratio(num: float, den: float, what: str) -> float:
    if not den > 0.0:
        raise DegenerateBenchmarkError(f"benchmark {what} is {den}")
    return num / den


def score_m1(cand: Accumulators, bench: Accumulators, no_clicks: float = NO_CLICKS_M1) -> float:
    """Click-volume ratio minus PPC ratio for the click group."""
    clicks_b, cost_b = bench.clicks[1], bench.cost[1]
    volume = _ratio(cand.clicks[1], clicks_b, "group-1 clicks")
    ppc_b = _ratio(cost_b, clicks_b, "group-1 clicks")
    if not ppc_b > 0.0:
        raise DegenerateBenchmarkError("benchmark group-1 PPC is 0")
    if not cand.clicks[1] > 0.0:
        return no_clicks
    return volume - (cand.cost[1] / cand.clicks[1]) / ppc_b


def score_m2(cand: Accumulators, bench: Accumulators) -> float:
    """GMV ratio minus cost ratio for the GMV group."""
    return (_ratio(cand.gmv[2], bench.gmv[2], "group-2 GMV")
            - _ratio(cand.cost[2], bench.cost[2], "group-2 cost"))


def score_m3(cand: Accumulators, bench: Accumulators) -> float:
    """Cart ratio minus cost ratio for the cart group."""
    return (_ratio(cand.cart[3], bench.cart[3], "group-3 cart")
            - _ratio(cand.cost[3], bench.cost[3], "group-3 cost"))


def score_m0(cand: Accumulators, bench: Accumulators) -> float:
    """Global GMV gain minus the absolute deviation of total cost from the benchmark."""
    gmv = _ratio(cand.gmv[0], bench.gmv[0], "global GMV")
    cost = _ratio(cand.cost[0], bench.cost[0], "global cost")
    return gmv - 1.0 - abs(cost - 1.0)


def combine(m0: float, m1: float, m2: float, m3: float, lambda_m: float = DEFAULT_LAMBDA_M) -> tuple[float, float]:
    m_ad = min(m1, m2, m3)
    return m_ad, m0 + lambda_m * m_ad


@dataclass(frozen=True)
class ScoreReport:
    m0: float
    m1: float
    m2: float
    m3: float
    m_ad: float
    m_all: float
    lambda_m: float = DEFAULT_LAMBDA_M
    rpm_ratio: float = math.nan
    rpm_satisfied: bool | None = None
    floor_satisfaction: float = math.nan

    @classmethod
    def failed(cls, lambda_m: float = DEFAULT_LAMBDA_M) -> ScoreReport:
        ninf = -math.inf
        return cls(ninf, ninf, ninf, ninf, ninf, ninf, lambda_m)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class ConstraintReport:
    rpm_ratio: float
    rpm_satisfied: bool
    floor_satisfaction: float


def constraint_report(result: EpisodeResult, log: EpisodeLog, eta: float = DEFAULT_ETA) -> ConstraintReport:
    """Platform take-rate versus ``eta`` and the share of smart ads meeting their floor."""
    arrays = log.arrays
    total_cost = float(result.cost.sum())
    total_gmv = float(result.gmv.sum())
    ratio = total_cost / total_gmv if total_gmv > 0.0 else math.inf
    floors = np.array([log.ads[a].floor for a in arrays.ad_ids])
    smart = arrays.kinds != ObjectiveKind.SELF_BIDDING
    met = result.objective[smart] >= floors[smart]
    return ConstraintReport(
        rpm_ratio=ratio,
        rpm_satisfied=bool(total_cost >= eta * total_gmv),
        floor_satisfaction=float(met.mean()) if smart.any() else 1.0,
    )


def score_accumulators(cand: Accumulators, bench: Accumulators, lambda_m: float = DEFAULT_LAMBDA_M) -> ScoreReport:
    m0 = score_m0(cand, bench)
    m1 = score_m1(cand, bench)
    m2 = score_m2(cand, bench)
    m3 = score_m3(cand, bench)
    m_ad, m_all = combine(m0, m1, m2, m3, lambda_m)
    return ScoreReport(m0, m1, m2, m3, m_ad, m_all, lambda_m)


def score_episode(
    result: EpisodeResult,
    bench: EpisodeResult,
    log: EpisodeLog,
    lambda_m: float = DEFAULT_LAMBDA_M,
    eta: float = DEFAULT_ETA,
) -> ScoreReport:
    """Full report for ``result`` against ``bench``, both replayed on ``log``."""
    report = score_accumulators(accumulate(result, log), accumulate(bench, log), lambda_m)
    c = constraint_report(result, log, eta)
    return ScoreReport(report.m0, report.m1, report.m2, report.m3, report.m_ad, report.m_all,
                       lambda_m, c.rpm_ratio, c.rpm_satisfied, c.floor_satisfaction)
