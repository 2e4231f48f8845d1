"""Single-slot GSP resolution and budget-aware sequential episode replay.

Costs and clicks are expectations: a won impression contributes CTR clicks and
the GSP expected cost ``w = CTR_next * b_next``. An ad quits the episode the
first time its remaining budget is exhausted or smaller than its current bid
(the bid bounds the expected cost, so budgets are never overshot).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property
from typing import Mapping, Protocol

import numpy as np
from numba import njit

from .domain import (
    CTR,
    CVR,
    IP,
    WCVR,
    AuctionEvent,
    EpisodeLog,
    LogArrays,
    objective_value,
    objective_values,
)


class BidError(ValueError):
    """Bids handed to the mechanism are missing, negative or not finite."""


class EpisodePolicy(Protocol):
    def episode_bids(self, log: EpisodeLog) -> np.ndarray: ...


@dataclass(frozen=True)
class AuctionOutcome:
    auction_id: str
    winner: str | None
    winning_ecpm: float
    price_per_click: float
    expected_cost: float
    objective_value: float = 0.0
    gmv: float = 0.0


def resolve_auction(
    event: AuctionEvent,
    bids: Mapping[str, float],
    eligible: set[str] | None = None,
    reserve: float = 0.0,
    kinds: Mapping[str, object] | None = None,
) -> AuctionOutcome:
    """Resolve one auction by eCPM = CTR * bid with GSP pricing.

    ``eligible`` defaults to every participant. Ties on eCPM go to the lowest
    ad id. Bids below ``reserve`` (a per-click price) cannot win, and the
    winner always pays at least ``reserve`` per click. ``kinds`` maps ad ids
    to their :class:`ObjectiveKind` and only affects the reported objective
    value of the winner.
    """
    if eligible is None:
        eligible = set(event.ad_ids)
    ranked = []
    for ad_id, f in event.participants:
        if ad_id not in eligible:
            continue
        if ad_id not in bids:
            raise BidError(f"auction {event.auction_id}: no bid for eligible ad {ad_id!r}")
        b = float(bids[ad_id])
        if math.isnan(b) or math.isinf(b) or b < 0.0:
            raise BidError(f"auction {event.auction_id}: invalid bid {b!r} for ad {ad_id!r}")
        if b < reserve:
            continue
        ranked.append((-(f.ctr * b), ad_id, f))
    if not ranked:
        return AuctionOutcome(event.auction_id, None, 0.0, 0.0, 0.0)
    ranked.sort(key=lambda t: (t[0], t[1]))
    neg_ecpm, winner, f = ranked[0]
    cost = f.ctr * reserve
    if len(ranked) > 1:
        cost = max(-ranked[1][0], cost)
    ppc = cost / f.ctr if f.ctr > 0.0 else reserve
    value = objective_value(kinds[winner], f) if kinds is not None else 0.0  # type: ignore[arg-type]
    return AuctionOutcome(event.auction_id, winner, -neg_ecpm, ppc, cost, value, f.gmv)


@njit(cache=True)
def _replay_kernel(offsets, row_ad, ctr, bids, budgets, reserve):
    n_auctions = offsets.shape[0] - 1
    n_ads = budgets.shape[0]
    spent = np.zeros(n_ads)
    quit_at = np.full(n_ads, -1, dtype=np.int64)
    winner_row = np.full(n_auctions, -1, dtype=np.int64)
    cost = np.zeros(n_auctions)
    for j in range(n_auctions):
        best = -1
        best_e = 0.0
        second_e = -1.0
        for r in range(offsets[j], offsets[j + 1]):
            a = row_ad[r]
            if quit_at[a] >= 0:
                continue
            b = bids[r]
            remaining = budgets[a] - spent[a]
            if remaining <= 0.0 or remaining < b:
                quit_at[a] = j
                continue
            if b < reserve:
                continue
            e = ctr[r] * b
            if best < 0:
                best = r
                best_e = e
            elif e > best_e or (e == best_e and a < row_ad[best]):
                second_e = best_e
                best = r
                best_e = e
            elif e > second_e:
                second_e = e
        if best >= 0:
            w = ctr[best] * reserve
            if second_e > w:
                w = second_e
            winner_row[j] = best
            cost[j] = w
            spent[row_ad[best]] += w
    return winner_row, cost, spent, quit_at


@dataclass(frozen=True, eq=False)
class EpisodeResult:
    """Per-auction outcomes (as arrays) and per-ad expected accumulators.

    Per-auction arrays have one entry per auction; ``winners`` holds the ad
    index (into ``ad_ids``) or -1. Per-ad arrays are indexed like ``ad_ids``.
    ``quit_at`` maps ad id to the timestamp of the auction at which the ad
    ran out of budget and left the episode.
    """

    ad_ids: tuple[str, ...]
    auction_ids: tuple[str, ...]
    winners: np.ndarray
    winning_ecpm: np.ndarray
    price_per_click: np.ndarray
    expected_cost: np.ndarray
    winner_value: np.ndarray
    winner_gmv: np.ndarray
    cost: np.ndarray
    clicks: np.ndarray
    gmv: np.ndarray
    cart: np.ndarray
    objective: np.ndarray
    wins: np.ndarray
    quit_at: Mapping[str, int]

    @cached_property
    def outcomes(self) -> list[AuctionOutcome]:
        out = []
        for j, auction_id in enumerate(self.auction_ids):
            w = int(self.winners[j])
            out.append(AuctionOutcome(
                auction_id,
                None if w < 0 else self.ad_ids[w],
                float(self.winning_ecpm[j]),
                float(self.price_per_click[j]),
                float(self.expected_cost[j]),
                float(self.winner_value[j]),
                float(self.winner_gmv[j]),
            ))
        return out

    def per_ad(self, ad_id: str) -> dict[str, float]:
        i = self.ad_ids.index(ad_id)
        return {
            "cost": float(self.cost[i]),
            "clicks": float(self.clicks[i]),
            "gmv": float(self.gmv[i]),
            "cart": float(self.cart[i]),
            "objective": float(self.objective[i]),
            "wins": int(self.wins[i]),
        }

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, EpisodeResult):
            return NotImplemented
        if (self.ad_ids, self.auction_ids, dict(self.quit_at)) != (
                other.ad_ids, other.auction_ids, dict(other.quit_at)):
            return False
        names = ("winners", "winning_ecpm", "price_per_click", "expected_cost", "winner_value",
                 "winner_gmv", "cost", "clicks", "gmv", "cart", "objective", "wins")
        return all(np.array_equal(getattr(self, n), getattr(other, n)) for n in names)

    __hash__ = None  # type: ignore[assignment]


def fill_bids(arrays: LogArrays, smart_bids: np.ndarray) -> np.ndarray:
    """Merge policy bids for smart rows with the self-bidding ads' fixed bids.

    Raises :class:`BidError` when a smart row has no usable bid.
    """
    smart_bids = np.asarray(smart_bids, dtype=float)
    if smart_bids.shape != (len(arrays.row_ad),):
        raise BidError(f"expected {len(arrays.row_ad)} row bids, got shape {smart_bids.shape}")
    self_rows = arrays.row_kinds == 0
    bids = np.where(self_rows, arrays.self_bids[arrays.row_ad], smart_bids)
    bad = ~np.isfinite(bids) | (bids < 0.0)
    if bad.any():
        r = int(np.flatnonzero(bad)[0])
        j = int(arrays.row_auction[r])
        raise BidError(f"auction #{j}: invalid bid {bids[r]!r} for ad {arrays.ad_ids[arrays.row_ad[r]]!r}")
    return bids


def replay_bids(log: EpisodeLog, row_bids: np.ndarray, reserve: float | None = None) -> EpisodeResult:
    """Replay ``log`` with precomputed per-row bids (self-bidding rows ignored).

    ``reserve`` overrides the log's own reserve price when given.
    """
    arrays = log.arrays
    reserve = log.reserve if reserve is None else reserve
    bids = fill_bids(arrays, row_bids)
    feats = arrays.features
    winner_row, cost, spent, quit_at = _replay_kernel(
        arrays.offsets, arrays.row_ad, np.ascontiguousarray(feats[:, CTR]), bids,
        arrays.budgets, float(reserve))

    won = winner_row >= 0
    rows = winner_row[won]
    winners = np.full(arrays.n_auctions, -1, dtype=np.int64)
    winners[won] = arrays.row_ad[rows]
    ctr = feats[rows, CTR]
    ecpm = np.zeros(arrays.n_auctions)
    ecpm[won] = ctr * bids[rows]
    ppc = np.zeros(arrays.n_auctions)
    with np.errstate(divide="ignore", invalid="ignore"):
        ppc[won] = np.where(ctr > 0.0, cost[won] / ctr, reserve)
    gmv_rows = ctr * feats[rows, CVR] * feats[rows, IP]
    value_rows = objective_values(arrays.kinds[arrays.row_ad[rows]], feats[rows])
    winner_value = np.zeros(arrays.n_auctions)
    winner_value[won] = value_rows
    winner_gmv = np.zeros(arrays.n_auctions)
    winner_gmv[won] = gmv_rows

    def per_ad(values: np.ndarray) -> np.ndarray:
        acc = np.zeros(arrays.n_ads)
        np.add.at(acc, winners[won], values)
        return acc

    quit_map = {arrays.ad_ids[a]: int(arrays.timestamps[j])
                for a, j in enumerate(quit_at) if j >= 0}
    return EpisodeResult(
        ad_ids=arrays.ad_ids,
        auction_ids=tuple(e.auction_id for e in log.auctions),
        winners=winners,
        winning_ecpm=ecpm,
        price_per_click=ppc,
        expected_cost=cost,
        winner_value=winner_value,
        winner_gmv=winner_gmv,
        cost=spent,
        clicks=per_ad(ctr),
        gmv=per_ad(gmv_rows),
        cart=per_ad(ctr * feats[rows, WCVR]),
        objective=per_ad(value_rows),
        wins=np.bincount(winners[won], minlength=arrays.n_ads),
        quit_at=quit_map,
    )


def replay_episode(log: EpisodeLog, policy: EpisodePolicy, reserve: float | None = None) -> EpisodeResult:
    """Replay every auction of ``log`` in timestamp order under ``policy``."""
    return replay_bids(log, policy.episode_bids(log), reserve)
