"""Core value types: ads, auctions, episode logs and objective values."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import IntEnum
from functools import cached_property
from typing import Mapping, NamedTuple, Sequence

import numpy as np


class LogValidationError(ValueError):
    """An episode log (or one of its parts) violates a structural invariant."""


class ObjectiveKind(IntEnum):
    """Advertiser objective. The integer value is the objective-group index.

    Self-bidding ads belong only to the global group 0.
    """

    SELF_BIDDING = 0
    CLICK = 1
    GMV = 2
    CART = 3

    @property
    def is_smart(self) -> bool:
        return self is not ObjectiveKind.SELF_BIDDING


SMART_KINDS = (ObjectiveKind.CLICK, ObjectiveKind.GMV, ObjectiveKind.CART)

FEATURE_NAMES = (
    "ctr",
    "cvr",
    "item_price",
    "wcvr",
    "hist_gmv",
    "hist_cost",
    "hist_ppc",
    "tk",
)
N_FEATURES = len(FEATURE_NAMES)
CTR, CVR, IP, WCVR, HIST_GMV, HIST_COST, HIST_PPC, TK = range(N_FEATURES)


class FeatureVector(NamedTuple):
    """Per-(ad, auction) predicted features, in the fixed network input order."""

    ctr: float
    cvr: float
    item_price: float
    wcvr: float
    hist_gmv: float
    hist_cost: float
    hist_ppc: float
    tk: float

    def validate(self) -> None:
        if not all(math.isfinite(v) for v in self):
            raise LogValidationError(f"non-finite feature in {self!r}")
        for name in ("ctr", "cvr", "wcvr"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise LogValidationError(f"{name}={v} outside [0, 1]")
        for name in ("item_price", "hist_gmv", "hist_cost", "hist_ppc"):
            if getattr(self, name) < 0.0:
                raise LogValidationError(f"{name} must be >= 0")
        if self.tk <= 0.0:
            raise LogValidationError(f"tk must be > 0, got {self.tk}")

    @property
    def gmv(self) -> float:
        return self.ctr * self.cvr * self.item_price


def summary_vector(features: Sequence[FeatureVector]) -> np.ndarray:
    """Componentwise mean of the participants' feature vectors."""
    if len(features) == 0:
        raise ValueError("summary of an empty participant list")
    return np.asarray(features, dtype=float).mean(axis=0)


def objective_value(kind: ObjectiveKind, f: FeatureVector) -> float:
    """Expected objective units delivered by one won impression."""
    if kind is ObjectiveKind.CLICK:
        return f.ctr
    if kind is ObjectiveKind.CART:
        return f.ctr * f.wcvr
    # GMV ads and self-bidding ads both count through global GMV.
    return f.ctr * f.cvr * f.item_price


def objective_values(kinds: np.ndarray, features: np.ndarray) -> np.ndarray:
    """Vectorised :func:`objective_value` over rows of a feature matrix."""
    ctr = features[:, CTR]
    gmv = ctr * features[:, CVR] * features[:, IP]
    cart = ctr * features[:, WCVR]
    return np.where(kinds == ObjectiveKind.CLICK, ctr,
                    np.where(kinds == ObjectiveKind.CART, cart, gmv))


@dataclass(frozen=True)
class AdProfile:
    """One advertisement with its constraints and calibration scalars.

    ``hist_cvr``, ``hist_wcvr`` and ``hist_value`` are the ad's historical
    mean CVR, WCVR and value per click (CVR * IP). ``None`` means unknown, in
    which case policies fall back to a neutral adjustment.
    ``keyword_bids`` is the manual per-keyword bid table used by MKB.
    """

    ad_id: str
    kind: ObjectiveKind
    budget: float
    tk: float
    base_bid: float
    ppc_cap: float = math.inf
    floor: float = 0.0
    self_bid: float | None = None
    hist_cvr: float | None = None
    hist_wcvr: float | None = None
    hist_value: float | None = None
    keyword_bids: Mapping[int, float] = field(default_factory=dict)

    def validate(self) -> None:
        for name in ("floor", "tk", "base_bid"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v >= 0.0):
                raise LogValidationError(f"ad {self.ad_id}: {name}={v} must be finite and >= 0")
        # an unset budget or PPC cap is infinite
        for name in ("budget", "ppc_cap"):
            if not getattr(self, name) >= 0.0:
                raise LogValidationError(f"ad {self.ad_id}: {name} must be >= 0")
        if self.tk <= 0.0:
            raise LogValidationError(f"ad {self.ad_id}: tk must be > 0")
        if self.kind is ObjectiveKind.SELF_BIDDING:
            if self.self_bid is None or not (math.isfinite(self.self_bid) and self.self_bid > 0):
                raise LogValidationError(f"self-bidding ad {self.ad_id} needs a positive self_bid")
        for kw, b in self.keyword_bids.items():
            if not (math.isfinite(b) and b >= 0.0):
                raise LogValidationError(f"ad {self.ad_id}: keyword {kw} bid {b} invalid")


@dataclass(frozen=True)
class AuctionEvent:
    """One auction: the ads in the bidding queue and their features."""

    auction_id: str
    timestamp: int
    participants: tuple[tuple[str, FeatureVector], ...]
    keyword: int = 0

    def validate(self) -> None:
        if not self.participants:
            raise LogValidationError(f"auction {self.auction_id} has no participants")
        ids = [ad for ad, _ in self.participants]
        if len(set(ids)) != len(ids):
            raise LogValidationError(f"auction {self.auction_id} lists an ad twice")
        for _, f in self.participants:
            f.validate()

    @property
    def ad_ids(self) -> list[str]:
        return [ad for ad, _ in self.participants]

    @property
    def features(self) -> list[FeatureVector]:
        return [f for _, f in self.participants]


@dataclass(frozen=True)
class LogArrays:
    """Flat, row-per-participant view of an episode log for vectorised work.

    Ads are indexed in sorted ``ad_id`` order, so a lower index means a lower
    id (this is what makes the tie-break "lowest ad_id wins" an index test).
    Rows of auction ``j`` are ``offsets[j]:offsets[j + 1]``.
    """

    ad_ids: tuple[str, ...]
    kinds: np.ndarray        # (n_ads,) int
    budgets: np.ndarray      # (n_ads,)
    self_bids: np.ndarray    # (n_ads,), nan for smart ads
    base_bids: np.ndarray    # (n_ads,)
    tks: np.ndarray          # (n_ads,)
    offsets: np.ndarray      # (n_auctions + 1,) int
    row_ad: np.ndarray       # (n_rows,) int
    row_auction: np.ndarray  # (n_rows,) int
    features: np.ndarray     # (n_rows, 8)
    keywords: np.ndarray     # (n_auctions,) int
    timestamps: np.ndarray   # (n_auctions,) int

    @property
    def n_ads(self) -> int:
        return len(self.ad_ids)

    @property
    def n_auctions(self) -> int:
        return len(self.offsets) - 1

    @property
    def row_kinds(self) -> np.ndarray:
        return self.kinds[self.row_ad]

    def summary(self) -> np.ndarray:
        """Per-auction mean feature vectors, shape (n_auctions, 8)."""
        if self.n_auctions == 0:
            return np.zeros((0, N_FEATURES))
        sums = np.add.reduceat(self.features, self.offsets[:-1], axis=0)
        counts = np.diff(self.offsets).astype(float)
        return sums / counts[:, None]

    def tk_bar(self) -> np.ndarray:
        """Per-auction mean of the participants' per-ad tk."""
        if self.n_auctions == 0:
            return np.zeros(0)
        sums = np.add.reduceat(self.tks[self.row_ad], self.offsets[:-1])
        return sums / np.diff(self.offsets)


@dataclass(frozen=True)
class EpisodeLog:
    """A full day of auctions over a fixed ad population.

    ``reserve`` is the market's per-click reserve price.
    """

    ads: Mapping[str, AdProfile]
    auctions: tuple[AuctionEvent, ...]
    reserve: float = 0.0

    def validate(self) -> None:
        if not (math.isfinite(self.reserve) and self.reserve >= 0.0):
            raise LogValidationError(f"reserve={self.reserve} must be finite and >= 0")
        for ad_id, profile in self.ads.items():
            if ad_id != profile.ad_id:
                raise LogValidationError(f"ad key {ad_id!r} != profile id {profile.ad_id!r}")
            profile.validate()
        prev = None
        for event in self.auctions:
            event.validate()
            if prev is not None and event.timestamp <= prev:
                raise LogValidationError(
                    f"auction {event.auction_id}: timestamp {event.timestamp} not after {prev}")
            prev = event.timestamp
            for ad_id in event.ad_ids:
                if ad_id not in self.ads:
                    raise LogValidationError(f"auction {event.auction_id} references unknown ad {ad_id!r}")

    @cached_property
    def arrays(self) -> LogArrays:
        """Validated flat view, built once per log."""
        self.validate()
        ad_ids = tuple(sorted(self.ads))
        index = {ad: i for i, ad in enumerate(ad_ids)}
        profiles = [self.ads[a] for a in ad_ids]
        offsets = np.zeros(len(self.auctions) + 1, dtype=np.int64)
        row_ad: list[int] = []
        feats: list[FeatureVector] = []
        for j, event in enumerate(self.auctions):
            for ad_id, f in event.participants:
                row_ad.append(index[ad_id])
                feats.append(f)
            offsets[j + 1] = len(row_ad)
        counts = np.diff(offsets)
        return LogArrays(
            ad_ids=ad_ids,
            kinds=np.array([int(p.kind) for p in profiles], dtype=np.int64),
            budgets=np.array([p.budget for p in profiles], dtype=float),
            self_bids=np.array([np.nan if p.self_bid is None else p.self_bid for p in profiles]),
            base_bids=np.array([p.base_bid for p in profiles], dtype=float),
            tks=np.array([p.tk for p in profiles], dtype=float),
            offsets=offsets,
            row_ad=np.array(row_ad, dtype=np.int64),
            row_auction=np.repeat(np.arange(len(self.auctions), dtype=np.int64), counts),
            features=np.array(feats, dtype=float).reshape(-1, N_FEATURES),
            keywords=np.array([e.keyword for e in self.auctions], dtype=np.int64),
            timestamps=np.array([e.timestamp for e in self.auctions], dtype=np.int64),
        )
