"""Bidding policies: manual keyword bids (MKB), the OCPC benchmark and the
MACG policy net (per-objective agent nets, a shared net and an allocation net).

Every policy can bid one auction at a time (:meth:`BidPolicy.bid_for_auction`)
or a whole episode at once (:meth:`BidPolicy.episode_bids`), which returns one
bid per participant row of ``log.arrays`` with NaN on self-bidding rows.
"""

from __future__ import annotations

import math
from abc import ABC, abstractmethod
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Mapping

import numpy as np
from scipy.special import expit

from .domain import (
    CTR,
    CVR,
    IP,
    N_FEATURES,
    WCVR,
    AdProfile,
    AuctionEvent,
    EpisodeLog,
    FeatureVector,
    ObjectiveKind,
)

HIDDEN = 4
PARAMS_PER_NET = N_FEATURES * HIDDEN + HIDDEN + HIDDEN + 1  # 41
N_NETS = 5
N_PARAMS = N_NETS * PARAMS_PER_NET  # 205
# First-layer-only count (5 * (8*4 + 4)) quoted in some write-ups of this net.
FIRST_LAYER_PARAM_COUNT = N_NETS * (N_FEATURES * HIDDEN + HIDDEN)  # 180

SHARED_NET = 3
ALLOCATION_NET = 4


class Variant(str, Enum):
    FULL = "full"
    NO_SHARED = "no-shared"        # MACG-g
    NO_AGENTS = "no-agents"        # MACG-l
    STATIC_ALLOC = "static-alloc"  # MACG-a


class BidMode(str, Enum):
    PAPER_LITERAL = "paper-literal"
    CALIBRATED = "calibrated"


class ParamsError(ValueError):
    pass


@dataclass(frozen=True)
class MacgConfig:
    """Policy-net configuration.

    ``feature_mean``/``feature_std`` are frozen z-score statistics (usually
    taken from the training log with :meth:`from_log`). ``static_alloc`` is
    the fixed allocation weight used by the ``static-alloc`` variant.
    """

    range: float = 0.3
    feature_mean: tuple[float, ...] = (0.0,) * N_FEATURES
    feature_std: tuple[float, ...] = (1.0,) * N_FEATURES
    variant: Variant = Variant.FULL
    static_alloc: float = 0.5
    bid_mode: BidMode = BidMode.CALIBRATED

    def __post_init__(self) -> None:
        object.__setattr__(self, "variant", Variant(self.variant))
        object.__setattr__(self, "bid_mode", BidMode(self.bid_mode))
        object.__setattr__(self, "feature_mean", tuple(float(v) for v in self.feature_mean))
        object.__setattr__(self, "feature_std", tuple(float(v) for v in self.feature_std))
        if not 0.0 < self.range < 1.0:
            raise ValueError(f"range must lie in (0, 1), got {self.range}")
        if len(self.feature_mean) != N_FEATURES or len(self.feature_std) != N_FEATURES:
            raise ValueError("feature statistics must have 8 entries")
        if not all(s > 0.0 and math.isfinite(s) for s in self.feature_std):
            raise ValueError("feature_std entries must be finite and > 0")
        if not 0.0 <= self.static_alloc <= 1.0:
            raise ValueError("static_alloc must lie in [0, 1]")

    @classmethod
    def from_log(cls, log: EpisodeLog, **kwargs) -> MacgConfig:
        feats = log.arrays.features
        mean = feats.mean(axis=0) if len(feats) else np.zeros(N_FEATURES)
        std = feats.std(axis=0) if len(feats) else np.ones(N_FEATURES)
        std = np.where(std > 1e-12, std, 1.0)
        return cls(feature_mean=tuple(mean), feature_std=tuple(std), **kwargs)

    def with_variant(self, variant: Variant | str) -> MacgConfig:
        return replace(self, variant=Variant(variant))

    def normalize(self, features: np.ndarray) -> np.ndarray:
        return (np.asarray(features, dtype=float) - np.asarray(self.feature_mean)) / np.asarray(self.feature_std)


# ---------------------------------------------------------------------------
# network primitives


def net_params(params: np.ndarray, net: int) -> np.ndarray:
    """Slice of ``params`` for net 0..4 (agent 1..3, shared, allocation)."""
    return params[net * PARAMS_PER_NET:(net + 1) * PARAMS_PER_NET]


def mlp_forward(net: np.ndarray, inputs: np.ndarray) -> np.ndarray | float:
    """Pre-transform output of an [8, 4, 1] sigmoid MLP.

    ``net`` is laid out as W1 (4x8 row-major), b1 (4), w2 (4), b2 (1).
    ``inputs`` may be a single 8-vector or an (n, 8) batch.
    """
    net = np.asarray(net, dtype=float)
    w1 = net[:32].reshape(HIDDEN, N_FEATURES)
    b1 = net[32:36]
    w2 = net[36:40]
    b2 = net[40]
    hidden = expit(np.asarray(inputs, dtype=float) @ w1.T + b1)
    out = hidden @ w2 + b2
    return float(out) if np.ndim(out) == 0 else out


def range_transform(x, range_: float):
    """Squash a net output into the correction band [1 - range, 1 + range]."""
    return 1.0 + range_ * (2.0 * expit(x) - 1.0)


def check_params(params) -> np.ndarray:
    params = np.asarray(params, dtype=float)
    if params.shape != (N_PARAMS,):
        raise ParamsError(f"policy params must have shape ({N_PARAMS},), got {params.shape}")
    if not np.all(np.isfinite(params)):
        raise ParamsError("policy params contain non-finite entries")
    return params


def agent_scale(profile: AdProfile, mode: BidMode) -> float:
    """Per-ad multiplier applied to the agent net's benchmark bid g_k / CTR.

    In calibrated mode the benchmark is divided by the ad's historical mean of
    the same quantity and multiplied by its base bid, so the agent bid is the
    ad's per-click bid scaled by how much better than usual this impression
    is. Without historical means, click and cart ads fall back to ``base_bid``
    and GMV ads to the raw benchmark.
    """
    if mode is BidMode.PAPER_LITERAL:
        return 1.0
    kind = profile.kind
    if kind is ObjectiveKind.CLICK:
        return profile.base_bid
    if kind is ObjectiveKind.CART:
        return profile.base_bid / profile.hist_wcvr if profile.hist_wcvr else profile.base_bid
    if kind is ObjectiveKind.GMV:
        return profile.base_bid / profile.hist_value if profile.hist_value else 1.0
    raise ValueError("self-bidding ads have no agent net")


def _benchmark(kinds: np.ndarray, feats: np.ndarray) -> np.ndarray:
    # g_k / CTR: 1 for clicks, CVR * IP for GMV, WCVR for carts
    out = np.ones(len(kinds))
    gmv = kinds == ObjectiveKind.GMV
    cart = kinds == ObjectiveKind.CART
    out[gmv] = feats[gmv, CVR] * feats[gmv, IP]
    out[cart] = feats[cart, WCVR]
    return out


def agent_bid(kind: ObjectiveKind, profile: AdProfile, f: FeatureVector, params, config: MacgConfig) -> float:
    """Selfish bid of one smart ad from its objective's agent net."""
    if not ObjectiveKind(kind).is_smart:
        raise ValueError("agent_bid is undefined for self-bidding ads")
    kind = ObjectiveKind(kind)
    params = check_params(params)
    feats = np.asarray([f], dtype=float)
    x = mlp_forward(net_params(params, int(kind) - 1), config.normalize(feats))
    y = range_transform(x, config.range)
    base = _benchmark(np.array([int(kind)]), feats) * agent_scale(profile, config.bid_mode)
    return float((base * y)[0])


def shared_bid(f: FeatureVector, summary, tk_bar: float, params, config: MacgConfig) -> float:
    """Cooperative GMV-oriented bid; the correction depends only on the auction summary."""
    params = check_params(params)
    x = mlp_forward(net_params(params, SHARED_NET), config.normalize(summary))
    return f.cvr * f.item_price * tk_bar * range_transform(x, config.range)


def allocation_weight(summary, params, config: MacgConfig) -> float:
    """Weight a_j of the agent bid against the shared bid."""
    if config.variant is Variant.NO_SHARED:
        return 1.0
    if config.variant is Variant.NO_AGENTS:
        return 0.0
    if config.variant is Variant.STATIC_ALLOC:
        return config.static_alloc
    params = check_params(params)
    return float(expit(mlp_forward(net_params(params, ALLOCATION_NET), config.normalize(summary))))


def _row_bids(
    params: np.ndarray,
    config: MacgConfig,
    kinds: np.ndarray,
    scales: np.ndarray,
    feats: np.ndarray,
    row_auction: np.ndarray,
    summary: np.ndarray,
    tk_bar: np.ndarray,
) -> dict[str, np.ndarray]:
    """Vectorised agent, shared and final bids for a batch of participant rows."""
    n_rows = len(kinds)
    z = config.normalize(feats)
    zs = config.normalize(summary)
    y_agent = np.ones(n_rows)
    for k in (ObjectiveKind.CLICK, ObjectiveKind.GMV, ObjectiveKind.CART):
        rows = kinds == k
        if rows.any():
            x = mlp_forward(net_params(params, int(k) - 1), z[rows])
            y_agent[rows] = range_transform(x, config.range)
    b_ad = _benchmark(kinds, feats) * scales * y_agent

    y_shared = range_transform(mlp_forward(net_params(params, SHARED_NET), zs), config.range)
    b_0 = feats[:, CVR] * feats[:, IP] * (tk_bar * y_shared)[row_auction]

    if config.variant is Variant.FULL:
        a = expit(mlp_forward(net_params(params, ALLOCATION_NET), zs))
    else:
        a = np.full(len(summary), allocation_weight(None, params, config))
    a_rows = a[row_auction]
    bid = a_rows * b_ad + (1.0 - a_rows) * b_0
    # exact arithmetic keeps the interpolation between its ends; clip the rounding
    bid = np.clip(bid, np.minimum(b_ad, b_0), np.maximum(b_ad, b_0))
    smart = kinds != ObjectiveKind.SELF_BIDDING
    bid = np.where(smart, bid, np.nan)
    return {"bid": bid, "agent": b_ad, "shared": b_0, "alloc": a,
            "y_agent": y_agent, "y_shared": y_shared}


# ---------------------------------------------------------------------------
# policies


class BidPolicy(ABC):
    """Maps an auction to bids for its smart-bidding participants."""

    @abstractmethod
    def bid_for_auction(self, event: AuctionEvent, profiles: Mapping[str, AdProfile]) -> dict[str, float]:
        ...

    def episode_bids(self, log: EpisodeLog) -> np.ndarray:
        arrays = log.arrays
        bids = np.full(len(arrays.row_ad), np.nan)
        for j, event in enumerate(log.auctions):
            got = self.bid_for_auction(event, log.ads)
            for r, (ad_id, _) in zip(range(arrays.offsets[j], arrays.offsets[j + 1]), event.participants):
                if ad_id in got:
                    bids[r] = got[ad_id]
        return bids


def _smart(event: AuctionEvent, profiles: Mapping[str, AdProfile]):
    for ad_id, f in event.participants:
        p = profiles[ad_id]
        if p.kind.is_smart:
            yield ad_id, p, f


class MkbPolicy(BidPolicy):
    """Manual keyword-level bidding: one fixed bid per (ad, keyword)."""

    def bid_for_auction(self, event, profiles):
        return {ad_id: float(p.keyword_bids.get(event.keyword, p.base_bid))
                for ad_id, p, _ in _smart(event, profiles)}

    def episode_bids(self, log):
        arrays = log.arrays
        profiles = [log.ads[a] for a in arrays.ad_ids]
        row_kw = arrays.keywords[arrays.row_auction]
        bids = np.array([profiles[a].keyword_bids.get(int(kw), profiles[a].base_bid)
                         for a, kw in zip(arrays.row_ad, row_kw)], dtype=float).reshape(-1)
        return np.where(arrays.row_kinds != ObjectiveKind.SELF_BIDDING, bids, np.nan)


@dataclass(frozen=True)
class OcpcPolicy(BidPolicy):
    """Benchmark: base bid scaled by predicted-vs-historical CVR, clamped to a band."""

    band: float = 0.3

    def bid_for_auction(self, event, profiles):
        out = {}
        for ad_id, p, f in _smart(event, profiles):
            ratio = f.cvr / p.hist_cvr if p.hist_cvr else 1.0
            out[ad_id] = p.base_bid * min(max(ratio, 1.0 - self.band), 1.0 + self.band)
        return out

    def episode_bids(self, log):
        arrays = log.arrays
        hist = np.array([log.ads[a].hist_cvr or 0.0 for a in arrays.ad_ids])[arrays.row_ad]
        cvr = arrays.features[:, CVR]
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = np.where(hist > 0.0, cvr / np.where(hist > 0.0, hist, 1.0), 1.0)
        bids = arrays.base_bids[arrays.row_ad] * np.clip(ratio, 1.0 - self.band, 1.0 + self.band)
        return np.where(arrays.row_kinds != ObjectiveKind.SELF_BIDDING, bids, np.nan)


@dataclass(frozen=True)
class ScaledPolicy(BidPolicy):
    """Multiplies every smart bid of ``inner`` by ``factor``."""

    inner: BidPolicy
    factor: float

    def bid_for_auction(self, event, profiles):
        return {k: v * self.factor for k, v in self.inner.bid_for_auction(event, profiles).items()}

    def episode_bids(self, log):
        return self.inner.episode_bids(log) * self.factor


@dataclass(frozen=True, eq=False)
class MacgPolicy(BidPolicy):
    params: np.ndarray
    config: MacgConfig = field(default_factory=MacgConfig)

    def __post_init__(self) -> None:
        object.__setattr__(self, "params", check_params(self.params))

    def bid_for_auction(self, event, profiles):
        return macg_bid(event, profiles, self.params, self.config)

    def components(self, log: EpisodeLog) -> dict[str, np.ndarray]:
        arrays = log.arrays
        profiles = [log.ads[a] for a in arrays.ad_ids]
        scales = np.array([agent_scale(p, self.config.bid_mode) if p.kind.is_smart else 0.0
                           for p in profiles])
        return _row_bids(self.params, self.config, arrays.row_kinds, scales[arrays.row_ad],
                         arrays.features, arrays.row_auction, arrays.summary(), arrays.tk_bar())

    def episode_bids(self, log):
        return self.components(log)["bid"]


def macg_bid(event: AuctionEvent, profiles: Mapping[str, AdProfile], params, config: MacgConfig) -> dict[str, float]:
    """Final policy-net bids for the smart participants of one auction."""
    params = check_params(params)
    plist = [profiles[a] for a in event.ad_ids]
    feats = np.asarray(event.features, dtype=float).reshape(-1, N_FEATURES)
    kinds = np.array([int(p.kind) for p in plist])
    scales = np.array([agent_scale(p, config.bid_mode) if p.kind.is_smart else 0.0 for p in plist])
    summary = np.add.reduceat(feats, [0], axis=0) / len(plist)
    tk_bar = np.add.reduceat(np.array([p.tk for p in plist]), [0]) / len(plist)
    out = _row_bids(params, config, kinds, scales, feats, np.zeros(len(plist), dtype=np.int64),
                    summary, tk_bar)
    return {a: float(b) for a, p, b in zip(event.ad_ids, plist, out["bid"]) if p.kind.is_smart}


def ocpc_bid(event: AuctionEvent, profiles: Mapping[str, AdProfile], band: float = 0.3) -> dict[str, float]:
    return OcpcPolicy(band).bid_for_auction(event, profiles)


def mkb_bid(event: AuctionEvent, profiles: Mapping[str, AdProfile]) -> dict[str, float]:
    return MkbPolicy().bid_for_auction(event, profiles)
