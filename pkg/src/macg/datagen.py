"""Synthetic auction logs and their on-disk JSON-lines format.

A generated world is one ad population plus two independently drawn days of
auctions (train and test). A third, hidden "history" day replayed under the
ads' base bids supplies the historical fields (GMV, cost, PPC, tk and the
per-ad mean CVR / WCVR / value) so every log is self-consistent.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path
from typing import Any, Iterable

import numpy as np
from scipy.special import expit, logit

from .domain import (
    CVR,
    IP,
    WCVR,
    AdProfile,
    AuctionEvent,
    EpisodeLog,
    FeatureVector,
    LogValidationError,
    ObjectiveKind,
)
from .mechanism import replay_episode
from .policies import MkbPolicy, OcpcPolicy

LOG_FORMAT = "macg-episode-log"
LOG_VERSION = 1

KIND_NAMES = {
    ObjectiveKind.CLICK: "click",
    ObjectiveKind.GMV: "gmv",
    ObjectiveKind.CART: "cart",
    ObjectiveKind.SELF_BIDDING: "self-bidding",
}
KIND_BY_NAME = {v: k for k, v in KIND_NAMES.items()}


class GenerationError(RuntimeError):
    pass


class LogFormatError(ValueError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


@dataclass(frozen=True)
class GenConfig:
    """Knobs of the synthetic market.

    The smart-objective mix is normalised to sum to one. Rates are drawn on
    the logit scale around the given medians; ``match_sd`` is the spread of
    the per-impression match quality shared by CTR, CVR and WCVR.
    """

    n_ads: int = 200
    n_auctions: int = 10_000
    gmv_frac: float = 0.52
    cart_frac: float = 0.11
    click_frac: float = 0.38
    self_bidding_frac: float = 0.3
    n_keywords: int = 20
    keywords_per_ad: tuple[int, int] = (1, 3)
    min_participants: int = 2
    mean_participants: float = 6.0
    ctr_median: float = 0.03
    cvr_median: float = 0.03
    wcvr_median: float = 0.1
    ip_median: float = 100.0
    ip_sigma: float = 0.8
    quality_sd: float = 0.4
    relevance_sd: float = 0.4
    match_sd: float = 0.5
    target_ratio: tuple[float, float] = (0.1, 0.3)
    bid_noise: float = 0.3
    own_value_sd: float = 0.5
    keyword_bid_noise: float = 0.35
    budget_factor: tuple[float, float] = (0.6, 1.6)
    unconstrained_frac: float = 0.9
    self_bidders_unlimited: bool = True
    reserve: float = 0.5
    seed: int = 42
    max_retries: int = 10

    def __post_init__(self) -> None:
        for name in ("keywords_per_ad", "target_ratio", "budget_factor"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        self.validate()

    @property
    def objective_mix(self) -> dict[ObjectiveKind, float]:
        total = self.click_frac + self.gmv_frac + self.cart_frac
        return {ObjectiveKind.CLICK: self.click_frac / total,
                ObjectiveKind.GMV: self.gmv_frac / total,
                ObjectiveKind.CART: self.cart_frac / total}

    def validate(self) -> None:
        fracs = {"gmv_frac": self.gmv_frac, "cart_frac": self.cart_frac,
                 "click_frac": self.click_frac, "self_bidding_frac": self.self_bidding_frac,
                 "unconstrained_frac": self.unconstrained_frac}
        for name, v in fracs.items():
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {v}")
        # published mixes are rounded and may sum to slightly more or less than one
        if abs(self.gmv_frac + self.cart_frac + self.click_frac - 1.0) > 0.02:
            raise ValueError("smart objective fractions must sum to 1 (within 0.02)")
        if self.n_ads < 1 or self.n_auctions < 0:
            raise ValueError("n_ads must be >= 1 and n_auctions >= 0")
        if self.n_keywords < 1:
            raise ValueError("n_keywords must be >= 1")
        lo, hi = self.keywords_per_ad
        if not 1 <= lo <= hi:
            raise ValueError("keywords_per_ad must be (lo, hi) with 1 <= lo <= hi")
        if self.min_participants < 1 or self.mean_participants < self.min_participants:
            raise ValueError("need 1 <= min_participants <= mean_participants")
        for name in ("ctr_median", "cvr_median", "wcvr_median"):
            if not 0.0 < getattr(self, name) < 1.0:
                raise ValueError(f"{name} must lie in (0, 1)")
        if not (math.isfinite(self.reserve) and self.reserve >= 0.0):
            raise ValueError("reserve must be finite and >= 0")
        if not (self.ip_median > 0 and self.target_ratio[0] > 0 and self.budget_factor[0] > 0):
            raise ValueError("ip_median, target_ratio and budget_factor must be positive")

    def to_dict(self) -> dict[str, Any]:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> GenConfig:
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown GenConfig fields: {sorted(unknown)}")
        return cls(**data)


# ---------------------------------------------------------------------------
# generation


@dataclass
class _Population:
    kinds: list[ObjectiveKind]
    ctr_logit: np.ndarray
    cvr_logit: np.ndarray
    wcvr_logit: np.ndarray
    ip: np.ndarray
    ratio: np.ndarray
    base_bid: np.ndarray
    self_bid: np.ndarray
    keywords: list[dict[int, float]]   # keyword -> relevance
    kw_ads: list[list[int]]
    kw_weight: np.ndarray


def _quota(n: int, weights: dict[ObjectiveKind, float]) -> list[ObjectiveKind]:
    # largest-remainder apportionment keeps the mix exact up to rounding
    raw = {k: n * w for k, w in weights.items()}
    counts = {k: int(math.floor(v)) for k, v in raw.items()}
    left = n - sum(counts.values())
    for k in sorted(raw, key=lambda k: raw[k] - counts[k], reverse=True)[:left]:
        counts[k] += 1
    return [k for k, c in counts.items() for _ in range(c)]


def _population(cfg: GenConfig, rng: np.random.Generator) -> _Population:
    n = cfg.n_ads
    n_self = int(round(n * cfg.self_bidding_frac))
    kinds = [ObjectiveKind.SELF_BIDDING] * n_self + _quota(n - n_self, cfg.objective_mix)
    kinds = [kinds[i] for i in rng.permutation(n)]

    quality = rng.normal(0.0, 1.0, n)
    ctr_logit = logit(cfg.ctr_median) + cfg.quality_sd * quality + rng.normal(0, 0.3, n)
    cvr_logit = logit(cfg.cvr_median) + cfg.quality_sd * quality + rng.normal(0, 0.3, n)
    wcvr_logit = logit(cfg.wcvr_median) + cfg.quality_sd * quality + rng.normal(0, 0.3, n)
    ip = cfg.ip_median * np.exp(rng.normal(0.0, cfg.ip_sigma, n))
    ratio = rng.uniform(*cfg.target_ratio, n)
    value = expit(cvr_logit) * ip
    base_bid = ratio * value * np.exp(rng.normal(0.0, cfg.bid_noise, n))
    # click and cart advertisers price their own outcome, not the GMV it brings
    own_value = np.median(value) * np.exp(rng.normal(0.0, cfg.own_value_sd, n))
    other = np.array([k in (ObjectiveKind.CLICK, ObjectiveKind.CART) for k in kinds])
    base_bid = np.where(other, ratio * own_value * np.exp(rng.normal(0.0, cfg.bid_noise, n)), base_bid)
    self_bid = ratio * value * np.exp(rng.normal(0.0, cfg.bid_noise, n))

    popularity = 1.0 / np.arange(1, cfg.n_keywords + 1)
    popularity = popularity[rng.permutation(cfg.n_keywords)]
    kw_p = popularity / popularity.sum()
    lo, hi = cfg.keywords_per_ad
    keywords: list[dict[int, float]] = []
    kw_ads: list[list[int]] = [[] for _ in range(cfg.n_keywords)]
    for i in range(n):
        m = min(int(rng.integers(lo, hi + 1)), cfg.n_keywords)
        chosen = rng.choice(cfg.n_keywords, size=m, replace=False, p=kw_p)
        keywords.append({int(k): float(rng.normal(0.0, cfg.relevance_sd)) for k in chosen})
        for k in chosen:
            kw_ads[int(k)].append(i)
    # every keyword needs at least min(2, n) bidders to make a contested market
    need = min(2, n)
    for k in range(cfg.n_keywords):
        while len(kw_ads[k]) < need:
            i = int(rng.choice([a for a in range(n) if a not in kw_ads[k]]))
            keywords[i][k] = float(rng.normal(0.0, cfg.relevance_sd))
            kw_ads[k].append(i)
    return _Population(kinds, ctr_logit, cvr_logit, wcvr_logit, ip, ratio, base_bid, self_bid,
                       keywords, kw_ads, kw_p)


def _draw_day(cfg: GenConfig, pop: _Population, rng: np.random.Generator, prefix: str):
    """Raw auctions as (auction_id, keyword, [(ad index, ctr, cvr, ip, wcvr)])."""
    day = []
    for j in range(cfg.n_auctions):
        kw = int(rng.choice(cfg.n_keywords, p=pop.kw_weight))
        cands = pop.kw_ads[kw]
        extra = rng.poisson(cfg.mean_participants - cfg.min_participants)
        m = min(len(cands), cfg.min_participants + int(extra))
        rel = np.array([pop.keywords[i][kw] for i in cands])
        w = np.exp(rel)
        picked = rng.choice(len(cands), size=m, replace=False, p=w / w.sum())
        ads = [cands[p] for p in sorted(picked)]
        rel_ads = np.array([pop.keywords[i][kw] for i in ads])
        match = rng.normal(0.0, cfg.match_sd, m)
        ctr = expit(pop.ctr_logit[ads] + rel_ads + match)
        cvr = expit(pop.cvr_logit[ads] + 0.5 * rel_ads + match + rng.normal(0.0, 0.3, m))
        wcvr = expit(pop.wcvr_logit[ads] + 0.5 * rel_ads + match + rng.normal(0.0, 0.3, m))
        ip = pop.ip[ads] * np.exp(rng.normal(0.0, 0.1, m))
        rows = [(a, float(c), float(v), float(p), float(wc)) for a, c, v, p, wc in zip(ads, ctr, cvr, ip, wcvr)]
        day.append((f"{prefix}-{j:06d}", kw, rows))
    return day


def _ad_id(i: int, n: int) -> str:
    return f"ad{i:0{max(4, len(str(n - 1)))}d}"


def _build_log(cfg: GenConfig, profiles: dict[str, AdProfile], day, hist: dict[str, tuple]) -> EpisodeLog:
    ids = list(profiles)
    auctions = []
    for t, (auction_id, kw, rows) in enumerate(day):
        parts = []
        for a, ctr, cvr, ip, wcvr in rows:
            ad_id = ids[a]
            h_gmv, h_cost, h_ppc = hist[ad_id]
            parts.append((ad_id, FeatureVector(ctr, cvr, ip, wcvr, h_gmv, h_cost, h_ppc, profiles[ad_id].tk)))
        auctions.append(AuctionEvent(auction_id, t, tuple(parts), kw))
    return EpisodeLog(profiles, tuple(auctions), cfg.reserve)


def _row_means(day, n_ads: int) -> np.ndarray:
    sums = np.zeros((n_ads, 3))
    counts = np.zeros(n_ads)
    for _, _, rows in day:
        for a, _ctr, cvr, ip, wcvr in rows:
            sums[a] += (cvr, wcvr, cvr * ip)
            counts[a] += 1
    with np.errstate(invalid="ignore", divide="ignore"):
        return sums / counts[:, None], counts


def _benchmark_ok(log: EpisodeLog) -> bool:
    from .scoring import accumulate

    acc = accumulate(replay_episode(log, OcpcPolicy()), log)
    return bool(all(acc.clicks[k] > 0 and acc.cost[k] > 0 for k in range(4))
                and acc.gmv[0] > 0 and acc.gmv[2] > 0 and acc.cart[3] > 0)


def _attempt(cfg: GenConfig, rng: np.random.Generator) -> tuple[EpisodeLog, EpisodeLog]:
    pop = _population(cfg, rng)
    n = cfg.n_ads
    ids = [_ad_id(i, n) for i in range(n)]
    history = _draw_day(cfg, pop, rng, "hist")
    train_day = _draw_day(cfg, pop, rng, "train")
    test_day = _draw_day(cfg, pop, rng, "test")

    # warm-up: a budget-free day at base bids provides the historical fields
    warm = {
        ids[i]: AdProfile(ids[i], pop.kinds[i], budget=math.inf, tk=float(pop.ratio[i]),
                          base_bid=float(pop.base_bid[i]),
                          self_bid=float(pop.self_bid[i]) if pop.kinds[i] is ObjectiveKind.SELF_BIDDING else None)
        for i in range(n)
    }
    zero_hist = {a: (0.0, 0.0, 0.0) for a in ids}
    warm_log = _build_log(cfg, warm, history, zero_hist)
    res = replay_episode(warm_log, MkbPolicy())
    order = {a: k for k, a in enumerate(res.ad_ids)}
    means, counts = _row_means(history, n)

    profiles: dict[str, AdProfile] = {}
    hist: dict[str, tuple] = {}
    for i, ad_id in enumerate(ids):
        k = order[ad_id]
        cost, gmv, clicks = float(res.cost[k]), float(res.gmv[k]), float(res.clicks[k])
        tk = cost / gmv if cost > 0.0 and gmv > 0.0 else float(pop.ratio[i])
        ppc = cost / clicks if clicks > 0.0 else 0.0
        hist[ad_id] = (gmv, cost, ppc)
        if counts[i] > 0:
            h_cvr, h_wcvr, h_value = (float(v) for v in means[i])
        else:
            h_cvr = float(expit(pop.cvr_logit[i]))
            h_wcvr = float(expit(pop.wcvr_logit[i]))
            h_value = h_cvr * float(pop.ip[i])
        base = float(pop.base_bid[i])
        scale = cost if cost > 0.0 else base
        kind = pop.kinds[i]
        if kind is ObjectiveKind.SELF_BIDDING and cfg.self_bidders_unlimited:
            budget = math.inf
        elif rng.random() < cfg.unconstrained_frac:
            budget = 5.0 * scale
        else:
            budget = scale * float(rng.uniform(*cfg.budget_factor))
        kw_bids = {kw: base * float(np.exp(0.3 * r + rng.normal(0.0, cfg.keyword_bid_noise)))
                   for kw, r in sorted(pop.keywords[i].items())}
        profiles[ad_id] = AdProfile(
            ad_id, kind, budget=budget, tk=tk, base_bid=base,
            ppc_cap=1.2 * base if kind is ObjectiveKind.CLICK else math.inf,
            self_bid=float(pop.self_bid[i]) if kind is ObjectiveKind.SELF_BIDDING else None,
            hist_cvr=h_cvr, hist_wcvr=h_wcvr, hist_value=h_value,
            keyword_bids=kw_bids,
        )

    train = _build_log(cfg, profiles, train_day, hist)
    test = _build_log(cfg, profiles, test_day, hist)
    if cfg.n_auctions == 0:
        return train, test
    if not (_benchmark_ok(train) and _benchmark_ok(test)):
        raise GenerationError("an objective group is empty under the benchmark")

    # floors: what each smart ad achieves under the benchmark on the training day
    bench = replay_episode(train, OcpcPolicy())
    floors = {a: float(v) for a, v in zip(bench.ad_ids, bench.objective)}
    profiles = {a: replace(p, floor=floors[a] if p.kind.is_smart else 0.0) for a, p in profiles.items()}
    return _build_log(cfg, profiles, train_day, hist), _build_log(cfg, profiles, test_day, hist)


def generate(cfg: GenConfig | None = None) -> tuple[EpisodeLog, EpisodeLog]:
    """Draw a (train, test) pair of logs over one shared ad population.

    Deterministic in ``cfg`` (including ``cfg.seed``). Redraws the world when
    some objective group would not win (or not pay for) any auction under the
    benchmark, and gives up after ``cfg.max_retries`` attempts.
    """
    cfg = cfg or GenConfig()
    rng = np.random.default_rng(cfg.seed)
    for _ in range(cfg.max_retries):
        try:
            return _attempt(cfg, rng)
        except GenerationError:
            continue
    raise GenerationError(
        f"could not populate every objective group after {cfg.max_retries} attempts; "
        "increase n_ads or n_auctions")


# ---------------------------------------------------------------------------
# on-disk format


def _num(v: float | None):
    if v is None or math.isinf(v):
        return None
    return v


def _ad_record(p: AdProfile) -> dict[str, Any]:
    return {
        "type": "ad",
        "ad_id": p.ad_id,
        "kind": KIND_NAMES[p.kind],
        "budget": _num(p.budget),
        "tk": p.tk,
        "base_bid": p.base_bid,
        "ppc_cap": _num(p.ppc_cap),
        "floor": p.floor,
        "self_bid": p.self_bid,
        "hist_cvr": p.hist_cvr,
        "hist_wcvr": p.hist_wcvr,
        "hist_value": p.hist_value,
        "keyword_bids": {str(k): v for k, v in p.keyword_bids.items()},
    }


def _auction_record(e: AuctionEvent) -> dict[str, Any]:
    return {
        "type": "auction",
        "auction_id": e.auction_id,
        "timestamp": e.timestamp,
        "keyword": e.keyword,
        "participants": [{"ad_id": a, **f._asdict()} for a, f in e.participants],
    }


def write_log(log: EpisodeLog, path: str | Path, config: GenConfig | None = None) -> None:
    """Write ``log`` as JSON lines: a header, one line per ad, one per auction."""
    header = {
        "format": LOG_FORMAT,
        "version": LOG_VERSION,
        "n_ads": len(log.ads),
        "n_auctions": len(log.auctions),
        "reserve": log.reserve,
        "config": config.to_dict() if config is not None else None,
    }
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(header, allow_nan=False) + "\n")
        for p in log.ads.values():
            fh.write(json.dumps(_ad_record(p), allow_nan=False) + "\n")
        for e in log.auctions:
            fh.write(json.dumps(_auction_record(e), allow_nan=False) + "\n")


def _parse_ad(rec: dict[str, Any]) -> AdProfile:
    ppc_cap = rec.get("ppc_cap")
    return AdProfile(
        ad_id=str(rec["ad_id"]),
        kind=KIND_BY_NAME[rec["kind"]],
        budget=math.inf if rec.get("budget") is None else float(rec["budget"]),
        tk=float(rec["tk"]),
        base_bid=float(rec["base_bid"]),
        ppc_cap=math.inf if ppc_cap is None else float(ppc_cap),
        floor=float(rec.get("floor", 0.0)),
        self_bid=None if rec.get("self_bid") is None else float(rec["self_bid"]),
        hist_cvr=rec.get("hist_cvr"),
        hist_wcvr=rec.get("hist_wcvr"),
        hist_value=rec.get("hist_value"),
        keyword_bids={int(k): float(v) for k, v in rec.get("keyword_bids", {}).items()},
    )


def _parse_auction(rec: dict[str, Any]) -> AuctionEvent:
    parts = tuple(
        (str(p["ad_id"]), FeatureVector(*(float(p[name]) for name in FeatureVector._fields)))
        for p in rec["participants"]
    )
    return AuctionEvent(str(rec["auction_id"]), int(rec["timestamp"]), parts, int(rec.get("keyword", 0)))


def _records(lines: Iterable[str]):
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise LogFormatError(f"malformed record ({exc.msg})", lineno) from None
        if not isinstance(rec, dict):
            raise LogFormatError("record is not an object", lineno)
        yield lineno, rec


def read_log(path: str | Path) -> EpisodeLog:
    """Parse and validate a log written by :func:`write_log`."""
    with open(path, encoding="utf-8") as fh:
        records = _records(fh)
        try:
            lineno, header = next(records)
        except StopIteration:
            raise LogFormatError("empty file", 1) from None
        if header.get("format") != LOG_FORMAT:
            raise LogFormatError(f"not a {LOG_FORMAT} file", lineno)
        if header.get("version") != LOG_VERSION:
            raise LogFormatError(f"unsupported version {header.get('version')!r} (expected {LOG_VERSION})", lineno)
        try:
            n_ads, n_auctions = int(header["n_ads"]), int(header["n_auctions"])
            reserve = float(header.get("reserve", 0.0))
        except (KeyError, TypeError, ValueError) as exc:
            raise LogFormatError(f"bad header: {exc!r}", lineno) from None
        if not (math.isfinite(reserve) and reserve >= 0.0):
            raise LogFormatError(f"reserve={reserve} must be finite and >= 0", lineno)
        ads: dict[str, AdProfile] = {}
        auctions: list[AuctionEvent] = []
        for lineno, rec in records:
            kind = rec.get("type")
            try:
                if kind == "ad":
                    if auctions:
                        raise LogFormatError("ad record after auction records", lineno)
                    p = _parse_ad(rec)
                    p.validate()
                    if p.ad_id in ads:
                        raise LogFormatError(f"duplicate ad {p.ad_id!r}", lineno)
                    ads[p.ad_id] = p
                elif kind == "auction":
                    e = _parse_auction(rec)
                    e.validate()
                    if auctions and e.timestamp <= auctions[-1].timestamp:
                        raise LogFormatError(f"auction {e.auction_id}: timestamps must increase", lineno)
                    missing = [a for a in e.ad_ids if a not in ads]
                    if missing:
                        raise LogFormatError(f"auction {e.auction_id} references unknown ad {missing[0]!r}", lineno)
                    auctions.append(e)
                else:
                    raise LogFormatError(f"unknown record type {kind!r}", lineno)
            except LogFormatError:
                raise
            except (KeyError, TypeError, ValueError, LogValidationError) as exc:
                raise LogFormatError(f"bad {kind} record: {exc!r}", lineno) from None
        end = lineno
    if len(ads) != n_ads:
        raise LogFormatError(f"header declares {n_ads} ads, found {len(ads)} (file ends at line {end})", end)
    if len(auctions) != n_auctions:
        raise LogFormatError(
            f"header declares {n_auctions} auctions, found {len(auctions)}; "
            f"auction record #{len(auctions) + 1} is missing (file ends at line {end})", end)
    return EpisodeLog(ads, tuple(auctions), reserve)


def read_header(path: str | Path) -> dict[str, Any]:
    with open(path, encoding="utf-8") as fh:
        return json.loads(fh.readline())
