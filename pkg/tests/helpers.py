"""Small-log builders and an independent brute-force replay oracle."""

from __future__ import annotations

import math

import numpy as np

from macg.domain import AdProfile, AuctionEvent, EpisodeLog, FeatureVector, ObjectiveKind

K = ObjectiveKind


def fv(ctr=0.1, cvr=0.05, ip=100.0, wcvr=0.2, hist_gmv=1.0, hist_cost=1.0, hist_ppc=1.0, tk=0.1):
    return FeatureVector(ctr, cvr, ip, wcvr, hist_gmv, hist_cost, hist_ppc, tk)


def ad(ad_id, kind=K.GMV, budget=math.inf, base_bid=1.0, tk=0.1, self_bid=None, **kw):
    if kind is K.SELF_BIDDING and self_bid is None:
        self_bid = base_bid
    return AdProfile(ad_id, kind, budget=budget, tk=tk, base_bid=base_bid, self_bid=self_bid, **kw)


def make_log(ads, auctions, reserve=0.0):
    """``auctions`` is a list of participant lists of (ad_id, FeatureVector)."""
    events = tuple(AuctionEvent(f"j{j}", j, tuple(parts)) for j, parts in enumerate(auctions))
    return EpisodeLog({a.ad_id: a for a in ads}, events, reserve)


class FixedBids:
    """Episode policy returning given per-(auction, ad) bids."""

    def __init__(self, table):
        self.table = table  # {(auction index, ad_id): bid}

    def episode_bids(self, log):
        arrays = log.arrays
        out = np.full(len(arrays.row_ad), np.nan)
        for r, (j, a) in enumerate(zip(arrays.row_auction, arrays.row_ad)):
            key = (int(j), arrays.ad_ids[a])
            if key in self.table:
                out[r] = self.table[key]
        return out


def oracle_replay(log, bids, reserve=0.0):
    """Straightforward per-auction simulation, written independently of the kernel.

    ``bids[(j, ad_id)]`` gives every participant's bid. Returns per-auction
    (winner or None, expected cost) and per-ad totals.
    """
    spent = {a: 0.0 for a in log.ads}
    gone = set()
    outcomes = []
    totals = {a: {"cost": 0.0, "clicks": 0.0, "gmv": 0.0, "cart": 0.0} for a in log.ads}
    for j, event in enumerate(log.auctions):
        live = []
        for ad_id, f in event.participants:
            if ad_id in gone:
                continue
            b = bids[(j, ad_id)]
            left = log.ads[ad_id].budget - spent[ad_id]
            if left <= 0 or left < b:
                gone.add(ad_id)
                continue
            if b >= reserve:
                live.append((ad_id, f, f.ctr * b))
        if not live:
            outcomes.append((None, 0.0))
            continue
        top = max(e for _, _, e in live)
        winner, f, _ = min((x for x in live if x[2] == top), key=lambda x: x[0])
        others = [e for a, _, e in live if a != winner]
        w = max([f.ctr * reserve] + others)
        spent[winner] += w
        t = totals[winner]
        t["cost"] += w
        t["clicks"] += f.ctr
        t["gmv"] += f.ctr * f.cvr * f.item_price
        t["cart"] += f.ctr * f.wcvr
        outcomes.append((winner, w))
    return outcomes, totals


def random_episode(rng, n_ads=None, n_auctions=None, reserve=None):
    """Random small episode (<= 5 ads, <= 20 auctions) with bids for every row."""
    n_ads = n_ads or int(rng.integers(1, 6))
    n_auctions = n_auctions if n_auctions is not None else int(rng.integers(0, 21))
    kinds = list(K)
    ads = []
    for i in range(n_ads):
        kind = kinds[int(rng.integers(0, 4))]
        budget = math.inf if rng.random() < 0.3 else float(rng.choice([0.0, rng.uniform(0, 2)]))
        ads.append(ad(f"a{i}", kind, budget=budget, base_bid=1.0, self_bid=1.0))
    auctions, bids = [], {}
    # coarse grids make exact eCPM ties common
    ctr_grid = np.array([0.0, 0.05, 0.1, 0.2, 0.4])
    bid_grid = np.array([0.0, 0.5, 1.0, 2.0, 4.0])
    for j in range(n_auctions):
        k = int(rng.integers(1, n_ads + 1))
        ids = sorted(rng.choice(n_ads, size=k, replace=False))
        parts = []
        for i in ids:
            f = fv(ctr=float(rng.choice(ctr_grid)), cvr=float(rng.uniform(0, 1)),
                   ip=float(rng.uniform(0, 50)), wcvr=float(rng.uniform(0, 1)))
            parts.append((f"a{i}", f))
            bids[(j, f"a{i}")] = float(rng.choice(bid_grid)) if rng.random() < 0.7 else float(rng.uniform(0, 4))
        order = rng.permutation(len(parts))
        auctions.append([parts[o] for o in order])
    if reserve is None:
        reserve = float(rng.choice([0.0, 0.0, 1.0, rng.uniform(0, 2)]))
    log = make_log(ads, auctions, reserve)
    # self-bidding rows always bid their fixed self_bid
    for (j, a) in list(bids):
        if log.ads[a].kind is K.SELF_BIDDING:
            bids[(j, a)] = log.ads[a].self_bid
    return log, bids
