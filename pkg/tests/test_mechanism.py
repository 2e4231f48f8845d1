import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from helpers import K, FixedBids, ad, fv, make_log, oracle_replay, random_episode
from macg.domain import AuctionEvent
from macg.mechanism import BidError, fill_bids, replay_bids, replay_episode, resolve_auction


def three_ads():
    return AuctionEvent("j", 0, (("ad1", fv(ctr=0.10)), ("ad2", fv(ctr=0.20)), ("ad3", fv(ctr=0.05))))


def test_resolve_three_ads():
    out = resolve_auction(three_ads(), {"ad1": 5.0, "ad2": 3.0, "ad3": 8.0})
    assert out.winner == "ad2"
    assert out.winning_ecpm == pytest.approx(0.6)
    assert out.expected_cost == pytest.approx(0.5)
    assert out.price_per_click == pytest.approx(2.5)


def test_resolve_single_ad_pays_nothing():
    out = resolve_auction(AuctionEvent("j", 0, (("a", fv()),)), {"a": 3.0})
    assert out.winner == "a" and out.expected_cost == 0.0


def test_resolve_all_zero_bids_tie_break():
    event = AuctionEvent("j", 0, (("c", fv()), ("a", fv()), ("b", fv())))
    out = resolve_auction(event, {"a": 0.0, "b": 0.0, "c": 0.0})
    assert out.winner == "a" and out.expected_cost == 0.0


def test_resolve_reserve():
    event = AuctionEvent("j", 0, (("a", fv(ctr=0.1)), ("b", fv(ctr=0.1))))
    # b is below the reserve: a wins alone and pays the reserve per click
    out = resolve_auction(event, {"a": 2.0, "b": 0.5}, reserve=1.0)
    assert out.winner == "a"
    assert out.price_per_click == pytest.approx(1.0)
    assert out.expected_cost == pytest.approx(0.1)
    assert resolve_auction(event, {"a": 0.5, "b": 0.5}, reserve=1.0).winner is None


def test_resolve_rejects_bad_bids():
    with pytest.raises(BidError):
        resolve_auction(three_ads(), {"ad1": -1.0, "ad2": 1.0, "ad3": 1.0})
    with pytest.raises(BidError):
        resolve_auction(three_ads(), {"ad1": 1.0})


def test_zero_budget_never_wins():
    log = make_log([ad("a", budget=0.0)], [[("a", fv())]] * 3)
    res = replay_episode(log, FixedBids({(j, "a"): 1.0 for j in range(3)}))
    assert (res.winners == -1).all()
    assert res.cost.sum() == res.clicks.sum() == res.gmv.sum() == 0.0
    assert res.quit_at == {"a": 0}


def test_budget_of_exactly_one_win():
    # ctr 1 and equal bids: A wins the tie and pays B's eCPM, 1.0, which is its whole budget
    parts = [("A", fv(ctr=1.0)), ("B", fv(ctr=1.0))]
    log = make_log([ad("A", budget=1.0), ad("B")], [parts] * 3)
    res = replay_episode(log, FixedBids({(j, a): 1.0 for j in range(3) for a in "AB"}))
    assert [o.winner for o in res.outcomes] == ["A", "B", "B"]
    assert res.per_ad("A")["cost"] == 1.0
    assert res.quit_at == {"A": 1}


def test_bid_above_remaining_budget_quits():
    log = make_log([ad("A", budget=0.5), ad("B")], [[("A", fv()), ("B", fv())]] * 2)
    res = replay_episode(log, FixedBids({(j, a): 1.0 for j in range(2) for a in "AB"}))
    assert res.quit_at == {"A": 0}
    assert res.per_ad("A")["wins"] == 0


def test_replay_deterministic():
    rng = np.random.default_rng(3)
    log, bids = random_episode(rng, 5, 20)
    pol = FixedBids(bids)
    assert replay_episode(log, pol) == replay_episode(log, pol)


def test_self_bidding_rows_use_self_bid():
    log = make_log([ad("s", K.SELF_BIDDING, self_bid=2.0), ad("g")],
                   [[("s", fv()), ("g", fv())]])
    bids = fill_bids(log.arrays, np.array([np.nan, 1.0]))
    assert list(bids) == [2.0, 1.0]
    with pytest.raises(BidError):
        fill_bids(log.arrays, np.array([np.nan, np.nan]))


def test_reserve_override_and_log_reserve():
    log = make_log([ad("a")], [[("a", fv(ctr=0.1))]], reserve=1.0)
    row = np.array([2.0])
    assert replay_bids(log, row).expected_cost[0] == pytest.approx(0.1)
    assert replay_bids(log, row, reserve=0.0).expected_cost[0] == 0.0


def test_outcomes_and_per_ad_agree():
    rng = np.random.default_rng(5)
    log, bids = random_episode(rng, 5, 20, reserve=0.0)
    res = replay_episode(log, FixedBids(bids))
    for a in res.ad_ids:
        won = [o for o in res.outcomes if o.winner == a]
        assert res.per_ad(a)["wins"] == len(won)
        assert res.per_ad(a)["cost"] == pytest.approx(sum(o.expected_cost for o in won))


def check_against_oracle(log, bids):
    res = replay_episode(log, FixedBids(bids))
    outcomes, totals = oracle_replay(log, bids, log.reserve)
    for j, (winner, w) in enumerate(outcomes):
        got = res.winners[j]
        assert (None if got < 0 else res.ad_ids[got]) == winner, f"auction {j}"
        assert res.expected_cost[j] == w
    for a, t in totals.items():
        p = res.per_ad(a)
        for key in ("cost", "clicks", "gmv", "cart"):
            assert p[key] == pytest.approx(t[key], rel=1e-12, abs=1e-15)
        assert p["cost"] <= log.ads[a].budget


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_replay_matches_oracle_property(seed):
    log, bids = random_episode(np.random.default_rng(seed))
    check_against_oracle(log, bids)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_budget_never_exceeded(seed):
    log, bids = random_episode(np.random.default_rng(seed))
    res = replay_episode(log, FixedBids(bids))
    budgets = np.array([log.ads[a].budget for a in res.ad_ids])
    assert (res.cost <= budgets).all()
    # once an ad has quit it never wins again
    for a, t in res.quit_at.items():
        i = res.ad_ids.index(a)
        assert not (res.winners[t:] == i).any()


def test_kernel_matches_pure_python_resolver():
    rng = np.random.default_rng(11)
    log, bids = random_episode(rng, 5, 20, reserve=0.5)
    # unlimited budgets: every auction is independent
    log = make_log([ad(a.ad_id, a.kind, self_bid=a.self_bid) for a in log.ads.values()],
                   [list(e.participants) for e in log.auctions], 0.5)
    bids = {k: (log.ads[k[1]].self_bid if log.ads[k[1]].kind is K.SELF_BIDDING else v) for k, v in bids.items()}
    res = replay_episode(log, FixedBids(bids))
    for j, event in enumerate(log.auctions):
        one = resolve_auction(event, {a: bids[(j, a)] for a in event.ad_ids}, reserve=0.5)
        assert res.outcomes[j].winner == one.winner
        assert res.outcomes[j].expected_cost == one.expected_cost
        if one.winner is not None:
            assert res.outcomes[j].price_per_click == pytest.approx(one.price_per_click)
