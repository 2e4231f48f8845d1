# %% [markdown]
# # Single-slot GSP with budgets
#
# Ads are ranked by eCPM = CTR * bid. The winner pays the runner-up's eCPM
# (or its own CTR times the reserve, whichever is larger) as expected cost.

# %%
import math

from macg import AdProfile, AuctionEvent, EpisodeLog, FeatureVector, ObjectiveKind, resolve_auction
from macg.mechanism import replay_bids


def feats(ctr):
    return FeatureVector(ctr, 0.05, 100.0, 0.2, 1.0, 1.0, 1.0, 0.1)


event = AuctionEvent("j0", 0, (("ad1", feats(0.10)), ("ad2", feats(0.20)), ("ad3", feats(0.05))))
out = resolve_auction(event, {"ad1": 5.0, "ad2": 3.0, "ad3": 8.0})
print(out.winner, "eCPM", out.winning_ecpm, "expected cost", out.expected_cost, "PPC", out.price_per_click)

# %% [markdown]
# With a reserve of 4 per click only ad3 may still win, and it pays the
# reserve.

# %%
print(resolve_auction(event, {"ad1": 3.0, "ad2": 3.0, "ad3": 8.0}, reserve=4.0))

# %% [markdown]
# Replay walks the auctions in order. An ad leaves the day for good as soon
# as its remaining budget cannot cover its current bid.

# %%
ads = {
    "A": AdProfile("A", ObjectiveKind.GMV, budget=1.0, tk=0.1, base_bid=1.0),
    "B": AdProfile("B", ObjectiveKind.GMV, budget=math.inf, tk=0.1, base_bid=1.0),
}
both = (("A", feats(1.0)), ("B", feats(1.0)))
log = EpisodeLog(ads, tuple(AuctionEvent(f"j{t}", t, both) for t in range(3)))
res = replay_bids(log, [1.0] * 6)
print([o.winner for o in res.outcomes], "A quit at", res.quit_at)
