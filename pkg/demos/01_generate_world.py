# %% [markdown]
# # A synthetic ad market
#
# `generate` draws one ad population and two days of auctions over it: a
# training day and a held-out test day. A hidden third day, replayed at the
# ads' base bids, supplies every ad's historical GMV, cost, PPC and tk.

# %%
from collections import Counter

import numpy as np

from macg import GenConfig, generate

cfg = GenConfig(n_ads=200, n_auctions=10_000, seed=42)
train, test = generate(cfg)
print(len(train.ads), "ads,", len(train.auctions), "train and", len(test.auctions), "test auctions")
print("reserve price per click:", train.reserve)

# %% [markdown]
# The objective mix follows the configured shares. Self-bidding ads set
# their own bid and only count towards global GMV.

# %%
print(Counter(p.kind.name for p in train.ads.values()))

# %% [markdown]
# Every auction row carries the eight network inputs.

# %%
arr = train.arrays
print("participants per auction:", np.diff(arr.offsets).mean().round(2))
for name, col in zip(("ctr", "cvr", "item_price", "wcvr"), arr.features.T):
    print(f"{name:>10}: median {np.median(col):.4g}")

# %% [markdown]
# Self-bidding ads have no budget. Most smart ads get five times their
# historical spend; the rest get a budget that can run out during the day.

# %%
from macg import OcpcPolicy, replay_episode

budgets = np.array([p.budget for p in train.ads.values()])
print("unlimited budgets:", int(np.isinf(budgets).sum()), "of", len(budgets))
print("ads out of budget under OCPC on the test day:", len(replay_episode(test, OcpcPolicy()).quit_at))
