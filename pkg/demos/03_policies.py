# %% [markdown]
# # Three ways to bid
#
# MKB uses fixed per-keyword bids, OCPC nudges the base bid by predicted
# versus historical CVR, and MACG mixes a per-objective agent bid with a
# GMV-oriented shared bid.

# %%
import numpy as np

from macg import GenConfig, MacgConfig, MacgPolicy, MkbPolicy, OcpcPolicy, generate
from macg.policies import N_PARAMS

train, _ = generate(GenConfig(n_ads=60, n_auctions=2000, seed=1))
arr = train.arrays
smart = arr.row_kinds != 0

for name, pol in (("MKB", MkbPolicy()), ("OCPC", OcpcPolicy())):
    b = pol.episode_bids(train)[smart]
    print(f"{name:>4}: mean bid {b.mean():.3f}")

# %% [markdown]
# With all-zero parameters every correction factor is 1 and the allocation
# weight is 0.5, so the MACG bid is the midpoint of its two parts.

# %%
cfg = MacgConfig.from_log(train)
parts = MacgPolicy(np.zeros(N_PARAMS), cfg).components(train)
print("a_j:", np.unique(parts["alloc"]))
mid = 0.5 * (parts["agent"] + parts["shared"])
print("bid is the midpoint:", np.allclose(parts["bid"][smart], mid[smart]))

# %% [markdown]
# The shared bid is cvr * ip times one factor per auction, so on its own it
# ranks every auction by GMV.

# %%
no_agents = MacgPolicy(np.random.default_rng(0).standard_normal(N_PARAMS), cfg.with_variant("no-agents"))
b = no_agents.episode_bids(train)
ratio = b / (arr.features[:, 1] * arr.features[:, 2])
j = 0
rows = slice(arr.offsets[j], arr.offsets[j + 1])
print("per-row multiplier in auction 0:", ratio[rows][smart[rows]])
