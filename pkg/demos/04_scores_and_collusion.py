# %% [markdown]
# # Scores against OCPC
#
# Every score compares a candidate replay with the OCPC replay of the same
# log. M1 to M3 reward each objective group for more value at lower cost;
# M0 rewards global GMV but penalizes any move of total cost away from the
# benchmark.

# %%
from macg import GenConfig, OcpcPolicy, generate, replay_episode, score_episode
from macg.policies import ScaledPolicy

_, test = generate(GenConfig(n_ads=100, n_auctions=4000, self_bidding_frac=0.0, seed=3))
bench = replay_episode(test, OcpcPolicy())

# %% [markdown]
# Scaling every smart bid down is the classic collusion move. Group scores
# like the cheaper clicks, but M0 drops: the platform's revenue term bites.

# %%
for factor in (1.0, 0.8, 0.5, 0.1):
    r = score_episode(replay_episode(test, ScaledPolicy(OcpcPolicy(), factor)), bench, test)
    print(f"x{factor:<4} M0 {r.m0:+.3f}  M1 {r.m1:+.3f}  M2 {r.m2:+.3f}  M3 {r.m3:+.3f}  M_all {r.m_all:+.3f}")

# %% [markdown]
# Without a reserve price the allocation does not change under uniform
# scaling, so the whole effect is the cost term.

# %%
import dataclasses

free = dataclasses.replace(test, reserve=0.0)
bench0 = replay_episode(free, OcpcPolicy())
r = score_episode(replay_episode(free, ScaledPolicy(OcpcPolicy(), 0.1)), bench0, free)
print(f"reserve 0, x0.1: M0 {r.m0:+.3f}, M_AD {r.m_ad:+.3f}")
