"""
Simulating clicks
=================

Three user models look at the top ten results of a ranking:

* PBM: each position is examined independently with probability (1/k)^eta.
* DCM: users scan top-down; after a click at rank k they continue with
  probability beta * (1/k)^eta.
* CBCM: users compare the documents in a two-position viewport against an
  outside option and slide down when nothing is chosen.
"""

import numpy as np

from cltrsim.click_sim import SimParams, cbcm_click_distribution, simulate_sessions

labels = np.array([4, 3, 3, 2, 2, 1, 1, 0, 0, 0])
rng = np.random.default_rng(0)

# %%
# Click rate per rank under each model.
for params in (SimParams.pbm(), SimParams.dcm(), SimParams.cbcm()):
    clicks = simulate_sessions(params, labels, 20_000, rng)
    print(f"{params.name:5s} clicks/session {clicks.sum(1).mean():.3f} ",
          np.round(clicks.mean(0), 3))

# %%
# Under PBM a label-4 document is always attractive, so its click rate is the
# examination probability of its position.
clicks = simulate_sessions(SimParams.pbm(), [4, 4, 4], 200_000, rng)
print("PBM click rate of always-attractive docs:", np.round(clicks.mean(0), 3), "vs", [1, 1 / 2, 1 / 3])

# %%
# DCM: after a certain click at rank 1, rank 2 is seen 60% of the time.
clicks = simulate_sessions(SimParams.dcm(), [4, 4], 200_000, rng)
print("DCM P(click at 2 | click at 1):", clicks[clicks[:, 0] == 1, 1].mean().round(3))

# %%
# CBCM choice probabilities in one viewport. The outside option has weight exp(g).
probs, none = cbcm_click_distribution([(4, 1, False), (0, 2, False)], SimParams.cbcm())
print("CBCM viewport:", np.round(probs, 4), "no click:", round(none, 4))
for g in (5.0, 6.6, 9.0):
    c = simulate_sessions(SimParams.cbcm(g=g), labels, 5000, rng)
    print(f"g={g}: clicks/session {c.sum(1).mean():.3f}")
