"""
Training rankers from clicks
============================

A weak production ranker (trained on 1% of the labels) shows results to
simulated PBM users. Rankers are then trained on those clicks with and without
correcting for position bias.
"""

import numpy as np

from cltrsim.click_sim import SimParams, generate_log
from cltrsim.letor import DatasetSplit, make_toy_dataset, normalize_features, subsample_labeled
from cltrsim.metrics import mean_ndcg
from cltrsim.propensity import PropensityTable, em_pbm
from cltrsim.train import LossKind, TrainConfig, train_cltr, train_ranker, with_kind

raw = make_toy_dataset(seed=0)
train, scaler = normalize_features(raw.train)
ds = DatasetSplit(train, scaler.transform(raw.valid), scaler.transform(raw.test), raw.feature_dim)
hidden = (32, 16, 8)

# %%
# Production ranker and skyline.
cfg = TrainConfig(learning_rate=0.1, batch_size=8, steps=300, hidden=hidden, eval_every=50)
production = train_ranker(subsample_labeled(ds.train, 0.01, seed=0), ds.valid, cfg).params
skyline = train_ranker(ds.train, ds.valid, cfg).params
print(f"production nDCG@5 {mean_ndcg(production, ds.test):.4f}")
print(f"skyline    nDCG@5 {mean_ndcg(skyline, ds.test):.4f}")

# %%
# One hundred sessions per training query.
log = generate_log(ds.train, production, 100, SimParams.pbm(), seed=0)
print(len(log), "sessions,", log.clicks.sum(1).mean().round(3), "clicks per session")

# %%
# Train a few kinds. The checkpoint with the best validation nDCG@5 is kept.
tcfg = TrainConfig(learning_rate=0.1, batch_size=256, steps=1000, hidden=hidden, eval_every=100)
runs = {
    "ClickSoftmax": (LossKind.ClickSoftmax, None),
    "IPS (true propensities)": (LossKind.IPS_PBM_EM, PropensityTable.pbm_oracle(1.0)),
    "IPS (EM propensities)": (LossKind.IPS_PBM_EM, em_pbm(log)),
    "PRS (EM propensities)": (LossKind.PRS_PBM_EM, em_pbm(log)),
    "DLA": (LossKind.DLA_PBM, None),
}
for name, (kind, table) in runs.items():
    res = train_cltr(with_kind(tcfg, kind), log, ds.train, ds.valid, table)
    print(f"{name:24s} test nDCG@5 {mean_ndcg(res.params, ds.test):.4f}  (best step {res.best_step})")
    if res.propensity_logits is not None:
        w = np.exp(res.propensity_logits - res.propensity_logits[0])
        print(" " * 25, "learned rho_k / rho_1:", np.round(w, 2))
