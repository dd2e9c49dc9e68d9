"""
Estimating examination propensities
===================================

EM for the position-based model needs variation in where a document is shown.
Here every session shows a random permutation of the candidates, so position
bias and relevance can be told apart.
"""

import numpy as np

from cltrsim.click_sim import ClickLog, SimParams, generate_log
from cltrsim.letor import make_toy_dataset, normalize_features
from cltrsim.mlp import init_params
from cltrsim.propensity import PbmStats, em_pbm, fit_pbm_em, mle_dcm, regression_em_pbm

raw = make_toy_dataset(seed=0)
train, _ = normalize_features(raw.train)
rng = np.random.default_rng(1)

# %%
# Build a randomized PBM log with eta = 1.
def randomized_log(groups, n, attraction):
    qids, orders, clicks = [], [], []
    for g in groups:
        order = np.argsort(rng.random((n, len(g))), axis=1)[:, :10]
        exam = rng.random((n, 10)) < 1.0 / np.arange(1, 11)
        c = exam & (rng.random((n, 10)) < attraction(g)[order])
        qids += [g.query_id] * n
        orders.append(order)
        clicks.append(c)
    return ClickLog(qids, np.concatenate(orders), np.concatenate(clicks), n, SimParams.pbm(), 0)


relevance = lambda g: 0.1 + 0.9 * (2.0 ** g.labels - 1) / 15
log = randomized_log(train[:60], 3000, relevance)

# %%
# EM recovers rho_k / rho_1 close to 1/k.
table = em_pbm(log)
print("EM      ", np.round(table.values, 3))
print("truth   ", np.round(1 / np.arange(1, 11), 3))

# %%
# The log likelihood never goes down across EM rounds.
fit = fit_pbm_em(PbmStats.from_log(log), max_iter=10, tol=0)
print("log likelihood:", np.round(fit.log_likelihood[:5], 1), "...")

# %%
# Regression-EM shares one attraction model across queries. Here attraction is
# a function of a single feature.
log = randomized_log(train[:40], 2000, lambda g: 0.05 + 0.9 * g.features[:, 0])
table, regressor = regression_em_pbm(log, train[:40])
print("Reg-EM  ", np.round(table.values, 3))

# %%
# The DCM counting estimator: the share of clicks at rank r that are followed
# by another click. It undercounts continuation when later documents are
# rarely attractive.
ranker = init_params(train[0].feature_dim, 0, hidden=(8, 4, 2))
dcm_log = generate_log(train, ranker, 200, SimParams.dcm(), seed=0)
print("DCM MLE ", np.round(mle_dcm(dcm_log).values, 3))
print("lambda  ", np.round(0.6 / np.arange(1, 11), 3))
