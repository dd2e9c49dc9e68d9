"""
Reading and preparing LETOR data
================================

Ranking data comes as SVMlight lines: ``<label> qid:<q> <fid>:<value> ...``.
Consecutive lines with the same qid form one query group.
"""

import io

import numpy as np

from cltrsim.letor import (
    filter_queries,
    make_toy_dataset,
    normalize_features,
    parse_letor,
    subsample_labeled,
    write_letor,
)

# %%
# A few hand-written lines. Missing feature ids are zero.
lines = [
    "2 qid:10 1:0.3 3:1.5",
    "0 qid:10 1:0.1 2:0.2 # a trailing comment is ignored",
    "0 qid:11 2:4.0",
    "0 qid:11 1:1.0",
    "4 qid:12 1:2.0 2:2.0 3:2.0",
]
groups = parse_letor(lines)
for g in groups:
    print(g.query_id, g.labels, g.features.tolist())

# %%
# Queries without any relevant document, or with a single document, carry no
# ranking signal and are dropped.
kept = filter_queries(groups)
print("kept:", [g.query_id for g in kept])

# %%
# Writing back gives the same groups.
buf = io.StringIO()
write_letor(kept, buf)
print(buf.getvalue())
assert parse_letor(buf.getvalue().splitlines(), feature_dim=3) == kept

# %%
# The bundled toy set: 200 training queries, 16 features, labels a noisy
# monotone function of a linear projection of the features.
raw = make_toy_dataset(seed=0)
labels = np.concatenate([g.labels for g in raw.train])
print("queries:", len(raw.train), len(raw.valid), len(raw.test))
print("label distribution:", np.bincount(labels, minlength=5) / len(labels))

# %%
# Min-max statistics come from the training split only.
train, scaler = normalize_features(raw.train)
valid = scaler.transform(raw.valid)
x = np.concatenate([g.features for g in train])
print("train feature range:", x.min(), x.max())

# %%
# Production rankers are trained on a small labeled fraction.
for fraction in (0.01, 0.2, 1.0):
    print(fraction, len(subsample_labeled(train, fraction, seed=0)), "queries")
