"""Independent reference computations used by the tests.

Nothing here calls the code paths it is used to check.
"""

import itertools
import math
import zlib

import numpy as np

from cltrsim.click_sim import ClickLog, SimParams


def central_difference(f, x: np.ndarray, h: float = 1e-4) -> np.ndarray:
    """Numerical gradient of scalar ``f`` at ``x`` (perturbs a copy)."""
    x = np.array(x, dtype=np.float64)
    grad = np.zeros_like(x)
    for i in np.ndindex(x.shape):
        orig = x[i]
        x[i] = orig + h
        up = f(x)
        x[i] = orig - h
        down = f(x)
        x[i] = orig
        grad[i] = (up - down) / (2 * h)
    return grad


def relative_error(a, b, floor: float = 1e-6) -> np.ndarray:
    a, b = np.asarray(a), np.asarray(b)
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)


def brute_force_ndcg(ranking, labels, k):
    """DCG of the given order over IDCG found by scanning every permutation."""
    labels = list(labels)

    def dcg(order):
        return sum((2 ** labels[d] - 1) / math.log2(i + 2) for i, d in enumerate(order[:k]))

    best = max(dcg(p) for p in itertools.permutations(range(len(labels))))
    return dcg(list(ranking)) / best if best > 0 else 0.0


def randomized_pbm_log(groups, n_sessions, eta=1.0, epsilon=0.1, seed=0, cutoff=10,
                       attraction=None) -> ClickLog:
    """PBM log in which every session shows a fresh random permutation of candidates.

    Random orderings make examination and attractiveness separately identifiable,
    which a deterministic ranker never does. Click probabilities are written out
    here rather than taken from the simulator. ``attraction`` optionally maps a
    group to per-document click-given-examination probabilities.
    """
    qids, orderings, clicks = [], [], []
    for g in groups:
        rng = np.random.default_rng([seed, zlib.crc32(g.query_id.encode())])
        n = min(cutoff, len(g))
        order = np.argsort(rng.random((n_sessions, len(g))), axis=1)[:, :n]
        attract = (attraction(g) if attraction is not None
                   else epsilon + (1 - epsilon) * (2.0 ** g.labels - 1) / 15.0)
        exam = rng.random((n_sessions, n)) < (1.0 / np.arange(1, n + 1)) ** eta
        c = exam & (rng.random((n_sessions, n)) < attract[order])
        o = np.full((n_sessions, cutoff), -1)
        o[:, :n] = order
        cc = np.zeros((n_sessions, cutoff), dtype=np.int8)
        cc[:, :n] = c
        qids.extend([g.query_id] * n_sessions)
        orderings.append(o)
        clicks.append(cc)
    return ClickLog(qids, np.concatenate(orderings), np.concatenate(clicks), n_sessions,
                    SimParams.pbm(eta=eta, epsilon=epsilon), seed)


def spearman(a, b) -> float:
    """Rank correlation for tie-free inputs."""
    ra = np.argsort(np.argsort(a)).astype(float)
    rb = np.argsort(np.argsort(b)).astype(float)
    return float(np.corrcoef(ra, rb)[0, 1])


def dcm_latent_sessions(labels, n_sessions, rng, beta=0.6, eta=1.0, epsilon=0.1):
    """Cascade sessions with the hidden state exposed.

    Returns ``(clicks, examined, later_click_prob)``; the last array holds, for
    every click, the exact probability that the session clicks again further
    down given everything observed up to and including that click.
    """
    labels = np.asarray(labels)
    n = len(labels)
    rel = epsilon + (1 - epsilon) * (2.0 ** labels - 1) / 15.0
    lam = beta * (1.0 / np.arange(1, n + 1)) ** eta
    # after continuing, positions are scanned until the next click
    miss_all_below = np.append(np.cumprod((1 - rel)[::-1])[::-1][1:], 1.0)
    clicks = np.zeros((n_sessions, n), dtype=bool)
    examined = np.zeros((n_sessions, n), dtype=bool)
    later = np.zeros((n_sessions, n))
    active = np.ones(n_sessions, dtype=bool)
    for i in range(n):
        examined[:, i] = active
        c = active & (rng.random(n_sessions) < rel[i])
        clicks[:, i] = c
        later[c, i] = lam[i] * (1 - miss_all_below[i])
        stay = rng.random(n_sessions) < lam[i]
        active = active & (~c | stay)
    return clicks, examined, later
