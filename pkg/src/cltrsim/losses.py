"""Click-based ranking losses and their gradients with respect to scores.

All functions take ``(sessions, positions)`` arrays; 1-d inputs are treated as a
single session. ``mask`` marks displayed positions (padding is False). Each
returns ``(loss, score_grads)`` where the loss is summed over sessions.
"""

from __future__ import annotations

import numpy as np


def _prep(scores, clicks, mask=None):
    s = np.atleast_2d(np.asarray(scores, dtype=np.float64))
    c = np.atleast_2d(np.asarray(clicks, dtype=np.float64))
    if s.shape != c.shape:
        raise ValueError(f"scores {s.shape} and clicks {c.shape} differ in shape")
    m = np.ones(s.shape, dtype=bool) if mask is None else np.atleast_2d(np.asarray(mask, dtype=bool))
    if m.shape != s.shape:
        raise ValueError("mask shape does not match scores")
    return s, c * m, m


def _shape_like(grads, scores):
    return grads.reshape(np.shape(scores))


def _softplus(z):
    return np.logaddexp(0.0, z)


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def loss_click_point(scores, clicks, mask=None):
    """Pointwise sigmoid cross-entropy, averaged over the displayed positions of a session."""
    s, c, m = _prep(scores, clicks, mask)
    n = np.maximum(m.sum(axis=1, keepdims=True), 1)
    per_item = (_softplus(s) - c * s) * m
    loss = float((per_item / n).sum())
    grads = (_sigmoid(s) - c) * m / n
    return loss, _shape_like(grads, scores)


def _pair_mask(c, m):
    clicked = (c > 0) & m
    unclicked = (c == 0) & m
    return clicked[:, :, None] & unclicked[:, None, :]


def _pairwise(s, pair_w):
    """sum_ij pair_w[ij] * softplus(-(s_i - s_j)) and its score gradient."""
    diff = s[:, :, None] - s[:, None, :]
    loss = float((pair_w * _softplus(-diff)).sum())
    lam = -pair_w * _sigmoid(-diff)
    grads = lam.sum(axis=2) - lam.sum(axis=1)
    return loss, grads


def loss_click_pair(scores, clicks, mask=None):
    """Logistic loss over (clicked, unclicked) pairs, averaged over a session's pairs."""
    s, c, m = _prep(scores, clicks, mask)
    pairs = _pair_mask(c, m).astype(np.float64)
    n_pairs = pairs.sum(axis=(1, 2), keepdims=True)
    loss, grads = _pairwise(s, pairs / np.maximum(n_pairs, 1.0))
    return loss, _shape_like(grads, scores)


def weighted_softmax_loss(scores, weights, mask=None):
    """-sum_i w_i log softmax(s)_i over displayed positions."""
    s, w, m = _prep(scores, weights, mask)
    top = np.where(m, s, -np.inf).max(axis=1, keepdims=True)  # -inf for an empty session
    z = np.where(m, s - np.where(np.isfinite(top), top, 0.0), -np.inf)
    total = np.exp(z).sum(axis=1, keepdims=True)
    log_p = np.where(m, z - np.log(np.where(total > 0, total, 1.0)), 0.0)
    loss = float(-(w * log_p).sum())
    grads = (w.sum(axis=1, keepdims=True) * np.exp(log_p) - w) * m
    return loss, _shape_like(grads, scores)


def loss_click_softmax(scores, clicks, mask=None):
    return weighted_softmax_loss(scores, clicks, mask)


def loss_ips_softmax(scores, clicks, propensities, mask=None):
    """Softmax cross-entropy with each click weighted by its inverse propensity."""
    p = np.asarray(propensities, dtype=np.float64)
    if np.any(p[np.asarray(clicks) > 0] <= 0):
        raise ValueError("propensities of clicked positions must be positive")
    weights = np.where(np.asarray(clicks) > 0, np.asarray(clicks) / np.where(p > 0, p, 1.0), 0.0)
    return weighted_softmax_loss(scores, weights, mask)


def _score_ranks(s, m):
    """1-based rank of each position when the session is sorted by score."""
    order = np.argsort(np.where(m, -s, np.inf), axis=1, kind="stable")
    ranks = np.empty_like(order)
    np.put_along_axis(ranks, order, np.arange(1, s.shape[1] + 1)[None, :].repeat(len(s), 0), axis=1)
    return ranks


def delta_ndcg(scores, clicks, mask=None):
    """|change in nDCG| from swapping each pair in the score ranking, clicks as gains."""
    s, c, m = _prep(scores, clicks, mask)
    disc = np.where(m, 1.0 / np.log2(1.0 + _score_ranks(s, m)), 0.0)
    n_clicks = (c > 0).sum(axis=1)
    ideal_disc = np.cumsum(1.0 / np.log2(2.0 + np.arange(s.shape[1])))
    idcg = np.where(n_clicks > 0, ideal_disc[np.maximum(n_clicks, 1) - 1], 1.0)
    gains = (c > 0).astype(np.float64)
    out = (
        np.abs(gains[:, :, None] - gains[:, None, :])
        * np.abs(disc[:, :, None] - disc[:, None, :])
        / idcg[:, None, None]
    )
    return out


def loss_prs_pairwise(scores, clicks, propensities, mask=None, delta_ndcg_weights=None):
    """Lambda-weighted pairwise logistic loss, each pair scaled by p_unclicked / p_clicked."""
    s, c, m = _prep(scores, clicks, mask)
    p = np.atleast_2d(np.asarray(propensities, dtype=np.float64))
    pairs = _pair_mask(c, m)
    if delta_ndcg_weights is None:
        delta_ndcg_weights = delta_ndcg(s, c, m)
    ratio = np.where(pairs, p[:, None, :] / np.where(pairs, p[:, :, None], 1.0), 0.0)
    delta_w = np.asarray(delta_ndcg_weights, dtype=np.float64)
    if delta_w.ndim == 2:
        delta_w = delta_w[None]
    loss, grads = _pairwise(s, delta_w * ratio)
    return loss, _shape_like(grads, scores)


def loss_lambda_pairwise(scores, clicks, mask=None):
    s = np.asarray(scores, dtype=np.float64)
    return loss_prs_pairwise(scores, clicks, np.ones_like(s), mask)
