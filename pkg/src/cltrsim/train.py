"""Training loops: supervised production rankers and click-based CLTR models."""

from __future__ import annotations

import csv
import enum
import io
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from . import losses
from .click_sim import ClickLog
from .letor import QueryGroup
from .metrics import ndcg_at_k
from .mlp import (
    DEFAULT_HIDDEN,
    MlpParams,
    TrainingError,
    apply_update,
    backward,
    forward,
    init_params,
    rank_by_scores,
)
from .propensity import DEFAULT_FLOOR, PropensityTable, propensity_matrix


class ConfigurationError(ValueError):
    pass


class LossKind(str, enum.Enum):
    ClickPoint = "ClickPoint"
    ClickPair = "ClickPair"
    ClickSoftmax = "ClickSoftmax"
    IPS_PBM_EM = "IPS_PBM_EM"
    IPS_PBM_Reg = "IPS_PBM_Reg"
    IPS_DCM = "IPS_DCM"
    PRS_PBM_EM = "PRS_PBM_EM"
    PRS_PBM_Reg = "PRS_PBM_Reg"
    PRS_DCM = "PRS_DCM"
    DLA_PBM = "DLA_PBM"
    DLA_DCM = "DLA_DCM"

    @property
    def propensity_source(self) -> str | None:
        """Which estimator feeds this kind: 'em', 'reg', 'mle' or None."""
        if self.name.startswith(("IPS", "PRS")):
            return {"EM": "em", "Reg": "reg", "DCM": "mle"}[self.name.rsplit("_", 1)[1]]
        return None

    @property
    def family(self) -> str:
        return self.name.split("_")[0] if "_" in self.name else self.name


ALL_KINDS = tuple(LossKind)


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.01
    batch_size: int = 256
    steps: int = 10_000
    seed: int = 0
    loss_kind: LossKind | None = None
    hidden: tuple[int, ...] = DEFAULT_HIDDEN
    eval_every: int = 500
    max_weight: float = 1.0 / DEFAULT_FLOOR  # cap on DLA inverse weights

    def __post_init__(self):
        if self.learning_rate <= 0 or self.batch_size < 1 or self.steps < 0 or self.eval_every < 1:
            raise ValueError(f"invalid training configuration {self}")
        if self.loss_kind is not None:
            object.__setattr__(self, "loss_kind", LossKind(self.loss_kind))
        object.__setattr__(self, "hidden", tuple(self.hidden))


@dataclass
class TrainResult:
    params: MlpParams
    best_step: int
    best_valid_ndcg5: float
    history: list[tuple[int, float, float]] = field(default_factory=list)  # step, loss, ndcg@5
    propensity_logits: np.ndarray | None = None

    def metrics_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["step", "train_loss", "valid_ndcg5"])
        for step, loss, nd in self.history:
            w.writerow([step, repr(loss), repr(nd)])
        return buf.getvalue()

    def write_metrics(self, path: str | Path) -> None:
        Path(path).write_text(self.metrics_csv())


# -- shared plumbing ---------------------------------------------------------


def score_groups(params: MlpParams, groups: Sequence[QueryGroup], chunk: int = 16384):
    """Scores for every document of every group, split back per group."""
    if not groups:
        return []
    x = np.concatenate([g.features for g in groups])
    scores = np.concatenate(
        [forward(params, x[i : i + chunk])[0] for i in range(0, len(x), chunk)]
    )
    return np.split(scores, np.cumsum([len(g) for g in groups])[:-1])


def validation_ndcg(params: MlpParams, groups: Sequence[QueryGroup], k: int = 5) -> float:
    if not groups:
        return float("nan")
    return float(np.mean([
        ndcg_at_k(rank_by_scores(s), g.labels, k) for s, g in zip(score_groups(params, groups), groups)
    ]))


class _Selector:
    """Track the checkpoint with the best validation nDCG@5 (earliest wins ties)."""

    def __init__(self, valid_groups):
        self.valid = valid_groups
        self.best = None
        self.history: list[tuple[int, float, float]] = []

    def observe(self, step, params, loss, extra=None):
        nd = validation_ndcg(params, self.valid)
        self.history.append((step, float(loss), nd))
        if self.best is None or nd > self.best[1] or (np.isnan(self.best[1]) and not np.isnan(nd)):
            self.best = (step, nd, params, extra)

    def result(self) -> TrainResult:
        step, nd, params, extra = self.best
        return TrainResult(params, step, nd, self.history, extra)


def _scatter(values, mask):
    out = np.zeros(mask.shape)
    out[mask] = values
    return out


# -- production ranker -------------------------------------------------------


def train_ranker(
    groups: Sequence[QueryGroup], valid_groups: Sequence[QueryGroup], config: TrainConfig
) -> TrainResult:
    """Supervised listwise training: softmax cross-entropy toward 2^y - 1 gains."""
    if not groups:
        raise ValueError("no training queries")
    x = np.concatenate([g.features for g in groups])
    offsets = np.cumsum([0] + [len(g) for g in groups])
    width = max(len(g) for g in groups)
    rows = np.full((len(groups), width), -1)
    targets = np.zeros((len(groups), width))
    for i, g in enumerate(groups):
        rows[i, : len(g)] = np.arange(offsets[i], offsets[i + 1])
        gain = 2.0 ** g.labels - 1.0
        targets[i, : len(g)] = gain / gain.sum() if gain.sum() > 0 else 0.0
    mask = rows >= 0

    rng = np.random.default_rng(config.seed)
    params = init_params(x.shape[1], config.seed, config.hidden)
    sel = _Selector(valid_groups)
    sel.observe(0, params, float("nan"))
    running = []
    for step in range(1, config.steps + 1):
        idx = rng.integers(0, len(groups), config.batch_size)
        m = mask[idx]
        flat, cache = forward(params, x[rows[idx][m]])
        loss, g = losses.weighted_softmax_loss(_scatter(flat, m), targets[idx], m)
        grads = backward(params, cache, g[m] / config.batch_size)
        params = apply_update(params, grads, config.learning_rate, step)
        running.append(loss / config.batch_size)
        if step % config.eval_every == 0 or step == config.steps:
            sel.observe(step, params, float(np.mean(running)))
            running = []
    return sel.result()


# -- click sessions ----------------------------------------------------------


@dataclass
class SessionData:
    """Click log resolved against feature rows, ready for batching."""

    features: np.ndarray  # stacked document features of the logged queries
    rows: np.ndarray  # (n_sessions, cutoff) index into features; -1 is padding
    clicks: np.ndarray  # (n_sessions, cutoff) float
    mask: np.ndarray

    @classmethod
    def from_log(cls, log: ClickLog, groups: Sequence[QueryGroup]) -> "SessionData":
        by_qid = {g.query_id: g for g in groups}
        needed = list(dict.fromkeys(log.query_ids))
        missing = [q for q in needed if q not in by_qid]
        if missing:
            raise ConfigurationError(f"{len(missing)} logged queries have no feature data, e.g. {missing[0]}")
        base = {}
        feats, off = [], 0
        for q in needed:
            base[q] = off
            feats.append(by_qid[q].features)
            off += len(by_qid[q])
        starts = np.array([base[q] for q in log.query_ids])
        mask = log.mask
        rows = np.where(mask, starts[:, None] + np.maximum(log.orderings, 0), -1)
        x = np.concatenate(feats) if feats else np.zeros((0, groups[0].feature_dim if groups else 0))
        return cls(x, rows, log.clicks.astype(np.float64) * mask, mask)

    def __len__(self) -> int:
        return len(self.rows)


def _batch_scores(params, data: SessionData, idx):
    m = data.mask[idx]
    flat, cache = forward(params, data.features[data.rows[idx][m]])
    return _scatter(flat, m), m, cache


def click_loss(kind: LossKind, scores, clicks, mask, propensities=None):
    """Loss and score gradients of one of the non-DLA kinds."""
    if kind == LossKind.ClickPoint:
        return losses.loss_click_point(scores, clicks, mask)
    if kind == LossKind.ClickPair:
        return losses.loss_click_pair(scores, clicks, mask)
    if kind == LossKind.ClickSoftmax:
        return losses.loss_click_softmax(scores, clicks, mask)
    if kind.family == "IPS":
        return losses.loss_ips_softmax(scores, clicks, propensities, mask)
    if kind.family == "PRS":
        return losses.loss_prs_pairwise(scores, clicks, propensities, mask)
    raise ConfigurationError(f"{kind} is trained with dla_step")


# -- DLA ---------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class DlaState:
    ranker: MlpParams
    propensity_logits: np.ndarray  # one logit per examination context


def dla_contexts(clicks: np.ndarray, mask: np.ndarray, kind: LossKind) -> np.ndarray:
    """Examination context of each position.

    PBM: the 0-based position. DCM: the 1-based rank of the last preceding click,
    0 when nothing above was clicked.
    """
    n = clicks.shape[1]
    if kind == LossKind.DLA_PBM:
        ctx = np.broadcast_to(np.arange(n), clicks.shape).copy()
    elif kind == LossKind.DLA_DCM:
        ranks = np.arange(1, n + 1)
        upto = np.maximum.accumulate(np.where(clicks > 0, ranks, 0), axis=1)
        ctx = np.zeros_like(upto)
        ctx[:, 1:] = upto[:, :-1]
    else:
        raise ConfigurationError(f"{kind} is not a DLA kind")
    return np.where(mask, ctx, 0)


def n_contexts(kind: LossKind, cutoff: int) -> int:
    return cutoff if kind == LossKind.DLA_PBM else cutoff + 1


def _softmax(z, mask):
    z = np.where(mask, z, -np.inf)
    e = np.exp(z - z.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


def dla_weights(scores, logits_per_pos, mask, max_weight=np.inf):
    """Inverse propensity weights (relative to position 1) and inverse relevance
    weights (relative to the top-scored displayed document)."""
    p_exam = _softmax(logits_per_pos, mask)
    p_rel = _softmax(scores, mask)
    safe_exam = np.where(mask, p_exam, 1.0)
    safe_rel = np.where(mask, p_rel, 1.0)
    inv_prop = np.minimum(p_exam[:, :1] / safe_exam, max_weight) * mask
    inv_rel = np.minimum(p_rel.max(axis=1, keepdims=True) / safe_rel, max_weight) * mask
    return inv_prop, inv_rel


def dla_losses(scores, logits, contexts, clicks, mask, max_weight=np.inf):
    """Both DLA losses with gradients: (rank_loss, score_grads, exam_loss, logit_grads)."""
    pos_logits = np.asarray(logits)[contexts]
    inv_prop, inv_rel = dla_weights(scores, pos_logits, mask, max_weight)
    rank_loss, g_scores = losses.weighted_softmax_loss(scores, clicks * inv_prop, mask)
    exam_loss, g_pos = losses.weighted_softmax_loss(pos_logits, clicks * inv_rel, mask)
    g_logits = np.zeros(len(logits))
    np.add.at(g_logits, contexts[mask], g_pos[mask])
    return rank_loss, g_scores, exam_loss, g_logits


def dla_step(state: DlaState, features: np.ndarray, clicks: np.ndarray, mask: np.ndarray,
             contexts: np.ndarray, learning_rate: float, max_weight: float = np.inf,
             step: int | None = None):
    """One joint SGD step on a batch of sessions.

    ``features`` is (sessions, positions, D); padded positions are ignored.
    Returns ``(new_state, rank_loss, exam_loss)`` with losses averaged per session.
    """
    b = clicks.shape[0]
    flat, cache = forward(state.ranker, features[mask])
    scores = _scatter(flat, mask)
    rank_loss, g_scores, exam_loss, g_logits = dla_losses(
        scores, state.propensity_logits, contexts, clicks, mask, max_weight
    )
    ranker = apply_update(state.ranker, backward(state.ranker, cache, g_scores[mask] / b),
                          learning_rate, step)
    if not np.all(np.isfinite(g_logits)):
        raise TrainingError("non-finite propensity gradient", step)
    logits = state.propensity_logits - learning_rate * g_logits / b
    return DlaState(ranker, logits), rank_loss / b, exam_loss / b


# -- CLTR loop ---------------------------------------------------------------


def train_cltr(
    config: TrainConfig,
    log: ClickLog,
    groups: Sequence[QueryGroup],
    valid_groups: Sequence[QueryGroup],
    table: PropensityTable | None = None,
) -> TrainResult:
    """Train one CLTR kind for ``config.steps`` SGD steps, keeping the best
    validation nDCG@5 checkpoint (evaluated every ``config.eval_every`` steps)."""
    if config.loss_kind is None:
        raise ConfigurationError("TrainConfig.loss_kind is required")
    kind = config.loss_kind
    if kind.propensity_source is not None and table is None:
        raise ConfigurationError(f"{kind.value} needs a propensity table")
    if len(log) == 0:
        raise ConfigurationError("empty click log")

    data = SessionData.from_log(log, groups)
    params = init_params(data.features.shape[1], config.seed, config.hidden)
    rng = np.random.default_rng(config.seed)
    props = propensity_matrix(data.clicks, table) if table is not None else None
    is_dla = kind.family == "DLA"
    if is_dla:
        contexts = dla_contexts(data.clicks, data.mask, kind)
        state = DlaState(params, np.zeros(n_contexts(kind, data.clicks.shape[1])))

    sel = _Selector(valid_groups)
    sel.observe(0, params, float("nan"), state.propensity_logits if is_dla else None)
    running = []
    for step in range(1, config.steps + 1):
        idx = rng.integers(0, len(data), config.batch_size)
        if is_dla:
            m = data.mask[idx]
            state, rank_loss, _ = dla_step(
                state, data.features[np.maximum(data.rows[idx], 0)], data.clicks[idx], m,
                contexts[idx], config.learning_rate, config.max_weight, step,
            )
            params = state.ranker
            running.append(rank_loss)
        else:
            scores, m, cache = _batch_scores(params, data, idx)
            loss, g = click_loss(kind, scores, data.clicks[idx], m,
                                 None if props is None else props[idx])
            grads = backward(params, cache, g[m] / config.batch_size)
            params = apply_update(params, grads, config.learning_rate, step)
            running.append(loss / config.batch_size)
        if step % config.eval_every == 0 or step == config.steps:
            sel.observe(step, params, float(np.mean(running)),
                        state.propensity_logits.copy() if is_dla else None)
            running = []
    return sel.result()


def with_kind(config: TrainConfig, kind: LossKind | str) -> TrainConfig:
    return replace(config, loss_kind=LossKind(kind))
