"""Offline examination-propensity estimation from click logs."""

from __future__ import annotations

import csv
import hashlib
import io
from dataclasses import dataclass, field
from pathlib import Path
from typing import Protocol, Sequence

import numpy as np

from .click_sim import DISPLAY_CUTOFF, ClickLog, Session
from .letor import QueryGroup
from .mlp import MlpParams, backward, forward, init_params

DEFAULT_FLOOR = 0.05
KINDS = ("PBM_rho", "DCM_lambda")
_TINY = 1e-12


class EstimationError(ValueError):
    pass


@dataclass(eq=False)
class PropensityTable:
    kind: str
    values: np.ndarray  # index k holds rank k + 1
    floor: float = DEFAULT_FLOOR
    source: str = ""  # checksum of the log the table was fit on

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown propensity kind {self.kind!r}")
        if self.floor <= 0:
            raise ValueError("floor must be positive")
        self.values = np.clip(np.asarray(self.values, dtype=np.float64), self.floor, 1.0)

    @classmethod
    def pbm_oracle(cls, eta: float = 1.0, n: int = DISPLAY_CUTOFF, floor: float = DEFAULT_FLOOR):
        return cls("PBM_rho", (1.0 / np.arange(1, n + 1)) ** eta, floor, "oracle")

    @classmethod
    def dcm_oracle(cls, beta: float = 0.6, eta: float = 1.0, n: int = DISPLAY_CUTOFF,
                   floor: float = DEFAULT_FLOOR):
        return cls("DCM_lambda", beta * (1.0 / np.arange(1, n + 1)) ** eta, floor, "oracle")

    def to_text(self) -> str:
        buf = io.StringIO()
        buf.write(f"# kind {self.kind}\n# floor {self.floor!r}\n# source {self.source}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["rank", "value"])
        for k, v in enumerate(self.values, start=1):
            w.writerow([k, repr(float(v))])
        return buf.getvalue()

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_text())

    @classmethod
    def load(cls, path: str | Path) -> "PropensityTable":
        meta, rows = {}, []
        with open(path, newline="") as f:
            for line in f:
                if line.startswith("# "):
                    key, _, value = line[2:].rstrip("\n").partition(" ")
                    meta[key] = value
                elif not line.startswith("rank,"):
                    rows.append(float(line.rstrip("\n").split(",")[1]))
        return cls(meta["kind"], np.array(rows), float(meta["floor"]), meta.get("source", ""))


def log_checksum(log: ClickLog) -> str:
    return hashlib.sha256(log.to_text().encode("utf-8")).hexdigest()[:16]


# -- sufficient statistics ---------------------------------------------------


@dataclass
class PbmStats:
    """Click/skip counts per distinct (query, document, rank) impression."""

    pair: np.ndarray  # pair index into ``pair_keys``
    rank: np.ndarray  # 0-based rank
    clicks: np.ndarray
    skips: np.ndarray
    pair_keys: list[tuple[str, int]] = field(default_factory=list)
    n_ranks: int = DISPLAY_CUTOFF

    @classmethod
    def from_log(cls, log: ClickLog) -> "PbmStats":
        if len(log) == 0:
            raise EstimationError("click log has no sessions")
        n_ranks = log.orderings.shape[1]
        qidx_of: dict[str, int] = {}
        q = np.array([qidx_of.setdefault(qid, len(qidx_of)) for qid in log.query_ids])
        mask = log.mask
        s_idx, k_idx = np.nonzero(mask)
        doc = log.orderings[s_idx, k_idx]
        max_doc = int(doc.max()) + 1
        raw_pair = q[s_idx] * max_doc + doc
        pair_ids, pair = np.unique(raw_pair, return_inverse=True)
        key = pair * n_ranks + k_idx
        uniq, inv = np.unique(key, return_inverse=True)
        c = log.clicks[s_idx, k_idx].astype(np.float64)
        clicks = np.bincount(inv, weights=c, minlength=len(uniq))
        imps = np.bincount(inv, minlength=len(uniq)).astype(np.float64)
        qids = list(qidx_of)
        keys = [(qids[int(p // max_doc)], int(p % max_doc)) for p in pair_ids]
        return cls(uniq // n_ranks, uniq % n_ranks, clicks, imps - clicks, keys, n_ranks)

    @property
    def n_pairs(self) -> int:
        return len(self.pair_keys)

    def rank_impressions(self) -> np.ndarray:
        return np.bincount(self.rank, weights=self.clicks + self.skips, minlength=self.n_ranks)


def pbm_posteriors(rho_rows: np.ndarray, attr_rows: np.ndarray):
    """P(examined | skip) and P(attractive | skip); a click fixes both to 1."""
    denom = np.maximum(1.0 - rho_rows * attr_rows, _TINY)
    return rho_rows * (1.0 - attr_rows) / denom, attr_rows * (1.0 - rho_rows) / denom


def update_rho(stats: PbmStats, post_exam: np.ndarray, previous: np.ndarray) -> np.ndarray:
    num = np.bincount(stats.rank, weights=stats.clicks + stats.skips * post_exam,
                      minlength=stats.n_ranks)
    den = stats.rank_impressions()
    return np.where(den > 0, num / np.maximum(den, _TINY), previous)


def pbm_log_likelihood(stats: PbmStats, rho: np.ndarray, attraction: np.ndarray) -> float:
    p = np.clip(rho[stats.rank] * attraction[stats.pair], _TINY, 1 - _TINY)
    return float(stats.clicks @ np.log(p) + stats.skips @ np.log1p(-p))


@dataclass
class PbmFit:
    rho: np.ndarray
    attraction: np.ndarray
    log_likelihood: list[float]
    iterations: int


def fit_pbm_em(
    stats: PbmStats,
    max_iter: int = 50,
    tol: float = 1e-5,
    init_rho: np.ndarray | float = 0.5,
    init_attraction: np.ndarray | float = 0.5,
) -> PbmFit:
    """Standard EM for the position-based model on aggregated counts."""
    rho = np.broadcast_to(np.asarray(init_rho, dtype=np.float64), (stats.n_ranks,)).copy()
    attr = np.broadcast_to(np.asarray(init_attraction, dtype=np.float64), (stats.n_pairs,)).copy()
    pair_imps = np.bincount(stats.pair, weights=stats.clicks + stats.skips, minlength=stats.n_pairs)
    history = [pbm_log_likelihood(stats, rho, attr)]
    it = 0
    for it in range(1, max_iter + 1):
        post_e, post_a = pbm_posteriors(rho[stats.rank], attr[stats.pair])
        new_rho = update_rho(stats, post_e, rho)
        new_attr = np.bincount(stats.pair, weights=stats.clicks + stats.skips * post_a,
                               minlength=stats.n_pairs) / np.maximum(pair_imps, _TINY)
        delta = max(np.abs(new_rho - rho).max(), np.abs(new_attr - attr).max())
        rho, attr = new_rho, new_attr
        history.append(pbm_log_likelihood(stats, rho, attr))
        if delta < tol:
            break
    return PbmFit(rho, attr, history, it)


def _rho_table(rho: np.ndarray, stats: PbmStats, floor: float, source: str) -> PropensityTable:
    seen = stats.rank_impressions() > 0
    ratio = np.where(seen, rho / max(rho[0], _TINY), floor)
    return PropensityTable("PBM_rho", ratio, floor, source)


def em_pbm(log: ClickLog, floor: float = DEFAULT_FLOOR, **fit_kw) -> PropensityTable:
    stats = PbmStats.from_log(log)
    fit = fit_pbm_em(stats, **fit_kw)
    return _rho_table(fit.rho, stats, floor, log_checksum(log))


# -- Regression-EM -----------------------------------------------------------


class AttractionModel(Protocol):
    def predict(self, x: np.ndarray) -> np.ndarray: ...

    def fit(self, x: np.ndarray, target: np.ndarray, weight: np.ndarray) -> None: ...


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


class AttractionRegressor:
    """Small scoring network with a sigmoid output, fit by weighted cross-entropy.

    Each ``fit`` call continues from the current weights, so successive
    M-steps warm-start.
    """

    def __init__(self, feature_dim: int, hidden: Sequence[int] = (32, 16), seed: int = 0,
                 learning_rate: float = 0.5, steps_per_fit: int = 25):
        self.params: MlpParams = init_params(feature_dim, seed, hidden)
        self.learning_rate = learning_rate
        self.steps_per_fit = steps_per_fit

    def predict(self, x: np.ndarray) -> np.ndarray:
        return _sigmoid(forward(self.params, x)[0])

    def fit(self, x: np.ndarray, target: np.ndarray, weight: np.ndarray) -> None:
        w = weight / weight.sum()
        for _ in range(self.steps_per_fit):
            logits, cache = forward(self.params, x)
            grads = backward(self.params, cache, w * (_sigmoid(logits) - target))
            self.params = self.params.map(lambda p, g: p - self.learning_rate * g, grads)


def regression_em_pbm(
    log: ClickLog,
    groups: Sequence[QueryGroup],
    floor: float = DEFAULT_FLOOR,
    regressor: AttractionModel | None = None,
    max_iter: int = 50,
    tol: float = 1e-5,
    init_rho: np.ndarray | float = 0.5,
    seed: int = 0,
):
    """PBM estimation where attraction is a shared function of document features.

    Returns ``(table, regressor)``.
    """
    stats = PbmStats.from_log(log)
    by_qid = {g.query_id: g for g in groups}
    try:
        x = np.stack([by_qid[q].features[d] for q, d in stats.pair_keys])
    except KeyError as e:
        raise EstimationError(f"query {e.args[0]} in the log has no feature data") from None
    if regressor is None:
        regressor = AttractionRegressor(x.shape[1], seed=seed)
    pair_imps = np.bincount(stats.pair, weights=stats.clicks + stats.skips, minlength=stats.n_pairs)
    rho = np.broadcast_to(np.asarray(init_rho, dtype=np.float64), (stats.n_ranks,)).copy()
    for _ in range(max_iter):
        attr = np.clip(regressor.predict(x), 0.0, 1.0)
        post_e, post_a = pbm_posteriors(rho[stats.rank], attr[stats.pair])
        new_rho = update_rho(stats, post_e, rho)
        target = np.bincount(stats.pair, weights=stats.clicks + stats.skips * post_a,
                             minlength=stats.n_pairs) / np.maximum(pair_imps, _TINY)
        regressor.fit(x, target, pair_imps)
        delta = np.abs(new_rho - rho).max()
        rho = new_rho
        if delta < tol:
            break
    return _rho_table(rho, stats, floor, log_checksum(log)), regressor


# -- DCM ---------------------------------------------------------------------


def mle_dcm(log: ClickLog, floor: float = DEFAULT_FLOOR) -> PropensityTable:
    """lambda_r = (clicks at r followed by a later click) / (clicks at r)."""
    if len(log) == 0:
        raise EstimationError("click log has no sessions")
    clicks = log.clicks.astype(bool) & log.mask
    n_ranks = clicks.shape[1]
    pos = np.arange(n_ranks)
    last = np.where(clicks.any(axis=1), np.where(clicks, pos, -1).max(axis=1), -1)
    not_last = clicks & (pos[None, :] < last[:, None])
    den = clicks.sum(axis=0)
    num = not_last.sum(axis=0)
    lam = np.where(den > 0, num / np.maximum(den, 1), floor)
    return PropensityTable("DCM_lambda", lam, floor, log_checksum(log))


# -- lookup ------------------------------------------------------------------


def last_click_ranks(clicks: np.ndarray) -> np.ndarray:
    """1-based rank of the last click strictly before each position; 0 if none."""
    clicks = np.atleast_2d(clicks)
    ranks = np.arange(1, clicks.shape[1] + 1)
    upto = np.maximum.accumulate(np.where(clicks > 0, ranks, 0), axis=1)
    prev = np.zeros_like(upto)
    prev[:, 1:] = upto[:, :-1]
    return prev


def propensity_matrix(clicks: np.ndarray, table: PropensityTable) -> np.ndarray:
    """Per-position propensities for a (sessions, positions) click matrix."""
    clicks = np.atleast_2d(clicks)
    n = clicks.shape[1]
    if table.kind == "PBM_rho":
        vals = np.broadcast_to(table.values[:n], clicks.shape)
    else:
        prev = last_click_ranks(clicks)
        vals = np.where(prev > 0, table.values[np.maximum(prev, 1) - 1], 1.0)
    return np.maximum(vals, table.floor)


def session_propensity(session: Session, position: int, table: PropensityTable) -> float:
    """Examination propensity of the 1-based ``position`` in ``session``."""
    if not 1 <= position <= len(session.clicks):
        raise ValueError(f"position {position} outside the displayed list")
    return float(propensity_matrix(session.clicks[None, :], table)[0, position - 1])
