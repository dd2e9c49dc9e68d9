"""Synthetic click logs under position-based, cascade and comparison-based users."""

from __future__ import annotations

import hashlib
import io
import json
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from .letor import MAX_LABEL, QueryGroup
from .mlp import MlpParams, rank_documents

DISPLAY_CUTOFF = 10
LOG_MAGIC = "# cltrsim click log v1"
MODELS = ("PBM", "DCM", "CBCM")


@dataclass(frozen=True)
class SimParams:
    model: str = "PBM"
    epsilon: float = 0.1
    eta: float = 1.0
    beta: float = 0.6
    g: float = 6.6
    w: float = 0.4
    viewport_size: int = 2

    def __post_init__(self):
        if self.model not in MODELS:
            raise ValueError(f"unknown click model {self.model!r}; expected one of {MODELS}")
        if not 0 <= self.epsilon <= 1:
            raise ValueError("epsilon must lie in [0, 1]")
        if self.eta < 0:
            raise ValueError("eta must be non-negative")
        if not 0 <= self.beta <= 1 or not 0 <= self.w <= 1:
            raise ValueError("beta and w must lie in [0, 1]")
        if self.viewport_size < 1:
            raise ValueError("viewport_size must be >= 1")

    @classmethod
    def pbm(cls, **kw) -> "SimParams":
        return cls(model="PBM", **kw)

    @classmethod
    def dcm(cls, **kw) -> "SimParams":
        return cls(model="DCM", **kw)

    @classmethod
    def cbcm(cls, g: float = 6.6, **kw) -> "SimParams":
        kw.setdefault("eta", 0.75)
        return cls(model="CBCM", g=g, **kw)

    @classmethod
    def from_dict(cls, d: dict) -> "SimParams":
        d = dict(d)
        model = d.pop("model", "PBM").upper()
        return {"PBM": cls.pbm, "DCM": cls.dcm, "CBCM": cls.cbcm}[model](**d)

    @property
    def name(self) -> str:
        """Short label; non-default parameters are appended."""
        default = SimParams.from_dict({"model": self.model})
        extras = [
            f"{k}{v:g}"
            for k, v in asdict(self).items()
            if k != "model" and v != getattr(default, k)
        ]
        return "-".join([self.model, *extras])


def perceived_relevance_prob(label, epsilon: float):
    y = np.asarray(label)
    if np.any((y < 0) | (y > MAX_LABEL)):
        raise ValueError(f"labels must lie in [0, {MAX_LABEL}]")
    return epsilon + (1.0 - epsilon) * (2.0**y - 1.0) / (2.0**MAX_LABEL - 1.0)


def pbm_exam_prob(rank, eta: float):
    r = np.asarray(rank)
    if np.any(r < 1):
        raise ValueError("ranks are 1-based")
    return (1.0 / r) ** eta


def dcm_continuation_prob(last_click_rank, beta: float, eta: float):
    return beta * pbm_exam_prob(last_click_rank, eta)


def cbcm_click_distribution(viewport_docs: Sequence[tuple[int, int, bool]], params: SimParams):
    """Choice probabilities inside a viewport.

    ``viewport_docs`` holds ``(label, rank, clicked)`` triples. Returns
    ``(per_doc_probs, no_click_prob)``.
    """
    if len(viewport_docs) == 0:
        raise ValueError("empty viewport")
    if len(viewport_docs) > params.viewport_size:
        raise ValueError("more documents than the viewport holds")
    y, rank, clicked = (np.asarray(c, dtype=float) for c in zip(*viewport_docs))
    logits = np.append(y + pbm_exam_prob(rank, params.eta) - 4.0 * clicked, params.g)
    logits -= logits.max()
    p = np.exp(logits)
    p /= p.sum()
    return p[:-1], float(p[-1])


def _cbcm_session(labels: np.ndarray, params: SimParams, rng: np.random.Generator) -> np.ndarray:
    n = len(labels)
    clicked = np.zeros(n, dtype=bool)
    ranks = np.arange(1, n + 1)
    top = 0
    while True:
        idx = np.arange(top, min(top + params.viewport_size, n))
        probs, _ = cbcm_click_distribution(
            list(zip(labels[idx], ranks[idx], clicked[idx])), params
        )
        choice = rng.choice(len(idx) + 1, p=np.append(probs, 1.0 - probs.sum()))
        if choice == len(idx):
            # no click: slide down one position, stop once the last position was shown
            if top + params.viewport_size >= n:
                break
            top += 1
            continue
        pos = idx[choice]
        clicked[pos] = True
        leave = params.w * (2.0 ** labels[pos] - 1.0) / (2.0**MAX_LABEL - 1.0)
        if rng.random() < leave:
            break
    return clicked.astype(np.int8)


def simulate_sessions(
    params: SimParams, labels: Sequence[int], n_sessions: int, rng: np.random.Generator
) -> np.ndarray:
    """Clicks for ``n_sessions`` visits to one displayed list; shape (n_sessions, len(labels))."""
    labels = np.asarray(labels, dtype=np.int64)
    n = len(labels)
    if n == 0:
        raise ValueError("nothing displayed")
    if n > DISPLAY_CUTOFF:
        raise ValueError(f"at most {DISPLAY_CUTOFF} documents are displayed")
    rel = perceived_relevance_prob(labels, params.epsilon)
    ranks = np.arange(1, n + 1)

    if params.model == "PBM":
        exam = rng.random((n_sessions, n)) < pbm_exam_prob(ranks, params.eta)
        attract = rng.random((n_sessions, n)) < rel
        return (exam & attract).astype(np.int8)

    if params.model == "DCM":
        lam = dcm_continuation_prob(ranks, params.beta, params.eta)
        clicks = np.zeros((n_sessions, n), dtype=np.int8)
        alive = np.ones(n_sessions, dtype=bool)
        for i in range(n):
            c = alive & (rng.random(n_sessions) < rel[i])
            clicks[:, i] = c
            carry_on = rng.random(n_sessions) < lam[i]
            alive = alive & (~c | carry_on)
        return clicks

    return np.stack([_cbcm_session(labels, params, rng) for _ in range(n_sessions)])


def simulate_session(params: SimParams, labels: Sequence[int], rng: np.random.Generator) -> np.ndarray:
    return simulate_sessions(params, labels, 1, rng)[0]


def query_rng(seed: int, query_id: str) -> np.random.Generator:
    """Generator keyed on (seed, query_id), independent of iteration order."""
    key = int.from_bytes(hashlib.sha256(query_id.encode("utf-8")).digest()[:8], "little")
    return np.random.default_rng([seed, key])


@dataclass(frozen=True)
class Session:
    query_id: str
    ordering: np.ndarray
    clicks: np.ndarray


@dataclass(eq=False)
class ClickLog:
    """Sessions stored column-wise; orderings and clicks are padded with -1 / 0."""

    query_ids: list[str]  # one entry per session
    orderings: np.ndarray  # (n_sessions, cutoff) int, -1 past the displayed length
    clicks: np.ndarray  # (n_sessions, cutoff) int8
    sessions_per_query: int
    sim_params: SimParams
    seed: int

    def __post_init__(self):
        self.orderings = np.asarray(self.orderings, dtype=np.int64)
        self.clicks = np.asarray(self.clicks, dtype=np.int8)
        if self.orderings.shape != self.clicks.shape or len(self.query_ids) != len(self.orderings):
            raise ValueError("inconsistent click log arrays")

    def __len__(self) -> int:
        return len(self.query_ids)

    @property
    def lengths(self) -> np.ndarray:
        return (self.orderings >= 0).sum(axis=1)

    @property
    def mask(self) -> np.ndarray:
        return self.orderings >= 0

    def __iter__(self) -> Iterator[Session]:
        for qid, order, clicks, n in zip(self.query_ids, self.orderings, self.clicks, self.lengths):
            yield Session(qid, order[:n], clicks[:n])

    @property
    def sessions(self) -> list[Session]:
        return list(self)

    def to_text(self) -> str:
        buf = io.StringIO()
        buf.write(LOG_MAGIC + "\n")
        buf.write("# sim_params " + json.dumps(asdict(self.sim_params), sort_keys=True) + "\n")
        buf.write(f"# seed {self.seed}\n")
        buf.write(f"# sessions_per_query {self.sessions_per_query}\n")
        buf.write("query_id,ranking,clicks\n")
        for s in self:
            buf.write(
                f"{s.query_id},{'|'.join(map(str, s.ordering))},{'|'.join(map(str, s.clicks))}\n"
            )
        return buf.getvalue()

    def save(self, path: str | Path) -> None:
        Path(path).write_bytes(self.to_text().encode("utf-8"))

    @classmethod
    def from_text(cls, text: str, cutoff: int = DISPLAY_CUTOFF) -> "ClickLog":
        lines = text.splitlines()
        if not lines or lines[0] != LOG_MAGIC:
            raise ValueError("not a click log file")
        meta = {}
        body_start = 1
        while body_start < len(lines) and lines[body_start].startswith("# "):
            key, _, value = lines[body_start][2:].partition(" ")
            meta[key] = value
            body_start += 1
        if lines[body_start] != "query_id,ranking,clicks":
            raise ValueError("missing click log column header")
        rows = [ln.rsplit(",", 2) for ln in lines[body_start + 1 :] if ln]
        orderings = np.full((len(rows), cutoff), -1, dtype=np.int64)
        clicks = np.zeros((len(rows), cutoff), dtype=np.int8)
        for i, (_, ranking, c) in enumerate(rows):
            order = [int(t) for t in ranking.split("|")]
            orderings[i, : len(order)] = order
            clicks[i, : len(order)] = [int(t) for t in c.split("|")]
        return cls(
            [r[0] for r in rows],
            orderings,
            clicks,
            int(meta["sessions_per_query"]),
            SimParams(**json.loads(meta["sim_params"])),
            int(meta["seed"]),
        )

    @classmethod
    def load(cls, path: str | Path) -> "ClickLog":
        return cls.from_text(Path(path).read_bytes().decode("utf-8"))


def generate_log(
    groups: Sequence[QueryGroup],
    ranker: MlpParams | None,
    n_sessions: int,
    params: SimParams,
    seed: int,
    cutoff: int = DISPLAY_CUTOFF,
    rankings: dict[str, np.ndarray] | None = None,
) -> ClickLog:
    """Rank every query, keep the top ``cutoff`` and simulate ``n_sessions`` visits each.

    ``rankings`` may supply precomputed orderings per query id instead of a ranker.
    """
    if n_sessions < 1:
        raise ValueError("n_sessions must be >= 1")
    if ranker is None and rankings is None:
        raise ValueError("need a ranker or precomputed rankings")
    qids: list[str] = []
    orderings, clicks = [], []
    for g in groups:
        order = rankings[g.query_id] if rankings is not None else rank_documents(ranker, g)
        shown = np.asarray(order[:cutoff])
        c = simulate_sessions(params, g.labels[shown], n_sessions, query_rng(seed, g.query_id))
        o = np.full((n_sessions, cutoff), -1, dtype=np.int64)
        o[:, : len(shown)] = shown
        padded = np.zeros((n_sessions, cutoff), dtype=np.int8)
        padded[:, : len(shown)] = c
        qids.extend([g.query_id] * n_sessions)
        orderings.append(o)
        clicks.append(padded)
    if not qids:
        empty = np.zeros((0, cutoff))
        return ClickLog([], empty - 1, empty, n_sessions, params, seed)
    return ClickLog(qids, np.concatenate(orderings), np.concatenate(clicks), n_sessions, params, seed)
