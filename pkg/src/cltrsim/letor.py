"""LETOR / SVMLight dataset handling.

Lines look like ``<label> qid:<id> <fid>:<val> ... # comment``. Feature ids are
1-based; missing ids are filled with 0.0. A query group keeps its documents as a
dense ``(n_docs, feature_dim)`` array, and a document's ``doc_index`` is its row.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, TextIO

import numpy as np

MAX_LABEL = 4


class LetorParseError(ValueError):
    """Raised for a malformed LETOR line; carries the 1-based line number."""

    def __init__(self, lineno: int, message: str):
        super().__init__(f"line {lineno}: {message}")
        self.lineno = lineno


@dataclass(frozen=True)
class Document:
    doc_index: int
    features: np.ndarray
    label: int


@dataclass(eq=False)
class QueryGroup:
    query_id: str
    features: np.ndarray  # (n_docs, feature_dim), float64
    labels: np.ndarray  # (n_docs,), int

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.features.ndim != 2 or self.features.shape[0] != self.labels.shape[0]:
            raise ValueError(
                f"query {self.query_id}: features {self.features.shape} "
                f"do not match labels {self.labels.shape}"
            )

    def __len__(self) -> int:
        return self.labels.shape[0]

    def __eq__(self, other) -> bool:
        if not isinstance(other, QueryGroup):
            return NotImplemented
        return (
            self.query_id == other.query_id
            and np.array_equal(self.labels, other.labels)
            and np.array_equal(self.features, other.features)
        )

    @property
    def feature_dim(self) -> int:
        return self.features.shape[1]

    @property
    def documents(self) -> list[Document]:
        return [
            Document(i, self.features[i], int(self.labels[i])) for i in range(len(self))
        ]


@dataclass
class DatasetSplit:
    train: list[QueryGroup]
    valid: list[QueryGroup]
    test: list[QueryGroup]
    feature_dim: int

    def __post_init__(self):
        seen: dict[str, str] = {}
        for part in ("train", "valid", "test"):
            for g in getattr(self, part):
                if g.query_id in seen:
                    raise ValueError(
                        f"query {g.query_id} appears in both {seen[g.query_id]} and {part}"
                    )
                seen[g.query_id] = part
                if g.feature_dim != self.feature_dim:
                    raise ValueError(
                        f"query {g.query_id} has {g.feature_dim} features, expected {self.feature_dim}"
                    )


def _parse_line(lineno: int, line: str):
    body = line.split("#", 1)[0].split()
    if not body:
        return None
    try:
        label = int(body[0])
    except ValueError:
        raise LetorParseError(lineno, f"bad label {body[0]!r}") from None
    if not 0 <= label <= MAX_LABEL:
        raise LetorParseError(lineno, f"label {label} outside [0, {MAX_LABEL}]")
    if len(body) < 2 or not body[1].startswith("qid:") or len(body[1]) == 4:
        raise LetorParseError(lineno, "missing qid")
    qid = body[1][4:]
    fids, vals = [], []
    last = 0
    for tok in body[2:]:
        fid_s, sep, val_s = tok.partition(":")
        if not sep:
            raise LetorParseError(lineno, f"bad feature token {tok!r}")
        try:
            fid = int(fid_s)
            val = float(val_s)
        except ValueError:
            raise LetorParseError(lineno, f"non-numeric feature token {tok!r}") from None
        if fid <= last:
            raise LetorParseError(lineno, f"feature ids not strictly increasing at {fid}")
        if not math.isfinite(val):
            raise LetorParseError(lineno, f"non-finite value in {tok!r}")
        last = fid
        fids.append(fid)
        vals.append(val)
    return label, qid, fids, vals


def parse_letor(lines: Iterable[str], feature_dim: int | None = None) -> list[QueryGroup]:
    """Parse LETOR text into query groups.

    Consecutive lines sharing a qid form one group. A qid that reappears after
    another qid starts a separate group, since the format never interleaves
    queries. If ``feature_dim`` is None it is taken as the largest feature id seen.
    """
    rows: list[tuple[int, str, list[int], list[float]]] = []
    max_fid = 0
    for lineno, line in enumerate(lines, start=1):
        parsed = _parse_line(lineno, line)
        if parsed is None:
            continue
        fids = parsed[2]
        if fids:
            if feature_dim is not None and fids[-1] > feature_dim:
                raise LetorParseError(
                    lineno, f"feature id {fids[-1]} exceeds dimension {feature_dim}"
                )
            max_fid = max(max_fid, fids[-1])
        rows.append(parsed)

    dim = feature_dim if feature_dim is not None else max_fid
    groups: list[QueryGroup] = []
    start = 0
    while start < len(rows):
        qid = rows[start][1]
        stop = start
        while stop < len(rows) and rows[stop][1] == qid:
            stop += 1
        feats = np.zeros((stop - start, dim))
        labels = np.empty(stop - start, dtype=np.int64)
        for i, (label, _, fids, vals) in enumerate(rows[start:stop]):
            labels[i] = label
            if fids:
                feats[i, np.asarray(fids) - 1] = vals
        groups.append(QueryGroup(qid, feats, labels))
        start = stop
    return groups


def read_letor(path: str | Path, feature_dim: int | None = None) -> list[QueryGroup]:
    with open(path, encoding="utf-8", newline=None) as f:
        return parse_letor(f, feature_dim)


def write_letor(groups: Iterable[QueryGroup], stream: TextIO) -> None:
    """Serialize groups; zero-valued features are omitted."""
    for g in groups:
        for label, row in zip(g.labels, g.features):
            nz = np.flatnonzero(row)
            toks = " ".join(f"{j + 1}:{float(row[j])!r}" for j in nz)
            stream.write(f"{int(label)} qid:{g.query_id}" + (f" {toks}" if toks else "") + "\n")


def filter_queries(groups: Iterable[QueryGroup]) -> list[QueryGroup]:
    """Drop queries with fewer than two documents or no relevant document."""
    return [g for g in groups if len(g) >= 2 and g.labels.max() > 0]


def subsample_labeled(groups: list[QueryGroup], fraction: float, seed: int) -> list[QueryGroup]:
    """Draw ``ceil(fraction * len(groups))`` whole queries without replacement."""
    if not 0.0 < fraction <= 1.0:
        raise ValueError(f"fraction must be in (0, 1], got {fraction}")
    if not groups:
        raise ValueError("cannot subsample an empty group list")
    # guard against 0.2 * 100 = 20.000000000000004
    n = min(len(groups), math.ceil(round(fraction * len(groups), 9)))
    rng = np.random.default_rng(seed)
    picked = rng.choice(len(groups), size=n, replace=False)
    return [groups[i] for i in picked]


@dataclass
class MinMaxScaler:
    """Per-feature min/max learned on training queries; transform clamps to [0, 1]."""

    mins: np.ndarray = field(default_factory=lambda: np.zeros(0))
    maxs: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @classmethod
    def fit(cls, groups: Iterable[QueryGroup]) -> "MinMaxScaler":
        stacked = np.concatenate([g.features for g in groups], axis=0)
        return cls(stacked.min(axis=0), stacked.max(axis=0))

    def transform_array(self, x: np.ndarray) -> np.ndarray:
        span = self.maxs - self.mins
        safe = np.where(span > 0, span, 1.0)
        out = np.clip((x - self.mins) / safe, 0.0, 1.0)
        out[:, span <= 0] = 0.0
        return out

    def transform(self, groups: Iterable[QueryGroup]) -> list[QueryGroup]:
        return [
            QueryGroup(g.query_id, self.transform_array(g.features), g.labels.copy())
            for g in groups
        ]

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as f:
            w = csv.writer(f, lineterminator="\n")
            w.writerow(["feature_id", "min", "max"])
            for j, (lo, hi) in enumerate(zip(self.mins, self.maxs), start=1):
                w.writerow([j, repr(float(lo)), repr(float(hi))])

    @classmethod
    def from_csv(cls, path: str | Path) -> "MinMaxScaler":
        with open(path, newline="") as f:
            rows = list(csv.DictReader(f))
        return cls(
            np.array([float(r["min"]) for r in rows]),
            np.array([float(r["max"]) for r in rows]),
        )


def normalize_features(groups: list[QueryGroup]) -> tuple[list[QueryGroup], MinMaxScaler]:
    if not groups:
        raise ValueError("cannot fit a scaler on zero groups")
    scaler = MinMaxScaler.fit(groups)
    return scaler.transform(groups), scaler


def load_split(
    train: str | Path, valid: str | Path, test: str | Path, feature_dim: int | None = None
) -> tuple[DatasetSplit, MinMaxScaler]:
    """Read, filter and min-max normalize a train/valid/test triple."""
    parts = [read_letor(p, feature_dim) for p in (train, valid, test)]
    dim = feature_dim or max((g.feature_dim for part in parts for g in part), default=0)
    parts = [[_pad(g, dim) for g in filter_queries(part)] for part in parts]
    train_g, scaler = normalize_features(parts[0])
    return (
        DatasetSplit(train_g, scaler.transform(parts[1]), scaler.transform(parts[2]), dim),
        scaler,
    )


def _pad(g: QueryGroup, dim: int) -> QueryGroup:
    # inferred dimensions can differ per file when trailing features are all zero
    if g.feature_dim == dim:
        return g
    feats = np.zeros((len(g), dim))
    feats[:, : g.feature_dim] = g.features
    return QueryGroup(g.query_id, feats, g.labels)


def make_toy_dataset(
    n_train: int = 200,
    n_valid: int = 50,
    n_test: int = 50,
    feature_dim: int = 16,
    docs_per_query: tuple[int, int] = (12, 30),
    noise: float = 0.5,
    seed: int = 0,
) -> DatasetSplit:
    """Synthetic LETOR data: labels are a noisy monotone function of a linear projection.

    Each query draws its own offset so per-query label distributions differ, and
    every query has more candidates than the display cutoff of 10.
    """
    rng = np.random.default_rng(seed)
    w = rng.normal(size=feature_dim)
    w /= np.linalg.norm(w)
    thresholds = np.array([0.6, 1.3, 1.9, 2.4])

    def one_part(prefix: str, n: int) -> list[QueryGroup]:
        out = []
        while len(out) < n:
            n_docs = int(rng.integers(docs_per_query[0], docs_per_query[1] + 1))
            x = rng.normal(size=(n_docs, feature_dim)) + rng.normal(scale=0.5, size=feature_dim)
            latent = x @ w + rng.normal(scale=noise, size=n_docs)
            labels = np.searchsorted(thresholds, latent)
            g = QueryGroup(f"{prefix}{len(out)}", x, labels)
            if filter_queries([g]):
                out.append(g)
        return out

    return DatasetSplit(
        one_part("tr", n_train), one_part("va", n_valid), one_part("te", n_test), feature_dim
    )
