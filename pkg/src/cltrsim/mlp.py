"""Feed-forward scoring network: (linear -> layer norm -> elu) x 3 -> linear.

Forward and backward passes are written out by hand in numpy. Parameters are
immutable snapshots; every update returns a new ``MlpParams`` so a cache
produced by ``forward`` can never refer to parameters that changed under it.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

DEFAULT_HIDDEN = (512, 256, 128)
LN_EPS = 1e-6
CHECKPOINT_VERSION = 1


class TrainingError(RuntimeError):
    """A parameter update produced non-finite values."""

    def __init__(self, message: str, step: int | None = None):
        super().__init__(message if step is None else f"step {step}: {message}")
        self.step = step


@dataclass(frozen=True, eq=False)
class MlpParams:
    weights: tuple[np.ndarray, ...]  # hidden layers then output layer
    biases: tuple[np.ndarray, ...]
    gains: tuple[np.ndarray, ...]  # layer-norm gain per hidden layer
    shifts: tuple[np.ndarray, ...]  # layer-norm shift per hidden layer

    @property
    def feature_dim(self) -> int:
        return self.weights[0].shape[0]

    @property
    def hidden(self) -> tuple[int, ...]:
        return tuple(w.shape[1] for w in self.weights[:-1])

    def arrays(self) -> list[np.ndarray]:
        return [*self.weights, *self.biases, *self.gains, *self.shifts]

    def names(self) -> list[str]:
        n = len(self.weights)
        return (
            [f"W{i}" for i in range(n)]
            + [f"b{i}" for i in range(n)]
            + [f"gamma{i}" for i in range(n - 1)]
            + [f"beta{i}" for i in range(n - 1)]
        )

    def with_arrays(self, arrays: Sequence[np.ndarray]) -> "MlpParams":
        n = len(self.weights)
        h = n - 1
        arrays = list(arrays)
        return MlpParams(
            tuple(arrays[:n]),
            tuple(arrays[n : 2 * n]),
            tuple(arrays[2 * n : 2 * n + h]),
            tuple(arrays[2 * n + h :]),
        )

    def map(self, fn: Callable[..., np.ndarray], *others: "MlpParams") -> "MlpParams":
        return self.with_arrays(
            [fn(a, *rest) for a, *rest in zip(self.arrays(), *(o.arrays() for o in others))]
        )

    def flat(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in self.arrays()])

    def equals(self, other: "MlpParams") -> bool:
        mine, theirs = self.arrays(), other.arrays()
        return len(mine) == len(theirs) and all(
            a.shape == b.shape and np.array_equal(a, b) for a, b in zip(mine, theirs)
        )

    def save(self, file) -> None:
        """Write an ``.npz`` checkpoint to a path or binary file object."""
        payload = {f"p_{name}": a for name, a in zip(self.names(), self.arrays())}
        np.savez(
            file,
            version=np.array(CHECKPOINT_VERSION),
            layer_sizes=np.array([self.feature_dim, *self.hidden, 1]),
            **payload,
        )

    @classmethod
    def load(cls, path) -> "MlpParams":
        with np.load(path) as z:
            if int(z["version"]) != CHECKPOINT_VERSION:
                raise ValueError(f"unsupported checkpoint version {int(z['version'])}")
            sizes = z["layer_sizes"].tolist()
            template = init_params(sizes[0], 0, hidden=sizes[1:-1])
            return template.with_arrays([z[f"p_{n}"].copy() for n in template.names()])


def init_params(feature_dim: int, seed: int, hidden: Sequence[int] = DEFAULT_HIDDEN) -> MlpParams:
    """Glorot-normal weights (variance 2 / (fan_in + fan_out)), zero biases, unit gains."""
    if feature_dim < 1:
        raise ValueError(f"feature_dim must be >= 1, got {feature_dim}")
    if not hidden:
        raise ValueError("need at least one hidden layer")
    rng = np.random.default_rng(seed)
    sizes = [feature_dim, *hidden, 1]
    weights = tuple(
        rng.normal(0.0, np.sqrt(2.0 / (a + b)), size=(a, b)) for a, b in zip(sizes[:-1], sizes[1:])
    )
    biases = tuple(np.zeros(b) for b in sizes[1:])
    gains = tuple(np.ones(h) for h in hidden)
    shifts = tuple(np.zeros(h) for h in hidden)
    return MlpParams(weights, biases, gains, shifts)


def _elu(a):
    return np.where(a > 0, a, np.expm1(np.minimum(a, 0.0)))


def forward(params: MlpParams, x: np.ndarray):
    """Score each row of ``x``. Returns ``(scores, cache)``."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != params.feature_dim:
        raise ValueError(f"expected input of shape (n, {params.feature_dim}), got {x.shape}")
    h = x
    layers = []
    for W, b, gamma, beta in zip(params.weights, params.biases, params.gains, params.shifts):
        z = h @ W + b
        mu = z.mean(axis=1, keepdims=True)
        inv_std = 1.0 / np.sqrt(z.var(axis=1, keepdims=True) + LN_EPS)
        xhat = (z - mu) * inv_std
        a = gamma * xhat + beta
        layers.append((h, xhat, inv_std, a))
        h = _elu(a)
    scores = (h @ params.weights[-1] + params.biases[-1])[:, 0]
    return scores, (layers, h)


def backward(params: MlpParams, cache, score_grads: np.ndarray) -> MlpParams:
    """Gradient of ``sum(score_grads * scores)`` with respect to every parameter."""
    layers, h_last = cache
    g = np.asarray(score_grads, dtype=np.float64)
    if g.shape != (h_last.shape[0],):
        raise ValueError(f"score_grads shape {g.shape} does not match batch of {h_last.shape[0]}")
    n_hidden = len(layers)
    dW = [None] * (n_hidden + 1)
    db = [None] * (n_hidden + 1)
    dgamma = [None] * n_hidden
    dbeta = [None] * n_hidden

    dW[-1] = h_last.T @ g[:, None]
    db[-1] = np.array([g.sum()])
    dh = g[:, None] * params.weights[-1][:, 0]
    for i in range(n_hidden - 1, -1, -1):
        h_in, xhat, inv_std, a = layers[i]
        da = dh * np.where(a > 0, 1.0, np.exp(np.minimum(a, 0.0)))
        dgamma[i] = (da * xhat).sum(axis=0)
        dbeta[i] = da.sum(axis=0)
        dxhat = da * params.gains[i]
        dz = inv_std * (
            dxhat
            - dxhat.mean(axis=1, keepdims=True)
            - xhat * (dxhat * xhat).mean(axis=1, keepdims=True)
        )
        dW[i] = h_in.T @ dz
        db[i] = dz.sum(axis=0)
        if i > 0:
            dh = dz @ params.weights[i].T
    return MlpParams(tuple(dW), tuple(db), tuple(dgamma), tuple(dbeta))


def apply_update(
    params: MlpParams, grads: MlpParams, learning_rate: float, step: int | None = None
) -> MlpParams:
    """Plain SGD: theta - lr * g."""
    for name, gr in zip(grads.names(), grads.arrays()):
        if not np.all(np.isfinite(gr)):
            raise TrainingError(f"non-finite gradient in {name}", step)
    return params.map(lambda p, gr: p - learning_rate * gr, grads)


def score(params: MlpParams, x: np.ndarray) -> np.ndarray:
    return forward(params, x)[0]


def rank_by_scores(scores: np.ndarray) -> np.ndarray:
    """Descending score; ties keep ascending index."""
    return np.argsort(-np.asarray(scores), kind="stable")


def rank_documents(params: MlpParams, group) -> np.ndarray:
    return rank_by_scores(score(params, group.features))
