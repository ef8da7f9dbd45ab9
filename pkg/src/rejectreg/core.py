"""Domain types, error classes, seeding and evaluation shared by all modules."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence, Union

import numpy as np


class RejectRegError(Exception):
    """Base class for every error raised by this package."""


class EmptyInputError(RejectRegError, ValueError):
    pass


class NonFiniteError(RejectRegError, ValueError):
    def __init__(self, row: int, message: str | None = None):
        self.row = row
        super().__init__(message or f"non-finite value in row {row}")


class DimensionMismatchError(RejectRegError, ValueError):
    def __init__(self, expected: int, got: int, row: int | None = None):
        self.expected = expected
        self.got = got
        self.row = row
        where = f" at row {row}" if row is not None else ""
        super().__init__(f"dimension mismatch{where}: expected {expected}, got {got}")


class KOutOfRangeError(RejectRegError, ValueError):
    pass


class EpsilonOutOfRangeError(RejectRegError, ValueError):
    pass


class NegativeUError(RejectRegError, ValueError):
    pass


class TooSmallError(RejectRegError, ValueError):
    pass


class GridInfeasibleError(RejectRegError, ValueError):
    pass


# ---------------------------------------------------------------------------
# seeding

def seed_sequence(seed: int, *path: int) -> np.random.SeedSequence:
    """Named child stream of ``seed``.

    ``path`` plays the role of a spawn key so that e.g. ``(rep, STREAM_ZETA)``
    always yields the same independent stream regardless of call order.
    """
    if not 0 <= int(seed) < 2**64:
        raise ValueError(f"seed must be a 64-bit unsigned integer, got {seed}")
    return np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(p) for p in path))


def make_rng(seed: int, *path: int) -> np.random.Generator:
    """Counter-based (Philox) generator for the stream ``seed/path``."""
    return np.random.Generator(np.random.Philox(seed_sequence(seed, *path)))


# stream identifiers, kept stable so reports stay reproducible across versions
STREAM_SPLIT = 1
STREAM_CV = 2
STREAM_ZETA_CAL = 3
STREAM_ZETA_QUERY = 4
STREAM_SAMPLE = 5
STREAM_MC = 6
STREAM_REP = 7


# ---------------------------------------------------------------------------
# datasets

def _as_matrix(points, name: str = "points") -> np.ndarray:
    if isinstance(points, (list, tuple)) and points and np.ndim(points[0]) == 1:
        d = len(points[0])
        for i, p in enumerate(points):
            if len(p) != d:
                raise DimensionMismatchError(d, len(p), row=i)
    X = np.asarray(points, dtype=np.float64)
    if X.ndim == 1:
        X = X.reshape(-1, 1)
    if X.ndim != 2:
        raise ValueError(f"{name} must be a 2-d array")
    return X


@dataclass(frozen=True)
class LabeledDataset:
    """Labeled sample: features ``X`` of shape (n, d) and labels ``y`` of shape (n,)."""

    X: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        X = _as_matrix(self.X, "X")
        y = np.asarray(self.y, dtype=np.float64).reshape(-1)
        if X.shape[0] == 0:
            raise EmptyInputError("dataset is empty")
        if X.shape[0] != y.shape[0]:
            raise ValueError(f"X has {X.shape[0]} rows but y has {y.shape[0]}")
        bad = ~(np.isfinite(X).all(axis=1) & np.isfinite(y))
        if bad.any():
            raise NonFiniteError(int(np.flatnonzero(bad)[0]))
        X.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def dimension(self) -> int:
        return self.X.shape[1]

    def subset(self, idx) -> "LabeledDataset":
        return LabeledDataset(self.X[idx], self.y[idx])

    def features(self) -> "FeatureSet":
        return FeatureSet(self.X)


@dataclass(frozen=True)
class FeatureSet:
    """Unlabeled sample of shape (N, d)."""

    X: np.ndarray

    def __post_init__(self):
        X = _as_matrix(self.X, "X")
        if X.shape[0] == 0:
            raise EmptyInputError("feature set is empty")
        bad = ~np.isfinite(X).all(axis=1)
        if bad.any():
            raise NonFiniteError(int(np.flatnonzero(bad)[0]))
        X.setflags(write=False)
        object.__setattr__(self, "X", X)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def dimension(self) -> int:
        return self.X.shape[1]


def validate_dataset(rows: Sequence) -> LabeledDataset:
    """Build a :class:`LabeledDataset` from ``(features, label)`` rows.

    Raises
    ------
    EmptyInputError
        If ``rows`` is empty.
    DimensionMismatchError
        If a row's feature length differs from the first row's.
    NonFiniteError
        If a feature or label is NaN or infinite.
    """
    rows = list(rows)
    if not rows:
        raise EmptyInputError("no rows")
    d = None
    feats, labels = [], []
    for i, (x, y) in enumerate(rows):
        x = np.atleast_1d(np.asarray(x, dtype=np.float64))
        if d is None:
            d = x.shape[0]
        elif x.shape[0] != d:
            raise DimensionMismatchError(d, x.shape[0], row=i)
        y = float(y)
        if not (np.isfinite(x).all() and math.isfinite(y)):
            raise NonFiniteError(i)
        feats.append(x)
        labels.append(y)
    return LabeledDataset(np.vstack(feats), np.array(labels))


def check_query(X, dimension: int) -> np.ndarray:
    """Coerce queries to an (m, d) float array and check the dimension."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X.reshape(1, -1) if dimension != 1 or X.size == 1 else X.reshape(-1, 1)
    if X.ndim != 2:
        raise ValueError("queries must be a 1-d or 2-d array")
    if X.shape[1] != dimension:
        raise DimensionMismatchError(dimension, X.shape[1])
    if not np.isfinite(X).all():
        raise NonFiniteError(int(np.flatnonzero(~np.isfinite(X).all(axis=1))[0]))
    return np.ascontiguousarray(X)


# ---------------------------------------------------------------------------
# outcomes

class _Abstain:
    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self):
        return "Abstain"

    def __reduce__(self):
        return (_Abstain, ())


Abstain = _Abstain()


@dataclass(frozen=True)
class Predict:
    value: float

    def __post_init__(self):
        if not math.isfinite(self.value):
            raise NonFiniteError(0, f"prediction must be finite, got {self.value}")


RejectOutcome = Union[_Abstain, Predict]


def outcomes_from_arrays(accept: np.ndarray, values: np.ndarray) -> list:
    return [Predict(float(v)) if a else Abstain for a, v in zip(accept, values)]


@dataclass(frozen=True)
class EvaluationReport:
    err_accepted: Optional[float]
    reject_rate: float
    n_eval: int
    n_accepted: int
    penalized_risk: Optional[float] = None


def evaluate(outcomes: Iterable, lam: float | None = None) -> EvaluationReport:
    """Empirical error on accepted points, rejection rate and penalized risk.

    ``outcomes`` is an iterable of ``(RejectOutcome, true_label)`` pairs.
    ``err_accepted`` is ``None`` when every point was rejected.
    """
    pairs = list(outcomes)
    if not pairs:
        raise EmptyInputError("no outcomes to evaluate")
    accept = np.array([o is not Abstain for o, _ in pairs])
    pred = np.array([o.value if o is not Abstain else 0.0 for o, _ in pairs])
    y = np.array([float(t) for _, t in pairs])
    return evaluate_arrays(accept, pred, y, lam)


def evaluate_arrays(accept, predictions, y, lam: float | None = None) -> EvaluationReport:
    """Vectorized :func:`evaluate`; ``predictions`` is ignored where not accepted."""
    accept = np.asarray(accept, dtype=bool)
    y = np.asarray(y, dtype=np.float64)
    n = accept.shape[0]
    if n == 0:
        raise EmptyInputError("no outcomes to evaluate")
    if lam is not None and not lam >= 0:
        raise ValueError(f"lambda must be nonnegative, got {lam}")
    pred = np.where(accept, np.asarray(predictions, dtype=np.float64), 0.0)
    sq = np.where(accept, (y - pred) ** 2, 0.0)
    n_acc = int(accept.sum())
    reject_rate = 1.0 - n_acc / n
    err = float(sq.sum() / n_acc) if n_acc else None
    risk = None
    if lam is not None:
        risk = float(sq.sum() / n + lam * reject_rate)
    return EvaluationReport(err, reject_rate, n, n_acc, risk)


def derive_seed(seed: int, *path: int) -> int:
    """64-bit integer seed for the child stream ``seed/path``."""
    state = seed_sequence(seed, *path).generate_state(1, dtype=np.uint64)
    return int(state[0])
