"""Mean/median reference traces scored by SAD or lag-searched correlation."""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Hashable, Sequence

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .grouping import Grouping, key_of, sorted_keys
from .trace_core import Trace, TraceSet

DEFAULT_MAX_LAG = 4


class ScoreUndefined(ValueError):
    """Correlation against a constant vector."""


class TemplateKind(enum.Enum):
    Mean = "Mean"
    Median = "Median"


class Metric(enum.Enum):
    SAD = "SAD"
    XCORR = "XCORR"


def _parse(enum_cls, value):
    if isinstance(value, enum_cls):
        return value
    for member in enum_cls:
        if member.value.lower() == str(value).lower():
            return member
    raise ValueError(f"unknown {enum_cls.__name__} {value!r}")


@dataclass(frozen=True, eq=False)
class SimpleTemplate:
    kind: TemplateKind
    class_key: Hashable
    reference: np.ndarray
    train_count: int

    def __post_init__(self):
        ref = np.array(self.reference, dtype=float)
        ref.setflags(write=False)
        object.__setattr__(self, "reference", ref)
        if self.train_count < 2:
            raise ValueError("a template needs at least 2 training traces")


def _samples(t) -> np.ndarray:
    return t.samples if isinstance(t, Trace) else np.asarray(t, dtype=float)


def reference_of(X: np.ndarray, kind) -> np.ndarray:
    kind = _parse(TemplateKind, kind)
    return X.mean(axis=0) if kind is TemplateKind.Mean else np.median(X, axis=0)


def build_simple(ts: TraceSet, kind, grouping) -> list[SimpleTemplate]:
    """One reference trace per group key, ordered by key."""
    if not ts.aligned:
        raise ValueError("build_simple expects an aligned TraceSet")
    kind = _parse(TemplateKind, kind)
    grouping = Grouping.parse(grouping)
    X = ts.matrix()
    keys = [key_of(t.label, grouping) for t in ts]
    out = []
    for key in sorted_keys(keys):
        rows = [i for i, k in enumerate(keys) if k == key]
        if len(rows) < 2:
            raise ValueError(f"group {key} has fewer than 2 traces")
        out.append(SimpleTemplate(kind, key, reference_of(X[rows], kind), len(rows)))
    return out


def sad_score(t, tpl) -> float:
    """Sum of absolute differences; lower means closer."""
    x = _samples(t)
    ref = tpl.reference if isinstance(tpl, SimpleTemplate) else np.asarray(tpl, dtype=float)
    if x.shape != ref.shape:
        raise ValueError(f"length mismatch: {x.size} vs {ref.size}")
    return float(np.abs(x - ref).sum())


def _overlap(n: int, lag: int) -> tuple[slice, slice]:
    """Slices pairing trace[i + lag] with reference[i]."""
    if lag >= 0:
        return slice(lag, n), slice(0, n - lag)
    return slice(0, n + lag), slice(-lag, n)


def _row_pearson(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    """Pearson correlation of every row of A with every row of B."""
    Ac = A - A.mean(axis=1, keepdims=True)
    Bc = B - B.mean(axis=1, keepdims=True)
    na = np.linalg.norm(Ac, axis=1)
    nb = np.linalg.norm(Bc, axis=1)
    if np.any(na == 0) or np.any(nb == 0):
        raise ScoreUndefined("zero-variance trace or reference")
    return (Ac @ Bc.T) / np.outer(na, nb)


def xcorr_matrix(X: np.ndarray, R: np.ndarray, max_lag: int = DEFAULT_MAX_LAG) -> np.ndarray:
    """Max-over-lags Pearson correlation, shape (n_traces, n_references)."""
    X = np.atleast_2d(X)
    R = np.atleast_2d(R)
    n = X.shape[1]
    if R.shape[1] != n:
        raise ValueError(f"length mismatch: {n} vs {R.shape[1]}")
    if max_lag < 0 or (max_lag > 0 and max_lag >= n / 2):
        raise ValueError("max_lag must satisfy 0 <= max_lag < length / 2")
    best = np.full((X.shape[0], R.shape[0]), -np.inf)
    for lag in range(-max_lag, max_lag + 1):
        sx, sr = _overlap(n, lag)
        best = np.maximum(best, _row_pearson(X[:, sx], R[:, sr]))
    return best


def xcorr_score(t, tpl, max_lag: int = DEFAULT_MAX_LAG) -> float:
    """Highest Pearson correlation over lags in [-max_lag, max_lag]."""
    ref = tpl.reference if isinstance(tpl, SimpleTemplate) else np.asarray(tpl, dtype=float)
    return float(xcorr_matrix(_samples(t), ref, max_lag)[0, 0])


def score_matrix(X: np.ndarray, R: np.ndarray, metric, max_lag: int = DEFAULT_MAX_LAG
                 ) -> np.ndarray:
    """Scores oriented so that higher is better (SAD is negated)."""
    metric = _parse(Metric, metric)
    X = np.atleast_2d(X)
    R = np.atleast_2d(R)
    if metric is Metric.SAD:
        if R.shape[1] != X.shape[1]:
            raise ValueError(f"length mismatch: {X.shape[1]} vs {R.shape[1]}")
        return -np.column_stack([np.abs(X - r).sum(axis=1) for r in R])
    return xcorr_matrix(X, R, max_lag)


def classify_simple(t, templates: Sequence[SimpleTemplate], metric,
                    max_lag: int = DEFAULT_MAX_LAG):
    """Key of the best-scoring template; the first template wins ties."""
    if not templates:
        raise ValueError("no templates")
    R = np.vstack([tpl.reference for tpl in templates])
    scores = score_matrix(_samples(t), R, metric, max_lag)[0]
    return templates[int(np.argmax(scores))].class_key


class SimpleTemplateClassifier(ClassifierMixin, BaseEstimator):
    """Nearest-reference classifier over aligned traces.

    Parameters
    ----------
    kind : {"mean", "median"}
    metric : {"sad", "xcorr"}
    max_lag : int
        Lag window for ``xcorr``; 0 gives plain zero-lag correlation.
    """

    def __init__(self, kind="mean", metric="sad", max_lag=DEFAULT_MAX_LAG):
        self.kind = kind
        self.metric = metric
        self.max_lag = max_lag

    def fit(self, X, y):
        X = check_array(X)
        y = list(y)
        if len(y) != X.shape[0]:
            raise ValueError("X and y differ in length")
        self.classes_ = sorted_keys(y)
        self.templates_ = []
        for key in self.classes_:
            rows = [i for i, k in enumerate(y) if k == key]
            if len(rows) < 2:
                raise ValueError(f"class {key} has fewer than 2 traces")
            self.templates_.append(
                SimpleTemplate(_parse(TemplateKind, self.kind), key,
                               reference_of(X[rows], self.kind), len(rows)))
        self.n_features_in_ = X.shape[1]
        return self

    @classmethod
    def from_templates(cls, templates: Sequence[SimpleTemplate], metric="sad",
                       max_lag=DEFAULT_MAX_LAG) -> "SimpleTemplateClassifier":
        clf = cls(kind=templates[0].kind.value.lower(), metric=metric, max_lag=max_lag)
        clf.templates_ = list(templates)
        clf.classes_ = [tpl.class_key for tpl in templates]
        clf.n_features_in_ = templates[0].reference.size
        return clf

    def decision_function(self, X) -> np.ndarray:
        check_is_fitted(self, "templates_")
        X = check_array(X)
        R = np.vstack([tpl.reference for tpl in self.templates_])
        return score_matrix(X, R, self.metric, self.max_lag)

    def predict(self, X) -> list:
        scores = self.decision_function(X)
        return [self.classes_[i] for i in np.argmax(scores, axis=1)]

    def score(self, X, y, sample_weight=None) -> float:
        pred = self.predict(X)
        return float(np.mean([p == t for p, t in zip(pred, y)]))
