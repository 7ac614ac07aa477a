"""Multivariate Gaussian templates on LDA-compressed traces.

Traces are projected onto the leading discriminant directions, each class is
summarised by its projected mean, and a single pooled covariance is shared by
all classes.  Matching is by Gaussian log-likelihood.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Hashable, Optional, Sequence

import numpy as np
from scipy import linalg
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .grouping import Grouping, key_of, sorted_keys
from .trace_core import Trace, TraceSet

DEFAULT_COMPONENTS = 10
LDA_RIDGE = 1e-6
COV_RIDGE = 1e-6
COV_FLOOR = 1e-12
LOG_2PI = float(np.log(2 * np.pi))


class SingularScatter(ValueError):
    """Within-class scatter is zero; regularization cannot fix it."""


@dataclass(frozen=True, eq=False)
class LdaProjection:
    mean_global: np.ndarray
    components: np.ndarray
    eigenvalues: Optional[np.ndarray] = None

    def __post_init__(self):
        mg = np.array(self.mean_global, dtype=float).reshape(-1)
        comp = np.array(self.components, dtype=float)
        if comp.ndim == 1:
            comp = comp.reshape(-1, 1)
        if comp.shape[0] != mg.size:
            raise ValueError("components rows must match mean_global length")
        if comp.shape[1] < 1:
            raise ValueError("need at least one component")
        object.__setattr__(self, "mean_global", mg)
        object.__setattr__(self, "components", comp)

    @property
    def m(self) -> int:
        return self.components.shape[1]

    @property
    def n_features(self) -> int:
        return self.mean_global.size

    def transform(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != self.n_features:
            raise ValueError(f"expected {self.n_features} samples, got {X.shape[1]}")
        return (X - self.mean_global) @ self.components

    @classmethod
    def identity(cls, d: int) -> "LdaProjection":
        return cls(np.zeros(d), np.eye(d))


def _class_rows(y: Sequence) -> tuple[list, list[np.ndarray]]:
    classes = sorted_keys(y)
    index = {k: i for i, k in enumerate(classes)}
    codes = np.array([index[k] for k in y])
    return classes, [np.flatnonzero(codes == i) for i in range(len(classes))]


def lda_arrays(X: np.ndarray, y: Sequence, m: int) -> LdaProjection:
    """Top-``m`` generalized eigenvectors of (between, within) scatter.

    ``m`` may exceed the number of classes minus one; the extra directions
    carry (near) zero eigenvalues.
    """
    X = np.asarray(X, dtype=float)
    n, d = X.shape
    if len(y) != n:
        raise ValueError("X and y differ in length")
    if not 1 <= m <= d:
        raise ValueError(f"m must be in [1, {d}]")
    classes, rows = _class_rows(y)
    if len(classes) < 2:
        raise ValueError("LDA requires >= 2 classes")
    for k, r in zip(classes, rows):
        if r.size < 2:
            raise ValueError(f"class {k} has fewer than 2 traces")

    mean = X.mean(axis=0)
    within = np.zeros((d, d))
    between = np.zeros((d, d))
    for r in rows:
        mu = X[r].mean(axis=0)
        centered = X[r] - mu
        within += centered.T @ centered
        diff = (mu - mean)[:, None]
        between += r.size * (diff @ diff.T)
    tr = np.trace(within)
    if tr <= 0:
        raise SingularScatter("within-class scatter is zero")
    within[np.diag_indices(d)] += LDA_RIDGE * tr / d

    vals, vecs = linalg.eigh(between, within)
    order = np.argsort(vals)[::-1][:m]
    vecs = vecs[:, order]
    vecs /= np.linalg.norm(vecs, axis=0)
    pivot = np.argmax(np.abs(vecs), axis=0)
    vecs *= np.sign(vecs[pivot, np.arange(m)])
    return LdaProjection(mean, vecs, vals[order])


def fit_lda(ts: TraceSet, class_of: Callable[[Trace], Hashable], m: int) -> LdaProjection:
    return lda_arrays(ts.matrix(), [class_of(t) for t in ts], m)


@dataclass(frozen=True, eq=False)
class TemplateModel:
    """Pooled-covariance Gaussian templates in the projected space."""

    projection: LdaProjection
    class_keys: tuple
    means: np.ndarray
    pooled_covariance: np.ndarray
    pooled_precision: np.ndarray
    log_det_cov: float
    regularization: float
    threshold: float = float("-inf")
    trained_on: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "class_keys", tuple(self.class_keys))
        object.__setattr__(self, "means", np.atleast_2d(np.asarray(self.means, dtype=float)))
        cov = np.asarray(self.pooled_covariance, dtype=float)
        m = self.projection.m
        if self.means.shape != (len(self.class_keys), m):
            raise ValueError("one mean of length m per class required")
        if cov.shape != (m, m) or not np.allclose(cov, cov.T, atol=1e-9, rtol=0):
            raise ValueError("pooled covariance must be symmetric m x m")

    @property
    def m(self) -> int:
        return self.projection.m

    def class_index(self, key) -> int:
        try:
            return self.class_keys.index(key)
        except ValueError:
            raise KeyError(f"unknown class {key}") from None

    def log_likelihoods(self, X) -> np.ndarray:
        """Log-likelihood of every row of X under every class, (n, K)."""
        Y = self.projection.transform(X)
        return self.projected_log_likelihoods(Y)

    def projected_log_likelihoods(self, Y: np.ndarray) -> np.ndarray:
        diff = Y[:, None, :] - self.means[None, :, :]
        maha = np.einsum("nki,ij,nkj->nk", diff, self.pooled_precision, diff)
        return -0.5 * (maha + self.log_det_cov + self.m * LOG_2PI)

    def with_threshold(self, threshold: float) -> "TemplateModel":
        return replace(self, threshold=float(threshold))


def _regularized(cov: np.ndarray) -> tuple[np.ndarray, float]:
    m = cov.shape[0]
    eps = max(COV_RIDGE * float(np.trace(cov)) / m, COV_FLOOR)
    out = cov.copy()
    out[np.diag_indices(m)] += eps
    return out, eps


def templates_arrays(X: np.ndarray, y: Sequence, projection: LdaProjection,
                     trained_on: Optional[dict] = None) -> TemplateModel:
    Y = projection.transform(X)
    classes, rows = _class_rows(y)
    for k, r in zip(classes, rows):
        if r.size < 2:
            raise ValueError(f"class {k} has fewer than 2 traces")
    n, m = Y.shape
    means = np.vstack([Y[r].mean(axis=0) for r in rows])
    scatter = np.zeros((m, m))
    for mu, r in zip(means, rows):
        c = Y[r] - mu
        scatter += c.T @ c
    cov = scatter / (n - len(classes))
    cov = 0.5 * (cov + cov.T)
    cov, eps = _regularized(cov)
    try:
        chol = linalg.cho_factor(cov, lower=True)
    except linalg.LinAlgError:
        raise ValueError("pooled covariance not positive definite") from None
    precision = linalg.cho_solve(chol, np.eye(m))
    precision = 0.5 * (precision + precision.T)
    log_det = 2.0 * float(np.sum(np.log(np.diag(chol[0]))))
    info = {"n_traces": int(n), "n_classes": len(classes)}
    info.update(trained_on or {})
    return TemplateModel(projection, tuple(classes), means, cov, precision, log_det, eps,
                         trained_on=info)


def fit_templates(ts: TraceSet, grouping, projection: LdaProjection,
                  trained_on: Optional[dict] = None) -> TemplateModel:
    grouping = Grouping.parse(grouping)
    return templates_arrays(ts.matrix(), [key_of(t.label, grouping) for t in ts],
                            projection, trained_on)


def _row(t) -> np.ndarray:
    return (t.samples if isinstance(t, Trace) else np.asarray(t, dtype=float))[None, :]


def log_likelihood(t, model: TemplateModel, class_key) -> float:
    k = model.class_index(class_key)
    return float(model.log_likelihoods(_row(t))[0, k])


def classify_ml(t, model: TemplateModel) -> tuple:
    """(most likely class, its log-likelihood); the first class wins ties."""
    ll = model.log_likelihoods(_row(t))[0]
    k = int(np.argmax(ll))
    return model.class_keys[k], float(ll[k])


def genuine_score(t, model: TemplateModel, claimed) -> float:
    return log_likelihood(t, model, claimed)


def select_threshold(genuine: Sequence[float], impostor: Sequence[float],
                     mode: str = "eer", far: float = 0.01) -> float:
    """Acceptance cut on genuine scores.

    ``mode="eer"`` uses the equal-error threshold; ``mode="far"`` the lowest
    cut whose false-accept rate does not exceed ``far``.
    """
    from .evaluation import ScoreSet, eer

    if mode == "eer":
        return eer(ScoreSet(genuine, impostor)).threshold
    if mode != "far":
        raise ValueError(f"unknown threshold mode {mode!r}")
    imp = np.sort(np.asarray(impostor, dtype=float))
    allowed = int(np.floor(far * imp.size))
    if allowed >= imp.size:
        return float(np.min(genuine))
    # accept iff score >= cut; at most `allowed` impostors may sit at or above it
    return float(np.nextafter(imp[imp.size - allowed - 1], np.inf))


class LdaTransformer(TransformerMixin, BaseEstimator):
    """Supervised projection onto ``n_components`` discriminant directions."""

    def __init__(self, n_components=DEFAULT_COMPONENTS):
        self.n_components = n_components

    def fit(self, X, y):
        X = check_array(X)
        self.projection_ = lda_arrays(X, list(y), self.n_components)
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        check_is_fitted(self, "projection_")
        return self.projection_.transform(check_array(X))


class GaussianTemplateClassifier(ClassifierMixin, BaseEstimator):
    """LDA projection followed by pooled-covariance Gaussian templates.

    ``decision_function`` returns per-class log-likelihoods; ``score_samples``
    returns the log-likelihood of one claimed class, the quantity thresholded
    for recognition.
    """

    def __init__(self, n_components=DEFAULT_COMPONENTS):
        self.n_components = n_components

    def fit(self, X, y):
        X = check_array(X)
        y = list(y)
        projection = lda_arrays(X, y, self.n_components)
        self.model_ = templates_arrays(X, y, projection)
        self.classes_ = list(self.model_.class_keys)
        self.n_features_in_ = X.shape[1]
        return self

    @classmethod
    def from_model(cls, model: TemplateModel) -> "GaussianTemplateClassifier":
        clf = cls(n_components=model.m)
        clf.model_ = model
        clf.classes_ = list(model.class_keys)
        clf.n_features_in_ = model.projection.n_features
        return clf

    def decision_function(self, X) -> np.ndarray:
        check_is_fitted(self, "model_")
        return self.model_.log_likelihoods(check_array(X))

    def predict(self, X) -> list:
        ll = self.decision_function(X)
        return [self.classes_[i] for i in np.argmax(ll, axis=1)]

    def score_samples(self, X, claimed) -> np.ndarray:
        return self.decision_function(X)[:, self.model_.class_index(claimed)]

    def score(self, X, y, sample_weight=None) -> float:
        pred = self.predict(X)
        return float(np.mean([p == t for p, t in zip(pred, y)]))
