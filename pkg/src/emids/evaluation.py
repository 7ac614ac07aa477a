"""ROC, FAR/FRR, equal error rate, score densities and recognition tables."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np

from .grouping import Grouping, key_of, same_class, sorted_keys
from .trace_core import TraceSet


@dataclass(frozen=True, eq=False)
class ScoreSet:
    genuine: np.ndarray
    impostor: np.ndarray
    higher_is_genuine: bool = True

    def __post_init__(self):
        g = np.asarray(self.genuine, dtype=float).reshape(-1)
        i = np.asarray(self.impostor, dtype=float).reshape(-1)
        if g.size == 0 or i.size == 0:
            raise ValueError("genuine and impostor scores must be non-empty")
        if not (np.all(np.isfinite(g)) and np.all(np.isfinite(i))):
            raise ValueError("scores must be finite")
        object.__setattr__(self, "genuine", g)
        object.__setattr__(self, "impostor", i)

    def oriented(self) -> tuple[np.ndarray, np.ndarray]:
        """Scores flipped if needed so that higher means genuine."""
        if self.higher_is_genuine:
            return self.genuine, self.impostor
        return -self.genuine, -self.impostor

    def swapped(self) -> "ScoreSet":
        """Roles exchanged and scores negated: the mirror-image problem."""
        return ScoreSet(-self.impostor, -self.genuine, self.higher_is_genuine)


def sweep(s: ScoreSet) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(thresholds, FAR, FRR) for ``accept iff score >= threshold``.

    Thresholds are -inf, every distinct observed score ascending, then +inf.
    """
    g, imp = s.oriented()
    gs = np.sort(g)
    isorted = np.sort(imp)
    cuts = np.concatenate([[-np.inf], np.unique(np.concatenate([g, imp])), [np.inf]])
    far = (isorted.size - np.searchsorted(isorted, cuts, side="left")) / isorted.size
    frr = np.searchsorted(gs, cuts, side="left") / gs.size
    return cuts, far, frr


def roc_curve(s: ScoreSet) -> list[tuple[float, float]]:
    """(FAR, GAR) operating points from the most to the least permissive cut."""
    _, far, frr = sweep(s)
    return [(float(a), float(1 - r)) for a, r in zip(far, frr)]


def far_frr(s: ScoreSet) -> list[tuple[float, float, float]]:
    cuts, far, frr = sweep(s)
    if not s.higher_is_genuine:
        cuts = -cuts
    return [(float(t), float(a), float(r)) for t, a, r in zip(cuts, far, frr)]


def auc_trapezoid(s: ScoreSet) -> float:
    pts = np.array(roc_curve(s))[::-1]
    x, y = pts[:, 0], pts[:, 1]
    return float(np.sum(np.diff(x) * (y[1:] + y[:-1]) / 2))


def auc_mann_whitney(s: ScoreSet) -> float:
    """P(genuine > impostor) + 0.5 P(tie), by ranking."""
    g, imp = s.oriented()
    from scipy.stats import rankdata

    ranks = rankdata(np.concatenate([g, imp]))
    u = ranks[:g.size].sum() - g.size * (g.size + 1) / 2
    return float(u / (g.size * imp.size))


@dataclass(frozen=True)
class EerResult:
    eer: float
    threshold: float
    degenerate: bool = False


def eer(s: ScoreSet) -> EerResult:
    """Equal error rate by linear interpolation at the FAR = FRR crossing.

    When FAR equals FRR exactly at an observed cut, every threshold between
    the previous observed score and that cut gives the same rates; the
    midpoint is reported.
    """
    cuts, far, frr = sweep(s)
    d = far - frr
    j = int(np.argmax(d <= 0))
    g, imp = s.oriented()
    degenerate = bool(np.ptp(np.concatenate([g, imp])) == 0)

    lo, hi = cuts[j - 1], cuts[j]
    if d[j] == 0:
        rate = float(far[j])
        alpha = 0.5
    else:
        alpha = d[j - 1] / (d[j - 1] - d[j])
        rate = float(far[j - 1] + alpha * (far[j] - far[j - 1]))
    finite = cuts[np.isfinite(cuts)]
    lo = finite.min() - 1.0 if np.isneginf(lo) else lo
    hi = finite.max() + 1.0 if np.isposinf(hi) else hi
    threshold = float(lo + alpha * (hi - lo))
    if not s.higher_is_genuine:
        threshold = -threshold
    return EerResult(rate, threshold, degenerate)


def silverman_bandwidth(values: np.ndarray) -> tuple[float, bool]:
    """Silverman's rule; returns (h, fell_back)."""
    v = np.asarray(values, dtype=float)
    sd = float(np.std(v, ddof=1))
    q75, q25 = np.percentile(v, [75, 25])
    spread = [x for x in (sd, (q75 - q25) / 1.34) if x > 0]
    if not spread:
        return 1e-3 * abs(float(np.mean(v))) + 1e-9, True
    return 0.9 * min(spread) * v.size ** (-0.2), False


@dataclass(frozen=True, eq=False)
class Density:
    x: np.ndarray
    density: np.ndarray
    bandwidth: float
    fallback: bool = False

    def points(self) -> list[tuple[float, float]]:
        return [(float(a), float(b)) for a, b in zip(self.x, self.density)]


def kde(values: Sequence[float], bandwidth="auto", grid: int = 256) -> Density:
    """Gaussian-kernel density on a uniform grid over [min - 3h, max + 3h]."""
    v = np.asarray(values, dtype=float).reshape(-1)
    if v.size < 2:
        raise ValueError("kde needs at least 2 values")
    fallback = False
    if isinstance(bandwidth, str):
        if bandwidth.lower() != "auto":
            raise ValueError(f"unknown bandwidth {bandwidth!r}")
        h, fallback = silverman_bandwidth(v)
    else:
        h = float(bandwidth)
        if not h > 0:
            raise ValueError("bandwidth must be positive")
    x = np.linspace(v.min() - 3 * h, v.max() + 3 * h, grid)
    z = (x[:, None] - v[None, :]) / h
    dens = np.exp(-0.5 * z**2).sum(axis=1) / (v.size * h * np.sqrt(2 * np.pi))
    return Density(x, dens, h, fallback)


@dataclass
class RecognitionTable:
    grouping: str
    per_class: dict = field(default_factory=dict)
    overall: float = 0.0
    macro: float = 0.0
    confusion: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)


def recognition_matrix(scorer, test: TraceSet, grouping,
                       predictions: Optional[Sequence] = None) -> RecognitionTable:
    """Per-class accuracy of ``scorer`` on ``test`` under ``grouping``.

    ``scorer`` is either an estimator with ``predict`` over the aligned sample
    matrix or a callable mapping that matrix to class keys.  Pass
    ``predictions`` to re-score existing predictions at another grouping.
    Classes are the true keys of the test traces at the requested grouping;
    a prediction counts when it agrees at that grouping level.
    """
    grouping = Grouping.parse(grouping)
    if predictions is None:
        X = test.matrix()
        predict = scorer.predict if hasattr(scorer, "predict") else scorer
        predictions = list(predict(X))
        known = getattr(scorer, "classes_", None)
        if known is not None:
            missing = {p for p in predictions if p not in known}
            if missing:
                raise KeyError(f"predictions outside the model's classes: {missing}")
    truth = [key_of(t.label, grouping) for t in test]
    full = [key_of(t.label, Grouping.PerInput) if t.label.input_value is not None
            else key_of(t.label, Grouping.PerPath) for t in test]
    hits = np.array([same_class(p, f, grouping) for p, f in zip(predictions, full)])

    table = RecognitionTable(grouping.value)
    for key in sorted_keys(truth):
        rows = [i for i, k in enumerate(truth) if k == key]
        acc = float(hits[rows].mean())
        table.per_class[str(key)] = {"count": len(rows), "correct": int(hits[rows].sum()),
                                     "accuracy": acc}
        counts: dict = {}
        for i in rows:
            name = str(predictions[i])
            counts[name] = counts.get(name, 0) + 1
        table.confusion[str(key)] = counts
    table.overall = float(hits.mean())
    table.macro = float(np.mean([c["accuracy"] for c in table.per_class.values()]))
    return table


@dataclass
class EvalReport:
    roc: list
    far_frr: list
    eer: float
    eer_threshold: float
    kde_genuine: list
    kde_impostor: list
    auc: float
    degenerate: bool = False
    recognition_matrix: Optional[dict] = None

    def to_dict(self) -> dict:
        return asdict(self)


def evaluate_scores(s: ScoreSet, recognition: Optional[RecognitionTable] = None,
                    grid: int = 256) -> EvalReport:
    e = eer(s)
    g, imp = s.genuine, s.impostor
    kg = kde(g, grid=grid) if g.size >= 2 else None
    ki = kde(imp, grid=grid) if imp.size >= 2 else None
    return EvalReport(
        roc=roc_curve(s),
        far_frr=far_frr(s),
        eer=e.eer,
        eer_threshold=e.threshold,
        kde_genuine=kg.points() if kg else [],
        kde_impostor=ki.points() if ki else [],
        auc=auc_trapezoid(s),
        degenerate=e.degenerate,
        recognition_matrix=recognition.to_dict() if recognition else None,
    )
