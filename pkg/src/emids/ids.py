"""Two-layer decision engine: runtime check, then template-score check."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .preprocess import (AlignmentConfig, NoAnchorFound, RuntimeNotFound, align_trace,
                         extract_runtime, has_interrupt)
from .templates import TemplateModel, genuine_score
from .trace_core import Trace, TraceSet


class Outcome(enum.Enum):
    Genuine = "Genuine"
    TimingAnomaly = "TimingAnomaly"
    BehaviorAnomaly = "BehaviorAnomaly"
    Indeterminate = "Indeterminate"


ANOMALIES = (Outcome.TimingAnomaly, Outcome.BehaviorAnomaly)


@dataclass(frozen=True, eq=False)
class IdsProfile:
    """Everything needed to judge a capture of the claimed program.

    ``interrupt_level`` is the amplitude above which the program region is
    considered hit by an interrupt; such traces are Indeterminate, mirroring
    the interrupt filter used in training.  ``None`` disables the screen.
    """

    baseline_runtime: int
    runtime_tolerance: int
    model: Optional[TemplateModel]
    claimed_program: object
    alignment: AlignmentConfig = field(default_factory=AlignmentConfig)
    os_preamble_template: np.ndarray = field(default_factory=lambda: np.zeros(0))
    os_epilogue_template: np.ndarray = field(default_factory=lambda: np.zeros(0))
    interrupt_level: Optional[float] = None
    confidence_floor: float = 0.6
    decision_policy: str = "AlertOnFirstFailure"

    def __post_init__(self):
        if self.runtime_tolerance < 0:
            raise ValueError("runtime_tolerance must be >= 0")
        if self.model is not None:
            self.model.class_index(self.claimed_program)
            if self.model.projection.n_features != self.alignment.target_length:
                raise ValueError("alignment target_length must match the model width")
        if self.decision_policy != "AlertOnFirstFailure":
            raise ValueError(f"unsupported decision policy {self.decision_policy!r}")


@dataclass(frozen=True)
class Verdict:
    outcome: Outcome
    layer1_runtime: Optional[int]
    layer2_score: Optional[float] = None
    threshold_used: Optional[float] = None
    reason: str = ""

    def to_dict(self) -> dict:
        return {"outcome": self.outcome.value, "layer1_runtime": self.layer1_runtime,
                "layer2_score": self.layer2_score, "threshold_used": self.threshold_used,
                "reason": self.reason}


def check_trace(t: Trace, profile: IdsProfile) -> Verdict:
    """Judge one raw trace.  Never raises on bad input."""
    try:
        if profile.interrupt_level is not None and has_interrupt(t, profile.interrupt_level):
            return Verdict(Outcome.Indeterminate, None, reason="interrupt")
        try:
            runtime = extract_runtime(t, profile.os_epilogue_template,
                                      profile.os_preamble_template, profile.confidence_floor)
        except RuntimeNotFound as exc:
            return Verdict(Outcome.Indeterminate, None, reason=f"runtime: {exc}")
        if abs(runtime - profile.baseline_runtime) > profile.runtime_tolerance:
            return Verdict(Outcome.TimingAnomaly, runtime, reason="runtime out of tolerance")

        model = profile.model
        if model is None:
            return Verdict(Outcome.Indeterminate, runtime, reason="no template model")
        try:
            aligned = align_trace(t, profile.alignment)
        except NoAnchorFound:
            return Verdict(Outcome.Indeterminate, runtime, reason="no alignment anchor")
        score = genuine_score(aligned, model, profile.claimed_program)
        if not math.isfinite(score):
            return Verdict(Outcome.Indeterminate, runtime, reason="non-finite score")
        outcome = Outcome.BehaviorAnomaly if score < model.threshold else Outcome.Genuine
        return Verdict(outcome, runtime, score, model.threshold)
    except ValueError as exc:
        return Verdict(Outcome.Indeterminate, None, reason=f"invalid input: {exc}")


def default_alarm_k(n: int) -> int:
    return math.ceil(0.05 * n) + 1


@dataclass
class SpotCheckSummary:
    counts: dict
    anomalies: int
    n: int
    k: int
    alarm: bool
    verdicts: list

    def to_dict(self, include_verdicts: bool = True) -> dict:
        out = {"counts": self.counts, "anomalies": self.anomalies, "n": self.n,
               "k": self.k, "alarm": self.alarm}
        if include_verdicts:
            out["verdicts"] = [v.to_dict() for v in self.verdicts]
        return out


def spot_check(ts: TraceSet, profile: IdsProfile, k: Optional[int] = None) -> SpotCheckSummary:
    """Check a batch; alarm when at least ``k`` traces are anomalous.

    Indeterminate verdicts are counted but never contribute to ``k``.
    """
    if len(ts) == 0:
        raise ValueError("empty batch")
    n = len(ts)
    k = default_alarm_k(n) if k is None else int(k)
    if k < 1:
        raise ValueError("k must be >= 1")
    verdicts = [check_trace(t, profile) for t in ts]
    counts = {o.value: 0 for o in Outcome}
    for v in verdicts:
        counts[v.outcome.value] += 1
    anomalies = sum(counts[o.value] for o in ANOMALIES)
    return SpotCheckSummary(counts, anomalies, n, k, anomalies >= k, verdicts)
