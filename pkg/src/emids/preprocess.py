"""Alignment, interrupt filtering and runtime extraction."""

from __future__ import annotations

from dataclasses import asdict, dataclass, replace
from typing import Callable, Hashable, Optional, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from sklearn.base import BaseEstimator, TransformerMixin

from .trace_core import Trace, TraceSet


class NoAnchorFound(ValueError):
    """No valley followed by a peak exists in the trace."""


class RuntimeNotFound(ValueError):
    """OS templates could not be located with enough confidence."""


@dataclass(frozen=True)
class AlignmentConfig:
    smoothing_window: int = 8
    valley_threshold: float = 0.15
    peak_threshold: float = 0.5
    min_valley_len: int = 12
    reference_index: int = 10
    target_length: int = 352

    def __post_init__(self):
        if self.smoothing_window < 1:
            raise ValueError("smoothing_window must be >= 1")
        if not self.valley_threshold < self.peak_threshold:
            raise ValueError("valley_threshold must be below peak_threshold")
        if self.min_valley_len < 1:
            raise ValueError("min_valley_len must be >= 1")
        if self.target_length <= 0:
            raise ValueError("target_length must be positive")
        if not 0 <= self.reference_index < self.target_length:
            raise ValueError("reference_index must lie inside the target length")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class FilterConfig:
    energy_deviation_factor: float = 6.0
    length_deviation_max: int = 12

    def __post_init__(self):
        if self.energy_deviation_factor <= 0 or self.length_deviation_max <= 0:
            raise ValueError("filter parameters must be positive")

    def to_dict(self) -> dict:
        return asdict(self)


def smooth(samples: np.ndarray, window: int) -> np.ndarray:
    """Centered moving average of the absolute amplitude."""
    mag = np.abs(np.asarray(samples, dtype=float))
    if window == 1:
        return mag
    return np.convolve(mag, np.ones(window) / window, mode="same")


def find_anchor(samples: np.ndarray, cfg: AlignmentConfig) -> int:
    """Index of the first peak after the first long-enough valley."""
    s = smooth(samples, cfg.smoothing_window)
    below = s < cfg.valley_threshold
    run = 0
    for i, b in enumerate(below):
        run = run + 1 if b else 0
        if run >= cfg.min_valley_len:
            above = np.flatnonzero(s[i + 1:] > cfg.peak_threshold)
            if above.size == 0:
                break
            return int(i + 1 + above[0])
    raise NoAnchorFound("no valley followed by a peak")


def shift_to(samples: np.ndarray, anchor: int, reference_index: int,
             target_length: int) -> np.ndarray:
    """Move ``anchor`` to ``reference_index``, edge-padding both ends."""
    idx = np.arange(target_length) + (anchor - reference_index)
    return np.take(samples, idx, mode="clip")


def align_trace(t: Trace, cfg: AlignmentConfig) -> Trace:
    """Align ``t`` on its program-start anchor.

    Raises :class:`NoAnchorFound` when the trace has no usable anchor.
    """
    anchor = find_anchor(t.samples, cfg)
    out = shift_to(t.samples, anchor, cfg.reference_index, cfg.target_length)
    marks = None
    if t.trigger_marks is not None:
        delta = cfg.reference_index - anchor
        start = min(max(t.trigger_marks[0] + delta, 0), cfg.target_length)
        end = min(max(t.trigger_marks[1] + delta, 0), cfg.target_length)
        if start < end:
            marks = (start, end)
    return Trace(out, t.label, marks)


@dataclass(frozen=True)
class AlignmentReport:
    input: int
    aligned: int
    no_anchor: int
    discarded: int = 0

    def to_dict(self) -> dict:
        return asdict(self)


def align_traceset(ts: TraceSet, cfg: AlignmentConfig) -> tuple[TraceSet, int]:
    """Align every trace; returns the aligned set and the no-anchor count."""
    out = []
    missing = 0
    for t in ts:
        try:
            out.append(align_trace(t, cfg))
        except NoAnchorFound:
            missing += 1
    return TraceSet(ts.sample_rate_hz, tuple(out), aligned=bool(out)), missing


def region_energy(t: Trace) -> float:
    s = t.samples if t.trigger_marks is None else t.samples[slice(*t.trigger_marks)]
    return float(np.dot(s, s))


def _outliers(ts: Sequence[Trace], cfg: FilterConfig) -> np.ndarray:
    energy = np.array([region_energy(t) for t in ts])
    med = np.median(energy)
    mad = np.median(np.abs(energy - med))
    bad = np.abs(energy - med) > cfg.energy_deviation_factor * mad

    lengths = np.array([np.diff(t.trigger_marks)[0] if t.trigger_marks else -1 for t in ts])
    marked = lengths >= 0
    if marked.any():
        med_len = np.median(lengths[marked])
        bad |= marked & (np.abs(lengths - med_len) > cfg.length_deviation_max)
    return bad


def filter_interrupted(ts: TraceSet, cfg: FilterConfig, keep_discarded: bool = False,
                       group_by: Optional[Callable[[Trace], Hashable]] = None
                       ) -> tuple[TraceSet, int]:
    """Drop traces whose program-region energy is an outlier.

    A trace is discarded when its energy is more than
    ``energy_deviation_factor`` median absolute deviations from the median, or
    its marked region length is more than ``length_deviation_max`` samples from
    the median region length.  Statistics are taken over the whole set, or per
    ``group_by`` key when given (legitimate paths differ in energy).  With
    ``keep_discarded`` the traces stay in the set with ``discarded`` set.
    """
    if len(ts) == 0:
        raise ValueError("cannot filter an empty TraceSet")
    if not ts.aligned:
        raise ValueError("filter_interrupted expects an aligned TraceSet")
    bad = np.zeros(len(ts), dtype=bool)
    if group_by is None:
        bad[:] = _outliers(ts.traces, cfg)
    else:
        groups: dict = {}
        for i, t in enumerate(ts):
            groups.setdefault(group_by(t), []).append(i)
        for idx in groups.values():
            bad[idx] = _outliers([ts[i] for i in idx], cfg)

    count = int(bad.sum())
    if keep_discarded:
        traces = tuple(t.with_label(discarded=True) if b else t for t, b in zip(ts, bad))
    else:
        traces = tuple(t for t, b in zip(ts, bad) if not b)
    return replace(ts, traces=traces, aligned=bool(traces)), count


def by_program_input(t: Trace) -> tuple:
    return (int(t.label.program_id), t.label.input_value)


def interrupt_level(ts: TraceSet, margin: float = 1.25) -> float:
    """Amplitude above which a sample is taken as interrupt activity."""
    peak = max(float(np.max(np.abs(t.samples[slice(*t.trigger_marks)]
                                   if t.trigger_marks else t.samples))) for t in ts)
    return margin * peak


def has_interrupt(t: Trace, level: float) -> bool:
    s = t.samples if t.trigger_marks is None else t.samples[slice(*t.trigger_marks)]
    return bool(np.any(np.abs(s) > level))


def normalized_xcorr(signal: np.ndarray, template: np.ndarray) -> np.ndarray:
    """Pearson correlation of ``template`` against every window of ``signal``."""
    signal = np.asarray(signal, dtype=float)
    template = np.asarray(template, dtype=float)
    if template.size > signal.size:
        raise ValueError("template longer than signal")
    w = sliding_window_view(signal, template.size)
    wc = w - w.mean(axis=1, keepdims=True)
    tc = template - template.mean()
    denom = np.linalg.norm(wc, axis=1) * np.linalg.norm(tc)
    with np.errstate(invalid="ignore", divide="ignore"):
        r = (wc @ tc) / denom
    return np.where(denom > 0, r, 0.0)


def extract_runtime(t: Trace, os_epilogue_template: np.ndarray,
                    os_preamble_template: np.ndarray,
                    confidence_floor: float = 0.6) -> int:
    """User-program runtime in samples.

    Uses the trigger marks when present.  Otherwise the preamble template is
    located first and the epilogue template is searched after it; the runtime
    is the gap between the end of one match and the start of the other.
    """
    if t.trigger_marks is not None:
        return t.trigger_marks[1] - t.trigger_marks[0]
    pre = np.asarray(os_preamble_template, dtype=float)
    epi = np.asarray(os_epilogue_template, dtype=float)
    if pre.size == 0 or epi.size == 0:
        raise ValueError("empty OS template")
    if pre.size + epi.size > len(t):
        raise ValueError("templates longer than the trace")
    r_pre = normalized_xcorr(t.samples, pre)
    p = int(np.argmax(r_pre))
    if r_pre[p] < confidence_floor:
        raise RuntimeNotFound(f"preamble match {r_pre[p]:.3f} below {confidence_floor}")
    start = p + pre.size
    if start + epi.size > len(t):
        raise RuntimeNotFound("no room for the epilogue after the preamble match")
    r_epi = normalized_xcorr(t.samples[start:], epi)
    q = int(np.argmax(r_epi))
    if r_epi[q] < confidence_floor:
        raise RuntimeNotFound(f"epilogue match {r_epi[q]:.3f} below {confidence_floor}")
    return q


class TraceAligner(TransformerMixin, BaseEstimator):
    """Align variable-length raw traces into a fixed-width matrix.

    Rows whose anchor cannot be found are filled with NaN when
    ``on_missing="nan"``; the default raises.
    """

    def __init__(self, smoothing_window=8, valley_threshold=0.15, peak_threshold=0.5,
                 min_valley_len=12, reference_index=10, target_length=352,
                 on_missing="raise"):
        self.smoothing_window = smoothing_window
        self.valley_threshold = valley_threshold
        self.peak_threshold = peak_threshold
        self.min_valley_len = min_valley_len
        self.reference_index = reference_index
        self.target_length = target_length
        self.on_missing = on_missing

    def _config(self) -> AlignmentConfig:
        return AlignmentConfig(self.smoothing_window, self.valley_threshold,
                               self.peak_threshold, self.min_valley_len,
                               self.reference_index, self.target_length)

    def fit(self, X, y=None):
        if self.on_missing not in ("raise", "nan"):
            raise ValueError("on_missing must be 'raise' or 'nan'")
        self.config_ = self._config()
        self.n_features_out_ = self.target_length
        return self

    def transform(self, X: Sequence) -> np.ndarray:
        cfg = getattr(self, "config_", None) or self._config()
        rows = []
        for x in X:
            x = x.samples if isinstance(x, Trace) else np.asarray(x, dtype=float)
            try:
                anchor = find_anchor(x, cfg)
            except NoAnchorFound:
                if self.on_missing == "raise":
                    raise
                rows.append(np.full(cfg.target_length, np.nan))
                continue
            rows.append(shift_to(x, anchor, cfg.reference_index, cfg.target_length))
        return np.vstack(rows) if rows else np.empty((0, cfg.target_length))
