"""End-to-end workflow: split, preprocess, train, threshold, evaluate, reproduce."""

from __future__ import annotations

import hashlib
import math
import struct
import time
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from .config import PipelineConfig
from .distinguishers import SimpleTemplateClassifier
from .evaluation import ScoreSet, eer, evaluate_scores, recognition_matrix
from .grouping import ClassKey, Grouping, key_of
from .ids import IdsProfile
from .preprocess import (AlignmentReport, NoAnchorFound, align_trace, by_program_input,
                         extract_runtime, filter_interrupted, interrupt_level)
from .simulator import (generate_corpus, os_epilogue_template, os_preamble_template,
                        program_by_id)
from .templates import GaussianTemplateClassifier, select_threshold
from .trace_core import ProgramId, TraceSet, encode_traceset, parse_program

TRAIN, VALIDATION, TEST = "train", "validation", "test"


def split_fraction(seed: int, index: int) -> float:
    """Uniform value in [0, 1) derived from a hash of (seed, index)."""
    digest = hashlib.blake2b(struct.pack("<QQ", seed % 2**64, index), digest_size=8).digest()
    return int.from_bytes(digest, "little") / 2**64


def split_of(seed: int, index: int, train_fraction: float, validation_fraction: float) -> str:
    u = split_fraction(seed, index)
    if u < train_fraction:
        return TRAIN
    if u < train_fraction + validation_fraction:
        return VALIDATION
    return TEST


def simulate(cfg: PipelineConfig) -> TraceSet:
    specs = [program_by_id(parse_program(p)) for p in cfg.programs]
    return generate_corpus(specs, cfg.sim)


@dataclass
class Prepared:
    """Aligned traces (interrupted ones flagged ``discarded``) and their raw indices."""

    aligned: TraceSet
    raw_index: np.ndarray
    report: AlignmentReport

    def kept(self) -> TraceSet:
        return self.aligned.kept()

    def partition(self, cfg: PipelineConfig, which: str, raw_seed: Optional[int] = None
                  ) -> TraceSet:
        seed = cfg.seed if raw_seed is None else raw_seed
        rows = [i for i, (t, r) in enumerate(zip(self.aligned, self.raw_index))
                if not t.label.discarded
                and split_of(seed, int(r), cfg.split.train_fraction,
                             cfg.split.validation_fraction) == which]
        return self.aligned.subset(rows)


def prepare(raw: TraceSet, cfg: PipelineConfig) -> Prepared:
    """Align every trace, then flag interrupted ones per (program, input) group."""
    out, index = [], []
    for i, t in enumerate(raw):
        try:
            out.append(align_trace(t, cfg.alignment))
            index.append(i)
        except NoAnchorFound:
            pass
    aligned = TraceSet(raw.sample_rate_hz, tuple(out), aligned=bool(out))
    discarded = 0
    if out:
        aligned, discarded = filter_interrupted(aligned, cfg.filter, keep_discarded=True,
                                                group_by=by_program_input)
    report = AlignmentReport(len(raw), len(out), len(raw) - len(out), discarded)
    return Prepared(aligned, np.array(index, dtype=int), report)


def class_keys(ts: TraceSet, grouping) -> list:
    g = Grouping.parse(grouping)
    return [key_of(t.label, g) for t in ts]


def make_estimator(method: str, cfg: PipelineConfig):
    opts = cfg.templates
    if method == "multivariate":
        return GaussianTemplateClassifier(n_components=opts.n_components)
    if method in ("sad", "xcorr"):
        return SimpleTemplateClassifier(kind=opts.kind, metric=method, max_lag=opts.max_lag)
    raise ValueError(f"unknown method {method!r}")


def fit_estimator(method: str, train: TraceSet, grouping, cfg: PipelineConfig):
    if len(train) == 0:
        raise ValueError("training split is empty")
    return make_estimator(method, cfg).fit(train.matrix(), class_keys(train, grouping))


def claimed_scores(estimator, X: np.ndarray, claimed: ProgramId) -> np.ndarray:
    """Best score among the classes belonging to the claimed program."""
    cols = [i for i, k in enumerate(estimator.classes_) if k.program_id == claimed]
    if not cols:
        raise KeyError(f"model has no class for {claimed.name}")
    return estimator.decision_function(X)[:, cols].max(axis=1)


def genuine_impostor(estimator, test: TraceSet, claimed: ProgramId,
                     impostors: Optional[set] = None) -> ScoreSet:
    progs = np.array([int(t.label.program_id) for t in test])
    scores = claimed_scores(estimator, test.matrix(), claimed)
    genuine = progs == int(claimed)
    impostor = ~genuine if impostors is None else np.isin(progs, [int(p) for p in impostors])
    return ScoreSet(scores[genuine], scores[impostor])


def corpus_digest(raw: TraceSet) -> str:
    return hashlib.sha256(encode_traceset(raw)).hexdigest()


def runtime_baseline(raw_traces, sigma: float) -> tuple[int, int]:
    """(median runtime, ceil(sigma * sd)) over the given raw traces."""
    rt = np.array([extract_runtime(t, os_epilogue_template(), os_preamble_template())
                   for t in raw_traces], dtype=float)
    if rt.size < 2:
        raise ValueError("need at least 2 traces to estimate the runtime spread")
    return int(round(float(np.median(rt)))), int(math.ceil(sigma * float(np.std(rt, ddof=1))))


@dataclass
class TrainResult:
    estimator: object
    profile: Optional[IdsProfile]
    report: dict


def train(raw: TraceSet, cfg: PipelineConfig, corpus_seed: Optional[int] = None
          ) -> TrainResult:
    """Preprocess, fit on the train split and pick a threshold on the validation split.

    Only traces of ``cfg.programs`` take part; the split stays keyed on each
    trace's index within the whole corpus.

    With the multivariate method at PerProgram grouping the result carries
    an IDS profile for the claimed program.
    """
    seed = cfg.seed if corpus_seed is None else corpus_seed
    prep = prepare(raw, cfg)
    wanted = {parse_program(p) for p in cfg.programs}
    train_set = prep.partition(cfg, TRAIN, seed).where(lambda t: t.label.program_id in wanted)
    val_set = prep.partition(cfg, VALIDATION, seed).where(lambda t: t.label.program_id in wanted)
    method = cfg.templates.method
    grouping = Grouping.parse(cfg.templates.grouping)
    est = fit_estimator(method, train_set, grouping, cfg)
    claimed = parse_program(cfg.ids.claimed_program)

    threshold = None
    val_eer = None
    if len(val_set):
        progs = {t.label.program_id for t in val_set}
        if claimed in progs and len(progs) > 1:
            s = genuine_impostor(est, val_set, claimed)
            threshold = select_threshold(s.genuine, s.impostor, cfg.ids.threshold_mode,
                                         cfg.ids.far_target)
            val_eer = eer(s).eer

    report = {
        "stage": "train",
        "method": method,
        "grouping": grouping.value,
        "preprocess": prep.report.to_dict(),
        "discard_fraction": prep.report.discarded / max(prep.report.aligned, 1),
        "split_sizes": {TRAIN: len(train_set), VALIDATION: len(val_set)},
        "classes": [str(k) for k in est.classes_],
        "threshold": threshold,
        "validation_eer": val_eer,
        "seed": seed,
        "corpus_sha256": corpus_digest(raw),
    }

    profile = None
    if method == "multivariate":
        provenance = {"seed": seed, "corpus_sha256": report["corpus_sha256"],
                      "grouping": grouping.value, "n_components": cfg.templates.n_components,
                      "train_fraction": cfg.split.train_fraction,
                      "validation_fraction": cfg.split.validation_fraction}
        model = replace(est.model_, trained_on={**est.model_.trained_on, **provenance})
        if threshold is not None:
            model = model.with_threshold(threshold)
        est = GaussianTemplateClassifier.from_model(model)
        claimed_key = ClassKey(claimed)
        if grouping is Grouping.PerProgram and claimed_key in est.classes_:
            kept_raw = [raw[int(r)] for t, r in zip(prep.aligned, prep.raw_index)
                        if not t.label.discarded and t.label.program_id == claimed
                        and split_of(seed, int(r), cfg.split.train_fraction,
                                     cfg.split.validation_fraction) == TRAIN]
            base, tol = runtime_baseline(kept_raw, cfg.ids.runtime_tolerance_sigma)
            level = interrupt_level(TraceSet(raw.sample_rate_hz, tuple(kept_raw)),
                                    cfg.ids.interrupt_margin)
            profile = IdsProfile(base, tol, model, claimed_key, cfg.alignment,
                                 os_preamble_template(), os_epilogue_template(), level)
            report.update(baseline_runtime=base, runtime_tolerance=tol,
                          interrupt_level=level)
    return TrainResult(est, profile, report)


def q2_summary(predictions, truth) -> dict:
    """Per-input, per-path and within-path accuracy plus the within-path chance level."""
    path_sizes: dict = {}
    for t in truth:
        path_sizes.setdefault(t.path_id, set()).add(t.input_value)
    same_path = [(p, t) for p, t in zip(predictions, truth) if p.path_id == t.path_id]
    within = [p.input_value == t.input_value for p, t in same_path]
    chance = [1.0 / len(path_sizes[t.path_id]) for _, t in same_path]
    return {
        "per_input": float(np.mean([p == t for p, t in zip(predictions, truth)])),
        "per_path": float(np.mean([p.path_id == t.path_id for p, t in zip(predictions, truth)])),
        "within_path": float(np.mean(within)) if within else float("nan"),
        "chance": float(np.mean(chance)) if chance else float("nan"),
        "n": len(truth),
    }


def _criterion(name: str, passed: bool, detail: str) -> dict:
    return {"name": name, "passed": bool(passed), "detail": detail}


def reproduce(cfg: PipelineConfig, plot_dir=None) -> dict:
    """Run every method x grouping x attack and check the expected orderings."""
    t0 = time.perf_counter()
    full = replace(cfg, programs=("PrA", "PrB", "PrC"))
    raw = simulate(full)
    prep = prepare(raw, full)
    train_set = prep.partition(full, TRAIN)
    test_set = prep.partition(full, TEST)
    methods = ("sad", "xcorr", "multivariate")
    groupings = (Grouping.PerProgram, Grouping.PerInput, Grouping.PerPath)
    pra = ProgramId.PrA

    summary: dict = {
        "seed": full.seed,
        "preprocess": prep.report.to_dict(),
        "discard_fraction": prep.report.discarded / max(prep.report.aligned, 1),
        "split_sizes": {TRAIN: len(train_set), TEST: len(test_set)},
        "q1_accuracy": {}, "q3_path_accuracy": {}, "q4": {}, "tables": {},
    }
    reports = {}
    for attack in (ProgramId.PrB, ProgramId.PrC):
        pair = {pra, attack}
        tr = train_set.where(lambda t: t.label.program_id in pair)
        te = test_set.where(lambda t: t.label.program_id in pair)
        for method in methods:
            for grouping in groupings:
                est = fit_estimator(method, tr, grouping, full)
                table = recognition_matrix(est, te, grouping)
                summary["tables"][f"{method}/{grouping.value}/{attack.name}"] = table.to_dict()
                if grouping is Grouping.PerProgram:
                    summary["q1_accuracy"].setdefault(attack.name, {})[method] = table.overall
                    s = genuine_impostor(est, te, pra, {attack})
                    rep = evaluate_scores(s, table)
                    reports[(method, attack.name)] = rep
                    summary["q4"].setdefault(attack.name, {})[method] = {
                        "eer": rep.eer, "threshold": rep.eer_threshold, "auc": rep.auc}
                if grouping is Grouping.PerPath:
                    summary["q3_path_accuracy"].setdefault(attack.name, {})[method] = \
                        table.overall

    tr_a = train_set.where(lambda t: t.label.program_id == pra)
    te_a = test_set.where(lambda t: t.label.program_id == pra)
    summary["q2"] = {}
    for method in methods:
        est = fit_estimator(method, tr_a, Grouping.PerInput, full)
        pred = est.predict(te_a.matrix())
        truth = class_keys(te_a, Grouping.PerInput)
        summary["q2"][method] = q2_summary(pred, truth)

    q1 = summary["q1_accuracy"]
    q4 = summary["q4"]
    mv_b, mv_c = q4["PrB"]["multivariate"]["eer"], q4["PrC"]["multivariate"]["eer"]
    x_c, sad_c = q4["PrC"]["xcorr"]["eer"], q4["PrC"]["sad"]["eer"]
    q2 = summary["q2"]["multivariate"]
    criteria = [
        _criterion("q1_multivariate_accuracy",
                   min(q1["PrB"]["multivariate"], q1["PrC"]["multivariate"]) >= 0.99,
                   f"PrB {q1['PrB']['multivariate']:.4f}, PrC {q1['PrC']['multivariate']:.4f}"
                   " (>= 0.99)"),
        _criterion("q2_path_beats_input", q2["per_path"] > q2["per_input"],
                   f"per_path {q2['per_path']:.4f} > per_input {q2['per_input']:.4f}"),
        _criterion("q2_within_path_at_chance", abs(q2["within_path"] - q2["chance"]) <= 0.05,
                   f"within_path {q2['within_path']:.4f} vs chance {q2['chance']:.4f} (+-0.05)"),
        _criterion("q4_mv_beats_xcorr_on_prc", mv_c < x_c, f"{mv_c:.4f} < {x_c:.4f}"),
        _criterion("q4_mv_prc_in_range", 0 <= mv_c <= 0.25, f"{mv_c:.4f} in [0, 0.25]"),
        _criterion("q4_mv_prb_not_worse", mv_b <= mv_c, f"{mv_b:.4f} <= {mv_c:.4f}"),
        _criterion("q4_sad_fails_on_prc", sad_c >= 0.35, f"{sad_c:.4f} >= 0.35"),
    ]
    summary["criteria"] = criteria
    summary["passed"] = all(c["passed"] for c in criteria)

    if plot_dir is not None:
        from pathlib import Path

        from .plots import plot_report

        out = Path(plot_dir)
        out.mkdir(parents=True, exist_ok=True)
        summary["plots"] = []
        for (method, attack), rep in sorted(reports.items()):
            path = out / f"{method}_{attack}.svg"
            plot_report(rep, path, title=f"{method.upper()}: PrA vs {attack}")
            summary["plots"].append(str(path))
    summary["runtime_seconds"] = time.perf_counter() - t0
    return summary
