"""Command-line entry point.

Exit codes: 0 success, 2 validation error, 3 alarm or failed assertion,
4 I/O error.  A ``--config`` YAML file is read first; flags override it.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from . import __version__
from .config import METHODS, PipelineConfig, load_config
from .distinguishers import SimpleTemplateClassifier
from .evaluation import evaluate_scores, recognition_matrix
from .grouping import Grouping
from .ids import spot_check
from .modelio import ModelFormatError, load_model, save_model
from .pipeline import TEST, genuine_impostor, prepare, reproduce, simulate, train
from .templates import GaussianTemplateClassifier
from .trace_core import TraceFormatError, load_traceset, parse_program, save_traceset

EXIT_OK, EXIT_VALIDATION, EXIT_ALARM, EXIT_IO = 0, 2, 3, 4

log = logging.getLogger("emids")


def _write_json(obj, path) -> None:
    text = json.dumps(obj, indent=2, sort_keys=True, default=str)
    if path in (None, "-"):
        print(text)
    else:
        Path(path).write_text(text + "\n", encoding="utf-8")


def _config(args) -> PipelineConfig:
    cfg = load_config(args.config) if args.config else PipelineConfig()
    overrides = {"seed": args.seed}
    if getattr(args, "programs", None):
        overrides["programs"] = [p.strip() for p in args.programs.split(",") if p.strip()]
    for flag, key in (("traces_per_input", "sim.traces_per_input"),
                      ("method", "templates.method"), ("grouping", "templates.grouping"),
                      ("components", "templates.n_components"),
                      ("claimed", "ids.claimed_program"), ("alarm_k", "ids.alarm_k")):
        overrides[key] = getattr(args, flag, None)
    return cfg.with_overrides(**overrides)


def _load_estimator(path):
    """Returns (estimator, profile or None, provenance dict)."""
    kind, obj = load_model(path)
    if kind == "Profile":
        return GaussianTemplateClassifier.from_model(obj.model), obj, obj.model.trained_on
    if kind == "Multivariate":
        return GaussianTemplateClassifier.from_model(obj), None, obj.trained_on
    clf = SimpleTemplateClassifier.from_templates(obj["templates"], obj["metric"].lower(),
                                                  obj["max_lag"])
    return clf, None, obj["provenance"]


def cmd_simulate(args) -> int:
    cfg = _config(args)
    ts = simulate(cfg)
    out = args.out or cfg.paths.corpus
    size = save_traceset(ts, out)
    log.info("wrote %d traces (%d bytes) to %s", len(ts), size, out)
    return EXIT_OK


def cmd_preprocess(args) -> int:
    cfg = _config(args)
    if args.align_config:
        align = load_config(args.align_config)
        cfg = replace(cfg, alignment=align.alignment, filter=align.filter)
    raw = load_traceset(args.input or cfg.paths.corpus)
    prep = prepare(raw, cfg)
    kept = prep.kept()
    save_traceset(kept, args.out or cfg.paths.aligned)
    _write_json(prep.report.to_dict(), args.report)
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _config(args)
    raw = load_traceset(args.input or cfg.paths.corpus)
    result = train(raw, cfg)
    out = args.out or cfg.paths.model
    if result.profile is not None:
        save_model(result.profile, out)
    elif cfg.templates.method == "multivariate":
        save_model(result.estimator.model_, out)
    else:
        save_model(result.estimator.templates_, out, metric=cfg.templates.method.upper(),
                   max_lag=cfg.templates.max_lag,
                   provenance={"seed": result.report["seed"],
                               "corpus_sha256": result.report["corpus_sha256"],
                               "grouping": cfg.templates.grouping,
                               "threshold": result.report["threshold"]})
    _write_json(result.report, args.report)
    return EXIT_OK


def cmd_score(args) -> int:
    est, profile, _ = _load_estimator(args.model)
    ts = load_traceset(args.input)
    if not ts.aligned:
        raise ValueError("score expects an aligned corpus (run preprocess first)")
    X = ts.matrix()
    scores = est.decision_function(X)
    pred = est.predict(X)
    rows = [{"index": i, "predicted": str(p),
             "scores": {str(k): float(s) for k, s in zip(est.classes_, row)}}
            for i, (p, row) in enumerate(zip(pred, scores))]
    _write_json({"classes": [str(k) for k in est.classes_], "traces": rows}, args.out)
    return EXIT_OK


def cmd_evaluate(args) -> int:
    cfg = _config(args)
    est, _, provenance = _load_estimator(args.model)
    raw = load_traceset(args.input or cfg.paths.corpus)
    prep = prepare(raw, cfg)
    test = prep.partition(cfg, TEST, provenance.get("seed"))
    claimed = parse_program(cfg.ids.claimed_program)
    impostors = None
    if args.attack:
        impostors = {parse_program(p) for p in args.attack.split(",")}
        test = test.where(lambda t: t.label.program_id in impostors | {claimed})
    grouping = Grouping.parse(provenance.get("grouping", "PerProgram"))
    table = recognition_matrix(est, test, grouping)
    report = evaluate_scores(genuine_impostor(est, test, claimed, impostors), table)
    _write_json(report.to_dict(), args.report)
    if args.plot:
        from .plots import plot_report

        plot_report(report, args.plot, title=f"{cfg.ids.claimed_program} recognition")
    log.info("EER %.4f at threshold %.4f", report.eer, report.eer_threshold)
    return EXIT_OK


def cmd_monitor(args) -> int:
    kind, profile = load_model(args.profile)
    if kind != "Profile":
        raise ValueError(f"{args.profile} holds a {kind} model, not an IDS profile")
    if args.corpus_seed is not None and profile.model is not None:
        trained = profile.model.trained_on.get("seed")
        if trained is not None and int(trained) != args.corpus_seed:
            raise ValueError(f"profile trained with seed {trained}, capture declares "
                             f"seed {args.corpus_seed}")
    ts = load_traceset(args.input)
    summary = spot_check(ts, profile, args.alarm_k)
    _write_json(summary.to_dict(include_verdicts=not args.summary_only), args.json)
    log.info("verdicts %s, alarm=%s (k=%d)", summary.counts, summary.alarm, summary.k)
    if summary.alarm and args.fail_on_alarm:
        return EXIT_ALARM
    return EXIT_OK


def cmd_reproduce(args) -> int:
    cfg = _config(args)
    out_dir = Path(args.out_dir or cfg.paths.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    summary = reproduce(cfg, plot_dir=out_dir)
    _write_json(summary, out_dir / "summary.json")
    for c in summary["criteria"]:
        print(f"{'PASS' if c['passed'] else 'FAIL'} {c['name']}: {c['detail']}")
    return EXIT_OK if summary["passed"] else EXIT_ALARM


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="emids", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="YAML pipeline config; flags override it")
        p.add_argument("--seed", type=int)
        return p

    p = common(sub.add_parser("simulate", help="generate a synthetic corpus"))
    p.add_argument("--out")
    p.add_argument("--programs", help="comma-separated list, e.g. PrA,PrB")
    p.add_argument("--traces-per-input", type=int, dest="traces_per_input")
    p.set_defaults(func=cmd_simulate)

    p = common(sub.add_parser("preprocess", help="align and drop interrupted traces"))
    p.add_argument("--in", dest="input")
    p.add_argument("--out")
    p.add_argument("--align-config", help="YAML with alignment/filter sections")
    p.add_argument("--report")
    p.set_defaults(func=cmd_preprocess)

    p = common(sub.add_parser("train", help="fit templates and choose a threshold"))
    p.add_argument("--in", dest="input")
    p.add_argument("--out")
    p.add_argument("--report")
    p.add_argument("--method", choices=METHODS)
    p.add_argument("--grouping", choices=[g.value for g in Grouping])
    p.add_argument("--components", type=int)
    p.add_argument("--claimed")
    p.add_argument("--programs", help="train only on these programs, e.g. PrA,PrC")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("score", help="score an aligned corpus against a model")
    p.add_argument("--model", required=True)
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_score)

    p = common(sub.add_parser("evaluate", help="ROC, FAR/FRR, EER and KDE on the test split"))
    p.add_argument("--model", required=True)
    p.add_argument("--in", dest="input")
    p.add_argument("--report")
    p.add_argument("--plot")
    p.add_argument("--claimed")
    p.add_argument("--attack", help="restrict impostors, e.g. PrC")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("monitor", help="spot-check a capture against an IDS profile")
    p.add_argument("--profile", required=True)
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--json")
    p.add_argument("--alarm-k", type=int, dest="alarm_k")
    p.add_argument("--corpus-seed", type=int, dest="corpus_seed")
    p.add_argument("--summary-only", action="store_true")
    p.add_argument("--fail-on-alarm", action="store_true")
    p.set_defaults(func=cmd_monitor)

    p = common(sub.add_parser("reproduce", help="full experiment with ordering checks"))
    p.add_argument("--out-dir", dest="out_dir")
    p.set_defaults(func=cmd_reproduce)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (OSError, TraceFormatError, ModelFormatError) as exc:
        log.error("I/O error in %s: %s", args.command, exc)
        return EXIT_IO
    except (ValueError, KeyError) as exc:
        log.error("%s failed: %s", args.command, exc)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
