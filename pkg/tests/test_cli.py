import json
import subprocess
import sys

import pytest

from emids.cli import EXIT_ALARM, EXIT_IO, EXIT_OK, EXIT_VALIDATION, main
from emids.modelio import save_model
from emids.simulator import SimConfig, emit_trace, program_a, program_b
from emids.trace_core import TraceSet, load_traceset, save_traceset

SMALL = ["--seed", "3", "--traces-per-input", "8"]


def run(*argv):
    return main([str(a) for a in argv])


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    path = tmp_path_factory.mktemp("cli") / "corpus.emtr"
    assert run("simulate", *SMALL, "--out", path) == EXIT_OK
    return path


def test_simulate_is_byte_identical(tmp_path, corpus):
    again = tmp_path / "again.emtr"
    assert run("simulate", *SMALL, "--out", again) == EXIT_OK
    assert again.read_bytes() == corpus.read_bytes()


def test_simulate_program_filter(tmp_path):
    out = tmp_path / "a.emtr"
    assert run("simulate", *SMALL, "--programs", "PrA", "--out", out) == EXIT_OK
    ts = load_traceset(out)
    assert len(ts) == 16 * 8 and {t.label.program_id.name for t in ts} == {"PrA"}


def test_preprocess_writes_aligned_corpus(tmp_path, corpus):
    out, rep = tmp_path / "al.emtr", tmp_path / "rep.json"
    assert run("preprocess", "--seed", 3, "--in", corpus, "--out", out, "--report", rep) == 0
    report = json.loads(rep.read_text())
    ts = load_traceset(out)
    assert ts.aligned and len(ts) == report["aligned"] - report["discarded"]


def test_train_is_reproducible(tmp_path, corpus):
    a, b, rep = tmp_path / "a.emmd", tmp_path / "b.emmd", tmp_path / "r.json"
    assert run("train", "--seed", 3, "--in", corpus, "--out", a, "--report", rep) == EXIT_OK
    assert run("train", "--seed", 3, "--in", corpus, "--out", b) == EXIT_OK
    assert a.read_bytes() == b.read_bytes()
    report = json.loads(rep.read_text())
    pre = report["preprocess"]
    assert report["discard_fraction"] == pytest.approx(pre["discarded"] / pre["aligned"])


def test_train_simple_method_and_score(tmp_path, corpus):
    model, aligned, scores = tmp_path / "m.emmd", tmp_path / "al.emtr", tmp_path / "s.json"
    assert run("train", "--seed", 3, "--in", corpus, "--out", model, "--method", "xcorr") == 0
    assert run("preprocess", "--seed", 3, "--in", corpus, "--out", aligned) == 0
    assert run("score", "--model", model, "--in", aligned, "--out", scores) == EXIT_OK
    out = json.loads(scores.read_text())
    assert len(out["traces"]) == len(load_traceset(aligned))
    assert run("score", "--model", model, "--in", corpus) == EXIT_VALIDATION


def test_train_one_program_is_a_validation_error(tmp_path, corpus, caplog):
    code = run("train", "--seed", 3, "--in", corpus, "--out", tmp_path / "m.emmd",
               "--programs", "PrA")
    assert code == EXIT_VALIDATION
    assert "LDA requires >= 2 classes" in caplog.text


def test_evaluate_with_plot(tmp_path, corpus):
    model, rep, svg = tmp_path / "m.emmd", tmp_path / "e.json", tmp_path / "e.svg"
    assert run("train", "--seed", 3, "--in", corpus, "--out", model) == 0
    assert run("evaluate", "--seed", 3, "--model", model, "--in", corpus, "--report", rep,
               "--plot", svg) == EXIT_OK
    report = json.loads(rep.read_text())
    assert 0 <= report["eer"] <= 0.5 and report["recognition_matrix"]["grouping"] == "PerProgram"
    assert "<svg" in svg.read_text()


def test_evaluate_matches_reproduce(tmp_path, reproduced):
    corpus, model, rep = tmp_path / "c.emtr", tmp_path / "m.emmd", tmp_path / "e.json"
    assert run("simulate", "--out", corpus) == 0
    assert run("train", "--in", corpus, "--out", model, "--programs", "PrA,PrC") == 0
    assert run("evaluate", "--model", model, "--in", corpus, "--attack", "PrC",
               "--report", rep) == 0
    expected = reproduced[0]["q4"]["PrC"]["multivariate"]["eer"]
    assert json.loads(rep.read_text())["eer"] == pytest.approx(expected, abs=1e-12)


@pytest.fixture(scope="module")
def profile_path(trained, tmp_path_factory):
    path = tmp_path_factory.mktemp("prof") / "prof.emmd"
    save_model(trained[1].profile, path)
    return path


def _capture(tmp_path, spec, seed, name):
    cfg = SimConfig(seed=seed)
    ts = TraceSet(1e9, tuple(emit_trace(spec, cfg, i % 16, i // 16) for i in range(100)))
    path = tmp_path / name
    save_traceset(ts, path)
    return path


def test_monitor_exit_codes(tmp_path, profile_path):
    good = _capture(tmp_path, program_a(), 501, "good.emtr")
    bad = _capture(tmp_path, program_b(), 502, "bad.emtr")
    verdicts = tmp_path / "v.json"
    assert run("monitor", "--profile", profile_path, "--in", good, "--json", verdicts,
               "--fail-on-alarm") == EXIT_OK
    assert len(json.loads(verdicts.read_text())["verdicts"]) == 100
    assert run("monitor", "--profile", profile_path, "--in", bad, "--fail-on-alarm") == EXIT_ALARM
    assert run("monitor", "--profile", profile_path, "--in", bad) == EXIT_OK
    assert run("monitor", "--profile", profile_path, "--in", good, "--alarm-k", 0) == \
        EXIT_VALIDATION
    summary = tmp_path / "s.json"
    assert run("monitor", "--profile", profile_path, "--in", good, "--json", summary,
               "--summary-only") == EXIT_OK
    assert "verdicts" not in json.loads(summary.read_text())


def test_monitor_seed_check(tmp_path, profile_path):
    good = _capture(tmp_path, program_a(), 503, "good.emtr")
    assert run("monitor", "--profile", profile_path, "--in", good, "--corpus-seed", 1) == 0
    assert run("monitor", "--profile", profile_path, "--in", good, "--corpus-seed", 2) == \
        EXIT_VALIDATION


def test_monitor_rejects_non_profile(tmp_path, corpus):
    model = tmp_path / "m.emmd"
    assert run("train", "--seed", 3, "--in", corpus, "--out", model, "--method", "sad") == 0
    assert run("monitor", "--profile", model, "--in", corpus) == EXIT_VALIDATION


def test_io_errors(tmp_path, corpus):
    missing = tmp_path / "missing.emtr"
    assert run("train", "--in", missing, "--out", tmp_path / "m.emmd") == EXIT_IO
    junk = tmp_path / "junk.emmd"
    junk.write_bytes(b"not a model at all")
    assert run("monitor", "--profile", junk, "--in", corpus) == EXIT_IO
    bad_trace = tmp_path / "bad.emtr"
    bad_trace.write_bytes(b"EMTR\x01")
    assert run("preprocess", "--in", bad_trace, "--out", tmp_path / "x.emtr") == EXIT_IO


def test_config_file_and_flag_precedence(tmp_path):
    cfg = tmp_path / "c.yaml"
    cfg.write_text("seed: 3\nsim:\n  traces_per_input: 4\nprograms: [PrB]\n")
    out = tmp_path / "c.emtr"
    assert run("simulate", "--config", cfg, "--traces-per-input", 2, "--out", out) == 0
    ts = load_traceset(out)
    assert len(ts) == 32 and {t.label.program_id.name for t in ts} == {"PrB"}
    cfg.write_text("nonsense: 1\n")
    assert run("simulate", "--config", cfg, "--out", out) == EXIT_VALIDATION


def test_entry_point_runs():
    done = subprocess.run([sys.executable, "-m", "emids.cli", "--version"],
                          capture_output=True, text=True)
    assert done.returncode == 0 and done.stdout.strip() == "0.1.0"
