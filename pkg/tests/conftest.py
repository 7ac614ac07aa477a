import numpy as np
import pytest

from emids.simulator import SimConfig, default_programs, generate_corpus
from emids.trace_core import PathId, ProgramId, Trace, TraceLabel, TraceSet


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def small_corpus():
    """All three programs, 24 traces per input, default noise."""
    return generate_corpus(default_programs(), SimConfig(seed=5, traces_per_input=24))


def make_trace(samples, program=ProgramId.PrA, inp=None, path=PathId.Unknown, marks=None,
               discarded=False):
    return Trace(np.asarray(samples, dtype=float), TraceLabel(program, inp, path, discarded),
                 marks)


def make_set(rows, aligned=True, rate=1e9, **label):
    return TraceSet(rate, tuple(make_trace(r, **label) for r in rows), aligned=aligned)


@pytest.fixture(scope="session")
def trained():
    """Default pipeline trained once per session (multivariate, PerProgram)."""
    from emids.config import PipelineConfig
    from emids.pipeline import simulate, train

    cfg = PipelineConfig()
    return cfg, train(simulate(cfg), cfg)


def stretch_runtime(t, extra):
    """Copy of ``t`` with ``extra`` silent samples appended to its program region."""
    start, end = t.trigger_marks
    samples = np.concatenate([t.samples[:end], np.zeros(extra), t.samples[end:]])
    return Trace(samples, t.label, (start, end + extra))


@pytest.fixture(scope="session")
def reproduced(tmp_path_factory):
    """Full default experiment, with plots, run once per session."""
    import time

    from emids.config import PipelineConfig
    from emids.pipeline import reproduce

    out = tmp_path_factory.mktemp("reproduce")
    t0 = time.perf_counter()
    summary = reproduce(PipelineConfig(), plot_dir=out)
    return summary, time.perf_counter() - t0, out


ACCEPTANCE_LINES: list = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
