import numpy as np
import pytest

from conftest import make_set, make_trace
from emids.preprocess import (AlignmentConfig, FilterConfig, NoAnchorFound, RuntimeNotFound,
                              TraceAligner, align_trace, align_traceset, by_program_input,
                              extract_runtime, filter_interrupted, find_anchor, has_interrupt,
                              interrupt_level, normalized_xcorr, region_energy, smooth)
from emids.simulator import (BASE_DURATION, INTERRUPT_AMPLITUDE, SimConfig, emit_trace,
                             os_epilogue_template, os_preamble_template, program_a,
                             water_level_listing)
from emids.trace_core import Trace, TraceSet
from oracles import zero_lag_gain

SPIKE_CFG = AlignmentConfig(smoothing_window=1, valley_threshold=0.1, peak_threshold=0.5,
                            min_valley_len=10, reference_index=10, target_length=40)


def test_spike_relocated_to_reference():
    t = make_trace(np.concatenate([np.zeros(50), [1.0], np.zeros(20)]))
    out = align_trace(t, SPIKE_CFG)
    assert len(out) == 40
    assert int(np.argmax(out.samples)) == 10 and out.samples[10] == 1.0


def test_all_zero_trace_has_no_anchor():
    with pytest.raises(NoAnchorFound):
        align_trace(make_trace(np.zeros(100)), SPIKE_CFG)


def test_valley_without_peak_has_no_anchor():
    t = make_trace(np.concatenate([np.ones(10), np.zeros(30), [0.3] * 5]))
    with pytest.raises(NoAnchorFound):
        find_anchor(t.samples, SPIKE_CFG)


def test_first_valley_wins():
    x = np.zeros(100)
    x[30], x[70] = 1.0, 2.0
    assert find_anchor(x, SPIKE_CFG) == 30


def test_edge_padding():
    t = make_trace(np.concatenate([np.zeros(12), [1.0, 2.0, 3.0]]))
    out = align_trace(t, SPIKE_CFG).samples
    assert np.all(out[13:] == 3.0)  # right edge repeated
    short = make_trace(np.concatenate([np.full(12, 0.05), [1.0]]))
    cfg = AlignmentConfig(1, 0.1, 0.5, 10, 20, 30)
    assert np.all(align_trace(short, cfg).samples[:8] == 0.05)  # left edge repeated


def test_smooth_is_centered_abs_average():
    x = np.array([0.0, -4.0, 0.0, 0.0])
    assert np.allclose(smooth(x, 1), [0, 4, 0, 0])
    assert np.allclose(smooth(x, 2), np.convolve([0, 4, 0, 0], [0.5, 0.5], mode="same"))


def test_alignment_shifts_marks():
    t = make_trace(np.concatenate([np.zeros(50), [1.0], np.zeros(20)]), marks=(50, 60))
    out = align_trace(t, SPIKE_CFG)
    assert out.trigger_marks == (10, 20)


def test_config_invariants():
    with pytest.raises(ValueError):
        AlignmentConfig(valley_threshold=0.6, peak_threshold=0.5)
    with pytest.raises(ValueError):
        AlignmentConfig(target_length=0)
    with pytest.raises(ValueError):
        FilterConfig(energy_deviation_factor=0)


def test_align_traceset_counts_missing():
    ts = TraceSet(1e9, (make_trace(np.concatenate([np.zeros(20), [1.0]])), make_trace(np.zeros(30))))
    out, missing = align_traceset(ts, SPIKE_CFG)
    assert missing == 1 and len(out) == 1 and out.aligned


@pytest.mark.parametrize("k", range(10))
def test_translation_equivariance(k):
    cfg = AlignmentConfig()
    t = emit_trace(program_a(), SimConfig(seed=8), 6, k)
    shifted = Trace(np.concatenate([np.zeros(k), t.samples]), t.label)
    assert k < cfg.reference_index
    assert np.array_equal(align_trace(shifted, cfg).samples, align_trace(t, cfg).samples)


def test_alignment_improves_zero_lag_correlation():
    cfg = AlignmentConfig()
    sim = SimConfig(seed=31, interrupt_probability=0.0)
    start = sim.os_preamble_len - cfg.reference_index
    half_instruction = BASE_DURATION // 2
    checked = 0
    for i in range(60):
        a = emit_trace(program_a(), sim, 7, 2 * i)
        b = emit_trace(program_a(), sim, 7, 2 * i + 1)
        if abs(a.trigger_marks[0] - b.trigger_marks[0]) < half_instruction:
            continue  # offsets this close are within execution-time drift
        before, after = zero_lag_gain(a.samples, b.samples, align_trace(a, cfg).samples,
                                      align_trace(b, cfg).samples, start, cfg.target_length)
        assert after > before
        checked += 1
    assert checked >= 30


def test_filter_keeps_identical_traces():
    ts = make_set([np.sin(np.arange(50.0))] * 20)
    kept, n = filter_interrupted(ts, FilterConfig())
    assert n == 0 and len(kept) == 20


def test_filter_drops_single_burst(rng):
    base = np.sin(np.arange(200) / 5.0)
    rows = [base + 0.01 * rng.standard_normal(200) for _ in range(100)]
    rows[42] = rows[42].copy()
    rows[42][80:100] += INTERRUPT_AMPLITUDE * rng.standard_normal(20)
    ts = make_set(rows)
    kept, n = filter_interrupted(ts, FilterConfig())
    assert n == 1
    flagged, n2 = filter_interrupted(ts, FilterConfig(), keep_discarded=True)
    assert n2 == 1 and len(flagged) == 100
    assert [i for i, t in enumerate(flagged) if t.label.discarded] == [42]


def test_filter_errors():
    with pytest.raises(ValueError, match="empty"):
        filter_interrupted(TraceSet(1e9), FilterConfig())
    with pytest.raises(ValueError, match="aligned"):
        filter_interrupted(make_set([[1, 2], [3, 4, 5]], aligned=False), FilterConfig())


def test_filter_never_discards_half(small_corpus):
    aligned, _ = align_traceset(small_corpus, AlignmentConfig())
    kept, n = filter_interrupted(aligned, FilterConfig(), group_by=by_program_input)
    assert n < 0.5 * len(aligned)
    kept_all, n_all = filter_interrupted(aligned, FilterConfig())
    assert n_all < 0.5 * len(aligned)


def test_region_energy_uses_marks():
    t = make_trace([10.0, 1.0, 2.0, 10.0], marks=(1, 3))
    assert region_energy(t) == 5.0


def test_runtime_from_trigger():
    t = make_trace(np.zeros(700), marks=(100, 600))
    assert extract_runtime(t, np.ones(4), np.ones(4)) == 500


def test_runtime_waveform_matches_ground_truth():
    sim = SimConfig(seed=13, interrupt_probability=0.0)
    pre, epi = os_preamble_template(), os_epilogue_template()
    tolerance = sim.timing_jitter_max * len(water_level_listing())
    for i in range(25):
        t = emit_trace(program_a(), sim, i % 16, i)
        truth = t.trigger_marks[1] - t.trigger_marks[0]
        stripped = Trace(t.samples, t.label)
        assert abs(extract_runtime(stripped, epi, pre) - truth) <= tolerance
        assert extract_runtime(t, epi, pre) == truth


def test_runtime_on_noise_not_found(rng):
    t = make_trace(rng.standard_normal(600))
    with pytest.raises(RuntimeNotFound):
        extract_runtime(t, os_epilogue_template(), os_preamble_template())


def test_runtime_template_errors():
    with pytest.raises(ValueError):
        extract_runtime(make_trace(np.ones(10)), np.ones(8), np.ones(8))
    with pytest.raises(ValueError):
        extract_runtime(make_trace(np.ones(10)), np.ones(0), np.ones(3))


def test_normalized_xcorr_finds_embedded_template(rng):
    tpl = rng.standard_normal(16)
    sig = np.concatenate([rng.standard_normal(40), tpl * 3 + 1, rng.standard_normal(40)])
    r = normalized_xcorr(sig, tpl)
    assert int(np.argmax(r)) == 40 and r[40] == pytest.approx(1.0)


def test_interrupt_screen(small_corpus):
    clean = small_corpus.where(lambda t: np.abs(t.samples[slice(*t.trigger_marks)]).max() < 2.2)
    level = interrupt_level(clean)
    assert all(not has_interrupt(t, level) for t in clean)
    sim = SimConfig(seed=2, interrupt_probability=1.0, interrupt_burst_len=(32, 32))
    hits = [has_interrupt(emit_trace(program_a(), sim, 5, i), level) for i in range(20)]
    assert sum(hits) >= 19


def test_trace_aligner_estimator(small_corpus):
    al = TraceAligner()
    X = al.fit_transform(list(small_corpus)[:5])
    assert X.shape == (5, 352)
    assert np.array_equal(X[0], align_trace(small_corpus[0], AlignmentConfig()).samples)
    assert al.get_params()["reference_index"] == 10
    bad = TraceAligner(on_missing="nan").fit([])
    assert np.isnan(bad.transform([np.zeros(400)])).all()
    with pytest.raises(NoAnchorFound):
        TraceAligner().fit([]).transform([np.zeros(400)])
    with pytest.raises(ValueError):
        TraceAligner(on_missing="skip").fit([])
