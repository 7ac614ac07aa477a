import numpy as np
import pytest
from sklearn.base import clone

from conftest import make_set, make_trace
from emids.distinguishers import (ScoreUndefined, SimpleTemplate, SimpleTemplateClassifier,
                                  TemplateKind, build_simple, classify_simple, sad_score,
                                  score_matrix, xcorr_matrix, xcorr_score)
from emids.grouping import ClassKey, Grouping, key_of
from emids.preprocess import AlignmentConfig, align_traceset
from emids.trace_core import PathId, ProgramId
from oracles import pearson


def _tpl(ref, key="k", kind=TemplateKind.Mean):
    return SimpleTemplate(kind, key, np.asarray(ref, dtype=float), 2)


def test_build_mean_and_median():
    mean = build_simple(make_set([[1, 2], [3, 4]]), "mean", Grouping.PerProgram)
    assert len(mean) == 1 and mean[0].reference.tolist() == [2, 3]
    assert mean[0].class_key == ClassKey(ProgramId.PrA) and mean[0].train_count == 2
    med = build_simple(make_set([[1], [1], [10]]), TemplateKind.Median, "PerProgram")
    assert med[0].reference.tolist() == [1]


def test_build_per_path_on_program_a(small_corpus):
    aligned, _ = align_traceset(small_corpus.where(
        lambda t: t.label.program_id is ProgramId.PrA), AlignmentConfig())
    tpls = build_simple(aligned, "mean", Grouping.PerPath)
    assert [t.class_key.path_id for t in tpls] == [PathId.Low, PathId.Ok, PathId.High]


def test_build_errors():
    with pytest.raises(ValueError, match="fewer than 2"):
        build_simple(make_set([[1, 2]]), "mean", "PerProgram")
    with pytest.raises(ValueError, match="aligned"):
        build_simple(make_set([[1, 2], [1, 2, 3]], aligned=False), "mean", "PerProgram")
    with pytest.raises(ValueError):
        SimpleTemplate(TemplateKind.Mean, "k", np.zeros(3), 1)


def test_sad_examples(rng):
    ref = rng.standard_normal(100)
    assert sad_score(make_trace(ref), _tpl(ref)) == 0.0
    assert sad_score(make_trace(ref + 0.5), _tpl(ref)) == pytest.approx(50.0)
    a, b = rng.standard_normal(30), rng.standard_normal(30)
    assert sad_score(a, b) == sad_score(b, a)
    with pytest.raises(ValueError, match="length"):
        sad_score(np.zeros(3), np.zeros(4))


def test_xcorr_examples(rng):
    ref = rng.standard_normal(60)
    assert xcorr_score(ref, _tpl(ref), 0) == pytest.approx(1.0)
    assert xcorr_score(-ref, _tpl(ref), 0) == pytest.approx(-1.0)
    shifted = np.roll(ref, 3)
    assert xcorr_score(shifted, _tpl(ref), 5) == pytest.approx(1.0, abs=1e-9)
    assert xcorr_score(shifted, _tpl(ref), 0) < 0.9


def test_xcorr_matches_pearson_oracle(rng):
    x, r = rng.standard_normal(20), rng.standard_normal(20)
    best = max(pearson(list(x[lag:] if lag >= 0 else x[:lag]),
                       list(r[:20 - lag] if lag >= 0 else r[-lag:]))
               for lag in range(-3, 4))
    assert xcorr_score(x, r, 3) == pytest.approx(best, abs=1e-12)


def test_xcorr_errors():
    with pytest.raises(ScoreUndefined):
        xcorr_score(np.ones(10), np.arange(10.0), 0)
    with pytest.raises(ValueError, match="max_lag"):
        xcorr_score(np.arange(10.0), np.arange(10.0), 5)
    with pytest.raises(ValueError, match="length"):
        xcorr_matrix(np.ones((1, 5)), np.ones((1, 6)), 0)


def test_classify_exact_match_and_ties(rng):
    refs = [rng.standard_normal(16) for _ in range(3)]
    tpls = [_tpl(r, key=i) for i, r in enumerate(refs)]
    for metric in ("sad", "xcorr"):
        assert classify_simple(make_trace(refs[1]), tpls, metric) == 1
    twins = [_tpl(refs[0], "first"), _tpl(refs[0], "second")]
    assert classify_simple(make_trace(refs[0] + 0.1), twins, "sad") == "first"
    assert classify_simple(make_trace(refs[0] + 0.1), twins, "xcorr") == "first"
    with pytest.raises(ValueError):
        classify_simple(make_trace(refs[0]), [], "sad")


def test_score_matrix_orientation(rng):
    X = rng.standard_normal((4, 10))
    R = X[:2].copy()
    s = score_matrix(X, R, "SAD")
    assert s.shape == (4, 2) and s[0, 0] == 0.0 and np.all(s <= 0)
    assert np.allclose(s[:, 1], [-np.abs(x - R[1]).sum() for x in X])


def test_xcorr_beats_chance_on_flip_attack(small_corpus):
    pair = small_corpus.where(lambda t: t.label.program_id in (ProgramId.PrA, ProgramId.PrB))
    aligned, _ = align_traceset(pair, AlignmentConfig())
    train = aligned.subset(range(0, len(aligned), 2))
    test = aligned.subset(range(1, len(aligned), 2))
    y = [key_of(t.label, Grouping.PerProgram) for t in train]
    clf = SimpleTemplateClassifier(metric="xcorr").fit(train.matrix(), y)
    acc = clf.score(test.matrix(), [key_of(t.label, Grouping.PerProgram) for t in test])
    assert acc > 0.5


def test_estimator_api(rng):
    X = np.vstack([rng.normal(0, 1, (5, 8)), rng.normal(3, 1, (5, 8))])
    y = ["a"] * 5 + ["b"] * 5
    clf = SimpleTemplateClassifier(kind="median", metric="sad", max_lag=2)
    assert clf.get_params() == {"kind": "median", "metric": "sad", "max_lag": 2}
    fitted = clf.fit(X, y)
    assert fitted is clf and clf.classes_ == ["a", "b"]
    assert clf.predict(X[:1]) == ["a"] and clf.score(X, y) == 1.0
    assert np.allclose(clf.templates_[1].reference, np.median(X[5:], axis=0))
    assert clone(clf).get_params() == clf.get_params()
    again = SimpleTemplateClassifier.from_templates(clf.templates_, "xcorr", 1)
    refs = np.vstack([t.reference for t in clf.templates_])
    assert again.predict(refs) == ["a", "b"]


def test_estimator_rejects_singleton_class(rng):
    with pytest.raises(ValueError, match="fewer than 2"):
        SimpleTemplateClassifier().fit(rng.standard_normal((3, 4)), ["a", "a", "b"])
