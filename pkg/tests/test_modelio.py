import struct

import numpy as np
import pytest

from emids.distinguishers import SimpleTemplateClassifier
from emids.grouping import ClassKey
from emids.modelio import (MAGIC, ModelFormatError, decode_model, encode_model, load_model,
                           save_model, write_model)
from emids.templates import GaussianTemplateClassifier
from emids.trace_core import ProgramId


def _keys(n):
    progs = [ProgramId.PrA, ProgramId.PrB, ProgramId.PrC]
    return [ClassKey(progs[i % 3]) for i in range(n)]


@pytest.fixture
def gaussian(rng):
    X = np.vstack([rng.normal(i, 1, (10, 6)) for i in range(3)])
    y = [k for k in _keys(3) for _ in range(10)]
    return GaussianTemplateClassifier(n_components=2).fit(X, y).model_


@pytest.fixture
def simple(rng):
    X = np.vstack([rng.normal(i, 1, (5, 12)) for i in range(2)])
    y = [k for k in _keys(2) for _ in range(5)]
    return SimpleTemplateClassifier(metric="xcorr", max_lag=3).fit(X, y).templates_


def test_multivariate_round_trip(gaussian):
    data = encode_model(gaussian.with_threshold(-3.5))
    assert data[:4] == MAGIC and struct.unpack_from("<HBQ", data, 4) == (1, 1, len(data) - 15)
    kind, back = decode_model(data)
    assert kind == "Multivariate"
    assert back.class_keys == gaussian.class_keys and back.threshold == -3.5
    for a, b in ((back.means, gaussian.means), (back.pooled_precision, gaussian.pooled_precision),
                 (back.projection.components, gaussian.projection.components)):
        assert np.array_equal(a, b)
    assert back.trained_on == gaussian.trained_on
    assert encode_model(back) == data


def test_simple_round_trip(simple):
    data = encode_model(simple, metric="XCORR", max_lag=3, provenance={"seed": 7})
    kind, back = decode_model(data)
    assert kind == "Simple" and back["metric"] == "XCORR" and back["max_lag"] == 3
    assert back["provenance"] == {"seed": 7}
    assert [t.class_key for t in back["templates"]] == [t.class_key for t in simple]
    assert all(np.array_equal(a.reference, b.reference) for a, b in zip(back["templates"], simple))
    assert encode_model(back["templates"], metric="XCORR", max_lag=3,
                        provenance={"seed": 7}) == data


def test_profile_round_trip(trained, tmp_path):
    profile = trained[1].profile
    path = tmp_path / "p.emmd"
    size = save_model(profile, path)
    assert path.stat().st_size == size
    kind, back = load_model(path)
    assert kind == "Profile"
    assert (back.baseline_runtime, back.runtime_tolerance) == (profile.baseline_runtime,
                                                               profile.runtime_tolerance)
    assert back.interrupt_level == profile.interrupt_level
    assert back.alignment == profile.alignment and back.claimed_program == profile.claimed_program
    assert np.array_equal(back.os_epilogue_template, profile.os_epilogue_template)
    assert encode_model(back) == path.read_bytes()


def test_profile_without_interrupt_level(trained):
    from dataclasses import replace

    bare = replace(trained[1].profile, interrupt_level=None)
    assert decode_model(encode_model(bare))[1].interrupt_level is None
    with pytest.raises(ModelFormatError, match="without a template model"):
        encode_model(replace(bare, model=None))


def test_write_model_to_stream(gaussian):
    import io

    buf = io.BytesIO()
    n = write_model(gaussian, buf)
    assert buf.getvalue() == encode_model(gaussian) and n == len(buf.getvalue())


@pytest.mark.parametrize("mutate, message", [
    (lambda d: b"XXXX" + d[4:], "bad magic"),
    (lambda d: d[:4] + struct.pack("<H", 9) + d[6:], "version"),
    (lambda d: d[:6] + bytes([7]) + d[7:], "unknown payload kind"),
    (lambda d: d[:-1], "payload length"),
    (lambda d: d[:10], "shorter than"),
])
def test_corrupt_files(gaussian, mutate, message):
    with pytest.raises(ModelFormatError, match=message):
        decode_model(mutate(encode_model(gaussian)))


def test_truncated_and_trailing_payloads(gaussian):
    data = encode_model(gaussian)
    payload = data[15:]
    short = data[:4] + struct.pack("<HBQ", 1, 1, len(payload) - 8) + payload[:-8]
    with pytest.raises(ModelFormatError, match="truncated"):
        decode_model(short)
    long = data[:4] + struct.pack("<HBQ", 1, 1, len(payload) + 3) + payload + b"abc"
    with pytest.raises(ModelFormatError, match="trailing"):
        decode_model(long)


def test_unsupported_objects():
    with pytest.raises(TypeError):
        encode_model({"not": "a model"})
    with pytest.raises(TypeError):
        encode_model([])


def test_non_classkey_labels_rejected(rng):
    X = rng.standard_normal((6, 4))
    model = GaussianTemplateClassifier(n_components=1).fit(X, list("aaabbb")).model_
    with pytest.raises(ModelFormatError, match="ClassKey"):
        encode_model(model)
