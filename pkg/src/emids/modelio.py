"""EMMD model files.

Envelope (little-endian)::

    "EMMD" | version u16 | kind u8 | payload_len u64 | payload

Kinds: 0 simple templates, 1 multivariate template model, 2 IDS profile
(a multivariate payload plus layer-1 parameters).  Matrices are row-major
f64; class keys are UTF-8 strings; provenance is canonical JSON.
"""

from __future__ import annotations

import io
import json
import struct
from typing import BinaryIO

import numpy as np

from .distinguishers import SimpleTemplate, TemplateKind
from .grouping import ClassKey
from .ids import IdsProfile
from .preprocess import AlignmentConfig
from .templates import LdaProjection, TemplateModel

MAGIC = b"EMMD"
VERSION = 1
KIND_SIMPLE = 0
KIND_MULTIVARIATE = 1
KIND_PROFILE = 2
KIND_NAMES = {KIND_SIMPLE: "Simple", KIND_MULTIVARIATE: "Multivariate", KIND_PROFILE: "Profile"}

_ENVELOPE = struct.Struct("<4sHBQ")


class ModelFormatError(ValueError):
    pass


class _Writer:
    def __init__(self):
        self.buf = io.BytesIO()

    def u32(self, v: int):
        self.buf.write(struct.pack("<I", int(v)))

    def f64(self, v: float):
        self.buf.write(struct.pack("<d", float(v)))

    def text(self, s: str):
        b = s.encode("utf-8")
        self.u32(len(b))
        self.buf.write(b)

    def array(self, a: np.ndarray):
        a = np.ascontiguousarray(a, dtype="<f8")
        self.u32(a.ndim)
        for n in a.shape:
            self.u32(n)
        self.buf.write(a.tobytes())

    def blob(self, b: bytes):
        self.u32(len(b))
        self.buf.write(b)

    def getvalue(self) -> bytes:
        return self.buf.getvalue()


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise ModelFormatError("truncated model payload")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def f64(self) -> float:
        return struct.unpack("<d", self.take(8))[0]

    def text(self) -> str:
        return self.take(self.u32()).decode("utf-8")

    def array(self) -> np.ndarray:
        shape = tuple(self.u32() for _ in range(self.u32()))
        count = int(np.prod(shape)) if shape else 1
        return np.frombuffer(self.take(8 * count), dtype="<f8").reshape(shape).astype(float)

    def blob(self) -> bytes:
        return self.take(self.u32())


def _canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def _key_text(key) -> str:
    if not isinstance(key, ClassKey):
        raise ModelFormatError(f"only ClassKey labels can be saved, got {key!r}")
    return str(key)


def _multivariate_payload(model: TemplateModel) -> bytes:
    w = _Writer()
    p = model.projection
    w.array(p.mean_global)
    w.array(p.components)
    w.array(np.zeros(0) if p.eigenvalues is None else p.eigenvalues)
    w.u32(len(model.class_keys))
    for key in model.class_keys:
        w.text(_key_text(key))
    w.array(model.means)
    w.array(model.pooled_covariance)
    w.array(model.pooled_precision)
    w.f64(model.log_det_cov)
    w.f64(model.regularization)
    w.f64(model.threshold)
    w.text(_canonical_json(model.trained_on))
    return w.getvalue()


def _read_multivariate(r: _Reader) -> TemplateModel:
    mean_global = r.array()
    components = r.array()
    eig = r.array()
    keys = tuple(ClassKey.parse(r.text()) for _ in range(r.u32()))
    means = r.array()
    cov = r.array()
    precision = r.array()
    log_det = r.f64()
    reg = r.f64()
    threshold = r.f64()
    trained_on = json.loads(r.text())
    projection = LdaProjection(mean_global, components, eig if eig.size else None)
    return TemplateModel(projection, keys, means, cov, precision, log_det, reg,
                         threshold, trained_on)


def _simple_payload(templates, metric: str, max_lag: int, provenance: dict) -> bytes:
    w = _Writer()
    w.text(metric)
    w.u32(max_lag)
    w.text(_canonical_json(provenance))
    w.u32(len(templates))
    for tpl in templates:
        w.text(tpl.kind.value)
        w.text(_key_text(tpl.class_key))
        w.u32(tpl.train_count)
        w.array(tpl.reference)
    return w.getvalue()


def _read_simple(r: _Reader) -> dict:
    metric = r.text()
    max_lag = r.u32()
    provenance = json.loads(r.text())
    templates = []
    for _ in range(r.u32()):
        kind = TemplateKind(r.text())
        key = ClassKey.parse(r.text())
        count = r.u32()
        templates.append(SimpleTemplate(kind, key, r.array(), count))
    return {"templates": templates, "metric": metric, "max_lag": max_lag,
            "provenance": provenance}


def _profile_payload(profile: IdsProfile) -> bytes:
    if profile.model is None:
        raise ModelFormatError("cannot save a profile without a template model")
    w = _Writer()
    w.blob(_multivariate_payload(profile.model))
    w.u32(profile.baseline_runtime)
    w.u32(profile.runtime_tolerance)
    w.text(_key_text(profile.claimed_program))
    w.text(profile.decision_policy)
    w.text(_canonical_json(profile.alignment.to_dict()))
    w.array(profile.os_preamble_template)
    w.array(profile.os_epilogue_template)
    w.f64(np.nan if profile.interrupt_level is None else profile.interrupt_level)
    w.f64(profile.confidence_floor)
    return w.getvalue()


def _read_profile(r: _Reader) -> IdsProfile:
    model = _read_multivariate(_Reader(r.blob()))
    baseline = r.u32()
    tolerance = r.u32()
    claimed = ClassKey.parse(r.text())
    policy = r.text()
    alignment = AlignmentConfig(**json.loads(r.text()))
    pre = r.array()
    epi = r.array()
    level = r.f64()
    floor = r.f64()
    return IdsProfile(baseline, tolerance, model, claimed, alignment, pre, epi,
                      None if np.isnan(level) else level, floor, policy)


def _envelope(kind: int, payload: bytes) -> bytes:
    return _ENVELOPE.pack(MAGIC, VERSION, kind, len(payload)) + payload


def encode_model(obj, **simple_opts) -> bytes:
    """Serialize a TemplateModel, an IdsProfile or a list of SimpleTemplates."""
    if isinstance(obj, TemplateModel):
        return _envelope(KIND_MULTIVARIATE, _multivariate_payload(obj))
    if isinstance(obj, IdsProfile):
        return _envelope(KIND_PROFILE, _profile_payload(obj))
    if isinstance(obj, (list, tuple)) and obj and isinstance(obj[0], SimpleTemplate):
        return _envelope(KIND_SIMPLE, _simple_payload(
            obj, simple_opts.get("metric", "SAD"), simple_opts.get("max_lag", 4),
            simple_opts.get("provenance", {})))
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def decode_model(data: bytes):
    """Inverse of :func:`encode_model`; returns (kind name, object)."""
    if len(data) < _ENVELOPE.size:
        raise ModelFormatError("file shorter than the EMMD envelope")
    magic, version, kind, length = _ENVELOPE.unpack_from(data)
    if magic != MAGIC:
        raise ModelFormatError(f"bad magic {magic!r}, expected {MAGIC!r}")
    if version != VERSION:
        raise ModelFormatError(f"unsupported EMMD version {version}")
    payload = data[_ENVELOPE.size:]
    if len(payload) != length:
        raise ModelFormatError(f"payload length {len(payload)} != declared {length}")
    r = _Reader(payload)
    if kind == KIND_MULTIVARIATE:
        obj = _read_multivariate(r)
    elif kind == KIND_SIMPLE:
        obj = _read_simple(r)
    elif kind == KIND_PROFILE:
        obj = _read_profile(r)
    else:
        raise ModelFormatError(f"unknown payload kind {kind}")
    if r.pos != len(payload):
        raise ModelFormatError("trailing bytes in payload")
    return KIND_NAMES[kind], obj


def save_model(obj, path, **simple_opts) -> int:
    data = encode_model(obj, **simple_opts)
    with open(path, "wb") as fh:
        fh.write(data)
    return len(data)


def load_model(path):
    with open(path, "rb") as fh:
        return decode_model(fh.read())


def write_model(obj, destination: BinaryIO, **simple_opts) -> int:
    data = encode_model(obj, **simple_opts)
    destination.write(data)
    return len(data)
