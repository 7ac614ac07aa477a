"""Trace data model and the EMTR binary container.

A :class:`Trace` is one vector of EM amplitude samples with its labels.  A
:class:`TraceSet` groups traces that share a sample rate.  Both are immutable.

EMTR layout (little-endian)::

    "EMTR" | version u16 | trace_count u32 | sample_rate_hz f64
    per trace: samples_len u32 | program u8 | input u8 | path u8 | flags u8
               [start u32 | end u32]  (flags bit 1)
               samples f32 * samples_len

flags bit 0 marks a discarded trace, bit 2 repeats the set-level ``aligned``
flag on every record (an empty set therefore always reads back unaligned).
Unknown label values encode as 255.
"""

from __future__ import annotations

import enum
import json
import struct
from dataclasses import dataclass, field, replace
from typing import BinaryIO, Iterable, Optional, Sequence

import numpy as np

MAGIC = b"EMTR"
VERSION = 1
UNKNOWN = 255

_HEADER = struct.Struct("<4sHId")
_RECORD = struct.Struct("<IBBBB")
_MARKS = struct.Struct("<II")

FLAG_DISCARDED = 0x01
FLAG_TRIGGER = 0x02
FLAG_ALIGNED = 0x04


class TraceFormatError(ValueError):
    """Raised for malformed or unsupported EMTR input."""


class ProgramId(enum.IntEnum):
    PrA = 0
    PrB = 1
    PrC = 2
    Unknown = UNKNOWN


class PathId(enum.IntEnum):
    Low = 0
    Ok = 1
    High = 2
    Unknown = UNKNOWN


def _parse_enum(enum_cls, value, what: str):
    if isinstance(value, enum_cls):
        return value
    if isinstance(value, str):
        for member in enum_cls:
            if member.name.lower() == value.strip().lower():
                return member
        raise ValueError(f"unknown {what} {value!r}")
    try:
        return enum_cls(int(value))
    except ValueError:
        raise ValueError(f"unknown {what} {value!r}") from None


def parse_program(value) -> ProgramId:
    return _parse_enum(ProgramId, value, "program id")


def parse_path(value) -> PathId:
    return _parse_enum(PathId, value, "path id")


@dataclass(frozen=True)
class TraceLabel:
    program_id: ProgramId = ProgramId.Unknown
    input_value: Optional[int] = None
    path_id: PathId = PathId.Unknown
    discarded: bool = False

    def __post_init__(self):
        object.__setattr__(self, "program_id", parse_program(self.program_id))
        object.__setattr__(self, "path_id", parse_path(self.path_id))
        if self.input_value is not None:
            v = int(self.input_value)
            if not 0 <= v <= 15:
                raise ValueError(f"input_value {v} outside [0, 15]")
            object.__setattr__(self, "input_value", v)


@dataclass(frozen=True, eq=False)
class Trace:
    """One EM trace.

    ``samples`` is stored as a read-only float64 array.  Values survive a
    float32 round-trip only if they were float32-representable to begin with,
    which is what :func:`write_traceset` requires for bit-exactness.
    """

    samples: np.ndarray
    label: TraceLabel = field(default_factory=TraceLabel)
    trigger_marks: Optional[tuple[int, int]] = None

    def __post_init__(self):
        s = np.array(self.samples, dtype=np.float64, copy=True).reshape(-1)
        if s.size == 0:
            raise ValueError("trace has no samples")
        if not np.all(np.isfinite(s)):
            raise ValueError("trace contains non-finite samples")
        s.setflags(write=False)
        object.__setattr__(self, "samples", s)
        if self.trigger_marks is not None:
            start, end = (int(v) for v in self.trigger_marks)
            if not 0 <= start < end <= s.size:
                raise ValueError(
                    f"trigger marks ({start}, {end}) invalid for {s.size} samples")
            object.__setattr__(self, "trigger_marks", (start, end))

    def __len__(self) -> int:
        return self.samples.size

    def __eq__(self, other) -> bool:
        if not isinstance(other, Trace):
            return NotImplemented
        return (self.label == other.label
                and self.trigger_marks == other.trigger_marks
                and np.array_equal(self.samples, other.samples))

    def with_label(self, **changes) -> "Trace":
        return replace(self, label=replace(self.label, **changes))


@dataclass(frozen=True, eq=False)
class TraceSet:
    sample_rate_hz: float
    traces: tuple[Trace, ...] = ()
    aligned: bool = False

    def __post_init__(self):
        rate = float(self.sample_rate_hz)
        if not (rate > 0 and np.isfinite(rate)):
            raise ValueError("sample_rate_hz must be positive")
        object.__setattr__(self, "sample_rate_hz", rate)
        object.__setattr__(self, "traces", tuple(self.traces))
        if not self.traces:
            object.__setattr__(self, "aligned", False)
        if self.aligned and len({len(t) for t in self.traces}) > 1:
            raise ValueError("aligned TraceSet requires equal trace lengths")

    def __len__(self) -> int:
        return len(self.traces)

    def __iter__(self):
        return iter(self.traces)

    def __getitem__(self, idx):
        return self.traces[idx]

    def __eq__(self, other) -> bool:
        if not isinstance(other, TraceSet):
            return NotImplemented
        return (self.sample_rate_hz == other.sample_rate_hz
                and self.aligned == other.aligned
                and self.traces == other.traces)

    def matrix(self) -> np.ndarray:
        """Samples stacked into an (n_traces, n_samples) array."""
        if not self.traces:
            raise ValueError("empty TraceSet")
        if len({len(t) for t in self.traces}) > 1:
            raise ValueError("traces differ in length; align first")
        return np.vstack([t.samples for t in self.traces])

    def labels(self) -> list[TraceLabel]:
        return [t.label for t in self.traces]

    def subset(self, indices: Iterable[int]) -> "TraceSet":
        return replace(self, traces=tuple(self.traces[i] for i in indices))

    def where(self, predicate) -> "TraceSet":
        return replace(self, traces=tuple(t for t in self.traces if predicate(t)))

    def kept(self) -> "TraceSet":
        return self.where(lambda t: not t.label.discarded)


def _label_bytes(label: TraceLabel) -> tuple[int, int, int]:
    inp = UNKNOWN if label.input_value is None else label.input_value
    return int(label.program_id), inp, int(label.path_id)


def encode_traceset(ts: TraceSet) -> bytes:
    parts = [_HEADER.pack(MAGIC, VERSION, len(ts.traces), ts.sample_rate_hz)]
    for i, t in enumerate(ts.traces):
        with np.errstate(over="ignore"):
            f32 = t.samples.astype("<f4")
        if not np.all(np.isfinite(f32)):
            raise ValueError(f"trace {i}: sample not finite as float32")
        flags = (FLAG_DISCARDED if t.label.discarded else 0)
        flags |= FLAG_TRIGGER if t.trigger_marks is not None else 0
        flags |= FLAG_ALIGNED if ts.aligned else 0
        parts.append(_RECORD.pack(f32.size, *_label_bytes(t.label), flags))
        if t.trigger_marks is not None:
            parts.append(_MARKS.pack(*t.trigger_marks))
        parts.append(f32.tobytes())
    return b"".join(parts)


def write_traceset(ts: TraceSet, destination: BinaryIO) -> int:
    """Write ``ts`` as EMTR; returns the number of bytes written."""
    data = encode_traceset(ts)
    destination.write(data)
    return len(data)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        end = self.pos + n
        if end > len(self.data):
            raise TraceFormatError(
                f"truncated {what}: expected {n} bytes at offset {self.pos}, "
                f"got {len(self.data) - self.pos}")
        chunk = self.data[self.pos:end]
        self.pos = end
        return chunk


def decode_traceset(data: bytes) -> TraceSet:
    r = _Reader(data)
    if len(data) >= 4 and data[:4] != MAGIC:
        raise TraceFormatError(f"bad magic {data[:4]!r}, expected {MAGIC!r}")
    magic, version, count, rate = _HEADER.unpack(r.take(_HEADER.size, "header"))
    if version != VERSION:
        raise TraceFormatError(f"unsupported EMTR version {version}")
    traces = []
    aligned = count > 0
    for i in range(count):
        n, prog, inp, path, flags = _RECORD.unpack(
            r.take(_RECORD.size, f"record header of trace {i}"))
        aligned = aligned and bool(flags & FLAG_ALIGNED)
        marks = None
        if flags & FLAG_TRIGGER:
            marks = _MARKS.unpack(r.take(_MARKS.size, f"trigger marks of trace {i}"))
        raw = r.take(4 * n, f"samples of trace {i} ({n} samples)")
        samples = np.frombuffer(raw, dtype="<f4").astype(np.float64)
        if not np.all(np.isfinite(samples)):
            raise TraceFormatError(f"trace {i}: non-finite sample")
        label = TraceLabel(
            program_id=ProgramId(prog),
            input_value=None if inp == UNKNOWN else inp,
            path_id=PathId(path),
            discarded=bool(flags & FLAG_DISCARDED),
        )
        try:
            traces.append(Trace(samples, label, marks))
        except ValueError as exc:
            raise TraceFormatError(f"trace {i}: {exc}") from None
    if r.pos != len(data):
        raise TraceFormatError(f"{len(data) - r.pos} trailing bytes after last trace")
    if aligned and len({len(t) for t in traces}) > 1:
        raise TraceFormatError("aligned flag set but trace lengths differ")
    return TraceSet(rate, tuple(traces), aligned=aligned)


def read_traceset(source: BinaryIO) -> TraceSet:
    return decode_traceset(source.read())


def save_traceset(ts: TraceSet, path) -> int:
    with open(path, "wb") as fh:
        return write_traceset(ts, fh)


def load_traceset(path) -> TraceSet:
    with open(path, "rb") as fh:
        return read_traceset(fh)


def slice_to_region(t: Trace) -> Trace:
    """Cut ``t`` down to its user-program region and rebase the marks."""
    if t.trigger_marks is None:
        raise ValueError("trace has no trigger marks")
    start, end = t.trigger_marks
    return Trace(t.samples[start:end], t.label, (0, end - start))


def manifest(ts: TraceSet) -> str:
    """JSON description of a TraceSet's labels.  Derived data only."""
    rows = []
    for i, t in enumerate(ts.traces):
        rows.append({
            "index": i,
            "length": len(t),
            "program": t.label.program_id.name,
            "input": t.label.input_value,
            "path": t.label.path_id.name,
            "discarded": t.label.discarded,
            "trigger_marks": list(t.trigger_marks) if t.trigger_marks else None,
        })
    return json.dumps({"sample_rate_hz": ts.sample_rate_hz, "aligned": ts.aligned,
                       "traces": rows}, indent=2)


def traceset_from_arrays(samples: Sequence, labels: Sequence[TraceLabel],
                         sample_rate_hz: float = 1e9, aligned: bool = False) -> TraceSet:
    return TraceSet(sample_rate_hz,
                    tuple(Trace(s, lab) for s, lab in zip(samples, labels)),
                    aligned=aligned)
