"""Deterministic synthetic EM traces for the water-level programs.

A trace is laid out as::

    [OS activity | OS signature | quiet]  user program  [quiet | OS signature | OS activity]

The user program is a sequence of abstract instructions, each emitting a
half-sine bump whose amplitude depends on the opcode and on the Hamming
weight of the operand it processes.  Every random draw for a trace comes from
a generator seeded with ``(seed, program, input, trace_index)`` so traces can be
produced in any order or in parallel.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import NamedTuple, Optional, Sequence

import numpy as np

from .trace_core import PathId, ProgramId, Trace, TraceLabel, TraceSet, parse_program

OPCODES = ("LOAD", "CMP", "NOT", "XOR", "STORE", "NOP")
OPCODE_AMPLITUDE = {"LOAD": 1.0, "CMP": 0.8, "NOT": 0.6, "XOR": 0.7, "STORE": 0.9, "NOP": 0.2}
BASE_DURATION = 16

SIGNATURE_LEN = 32
QUIET_LEN = 24
INTERRUPT_AMPLITUDE = 3.0
_SIGNATURE_SEED = 0x5EED_05


def half_sine(amplitude: float, duration: int = BASE_DURATION) -> np.ndarray:
    return amplitude * np.sin(np.pi * (np.arange(duration) + 0.5) / duration)


def hamming_weight(value: int) -> int:
    return bin(int(value) & 0xF).count("1")


@dataclass(frozen=True)
class AbstractInstruction:
    """One listing entry.

    ``operand`` names what the instruction processes: ``"level"`` (the 4-bit
    input), ``"const_low"`` / ``"const_high"`` (comparison constants), ``"flag"``
    (the boolean produced by the preceding compare) or a program variable.
    ``when`` predicates the instruction on a variable: if that variable is
    false a NOP executes in its slot instead.
    """

    opcode: str
    operand: Optional[str] = None
    when: Optional[str] = None
    base_shape: tuple = ()
    base_duration: int = BASE_DURATION

    def __post_init__(self):
        if self.opcode not in OPCODES:
            raise ValueError(f"unknown opcode {self.opcode!r}")
        shape = tuple(self.base_shape) or tuple(half_sine(OPCODE_AMPLITUDE[self.opcode]))
        object.__setattr__(self, "base_shape", shape)
        object.__setattr__(self, "base_duration", len(shape))
        if len(shape) < 4:
            raise ValueError("base_duration must be at least 4")


def water_level_listing(low_flipped: bool = False) -> tuple[AbstractInstruction, ...]:
    """The six-line water-level controller.

    1. water_low  := level <= LOW   (PrB: NOT(level <= LOW))
    2. water_high := level >= HIGH
    3. ok := NOT(water_low XOR water_high)
    4-6. drive out_low, out_ok, out_high
    """
    I = AbstractInstruction
    return (
        I("LOAD", "level"), I("CMP", "const_low"),
        I("NOT" if low_flipped else "NOP", "flag"), I("STORE", "water_low"),
        I("LOAD", "level"), I("CMP", "const_high"), I("NOP", "flag"), I("STORE", "water_high"),
        I("LOAD", "water_low"), I("XOR", "water_high"), I("NOT", "ok"), I("STORE", "ok"),
        I("LOAD", "water_low"), I("STORE", "water_low", when="water_low"),
        I("LOAD", "ok"), I("STORE", "ok", when="ok"),
        I("LOAD", "water_high"), I("STORE", "water_high", when="water_high"),
    )


@dataclass(frozen=True)
class ProgramSpec:
    program_id: ProgramId
    instruction_list: tuple[AbstractInstruction, ...]
    low_threshold: int = 3
    high_threshold: int = 10
    low_flipped: bool = False

    def __post_init__(self):
        object.__setattr__(self, "program_id", parse_program(self.program_id))
        object.__setattr__(self, "instruction_list", tuple(self.instruction_list))
        if not self.instruction_list:
            raise ValueError("instruction_list is empty")
        if not 0 <= self.low_threshold < self.high_threshold <= 15:
            raise ValueError("thresholds must satisfy 0 <= low < high <= 15")

    def variables(self, level: int) -> dict[str, bool]:
        water_low = level <= self.low_threshold
        if self.low_flipped:
            water_low = not water_low
        water_high = level >= self.high_threshold
        return {"water_low": water_low, "water_high": water_high,
                "ok": not (water_low ^ water_high)}


def program_a(low: int = 3, high: int = 10) -> ProgramSpec:
    return ProgramSpec(ProgramId.PrA, water_level_listing(), low, high)


def program_b(low: int = 3, high: int = 10) -> ProgramSpec:
    return ProgramSpec(ProgramId.PrB, water_level_listing(low_flipped=True), low, high,
                       low_flipped=True)


def program_c(low: int = 3, high: int = 12) -> ProgramSpec:
    return ProgramSpec(ProgramId.PrC, water_level_listing(), low, high)


def default_programs() -> list[ProgramSpec]:
    return [program_a(), program_b(), program_c()]


def program_by_id(program_id) -> ProgramSpec:
    pid = parse_program(program_id)
    return {p.program_id: p for p in default_programs()}[pid]


def path_of_input(spec: ProgramSpec, level: int) -> PathId:
    """Which output the program drives for ``level``.

    Low wins over High when a program sets both indicators (PrB above HIGH).
    """
    if not 0 <= level <= 15:
        raise ValueError(f"input {level} outside [0, 15]")
    v = spec.variables(level)
    if v["water_low"]:
        return PathId.Low
    if v["water_high"]:
        return PathId.High
    return PathId.Ok


@dataclass(frozen=True)
class SimConfig:
    seed: int = 1
    amplitude_noise_sigma: float = 0.04
    timing_jitter_max: int = 1
    interrupt_probability: float = 0.10
    interrupt_burst_len: tuple[int, int] = (8, 32)
    os_preamble_len: int = 128
    os_epilogue_len: int = 96
    traces_per_input: int = 200
    data_dependent_amplitude: float = 0.8
    # Extensions: the coupling of the runtime input operand relative to
    # static operands, and the random capture-start offset before the OS.
    input_coupling: float = 0.03
    capture_offset_max: int = 48
    sample_rate_hz: float = 1e9

    def __post_init__(self):
        lo, hi = (int(v) for v in self.interrupt_burst_len)
        object.__setattr__(self, "interrupt_burst_len", (lo, hi))
        checks = [
            (0 <= self.seed < 2**64, "seed must be a 64-bit unsigned integer"),
            (self.amplitude_noise_sigma >= 0, "amplitude_noise_sigma must be >= 0"),
            (self.timing_jitter_max >= 0, "timing_jitter_max must be >= 0"),
            (0 <= self.interrupt_probability <= 1, "interrupt_probability must be in [0, 1]"),
            (1 <= lo <= hi, "interrupt_burst_len must be a range 1 <= lo <= hi"),
            (self.os_preamble_len >= SIGNATURE_LEN + QUIET_LEN,
             f"os_preamble_len must be >= {SIGNATURE_LEN + QUIET_LEN}"),
            (self.os_epilogue_len >= SIGNATURE_LEN + QUIET_LEN,
             f"os_epilogue_len must be >= {SIGNATURE_LEN + QUIET_LEN}"),
            (self.traces_per_input >= 1, "traces_per_input must be positive"),
            (self.data_dependent_amplitude >= 0, "data_dependent_amplitude must be >= 0"),
            (self.input_coupling >= 0, "input_coupling must be >= 0"),
            (self.capture_offset_max >= 0, "capture_offset_max must be >= 0"),
            (self.sample_rate_hz > 0, "sample_rate_hz must be positive"),
        ]
        for ok, msg in checks:
            if not ok:
                raise ValueError(msg)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["interrupt_burst_len"] = list(self.interrupt_burst_len)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SimConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown SimConfig keys: {sorted(unknown)}")
        return cls(**d)


def _signature(which: int) -> np.ndarray:
    rng = np.random.default_rng([_SIGNATURE_SEED, which])
    bumps = rng.uniform(0.5, 1.0, SIGNATURE_LEN // 8)
    return np.concatenate([half_sine(a, 8) for a in bumps])


def os_preamble_template() -> np.ndarray:
    """Noise-free OS waveform immediately preceding the user program."""
    return np.concatenate([_signature(0), np.zeros(QUIET_LEN)])


def os_epilogue_template() -> np.ndarray:
    """Noise-free OS waveform immediately following the user program."""
    return np.concatenate([np.zeros(QUIET_LEN), _signature(1)])


def _os_activity(n: int, which: int) -> np.ndarray:
    """Dense OS emission of length ``n``: fixed back-to-back bumps, never quiet.

    The pattern is the same for every trace; captures differ only by how much
    of it precedes the program (the capture offset).  ``which`` 0 is the tail
    adjacent to the preamble signature, 1 the head after the epilogue.
    """
    if n <= 0:
        return np.zeros(0)
    rng = np.random.default_rng([_SIGNATURE_SEED, 2 + which])
    bumps = rng.uniform(0.5, 1.0, n // 8 + 1)
    pattern = np.concatenate([half_sine(a, 8) for a in bumps])[:n]
    # the preamble side grows away from the signature, so mirror it
    return pattern[::-1] if which == 0 else pattern


def operand_value(instr: AbstractInstruction, spec: ProgramSpec, level: int,
                  variables: dict[str, bool], flag: bool) -> int:
    """4-bit value whose Hamming weight modulates the instruction's emission.

    Compares leak the two's-complement subtrahend ``(-c) mod 16`` the adder is
    fed, so constants with equal weight (10 and 12) still leak differently.
    """
    op = instr.operand
    if op == "level":
        return level
    if op == "const_low":
        return (-spec.low_threshold) % 16
    if op == "const_high":
        return (-spec.high_threshold) % 16
    if op == "flag":
        return int(flag)
    if op in variables:
        return int(variables[op])
    return 0


class Executed(NamedTuple):
    opcode: str
    weight: float
    is_input: bool
    shape: np.ndarray


_NOP = AbstractInstruction("NOP")


def execute(spec: ProgramSpec, level: int) -> list[Executed]:
    """Executed instructions for one input.

    ``weight`` is the operand's Hamming weight / 4; ``is_input`` flags the
    operands that carry the runtime input, which couple more weakly.
    """
    variables = spec.variables(level)
    flag = False
    out = []
    for instr in spec.instruction_list:
        if instr.when is not None and not variables[instr.when]:
            out.append(Executed("NOP", 0.0, False, np.asarray(_NOP.base_shape)))
            continue
        if instr.opcode == "CMP":
            if instr.operand == "const_low":
                flag = level <= spec.low_threshold
            else:
                flag = level >= spec.high_threshold
        value = operand_value(instr, spec, level, variables, flag)
        if instr.opcode == "NOT" and instr.operand == "flag":
            flag = not flag
        out.append(Executed(instr.opcode, hamming_weight(value) / 4.0,
                            instr.operand == "level", np.asarray(instr.base_shape)))
    return out


def opcode_sequence(spec: ProgramSpec, level: int) -> list[str]:
    return [e.opcode for e in execute(spec, level)]


def _instruction_emission(e: Executed, cfg: SimConfig) -> np.ndarray:
    coupling = cfg.input_coupling if e.is_input else 1.0
    return (1.0 + cfg.data_dependent_amplitude * coupling * e.weight) * e.shape


def _stretch(shape: np.ndarray, extra: int, rng: np.random.Generator) -> np.ndarray:
    if extra <= 0:
        return shape
    counts = np.ones(shape.size, dtype=int)
    np.add.at(counts, rng.integers(0, shape.size, extra), 1)
    return np.repeat(shape, counts)


def _trace_rng(cfg: SimConfig, program_id: ProgramId, level: int,
               trace_index: int) -> np.random.Generator:
    return np.random.default_rng(
        np.random.SeedSequence([cfg.seed, int(program_id), level, trace_index]))


def emit_trace(spec: ProgramSpec, cfg: SimConfig, level: int, trace_index: int) -> Trace:
    """Generate one raw trace.  Deterministic in (seed, program, input, index)."""
    if not 0 <= level <= 15:
        raise ValueError(f"input {level} outside [0, 15]")
    rng = _trace_rng(cfg, spec.program_id, level, trace_index)

    pieces = []
    for e in execute(spec, level):
        shape = _instruction_emission(e, cfg)
        extra = int(rng.integers(0, cfg.timing_jitter_max + 1)) if cfg.timing_jitter_max else 0
        pieces.append(_stretch(shape, extra, rng))
    region = np.concatenate(pieces)

    if cfg.interrupt_probability > 0 and rng.random() < cfg.interrupt_probability:
        lo, hi = cfg.interrupt_burst_len
        burst = INTERRUPT_AMPLITUDE * rng.standard_normal(int(rng.integers(lo, hi + 1)))
        at = int(rng.integers(0, region.size + 1))
        region = np.concatenate([region[:at], burst, region[at:]])

    offset = int(rng.integers(0, cfg.capture_offset_max + 1)) if cfg.capture_offset_max else 0
    pre_activity = cfg.os_preamble_len - SIGNATURE_LEN - QUIET_LEN + offset
    post_activity = cfg.os_epilogue_len - SIGNATURE_LEN - QUIET_LEN
    preamble = np.concatenate([_os_activity(pre_activity, 0), os_preamble_template()])
    epilogue = np.concatenate([os_epilogue_template(), _os_activity(post_activity, 1)])

    samples = np.concatenate([preamble, region, epilogue])
    if cfg.amplitude_noise_sigma > 0:
        samples = samples + cfg.amplitude_noise_sigma * rng.standard_normal(samples.size)
    samples = samples.astype(np.float32).astype(np.float64)

    start = preamble.size
    label = TraceLabel(spec.program_id, level, path_of_input(spec, level))
    return Trace(samples, label, (start, start + region.size))


def generate_corpus(specs: Sequence[ProgramSpec], cfg: SimConfig,
                    inputs: Sequence[int] = tuple(range(16)),
                    first_index: int = 0) -> TraceSet:
    """``traces_per_input`` traces for every (program, input) pair, in that order."""
    if not specs:
        raise ValueError("no program specs given")
    traces = [emit_trace(spec, cfg, level, first_index + k)
              for spec in specs
              for level in inputs
              for k in range(cfg.traces_per_input)]
    return TraceSet(cfg.sample_rate_hz, tuple(traces), aligned=False)
