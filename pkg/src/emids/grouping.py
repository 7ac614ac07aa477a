"""Class keys: how traces are grouped into templates."""

from __future__ import annotations

import enum
from typing import NamedTuple, Optional

from .trace_core import PathId, ProgramId, TraceLabel, parse_path, parse_program


class Grouping(enum.Enum):
    PerProgram = "PerProgram"
    PerInput = "PerInput"
    PerPath = "PerPath"

    @classmethod
    def parse(cls, value) -> "Grouping":
        if isinstance(value, Grouping):
            return value
        for g in cls:
            if g.value.lower() == str(value).lower():
                return g
        raise ValueError(f"unknown grouping {value!r}")


class ClassKey(NamedTuple):
    """(program, input, path); unused parts are None.

    Per-input keys keep the path so predictions can be scored at path level.
    """

    program_id: ProgramId
    input_value: Optional[int] = None
    path_id: Optional[PathId] = None

    def __str__(self) -> str:
        inp = "*" if self.input_value is None else str(self.input_value)
        path = "*" if self.path_id is None else self.path_id.name
        return f"{self.program_id.name}/{inp}/{path}"

    @classmethod
    def parse(cls, text: str) -> "ClassKey":
        try:
            prog, inp, path = text.split("/")
        except ValueError:
            raise ValueError(f"malformed class key {text!r}") from None
        return cls(parse_program(prog),
                   None if inp == "*" else int(inp),
                   None if path == "*" else parse_path(path))

    def sort_key(self) -> tuple:
        return (int(self.program_id),
                -1 if self.input_value is None else self.input_value,
                -1 if self.path_id is None else int(self.path_id))


def key_of(label: TraceLabel, grouping: Grouping) -> ClassKey:
    grouping = Grouping.parse(grouping)
    if grouping is Grouping.PerProgram:
        return ClassKey(label.program_id)
    if grouping is Grouping.PerPath:
        return ClassKey(label.program_id, None, label.path_id)
    if label.input_value is None:
        raise ValueError("per-input grouping needs a known input value")
    return ClassKey(label.program_id, label.input_value, label.path_id)


def same_class(predicted: ClassKey, truth: ClassKey, grouping: Grouping) -> bool:
    """Whether a prediction counts as correct under ``grouping``."""
    grouping = Grouping.parse(grouping)
    if predicted.program_id != truth.program_id:
        return False
    if grouping is Grouping.PerProgram:
        return True
    if grouping is Grouping.PerPath:
        return predicted.path_id == truth.path_id
    return predicted.input_value == truth.input_value


def sorted_keys(keys) -> list:
    keys = list(dict.fromkeys(keys))
    if all(isinstance(k, ClassKey) for k in keys):
        return sorted(keys, key=ClassKey.sort_key)
    try:
        return sorted(keys)
    except TypeError:
        return sorted(keys, key=str)
