"""Pipeline configuration: nested dataclasses loaded from YAML."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Optional

import yaml

from .grouping import Grouping
from .preprocess import AlignmentConfig, FilterConfig
from .simulator import SimConfig
from .trace_core import ProgramId, parse_program

METHODS = ("sad", "xcorr", "multivariate")


@dataclass(frozen=True)
class TemplateOptions:
    method: str = "multivariate"
    n_components: int = 10
    grouping: str = "PerProgram"
    kind: str = "mean"
    max_lag: int = 4

    def __post_init__(self):
        object.__setattr__(self, "method", self.method.lower())
        if self.method not in METHODS:
            raise ValueError(f"method must be one of {METHODS}")
        object.__setattr__(self, "grouping", Grouping.parse(self.grouping).value)
        if self.n_components < 1:
            raise ValueError("n_components must be >= 1")
        if self.kind.lower() not in ("mean", "median"):
            raise ValueError("kind must be mean or median")
        if self.max_lag < 0:
            raise ValueError("max_lag must be >= 0")


@dataclass(frozen=True)
class IdsOptions:
    claimed_program: str = "PrA"
    threshold_mode: str = "eer"
    far_target: float = 0.01
    runtime_tolerance_sigma: float = 3.0
    alarm_k: Optional[int] = None
    interrupt_margin: float = 1.25

    def __post_init__(self):
        if parse_program(self.claimed_program) is ProgramId.Unknown:
            raise ValueError("claimed_program must be a known program")
        if self.threshold_mode not in ("eer", "far"):
            raise ValueError("threshold_mode must be 'eer' or 'far'")
        if not 0 <= self.far_target <= 1:
            raise ValueError("far_target must be in [0, 1]")
        if self.runtime_tolerance_sigma < 0:
            raise ValueError("runtime_tolerance_sigma must be >= 0")
        if self.alarm_k is not None and self.alarm_k < 1:
            raise ValueError("alarm_k must be >= 1")
        if self.interrupt_margin <= 1:
            raise ValueError("interrupt_margin must exceed 1")


@dataclass(frozen=True)
class SplitOptions:
    train_fraction: float = 0.5
    validation_fraction: float = 0.2

    def __post_init__(self):
        if not 0 < self.train_fraction < 1:
            raise ValueError("train_fraction must be in (0, 1)")
        if not 0 <= self.validation_fraction < 1 - self.train_fraction:
            raise ValueError("validation_fraction must leave room for a test split")


@dataclass(frozen=True)
class Paths:
    corpus: str = "corpus.emtr"
    aligned: str = "aligned.emtr"
    model: str = "model.emmd"
    report: str = "report.json"
    out_dir: str = "reproduce_out"


@dataclass(frozen=True)
class PipelineConfig:
    seed: int = 1
    programs: tuple = ("PrA", "PrB", "PrC")
    sim: SimConfig = field(default_factory=SimConfig)
    alignment: AlignmentConfig = field(default_factory=AlignmentConfig)
    filter: FilterConfig = field(default_factory=FilterConfig)
    templates: TemplateOptions = field(default_factory=TemplateOptions)
    ids: IdsOptions = field(default_factory=IdsOptions)
    split: SplitOptions = field(default_factory=SplitOptions)
    paths: Paths = field(default_factory=Paths)

    def __post_init__(self):
        progs = tuple(self.programs)
        if not progs:
            raise ValueError("at least one program is required")
        for p in progs:
            if parse_program(p) is ProgramId.Unknown:
                raise ValueError(f"unknown program {p!r}")
        object.__setattr__(self, "programs", progs)
        # the global seed drives the simulator too
        if self.sim.seed != self.seed:
            object.__setattr__(self, "sim", replace(self.sim, seed=self.seed))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["programs"] = list(self.programs)
        d["sim"] = self.sim.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: Optional[dict]) -> "PipelineConfig":
        d = dict(d or {})
        sections = {"sim": SimConfig, "alignment": AlignmentConfig, "filter": FilterConfig,
                    "templates": TemplateOptions, "ids": IdsOptions, "split": SplitOptions,
                    "paths": Paths}
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        kwargs = {}
        for name, value in d.items():
            if name in sections:
                sub = sections[name]
                value = dict(value or {})
                if sub is SimConfig:
                    if "interrupt_burst_len" in value:
                        value["interrupt_burst_len"] = tuple(value["interrupt_burst_len"])
                    kwargs[name] = SimConfig.from_dict(value)
                    continue
                bad = set(value) - {f.name for f in fields(sub)}
                if bad:
                    raise ValueError(f"unknown keys in '{name}': {sorted(bad)}")
                kwargs[name] = sub(**value)
            else:
                kwargs[name] = value
        if "seed" not in kwargs and "sim" in kwargs:
            kwargs["seed"] = kwargs["sim"].seed
        return cls(**kwargs)

    def with_overrides(self, **changes) -> "PipelineConfig":
        """Top-level or dotted (``"sim.traces_per_input"``) overrides; None is ignored."""
        d = self.to_dict()
        for key, value in changes.items():
            if value is None:
                continue
            parts = key.split(".")
            target = d
            for p in parts[:-1]:
                target = target[p]
            target[parts[-1]] = value
        if "seed" in changes and changes["seed"] is not None:
            d["sim"]["seed"] = changes["seed"]
        return PipelineConfig.from_dict(d)


def load_config(path) -> PipelineConfig:
    text = Path(path).read_text(encoding="utf-8")
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ValueError(f"invalid YAML in {path}: {exc}") from None
    if data is not None and not isinstance(data, dict):
        raise ValueError(f"{path}: top level must be a mapping")
    return PipelineConfig.from_dict(data)


def dump_config(cfg: PipelineConfig) -> str:
    return yaml.safe_dump(cfg.to_dict(), sort_keys=True)


def save_config(cfg: PipelineConfig, path) -> None:
    Path(path).write_text(dump_config(cfg), encoding="utf-8")
