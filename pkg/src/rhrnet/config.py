"""Run configuration: an INI-style key/value file plus command-line overrides.

Example (every key is optional; the values shown are the defaults)::

    [model]
    segment_len = 1024
    widths = 2, 128, 256, 512, 256, 128, 1
    scale = 1            # e.g. 1/16 for the tiny test network

    [schedule]
    lr_init = 1e-4
    lr_floor = 1e-8
    decay_factor = 10
    plateau_patience = 3
    stop_patience = 6
    batch_size = 512
    max_epochs = 1000

    [data]
    val_fraction = 0.05

    [run]
    seed = 0
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field, fields, replace
from fractions import Fraction
from pathlib import Path

from .errors import ConfigError
from .model import ModelConfig
from .training import TrainSchedule


def parse_scale(text: str) -> Fraction:
    if text.strip().lower() == "tiny":
        return Fraction(1, 16)
    try:
        value = Fraction(text.strip())
    except (ValueError, ZeroDivisionError) as exc:
        raise ConfigError(f"scale must be a positive fraction or 'tiny', got {text!r}") from exc
    if value <= 0:
        raise ConfigError(f"scale must be positive, got {text!r}")
    return value


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    schedule: TrainSchedule = field(default_factory=TrainSchedule)
    val_fraction: float = 0.05
    seed: int = 0

    def validate(self) -> "RunConfig":
        self.model.validate()
        self.schedule.validate()
        if not 0 <= self.val_fraction < 1:
            raise ConfigError(f"val_fraction must be in [0, 1), got {self.val_fraction}")
        return self

    def to_text(self) -> str:
        m, s = self.model, self.schedule
        lines = ["[model]", f"segment_len = {m.segment_len}",
                 "widths = " + ", ".join(map(str, m.widths)), f"scale = {m.scale}", "",
                 "[schedule]"]
        lines += [f"{f.name} = {getattr(s, f.name)}" for f in fields(s)]
        lines += ["", "[data]", f"val_fraction = {self.val_fraction}", "",
                  "[run]", f"seed = {self.seed}", ""]
        return "\n".join(lines)


_SCHEDULE_TYPES = {f.name: (int if f.type in ("int", int) else float) for f in fields(TrainSchedule)}


def load_run_config(path: str | Path | None) -> RunConfig:
    """Parse ``path`` (or return defaults when ``None``)."""
    cfg = RunConfig()
    if path is None:
        return cfg
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file {path} does not exist")
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    try:
        parser.read(path)
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from exc

    known = {"model": {"segment_len", "widths", "scale"}, "schedule": set(_SCHEDULE_TYPES),
             "data": {"val_fraction"}, "run": {"seed"}}
    for section in parser.sections():
        if section not in known:
            raise ConfigError(f"{path}: unknown section [{section}]")
        unknown = set(parser[section]) - known[section]
        if unknown:
            raise ConfigError(f"{path}: unknown keys in [{section}]: {sorted(unknown)}")

    try:
        if parser.has_section("model"):
            sec = parser["model"]
            model = cfg.model
            if "segment_len" in sec:
                model = replace(model, segment_len=sec.getint("segment_len"))
            if "widths" in sec:
                model = replace(model, widths=tuple(int(w) for w in sec["widths"].split(",")))
            if "scale" in sec:
                model = replace(model, scale=parse_scale(sec["scale"]))
            cfg.model = model
        if parser.has_section("schedule"):
            sec = parser["schedule"]
            cfg.schedule = replace(cfg.schedule, **{k: _SCHEDULE_TYPES[k](sec[k]) for k in sec})
        if parser.has_section("data") and "val_fraction" in parser["data"]:
            cfg.val_fraction = parser["data"].getfloat("val_fraction")
        if parser.has_section("run") and "seed" in parser["run"]:
            cfg.seed = parser["run"].getint("seed")
    except ValueError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return cfg
