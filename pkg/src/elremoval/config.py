"""TOML run configuration.

Example::

    preset = "cantilever2d"
    dims = [160, 40]
    r_min = 2.4          # element lengths
    rho_t = 0.01         # or "none", or a table {initial, increment, interval, cap, start}
    max_iter = 400

    [eta]
    initial = 2.0
    increment = 0.5
    interval = 25
    cap = 6.0

Unset keys keep the preset's values.
"""

from __future__ import annotations

import dataclasses
import sys
from dataclasses import dataclass, field

import tomlkit

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

from . import problems
from .problems import ProblemSpec
from .schedules import ContinuationSchedule, ThresholdSchedule

PRESET_NAMES = tuple(problems.PRESETS) + ("study",)


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ScheduleConfig:
    initial: float
    increment: float = 0.0
    interval: int = 1
    cap: float | None = None
    start: int = 0

    def build(self, cls=ContinuationSchedule):
        return cls(self.initial, self.increment, self.interval, self.cap, self.start)


@dataclass(frozen=True)
class RunConfig:
    preset: str
    dims: tuple[int, ...] | None = None
    r_min: float | None = None
    V_max: float | None = None
    rho_t: float | ScheduleConfig | None = None  # None: standard approach, no removal
    eta: ScheduleConfig | None = None
    beta: ScheduleConfig | None = None
    optimizer: str | None = None
    max_iter: int | None = None
    move: float | None = None
    asyinit: float | None = None
    load: float | None = None  # nonlinear-cantilever
    c_max_factor: float | None = None  # column-buckling
    initial: str | None = None  # column-buckling: "strip" or "uniform"
    deterministic: bool = True
    out: str = "out"
    snapshot_every: int = 0

    def __post_init__(self):
        _validate(self)

    def to_problem(self) -> ProblemSpec:
        if self.preset == "study":
            raise ConfigError("the study preset is run with the `study` subcommand")
        kw: dict = {}
        if self.dims is not None:
            kw["dims"] = self.dims
        if self.rho_t is not None:
            kw["rho_t"] = (ThresholdSchedule(float(self.rho_t)) if isinstance(self.rho_t, float)
                           else self.rho_t.build(ThresholdSchedule))
        for name in ("V_max", "optimizer", "max_iter", "move", "asyinit", "load", "c_max_factor"):
            v = getattr(self, name)
            if v is not None:
                kw[name] = v
        for name in ("eta", "beta"):
            v = getattr(self, name)
            if v is not None:
                kw[name] = v.build()
        if self.initial is not None:
            kw["strip"] = 0.2 if self.initial == "strip" else None
        try:
            p = problems.PRESETS[self.preset](**kw)
            if self.r_min is not None:
                p = p.replace(r_min=self.r_min * p.mesh.h)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        return p

    def to_dict(self) -> dict:
        out = {}
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            if v is None:
                continue
            if isinstance(v, ScheduleConfig):
                v = {k: x for k, x in dataclasses.asdict(v).items() if x is not None}
            elif isinstance(v, tuple):
                v = list(v)
            out[f.name] = v
        return out

    def echo(self) -> str:
        return tomlkit.dumps(self.to_dict())


_FIELDS = {f.name for f in dataclasses.fields(RunConfig)}
_SCHED_FIELDS = {f.name for f in dataclasses.fields(ScheduleConfig)}
_PRESET_ONLY = {"load": "nonlinear-cantilever", "c_max_factor": "column-buckling", "initial": "column-buckling"}


def _validate(c: RunConfig) -> None:
    if c.preset not in PRESET_NAMES:
        raise ConfigError(f"unknown preset {c.preset!r}; choose from {', '.join(PRESET_NAMES)}")
    for key, owner in _PRESET_ONLY.items():
        if getattr(c, key) is not None and c.preset != owner:
            raise ConfigError(f"key {key!r} only applies to the {owner} preset")
    if c.dims is not None:
        ndim = 3 if c.preset == "cantilever3d" else 2
        if len(c.dims) != ndim or any(d < 1 for d in c.dims):
            raise ConfigError(f"dims must be {ndim} positive integers, got {list(c.dims)}")
    if c.r_min is not None and not c.r_min > 0:
        raise ConfigError("r_min must be positive")
    if c.V_max is not None and not 0 < c.V_max <= 1:
        raise ConfigError("V_max must lie in (0, 1]")
    if isinstance(c.rho_t, float) and not 0 <= c.rho_t < 1:
        raise ConfigError(f"rho_t = {c.rho_t} outside [0, 1)")
    try:
        if isinstance(c.rho_t, ScheduleConfig):
            c.rho_t.build(ThresholdSchedule)
        for s in (c.eta, c.beta):
            if s is not None:
                s.build()
    except ValueError as exc:
        raise ConfigError(f"invalid schedule: {exc}") from exc
    if c.optimizer is not None and c.optimizer not in ("oc", "mma"):
        raise ConfigError(f"optimizer must be 'oc' or 'mma', got {c.optimizer!r}")
    if c.max_iter is not None and c.max_iter < 0:
        raise ConfigError("max_iter must be >= 0")
    for name in ("move", "asyinit", "load", "c_max_factor"):
        v = getattr(c, name)
        if v is not None and not v > 0:
            raise ConfigError(f"{name} must be positive")
    if c.initial is not None and c.initial not in ("strip", "uniform"):
        raise ConfigError("initial must be 'strip' or 'uniform'")
    if c.snapshot_every < 0:
        raise ConfigError("snapshot_every must be >= 0")


def _schedule(key: str, value) -> ScheduleConfig:
    if isinstance(value, (int, float)) and not isinstance(value, bool):
        return ScheduleConfig(float(value))
    if not isinstance(value, dict):
        raise ConfigError(f"{key} must be a number or a table")
    unknown = set(value) - _SCHED_FIELDS
    if unknown:
        raise ConfigError(f"unknown key(s) in [{key}]: {', '.join(sorted(unknown))}")
    if "initial" not in value:
        raise ConfigError(f"[{key}] needs 'initial'")
    try:
        return ScheduleConfig(float(value["initial"]), float(value.get("increment", 0.0)),
                              int(value.get("interval", 1)),
                              None if value.get("cap") is None else float(value["cap"]), int(value.get("start", 0)))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[{key}]: {exc}") from exc


def from_dict(data: dict) -> RunConfig:
    unknown = set(data) - _FIELDS
    if unknown:
        raise ConfigError(f"unknown key(s): {', '.join(sorted(unknown))}")
    if "preset" not in data:
        raise ConfigError("missing required key 'preset'")
    kw = dict(data)
    try:
        if "dims" in kw:
            kw["dims"] = tuple(int(d) for d in kw["dims"])
        for name in ("r_min", "V_max", "move", "asyinit", "load", "c_max_factor"):
            if name in kw:
                kw[name] = float(kw[name])
        for name in ("max_iter", "snapshot_every"):
            if name in kw:
                kw[name] = int(kw[name])
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    if "rho_t" in kw:
        v = kw["rho_t"]
        if isinstance(v, str):
            if v.lower() not in ("none", "n.a."):
                raise ConfigError(f"rho_t must be a number, a table or 'none', got {v!r}")
            kw["rho_t"] = None
        elif isinstance(v, dict):
            kw["rho_t"] = _schedule("rho_t", v)
        else:
            kw["rho_t"] = float(v)
    for name in ("eta", "beta"):
        if name in kw:
            kw[name] = _schedule(name, kw[name])
    return RunConfig(**kw)


def parse_config(text: str) -> RunConfig:
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"config parse error: {exc}") from exc
    return from_dict(data)


def apply_overrides(data: dict, overrides: list[str]) -> dict:
    """Apply ``key=value`` strings; values are read as TOML literals, bare words as strings.
    Dotted keys address schedule tables, e.g. ``eta.increment=0.25``."""
    data = {k: (dict(v) if isinstance(v, dict) else v) for k, v in data.items()}
    for item in overrides:
        key, sep, raw = item.partition("=")
        key = key.strip()
        if not sep or not key:
            raise ConfigError(f"override {item!r} is not of the form key=value")
        try:
            value = tomllib.loads(f"v = {raw.strip()}")["v"]
        except tomllib.TOMLDecodeError:
            value = raw.strip()
        head, _, sub = key.partition(".")
        if sub:
            table = data.get(head)
            if not isinstance(table, dict):
                table = {} if table is None else {"initial": table}
            table[sub] = value
            data[head] = table
        else:
            data[key] = value
    return data


def load_config(path=None, preset: str | None = None, overrides: list[str] | None = None,
                out: str | None = None, snapshot_every: int | None = None) -> RunConfig:
    data: dict = {}
    if path is not None:
        try:
            with open(path, "rb") as fh:
                data = tomllib.load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config: {exc}") from exc
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"config parse error in {path}: {exc}") from exc
    if preset is not None:
        data["preset"] = preset
    if out is not None:
        data["out"] = out
    if snapshot_every is not None:
        data["snapshot_every"] = snapshot_every
    data = apply_overrides(data, overrides or [])
    return from_dict(data)
