"""Sectioned ``key = value`` configuration files.

Example::

    [problem]
    name = toy2d

    [noise]
    variant = additive
    sd = 1.0

    [schedule.baseline]
    boundary = exp_step
    alpha = 6
    m = 0.1
    plan = stepdecay_log

    [run]
    T = 3000

Sections: ``problem``, ``noise``, ``schedule`` or ``schedule.<name>`` (any
number), ``run``, ``theory`` and ``output``.  ``#`` and ``;`` start comments.
Lists are comma separated.  Errors carry line numbers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields, replace
from typing import Any

from .problems import Additive, ClippedAdditive, NoiseModel, Objective, ProblemError, Relative, quadratic_from_range, toy_objective
from .schedules import (
    BOUNDARY_NAMES,
    PLAN_KINDS,
    Band,
    Mode,
    ScheduleError,
    ScheduleSpec,
    ScheduleTemplate,
    TrustRegion,
    make_boundary,
)
from .theory import SGD_BOUNDS, SGDM_BOUNDS


class ConfigError(ValueError):
    """One or more problems in a config; ``errors`` holds ``(line, message)`` pairs."""

    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("\n".join(f"line {ln}: {msg}" if ln else msg for ln, msg in self.errors))


# --- value converters ------------------------------------------------------------


def _float(s: str) -> float:
    v = float(s)
    if not math.isfinite(v):
        raise ValueError(f"expected a finite number, got {s!r}")
    return v


def _int(s: str) -> int:
    v = float(s)
    if v != int(v):
        raise ValueError(f"expected an integer, got {s!r}")
    return int(v)


def _bool(s: str) -> bool:
    low = s.lower()
    if low in ("true", "yes", "on", "1"):
        return True
    if low in ("false", "no", "off", "0"):
        return False
    raise ValueError(f"expected true/false, got {s!r}")


def _floats(s: str) -> tuple[float, ...]:
    return tuple(_float(p) for p in s.split(",") if p.strip())


def _ints(s: str) -> tuple[int, ...]:
    return tuple(_int(p) for p in s.split(",") if p.strip())


def _names(s: str) -> tuple[str, ...]:
    return tuple(p.strip() for p in s.split(",") if p.strip())


def _choice(options):
    def conv(s: str) -> str:
        if s not in options:
            raise ValueError(f"expected one of {', '.join(options)}; got {s!r}")
        return s

    return conv


def _emit_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, tuple):
        return ", ".join(_emit_value(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _opt(conv, default=None):
    return field(default=default, metadata={"conv": conv})


# --- sections ------------------------------------------------------------------


@dataclass(frozen=True)
class ProblemSection:
    name: str = _opt(_choice(("toy2d", "quadratic")), "toy2d")
    dim: int | None = _opt(_int)
    lambda_min: float | None = _opt(_float)
    lambda_max: float | None = _opt(_float)
    x0: tuple[float, ...] | None = _opt(_floats)

    def objective(self) -> Objective:
        if self.name == "toy2d":
            return toy_objective()
        dim = self.dim or 1
        lo = self.lambda_min if self.lambda_min is not None else 1.0
        hi = self.lambda_max if self.lambda_max is not None else lo
        return quadratic_from_range(dim, lo, hi)

    def start(self):
        obj = self.objective()
        return obj.x0 if self.x0 is None else self.x0


NOISE_VARIANTS = ("additive", "relative", "clipped", "none")


@dataclass(frozen=True)
class NoiseSection:
    variant: str = _opt(_choice(NOISE_VARIANTS), "additive")
    sd: float | None = _opt(_float)
    rho: float | None = _opt(_float)
    sigma: float | None = _opt(_float)
    G: float | None = _opt(_float)

    def model(self) -> NoiseModel:
        sd = 1.0 if self.sd is None else self.sd
        if self.variant == "none":
            return Additive(0.0)
        if self.variant == "additive":
            return Additive(sd)
        if self.variant == "relative":
            return Relative(self.rho or 0.0, 1.0 if self.sigma is None else self.sigma)
        return ClippedAdditive(sd, 1.0 if self.G is None else self.G)


MODE_NAMES = tuple(m.value for m in Mode) + ("trust_region",)


@dataclass(frozen=True)
class ScheduleSection:
    boundary: str = _opt(_choice(BOUNDARY_NAMES), "exp_step")
    alpha: float | None = _opt(_float)
    a: float | None = _opt(_float)
    m: float = _opt(_float, 0.1)
    M: float | None = _opt(_float)
    plan: str = _opt(_choice(PLAN_KINDS), "stepdecay_log")
    stages: int | None = _opt(_int)
    length: int | None = _opt(_int)
    floor: bool | None = _opt(_bool)
    mode: str = _opt(_choice(MODE_NAMES), "lower")
    gamma1: float | None = _opt(_float)
    gamma2: float | None = _opt(_float)
    first_stage_lower: bool = _opt(_bool, True)
    cycles: int | None = _opt(_int)

    def template(self) -> ScheduleTemplate:
        boundary = make_boundary(self.boundary, self.alpha, self.a)
        band = Band(self.m, self.m if self.M is None else self.M)
        params: dict[str, Any] = {}
        if self.plan in ("stepdecay_log", "stepdecay_expgrow"):
            if self.alpha is None:
                raise ScheduleError(f"plan {self.plan} needs alpha")
            params["alpha"] = self.alpha
            if self.floor:
                params["floor"] = True
        elif self.plan == "constant_length":
            if self.stages is not None:
                params["stages"] = self.stages
            elif self.length is not None:
                params["length"] = self.length
            else:
                params["stages"] = 1
        if self.mode == "trust_region":
            if self.gamma1 is None or self.gamma2 is None:
                raise ScheduleError("trust_region mode needs gamma1 and gamma2")
            mode = TrustRegion(self.gamma1, self.gamma2)
        else:
            mode = Mode(self.mode)
        return ScheduleTemplate(boundary, band, self.plan, params, mode, self.first_stage_lower, self.cycles)


@dataclass(frozen=True)
class RunSection:
    T: int = _opt(_int, 1000)
    T_grid: tuple[int, ...] | None = _opt(_ints)
    seed: int = _opt(_int, 0)
    trials: int = _opt(_int, 1)
    beta: float | None = _opt(_float)
    reset_momentum: bool = _opt(_bool, False)


ALL_BOUNDS = SGD_BOUNDS + SGDM_BOUNDS


@dataclass(frozen=True)
class TheorySection:
    bounds: tuple[str, ...] = _opt(_names, ())
    Delta0: float | None = _opt(_float)
    G: float | None = _opt(_float)
    L: float | None = _opt(_float)
    repeats: int = _opt(_int, 1)


@dataclass(frozen=True)
class OutputSection:
    directory: str = _opt(str, "out")
    formats: tuple[str, ...] = _opt(_names, ("csv",))


_SECTIONS = {
    "problem": ProblemSection,
    "noise": NoiseSection,
    "run": RunSection,
    "theory": TheorySection,
    "output": OutputSection,
}
_ORDER = ("problem", "noise", "schedule", "run", "theory", "output")


@dataclass(frozen=True)
class Config:
    problem: ProblemSection = field(default_factory=ProblemSection)
    noise: NoiseSection = field(default_factory=NoiseSection)
    schedules: tuple[tuple[str, ScheduleSection], ...] = ()
    run: RunSection = field(default_factory=RunSection)
    theory: TheorySection = field(default_factory=TheorySection)
    output: OutputSection = field(default_factory=OutputSection)

    def templates(self) -> list[tuple[str, ScheduleTemplate]]:
        return [(name, sec.template()) for name, sec in self.schedules]

    def schedule(self, name: str | None = None, T: int | None = None) -> ScheduleSpec:
        if not self.schedules:
            raise ConfigError([(0, "config defines no schedule")])
        lookup = dict(self.schedules)
        if name is None:
            name = self.schedules[0][0]
        if name not in lookup:
            raise ConfigError([(0, f"no schedule named {name!r}")])
        return lookup[name].template().build(T or self.run.T)

    def with_overrides(self, **run_values) -> "Config":
        vals = {k: v for k, v in run_values.items() if v is not None}
        return replace(self, run=replace(self.run, **vals)) if vals else self


# --- parsing -------------------------------------------------------------------


def _build_section(cls, entries, header_line, label, errors):
    known = {f.name: f for f in fields(cls)}
    values = {}
    for key, (raw, line) in entries.items():
        f = known.get(key)
        if f is None:
            errors.append((line, f"[{label}] unknown key {key!r}; allowed: {', '.join(known)}"))
            continue
        try:
            values[key] = f.metadata["conv"](raw)
        except ValueError as exc:
            errors.append((line, f"[{label}] {key}: {exc}"))
    try:
        return cls(**values)
    except TypeError as exc:  # pragma: no cover - schema mismatch
        errors.append((header_line, f"[{label}] {exc}"))
        return None


def _check_schedule(sec: ScheduleSection, label, line, errors):
    if sec.M is not None and sec.m > sec.M:
        errors.append((line, f"[{label}] band invalid: m={sec.m} exceeds M={sec.M}"))
        return
    try:
        sec.template()
    except (ScheduleError, ProblemError) as exc:
        errors.append((line, f"[{label}] {exc}"))


def parse_config(text: str) -> Config:
    """Parse and validate; raises ConfigError listing every problem found."""
    errors: list[tuple[int, str]] = []
    raw: dict[str, tuple[int, dict]] = {}
    order: list[str] = []
    current = None
    for ln, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].split(";", 1)[0].strip()
        if not stripped:
            continue
        if stripped.startswith("["):
            if not stripped.endswith("]"):
                errors.append((ln, f"malformed section header {line.strip()!r}"))
                current = None
                continue
            name = stripped[1:-1].strip()
            base = name.split(".", 1)[0]
            if base not in _SECTIONS and base != "schedule":
                errors.append((ln, f"unknown section [{name}]; expected one of {', '.join(_ORDER)}"))
                current = None
                continue
            if base == "schedule" and "." in name and not name.split(".", 1)[1].strip():
                errors.append((ln, "empty schedule name"))
            if name in raw:
                errors.append((ln, f"duplicate section [{name}]"))
                current = None
                continue
            raw[name] = (ln, {})
            order.append(name)
            current = name
            continue
        if "=" not in stripped:
            errors.append((ln, f"expected 'key = value', got {line.strip()!r}"))
            continue
        if current is None:
            errors.append((ln, "key outside of a known section"))
            continue
        key, value = (s.strip() for s in stripped.split("=", 1))
        entries = raw[current][1]
        if key in entries:
            errors.append((ln, f"[{current}] duplicate key {key!r}"))
            continue
        entries[key] = (value, ln)

    if "schedule" in raw and any(n.startswith("schedule.") for n in raw):
        errors.append((raw["schedule"][0], "mix of [schedule] and [schedule.<name>] sections"))

    built: dict[str, Any] = {}
    schedules = []
    for name in order:
        line, entries = raw[name]
        base = name.split(".", 1)[0]
        if base == "schedule":
            sec = _build_section(ScheduleSection, entries, line, name, errors)
            if sec is not None:
                _check_schedule(sec, name, line, errors)
                label = name.split(".", 1)[1].strip() if "." in name else "default"
                schedules.append((label, sec))
        else:
            sec = _build_section(_SECTIONS[base], entries, line, name, errors)
            if sec is not None:
                built[base] = sec

    cfg = None
    if not errors:
        cfg = Config(schedules=tuple(schedules), **built)
        errors.extend(_validate(cfg, raw))
    if errors:
        raise ConfigError(sorted(errors))
    return cfg


def _line(raw, section, key=None):
    if section not in raw:
        return 0
    line, entries = raw[section]
    return entries[key][1] if key and key in entries else line


def _validate(cfg: Config, raw) -> list[tuple[int, str]]:
    errors = []
    try:
        obj = cfg.problem.objective()
        if cfg.problem.x0 is not None and len(cfg.problem.x0) != obj.dim:
            errors.append((_line(raw, "problem", "x0"), f"[problem] x0 needs {obj.dim} values"))
    except ProblemError as exc:
        errors.append((_line(raw, "problem"), f"[problem] {exc}"))
    try:
        cfg.noise.model()
    except ProblemError as exc:
        errors.append((_line(raw, "noise"), f"[noise] {exc}"))
    run = cfg.run
    if run.T < 2:
        errors.append((_line(raw, "run", "T"), "[run] T must be >= 2"))
    if run.trials < 1:
        errors.append((_line(raw, "run", "trials"), "[run] trials must be >= 1"))
    if run.beta is not None and not 0 <= run.beta < 1:
        errors.append((_line(raw, "run", "beta"), "[run] beta must lie in [0, 1)"))
    if run.T_grid is not None and (list(run.T_grid) != sorted(set(run.T_grid)) or min(run.T_grid) < 2):
        errors.append((_line(raw, "run", "T_grid"), "[run] T_grid must be strictly increasing and >= 2"))
    for b in cfg.theory.bounds:
        if b not in ALL_BOUNDS:
            errors.append((_line(raw, "theory", "bounds"), f"[theory] unknown bound {b!r}; expected one of {', '.join(ALL_BOUNDS)}"))
    if cfg.theory.L is not None and not cfg.theory.L > 0:
        errors.append((_line(raw, "theory", "L"), "[theory] L must be positive"))
    if cfg.theory.repeats < 1:
        errors.append((_line(raw, "theory", "repeats"), "[theory] repeats must be >= 1"))
    for fmt in cfg.output.formats:
        if fmt != "csv":
            errors.append((_line(raw, "output", "formats"), f"[output] unsupported format {fmt!r}; only csv"))
    return errors


def load_config(path) -> Config:
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read())


def _emit_section(header, sec) -> list[str]:
    lines = [f"[{header}]"]
    for f in fields(sec):
        v = getattr(sec, f.name)
        if v is None or v == ():
            continue
        lines.append(f"{f.name} = {_emit_value(v)}")
    return lines


def emit_config(cfg: Config) -> str:
    """Canonical text: fixed section and key order, unset keys omitted."""
    blocks = [_emit_section("problem", cfg.problem), _emit_section("noise", cfg.noise)]
    for name, sec in cfg.schedules:
        blocks.append(_emit_section(f"schedule.{name}", sec))
    blocks += [
        _emit_section("run", cfg.run),
        _emit_section("theory", cfg.theory),
        _emit_section("output", cfg.output),
    ]
    return "\n\n".join("\n".join(b) for b in blocks) + "\n"
