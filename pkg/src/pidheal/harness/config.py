"""Flat ``key = value`` experiment configuration with CLI overrides."""

from __future__ import annotations

import dataclasses
import typing
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Optional

CONTROLLERS = ("none", "analytic", "riccati", "pmp", "practical")
SCHEMES = ("P", "PI", "PD", "PID")


class ConfigError(ValueError):
    pass


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(v) for v in text.split(",") if v.strip())


def _words(text: str) -> tuple[str, ...]:
    return tuple(v.strip() for v in text.split(",") if v.strip())


@dataclass
class ExperimentConfig:
    seed: int = 0
    d: int = 32
    r: int = 8
    l: int = 1
    N: int = 256
    T: int = 12
    c: float = 0.1
    c_grid: tuple[float, ...] = (0.1, 1.0, 10.0)
    threshold: float = 0.99
    gains: tuple[float, ...] = (0.5, 0.0, 0.5)
    controller: tuple[str, ...] = ("none", "analytic", "riccati", "practical")
    scheme: tuple[str, ...] = SCHEMES
    par_norms: tuple[float, ...] = (0.0, 1.0)
    perp_ratio: tuple[float, ...] = (0.0, 3.0)
    trials: int = 1000
    num_classes: int = 4
    perp_gain: float = 2.0
    pmp_iters: int = 10
    bench_d: tuple[int, ...] = (16, 64, 256)
    bench_T: int = 24
    bench_r: int = 8
    bench_batch: int = 1000
    bench_repeats: int = 11
    bench_warmup: int = 3
    bench_pmp_repeats: int = 3
    bench_pmp_warmup: int = 0
    out: str = "out"

    def validate(self) -> "ExperimentConfig":
        if self.c < 0 or any(c < 0 for c in self.c_grid):
            raise ConfigError("c must be nonnegative")
        if not 0.0 < self.threshold <= 1.0:
            raise ConfigError("threshold must lie in (0, 1]")
        if min(self.d, self.l, self.N, self.T, self.trials, self.num_classes) < 1:
            raise ConfigError("dimensions, trial and class counts must be positive")
        if not 0 < self.r <= self.d:
            raise ConfigError("need 0 < r <= d")
        if self.r >= self.d and any(p > 0 for p in self.perp_ratio):
            raise ConfigError("perpendicular perturbations need r < d")
        if len(self.gains) != 3 or min(self.gains) < 0:
            raise ConfigError("gains must be three nonnegative numbers P,I,D")
        bad = [c for c in self.controller if c not in CONTROLLERS]
        if bad:
            raise ConfigError(f"unknown controller(s) {bad}; choose from {CONTROLLERS}")
        bad = [s for s in self.scheme if s not in SCHEMES]
        if bad:
            raise ConfigError(f"unknown scheme(s) {bad}; choose from {SCHEMES}")
        if any(p < 0 for p in self.par_norms + self.perp_ratio):
            raise ConfigError("perturbation norms must be nonnegative")
        if min(self.bench_repeats, self.bench_pmp_repeats, self.pmp_iters) < 1 or min(self.bench_warmup, self.bench_pmp_warmup) < 0:
            raise ConfigError("benchmark counts must be positive")
        return self


_PARSERS = {
    int: int,
    float: float,
    str: str,
    tuple[float, ...]: _floats,
    tuple[int, ...]: lambda s: tuple(int(v) for v in _words(s)),
    tuple[str, ...]: _words,
}


def _field_types() -> dict:
    return typing.get_type_hints(ExperimentConfig)


def apply_pairs(cfg: ExperimentConfig, pairs: dict[str, str]) -> ExperimentConfig:
    types = _field_types()
    updates = {}
    for key, raw in pairs.items():
        if key not in types:
            raise ConfigError(f"unknown config key {key!r}")
        try:
            updates[key] = _PARSERS[types[key]](raw)
        except ValueError as exc:
            raise ConfigError(f"bad value for {key!r}: {raw!r}") from exc
    return dataclasses.replace(cfg, **updates)


def parse_text(text: str) -> dict[str, str]:
    pairs = {}
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {n}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        pairs[key] = value
    return pairs


def load_config(path: Optional[str] = None, overrides: Optional[dict[str, str]] = None) -> ExperimentConfig:
    """Defaults, then the file at ``path``, then ``overrides`` (CLI flags win)."""
    cfg = ExperimentConfig()
    if path is not None:
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        cfg = apply_pairs(cfg, parse_text(text))
    if overrides:
        cfg = apply_pairs(cfg, overrides)
    return cfg.validate()


def dump_config(cfg: ExperimentConfig) -> str:
    lines = []
    for f in fields(cfg):
        v = getattr(cfg, f.name)
        if isinstance(v, tuple):
            v = ",".join(str(x) for x in v)
        lines.append(f"{f.name} = {v}")
    return "\n".join(lines) + "\n"
