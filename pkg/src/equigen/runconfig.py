"""Flat run configuration with file and flag overrides.

Config files are plain ``key = value`` text: ``#`` starts a comment, values
are booleans (``true``/``false``), integers, floats, comma lists, or bare /
quoted strings.  Precedence is defaults < config file < command-line flags.
The default output directory comes from ``EQUIGEN_OUTDIR`` when set.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, fields

from .diffusion import DiffusionConfig
from .errors import ConfigError
from .network import EquiNetConfig
from .optim import OptimizerSettings

__all__ = ["RunConfig", "parse_config_text", "resolve_run_config",
           "net_config", "diffusion_config", "optimizer_settings"]


@dataclass
class RunConfig:
    """Union of model, diffusion, optimizer and I/O settings; every field has a default."""

    # forward process / diffusion
    forward: str = "learned"
    delta: float = 1e-2
    g_kind: str = "constant"
    g0: float = 1.0
    beta_min: float = 0.1
    beta_max: float = 20.0
    sample_steps: int = 100
    t_min: float = 1e-3
    elements: tuple = ("H", "C", "N", "O", "F")
    feature_scale: float = 0.25
    # architecture
    layers: int = 3
    hidden: int = 64
    vector_hidden: int = 16
    rbf_count: int = 16
    rbf_max: float = 12.0
    time_dim: int = 16
    cond_type_dim: int = 16
    cond_hidden: int = 64
    cond_dim: int = 16
    condition: str = "none"  # "none" | "composition"
    # optimization
    train_steps: int = 2000
    batch_size: int = 16
    lr: float = 1e-4
    clip_norm: float = 10.0
    log_every: int = 200
    # bookkeeping
    seed: int = 0
    out_dir: str = ""

    def __post_init__(self):
        if isinstance(self.elements, str):
            self.elements = tuple(s.strip() for s in self.elements.split(",") if s.strip())
        self.elements = tuple(self.elements)
        if self.condition not in ("none", "composition"):
            raise ConfigError("condition must be 'none' or 'composition'")
        if not self.out_dir:
            self.out_dir = os.environ.get("EQUIGEN_OUTDIR", ".")


def _parse_value(raw: str):
    raw = raw.strip()
    if raw.startswith('"') and raw.endswith('"') and len(raw) >= 2:
        return raw[1:-1]
    if "," in raw:
        return tuple(_parse_value(p) for p in raw.split(",") if p.strip())
    low = raw.lower()
    if low in ("true", "false"):
        return low == "true"
    try:
        return int(raw)
    except ValueError:
        pass
    try:
        return float(raw)
    except ValueError:
        pass
    return raw


def parse_config_text(text: str) -> dict:
    """Parse flat key = value lines into a dict of python values."""
    values: dict = {}
    for line_no, line in enumerate(text.splitlines(), start=1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            raise ConfigError(f"config line {line_no}: expected 'key = value'")
        key, raw = body.split("=", 1)
        key = key.strip()
        if not key:
            raise ConfigError(f"config line {line_no}: empty key")
        values[key] = _parse_value(raw)
    return values


def resolve_run_config(file_values: dict | None = None,
                       flag_values: dict | None = None) -> RunConfig:
    """Merge defaults < file < flags into a validated RunConfig."""
    known = {f.name for f in fields(RunConfig)}
    merged: dict = {}
    for source, name in ((file_values or {}, "config file"), (flag_values or {}, "flags")):
        for key, value in source.items():
            if key not in known:
                raise ConfigError(f"{name}: unknown setting '{key}'")
            if value is not None:
                merged[key] = value
    return RunConfig(**merged)


def net_config(rc: RunConfig) -> EquiNetConfig:
    return EquiNetConfig(
        layers=rc.layers, hidden=rc.hidden, vector_hidden=rc.vector_hidden,
        rbf_count=rc.rbf_count, rbf_max=rc.rbf_max, time_dim=rc.time_dim,
        cond_types=len(rc.elements) if rc.condition == "composition" else 0,
        cond_type_dim=rc.cond_type_dim, cond_hidden=rc.cond_hidden, cond_dim=rc.cond_dim)


def diffusion_config(rc: RunConfig) -> DiffusionConfig:
    return DiffusionConfig(
        forward_kind=rc.forward, delta=rc.delta, g_kind=rc.g_kind, g0=rc.g0,
        beta_min=rc.beta_min, beta_max=rc.beta_max, steps=rc.sample_steps,
        t_min=rc.t_min, elements=rc.elements, feature_scale=rc.feature_scale)


def optimizer_settings(rc: RunConfig) -> OptimizerSettings:
    return OptimizerSettings(lr=rc.lr, clip_norm=rc.clip_norm, batch_size=rc.batch_size,
                             steps=rc.train_steps, log_every=rc.log_every)
