"""Experiment configuration (a single JSON document) and state profiles."""

from __future__ import annotations

import json
import math
from importlib import resources
from pathlib import Path
from typing import Literal, Optional, Union

from pydantic import BaseModel, ConfigDict, Field, PrivateAttr, ValidationError, model_validator

from .grid import Network, SystemState, load_ieee39, parse_network
from .risk import RiskParams


class ConfigError(ValueError):
    """Configuration is missing, malformed or inconsistent."""


class _Model(BaseModel):
    model_config = ConfigDict(extra="forbid")


class ProfileState(_Model):
    """Load level with a smooth regional tilt across the bus list.

    Bus ``b`` (position ``q`` out of ``n``) gets load multiplier
    ``level * (1 + amplitude * sin(2 pi q / n + phase))``; every generator is
    scaled by one common factor that balances total scaled load.
    """

    level: float = Field(gt=0)
    amplitude: float = Field(default=0.0, ge=0, lt=1)
    phase: float = 0.0
    duration: Optional[float] = Field(default=None, ge=0, le=1)


class ExplicitState(_Model):
    load_multipliers: list[float]
    generation_multipliers: list[float]
    duration: Optional[float] = Field(default=None, ge=0, le=1)


class RiskConfig(_Model):
    pr_min: float = 0.01
    pr_max: float = 0.9
    mu: float = 10.0
    alpha: float = 1.05
    y_ext: float = 1000.0
    eta: float = 0.5
    bpi_sign: Literal[1, -1] = 1

    def params(self) -> RiskParams:
        return RiskParams(**self.model_dump())


class ExperimentConfig(_Model):
    network: Optional[str] = None
    states: list[Union[ProfileState, ExplicitState]]
    chains_per_state: int = Field(default=2000, ge=1)
    d_max: int = Field(default=20, ge=1)
    initiation: Literal["sampled", "n-1"] = "sampled"
    risk: RiskConfig = RiskConfig()
    k: int = Field(default=8, ge=1)
    k_c2: list[int] = [3, 4, 4, 3, 3, 3, 3, 4, 3, 3]
    p: int = Field(default=1, ge=1)
    partition: Union[Literal["auto", "global"], int, list[int]] = "auto"
    partition_sizes: list[int] = [11, 20, 28, 36, 38]
    strategies: list[str] = ["SCG", "RL", "FR", "LPF", "LHF", "GS", "MA", "LS", "RG", "GPG", "GCG"]
    alphas: list[float] = [1.0, 1.03, 1.05, 1.07, 1.09, 1.11]
    load_ratios: list[float] = [1.02, 1.06]
    one_stage_k: int = Field(default=5, ge=1)
    lifetime_years: float = Field(default=6.0, gt=0)
    horizon_years: list[float] = [2.0, 4.0]
    kappa_grid: list[float] = [i / 20 for i in range(21)]
    p_grid: list[int] = [1, 2, 3, 4, 5]
    seed: int = Field(default=2024, ge=0, lt=2**64)
    threads: int = Field(default=1, ge=1)
    output_dir: str = "tsso_out"
    _base_dir: Optional[Path] = PrivateAttr(default=None)

    @model_validator(mode="after")
    def _check(self):
        if len(self.k_c2) != len(self.states):
            raise ValueError(f"k_c2 has {len(self.k_c2)} entries for {len(self.states)} states")
        if any(not 1 <= c <= self.k for c in self.k_c2):
            raise ValueError("every k_c2 entry must lie in [1, k]")
        given = [s.duration for s in self.states]
        if any(d is not None for d in given):
            if any(d is None for d in given):
                raise ValueError("give a duration for every state or for none")
            if abs(sum(given) - 1.0) > 1e-9:
                raise ValueError("state durations must sum to 1")
        return self

    # -- derived objects --------------------------------------------------

    def load_network(self, base_dir: Path | None = None) -> Network:
        if self.network is None:
            return load_ieee39()
        path = Path(self.network)
        if not path.is_absolute() and base_dir is not None:
            path = base_dir / path
        if not path.exists():
            raise ConfigError(f"network file not found: {path}")
        return parse_network(path)

    def durations(self) -> list[float]:
        if self.states[0].duration is None:
            return [1.0 / len(self.states)] * len(self.states)
        return [float(s.duration) for s in self.states]

    def system_states(self, network: Network, load_ratio: float = 1.0) -> list[SystemState]:
        return [build_state(i, profile, network, dur, load_ratio)
                for i, (profile, dur) in enumerate(zip(self.states, self.durations()))]

    def risk_params(self, alpha: Optional[float] = None) -> RiskParams:
        params = self.risk.params()
        return params if alpha is None else params.with_alpha(alpha)

    def sampling_params(self) -> RiskParams:
        return self.risk_params(1.0)


def build_state(index: int, profile, network: Network, duration: float,
                load_ratio: float = 1.0) -> SystemState:
    n = network.n_buses
    if isinstance(profile, ExplicitState):
        if len(profile.load_multipliers) != n or len(profile.generation_multipliers) != n:
            raise ConfigError(f"state {index}: multiplier lists must have {n} entries")
        return SystemState(index, [v * load_ratio for v in profile.load_multipliers],
                           [v * load_ratio for v in profile.generation_multipliers], duration)
    lm = [profile.level * load_ratio * (1 + profile.amplitude * math.sin(2 * math.pi * q / n + profile.phase))
          for q in range(n)]
    total_load = sum(b.load * m for b, m in zip(network.buses, lm))
    total_gen = float(network.generation.sum())
    gm = total_load / total_gen if total_gen > 0 else 0.0
    return SystemState(index, lm, [gm] * n, duration)


def default_config_path() -> Path:
    return Path(str(resources.files("tsso_dtr") / "data" / "default_config.json"))


def load_config(path: str | Path | None = None) -> ExperimentConfig:
    """Read and validate a config; ``None`` loads the shipped default."""
    path = Path(path) if path is not None else default_config_path()
    try:
        raw = path.read_text(encoding="utf-8")
    except FileNotFoundError as exc:
        raise ConfigError(f"config not found: {path}") from exc
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        doc = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from exc
    try:
        cfg = ExperimentConfig.model_validate(doc)
    except ValidationError as exc:
        first = exc.errors()[0]
        loc = ".".join(str(p) for p in first["loc"])
        raise ConfigError(f"{path}: {loc}: {first['msg']}") from exc
    cfg._base_dir = path.parent
    return cfg
