"""Experiment configuration: one JSON file, strict keys, CLI overrides.

Layout (every section and key optional; missing keys take the defaults
below)::

    {
      "seed": 0,
      "out": "runs",
      "Ts": 0.05,
      "plant": {"link_masses": [...], "link_lengths": [...],
                "joint_stiffness": [...], "joint_damping": [...], "gravity": 9.81},
      "excitation": {"torque_amplitude": 2.0, "hold_steps": 5,
                     "init_angle_range": 3.14159..., "episode_length": 200,
                     "episodes": 60},
      "sweep": {"linear": [1, 2, 3, 4, 5, 6], "bilinear": [1, 2, 3],
                "nonlinear": [1, 2, 3, 4]},
      "fit": {"ridge": null, "relative_ridge": 1e-4},
      "eval": {"episodes": 20, "horizon": 40, "seed_offset": 1000},
      "mpc": {"horizon": 10, "weight_ee": 1.0, "weight_u": 0.001,
              "nmpc_max_iters": 30, "nmpc_damping": 1e-6, "output_index": [4, 5]},
      "reference": {"scale": 0.6, "center": [0.0, -0.45], "duration": 15.0,
                    "path": null},
      "control": {"rho": 3}
    }

The snapshot count is ``excitation.episodes * excitation.episode_length``.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

from .basis import FAMILIES, MAX_RHO
from .mpc import MpcConfig
from .plant import ArmParameters, ExcitationConfig

__all__ = ["ExperimentConfig", "ConfigError", "load_config"]


class ConfigError(ValueError):
    """Malformed or inconsistent configuration."""


@dataclass(frozen=True)
class SweepSettings:
    linear: tuple = (1, 2, 3, 4, 5, 6)
    bilinear: tuple = (1, 2, 3)
    nonlinear: tuple = (1, 2, 3, 4)

    def __post_init__(self):
        for fam in FAMILIES:
            rhos = tuple(int(r) for r in getattr(self, fam))
            if any(r < 1 or r > MAX_RHO for r in rhos):
                raise ConfigError(f"sweep.{fam}: degrees must lie in 1..{MAX_RHO}")
            object.__setattr__(self, fam, rhos)

    def items(self):
        return [(fam, r) for fam in FAMILIES for r in getattr(self, fam)]


@dataclass(frozen=True)
class FitSettings:
    ridge: float | None = None
    relative_ridge: float = 1e-4

    def __post_init__(self):
        if (self.ridge is not None and self.ridge < 0) or self.relative_ridge < 0:
            raise ConfigError("fit: ridge weights must be non-negative")


@dataclass(frozen=True)
class EvalSettings:
    episodes: int = 20
    horizon: int = 40
    seed_offset: int = 1000

    def __post_init__(self):
        if self.episodes < 1 or self.horizon < 1:
            raise ConfigError("eval: episodes and horizon must be positive")


@dataclass(frozen=True)
class ReferenceSettings:
    scale: float = 0.6
    center: tuple = (0.0, -0.45)
    duration: float = 15.0
    path: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "center", tuple(float(c) for c in self.center))
        if len(self.center) != 2 or self.scale < 0 or self.duration <= 0:
            raise ConfigError("reference: need a 2-D center, scale >= 0, duration > 0")


@dataclass(frozen=True)
class ControlSettings:
    rho: int = 3

    def __post_init__(self):
        if not 1 <= self.rho <= MAX_RHO:
            raise ConfigError(f"control.rho must lie in 1..{MAX_RHO}")


def _default_excitation() -> ExcitationConfig:
    return ExcitationConfig(torque_amplitude=2.0, hold_steps=5, init_angle_range=math.pi,
                            episode_length=200, episodes=60)


_SECTIONS = {
    "plant": ArmParameters,
    "excitation": ExcitationConfig,
    "sweep": SweepSettings,
    "fit": FitSettings,
    "eval": EvalSettings,
    "mpc": MpcConfig,
    "reference": ReferenceSettings,
    "control": ControlSettings,
}
_SCALARS = {"seed": int, "out": str, "Ts": float}


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int = 0
    out: str = "runs"
    Ts: float = 0.05
    plant: ArmParameters = field(default_factory=ArmParameters)
    excitation: ExcitationConfig = field(default_factory=_default_excitation)
    sweep: SweepSettings = field(default_factory=SweepSettings)
    fit: FitSettings = field(default_factory=FitSettings)
    eval: EvalSettings = field(default_factory=EvalSettings)
    mpc: MpcConfig = field(default_factory=MpcConfig)
    reference: ReferenceSettings = field(default_factory=ReferenceSettings)
    control: ControlSettings = field(default_factory=ControlSettings)

    def __post_init__(self):
        if self.Ts <= 0:
            raise ConfigError("Ts must be positive")
        if self.mpc.Ts != self.Ts:
            object.__setattr__(self, "mpc", replace(self.mpc, Ts=self.Ts))
        n_out = 2 * self.plant.n_links
        if any(not 0 <= i < n_out for i in self.mpc.output_index):
            raise ConfigError("mpc.output_index points outside the output vector")

    @property
    def n_snapshots(self) -> int:
        return self.excitation.episodes * self.excitation.episode_length

    def to_dict(self) -> dict:
        out = {k: getattr(self, k) for k in _SCALARS}
        for name in _SECTIONS:
            sec = getattr(self, name)
            d = sec.to_dict() if hasattr(sec, "to_dict") else asdict(sec)
            out[name] = {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}
        out["mpc"].pop("Ts", None)
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        if not isinstance(d, dict):
            raise ConfigError("configuration must be a JSON object")
        unknown = set(d) - set(_SCALARS) - set(_SECTIONS)
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        kw = {}
        for k, typ in _SCALARS.items():
            if k in d:
                kw[k] = typ(d[k])
        base = cls()
        for name, typ in _SECTIONS.items():
            if name not in d:
                continue
            sec = d[name]
            if not isinstance(sec, dict):
                raise ConfigError(f"section {name!r} must be an object")
            allowed = {f.name for f in fields(typ)} - ({"Ts"} if typ is MpcConfig else set())
            bad = set(sec) - allowed
            if bad:
                raise ConfigError(f"unknown keys in {name!r}: {sorted(bad)}")
            try:
                kw[name] = replace(getattr(base, name), **sec)
            except ConfigError:
                raise
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"{name}: {exc}") from None
        try:
            return cls(**kw)
        except ConfigError:
            raise
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from None

    def override(self, **kw) -> "ExperimentConfig":
        """Apply CLI-style overrides; ``None`` values are ignored."""
        kw = {k: v for k, v in kw.items() if v is not None}
        exc_kw = {}
        if "episodes" in kw:
            exc_kw["episodes"] = kw.pop("episodes")
        if "steps" in kw:
            exc_kw["episode_length"] = kw.pop("steps")
        new = self
        if exc_kw:
            try:
                new = replace(new, excitation=replace(new.excitation, **exc_kw))
            except ValueError as exc:
                raise ConfigError(str(exc)) from None
        if "rho" in kw:
            new = replace(new, control=ControlSettings(int(kw.pop("rho"))))
        if "ref" in kw:
            new = replace(new, reference=replace(new.reference, path=str(kw.pop("ref"))))
        bad = set(kw) - set(_SCALARS)
        if bad:
            raise ConfigError(f"unknown overrides: {sorted(bad)}")
        return replace(new, **kw)

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"


def load_config(path=None) -> ExperimentConfig:
    if path is None:
        return ExperimentConfig()
    try:
        d = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc.msg} at line {exc.lineno})") from None
    return ExperimentConfig.from_dict(d)
