"""Experiment configuration: a flat key-value YAML file mapped onto a dataclass."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
import yaml

from .cpf import CpfParams
from .qp import SensorNoise
from .scope import LOSSES, ScopeParams


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    # objects: a built-in name ("poker", "wrench", "hex_key"), a mesh file or a preprocessed directory
    poker_model: str = "poker"
    tool_model: str = "wrench"
    cpf_model: str = "hex_key"
    voxel_size: float = 0.002

    # single-arm contact filter
    cpf_n_clp: int = 40
    cpf_n_cs: int = 10
    cpf_motion_sigma: float = 0.005
    cpf_motion_anneal: float = 0.8

    # SCOPE
    n_clp: int = 20
    n_cs: int = 30
    n_opp: int = 10
    n_os: int = 10
    n_f: int = 8
    mu: float = 0.5
    motion_sigma: float = 0.02
    motion_anneal: float = 0.9
    resample_threshold: float = 1.0
    eta_p: float = 0.005
    eta_c: float = 20.0
    eps_pp: int = 144
    pose_noise: list = field(default_factory=lambda: [0.003, 0.003, 3.0])  # m, m, deg
    t_max: float = 0.03
    r_max_deg: float = 45.0
    likelihood_temperature: float = 1.0
    loss_mask: str = "PCF"

    # sensing and scenarios
    sigma_force: float = 0.1
    sigma_moment: float = 0.005
    force_range: list = field(default_factory=lambda: [2.0, 15.0])

    # protocol
    seed: int = 0
    trials: int = 10
    jobs: int = 1
    out_dir: str = "runs/default"
    sweep_n_clp: list = field(default_factory=lambda: [10, 20])
    sweep_n_opp: list = field(default_factory=lambda: [5, 10])

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        mask = set(self.loss_mask)
        if not mask or not mask <= set(LOSSES):
            raise ConfigError(f"loss_mask must be a non-empty subset of {''.join(LOSSES)}")
        if self.trials < 1 or self.jobs < 1:
            raise ConfigError("trials and jobs must be positive")
        if self.voxel_size <= 0:
            raise ConfigError("voxel_size must be positive")
        if len(self.pose_noise) != 3 or len(self.force_range) != 2:
            raise ConfigError("pose_noise needs 3 entries and force_range 2")
        if not self.sweep_n_clp or not self.sweep_n_opp:
            raise ConfigError("sweep grid must be non-empty")
        try:
            self.scope_params()
            self.cpf_params()
        except ValueError as e:
            raise ConfigError(str(e)) from None

    def cpf_params(self) -> CpfParams:
        return CpfParams(
            n_clp=self.cpf_n_clp,
            n_cs=self.cpf_n_cs,
            n_f=self.n_f,
            mu=self.mu,
            motion_sigma=self.cpf_motion_sigma,
            motion_anneal=self.cpf_motion_anneal,
            resample_threshold=self.resample_threshold,
        )

    def scope_params(self, **overrides) -> ScopeParams:
        cfg = {**asdict(self), **overrides}
        cpf = CpfParams(
            n_clp=cfg["n_clp"],
            n_cs=cfg["n_cs"],
            n_f=cfg["n_f"],
            mu=cfg["mu"],
            motion_sigma=cfg["motion_sigma"],
            motion_anneal=cfg["motion_anneal"],
            resample_threshold=cfg["resample_threshold"],
        )
        sx, sz, st = cfg["pose_noise"]
        return ScopeParams(
            n_opp=cfg["n_opp"],
            n_os=cfg["n_os"],
            cpf=cpf,
            eta_p=cfg["eta_p"],
            eta_c=cfg["eta_c"],
            eps_pp=cfg["eps_pp"],
            pose_noise=(sx, sz, np.deg2rad(st)),
            t_max=cfg["t_max"],
            r_max=np.deg2rad(cfg["r_max_deg"]),
            likelihood_temperature=cfg["likelihood_temperature"],
            loss_mask=frozenset(cfg["loss_mask"]),
        )

    def noise(self) -> SensorNoise:
        return SensorNoise.isotropic(self.sigma_force, self.sigma_moment)

    def to_dict(self) -> dict:
        return asdict(self)


_FIELDS = {f.name: f for f in fields(ExperimentConfig)}


def _coerce(name: str, value):
    default = getattr(ExperimentConfig(), name)
    if isinstance(default, bool) or default is None:
        return value
    if isinstance(default, int) and not isinstance(value, bool):
        if isinstance(value, float) and value.is_integer():
            return int(value)
        if isinstance(value, int):
            return value
    elif isinstance(default, float) and isinstance(value, (int, float)) and not isinstance(value, bool):
        return float(value)
    elif isinstance(default, str):
        if isinstance(value, str):
            return value
        if name == "loss_mask" and isinstance(value, list):
            return "".join(str(v) for v in value)
    elif isinstance(default, list) and isinstance(value, list):
        return value
    raise ConfigError(f"{name}: expected {type(default).__name__}, got {value!r}")


def config_from_dict(data: dict) -> ExperimentConfig:
    if not isinstance(data, dict):
        raise ConfigError("config must be a mapping")
    unknown = sorted(set(data) - set(_FIELDS))
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    return ExperimentConfig(**{k: _coerce(k, v) for k, v in data.items()})


def load_config(path) -> ExperimentConfig:
    try:
        data = yaml.safe_load(Path(path).read_text(encoding="utf-8")) or {}
    except OSError as e:
        raise ConfigError(f"cannot read {path}: {e.strerror}") from None
    except yaml.YAMLError as e:
        raise ConfigError(f"{path}: {e}") from None
    return config_from_dict(data)
