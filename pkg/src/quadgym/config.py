"""Suite-wide configuration.

Every tunable number in the suite lives here, in one dataclass tree with
defaults, so that under-documented robot/contact/reward parameters are
auditable and overridable from a single YAML file. The resolved config is
hashed (seed and output paths excluded) and the hash is embedded in every
artifact the suite writes.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import yaml


class ConfigError(ValueError):
    """Raised for malformed config files or invalid override values."""


@dataclass
class RevoluteActuatorConfig:
    kp: float = 400.0           # N*m/rad
    kd: float = 8.0             # N*m*s/rad
    torque_limit: float = 60.0  # N*m
    velocity_limit: float = 25.0  # rad/s
    reflected_inertia: float = 0.05  # kg*m^2


@dataclass
class PrismaticActuatorConfig:
    kp: float = 6000.0          # N/m
    kd: float = 120.0           # N*s/m
    torque_limit: float = 300.0  # N (force limit)
    velocity_limit: float = 2.0  # m/s
    reflected_inertia: float = 1.5  # kg (reflected mass)


@dataclass
class MorphologyConfig:
    """Robot geometry and actuation. The source robot's true dimensions are
    not public; these are nominal values for a ~30 kg quadruped and are the
    same for both variants except for the added foot-extension joint."""

    base_mass: float = 30.0
    base_dims: tuple = (0.9, 0.35, 0.15)     # collision box, m
    hip_x: float = 0.32                      # fore/aft hip offset from base center, m
    hip_y: float = 0.17                      # lateral hip offset, m
    abduction_link: float = 0.08             # lateral offset hip roll -> hip pitch, m
    upper_leg_length: float = 0.35
    lower_leg_length: float = 0.35
    foot_radius: float = 0.03
    nominal_base_height: float = 0.55        # standing height of base center, m
    prismatic_travel: float = 0.15           # foot extension range [0, travel], m
    abduction_limit: float = 0.6             # symmetric, rad
    hip_limits: tuple = (-1.6, 1.6)          # rad
    knee_limits: tuple = (-2.6, 0.0)         # rad; knee bends one way, straightens to 0
    hip_roll: RevoluteActuatorConfig = field(default_factory=RevoluteActuatorConfig)
    hip_pitch: RevoluteActuatorConfig = field(
        default_factory=lambda: RevoluteActuatorConfig(reflected_inertia=0.08)
    )
    knee: RevoluteActuatorConfig = field(default_factory=RevoluteActuatorConfig)
    foot_extension: PrismaticActuatorConfig = field(default_factory=PrismaticActuatorConfig)


@dataclass
class TerrainConfig:
    resolution: float = 0.05                 # m per grid cell
    tile_size: float = 8.0                   # m
    slope_range: tuple = (0.05, 0.4)         # incline angle, rad (level 1 -> 12)
    stair_riser_range: tuple = (0.05, 0.35)  # m
    stair_tread: float = 0.3                 # m, fixed across levels
    obstacle_height_range: tuple = (0.05, 0.35)  # max obstacle height by level, m
    obstacle_side_range: tuple = (0.1, 0.8)  # footprint side, m
    obstacles_per_tile: int = 24
    rough_noise_band: tuple = (0.05, 0.15)   # per-cell noise at max level, m
    wavy_num_waves: int = 3
    wavy_amplitude: float = 0.35             # m per wave
    max_level: int = 12


@dataclass
class ContactConfig:
    k_n: float = 40000.0        # normal stiffness, N/m
    c_n: float = 500.0          # normal damping, N*s/m
    k_t: float = 6000.0         # tangential (stiction) stiffness, N/m
    c_t: float = 200.0          # tangential damping, N*s/m
    v_slip: float = 0.05        # stick/slide velocity threshold, m/s


@dataclass
class SimConfig:
    dt: float = 0.001               # physics step, s (1 kHz)
    control_decimation: int = 20    # physics steps per policy step (50 Hz)
    gravity: float = 9.81
    divergence_limit: float = 1.0e6
    contact: ContactConfig = field(default_factory=ContactConfig)


@dataclass
class CommandConfig:
    vx_range: tuple = (-1.0, 1.0)    # m/s
    vy_range: tuple = (-0.7, 0.7)    # m/s
    wz_range: tuple = (-1.0, 1.0)    # rad/s


@dataclass
class NoiseConfig:
    """Additive uniform observation noise, per block (half-width of U[-a, a])."""

    enabled: bool = True
    joint_pos: float = 0.01
    joint_vel: float = 1.5
    base_lin_vel: float = 0.1
    base_ang_vel: float = 0.2
    gravity: float = 0.05
    height_scan: float = 0.1


@dataclass
class RewardConfig:
    """Weights are non-negative; penalty terms themselves carry the sign."""

    lin_vel_tracking: float = 1.0
    ang_vel_tracking: float = 0.5
    base_height: float = 0.3
    flat_orientation: float = 1.0
    vertical_velocity: float = 2.0
    roll_pitch_rate: float = 0.05
    torque: float = 2.0e-5
    action_rate: float = 0.01
    leg_collision: float = 1.0
    feet_air_time: float = 1.0
    sigma: float = 0.5               # velocity tracking kernel width, m/s
    base_height_sigma: float = 0.1   # height tracking kernel width, m
    desired_base_height: float = 0.55
    air_time_min: float = 0.5        # s


@dataclass
class CurriculumConfig:
    kinds: tuple = ("smooth_slope", "rough_slope", "stairs_up", "stairs_down", "random_obstacles")
    min_level: int = 1
    max_level: int = 12
    promote_threshold: float = 0.8   # tracked / commanded distance ratio
    demote_threshold: float = 0.4


@dataclass
class EnvConfig:
    max_episode_s: float = 20.0
    push_interval_s: float = 15.0
    push_max_speed: float = 1.0      # m/s
    friction_range: tuple = (0.3, 1.25)
    mass_perturb_kg: float = 5.0     # +/- on base mass, per episode
    action_scale: float = 0.25       # target = nominal + scale * action
    spawn_joint_noise: float = 0.1   # +/- uniform on nominal joint angles at spawn
    spawn_velocity: float = 0.5      # +/- uniform initial base velocity, m/s (and yaw rate, rad/s)
    spawn_height_margin: float = 0.002  # extra clearance at spawn, m
    command: CommandConfig = field(default_factory=CommandConfig)
    noise: NoiseConfig = field(default_factory=NoiseConfig)
    reward: RewardConfig = field(default_factory=RewardConfig)
    curriculum: CurriculumConfig = field(default_factory=CurriculumConfig)


@dataclass
class PpoConfig:
    gamma: float = 0.99
    lam: float = 0.95
    clip_ratio: float = 0.2
    entropy_coef: float = 0.01
    desired_kl: float = 0.01
    epochs: int = 5
    num_minibatches: int = 4         # buffer ratio 2048x24 : 2048x6
    lr_init: float = 1.0e-3
    lr_min: float = 1.0e-5
    lr_max: float = 1.0e-2
    value_loss_coef: float = 1.0
    max_grad_norm: float = 1.0       # 0 disables clipping
    init_log_std: float = 0.0
    hidden_sizes: tuple = (512, 256, 128)


@dataclass
class TrainConfig:
    num_envs: int = 256
    steps_per_iteration: int = 24    # T
    iterations: int = 1500
    checkpoint_interval: int = 50
    terrain_kinds: tuple = ()        # empty -> curriculum kinds
    min_level: int = 0               # 0 -> curriculum min_level
    max_level: int = 0               # 0 -> curriculum max_level


@dataclass
class EvalConfig:
    runs: int = 5
    duration_s: float = 20.0
    command_switch_s: float = 10.0
    tiling: int = 5                  # terrain is a tiling x tiling arena
    friction: float = 1.0            # fixed during evaluation
    leg_mass_allowance: float = 2.0  # added to base mass for the CoT denominator, kg


@dataclass
class SuiteConfig:
    seed: int = 0
    output_dir: str = "runs"
    morphology: MorphologyConfig = field(default_factory=MorphologyConfig)
    terrain: TerrainConfig = field(default_factory=TerrainConfig)
    sim: SimConfig = field(default_factory=SimConfig)
    env: EnvConfig = field(default_factory=EnvConfig)
    ppo: PpoConfig = field(default_factory=PpoConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)


def _to_plain(value: Any) -> Any:
    if dataclasses.is_dataclass(value):
        return {f.name: _to_plain(getattr(value, f.name)) for f in dataclasses.fields(value)}
    if isinstance(value, (tuple, list)):
        return [_to_plain(v) for v in value]
    return value


def config_to_dict(cfg: SuiteConfig) -> dict:
    return _to_plain(cfg)


def _build(cls: type, data: Any, path: str) -> Any:
    """Rebuild a dataclass tree from plain dicts, with strict key checking."""
    if not dataclasses.is_dataclass(cls):
        return data
    if not isinstance(data, dict):
        raise ConfigError(f"{path or 'config'}: expected a mapping, got {type(data).__name__}")
    known = {f.name: f for f in dataclasses.fields(cls)}
    unknown = set(data) - set(known)
    if unknown:
        raise ConfigError(f"{path or 'config'}: unknown keys {sorted(unknown)}")
    kwargs = {}
    for name, f in known.items():
        if name not in data:
            continue
        raw = data[name]
        default = _field_default(f)
        if dataclasses.is_dataclass(default):
            kwargs[name] = _build(type(default), raw, f"{path}.{name}".lstrip("."))
        elif isinstance(default, tuple):
            kwargs[name] = tuple(raw)
        elif isinstance(default, bool):
            kwargs[name] = bool(raw)
        elif isinstance(default, int):
            kwargs[name] = int(raw)
        elif isinstance(default, float):
            kwargs[name] = float(raw)
        else:
            kwargs[name] = raw
    return cls(**kwargs)


def _field_default(f: dataclasses.Field) -> Any:
    if f.default is not dataclasses.MISSING:
        return f.default
    return f.default_factory()


def config_from_dict(data: dict) -> SuiteConfig:
    return _build(SuiteConfig, data, "")


def _deep_merge(base: dict, overrides: dict, path: str = "") -> dict:
    out = dict(base)
    for key, value in overrides.items():
        if key in out and isinstance(out[key], dict) and isinstance(value, dict):
            out[key] = _deep_merge(out[key], value, f"{path}.{key}")
        else:
            out[key] = value
    return out


def load_config(path: str | Path | None = None, overrides: dict | None = None) -> SuiteConfig:
    """Defaults <- YAML file <- explicit overrides (dot-free nested dicts)."""
    data = config_to_dict(SuiteConfig())
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        try:
            loaded = yaml.safe_load(path.read_text()) or {}
        except yaml.YAMLError as exc:
            raise ConfigError(f"cannot parse {path}: {exc}") from exc
        if not isinstance(loaded, dict):
            raise ConfigError(f"{path}: top level must be a mapping")
        data = _deep_merge(data, loaded)
    if overrides:
        data = _deep_merge(data, overrides)
    return config_from_dict(data)


def parse_override(expr: str) -> dict:
    """`a.b.c=value` -> nested dict. Values parse as YAML scalars."""
    if "=" not in expr:
        raise ConfigError(f"override must look like key.path=value, got {expr!r}")
    key, _, raw = expr.partition("=")
    try:
        value = yaml.safe_load(raw)
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse override value {raw!r}: {exc}") from exc
    node: Any = value
    for part in reversed(key.strip().split(".")):
        if not part:
            raise ConfigError(f"empty key component in override {expr!r}")
        node = {part: node}
    return node


def config_hash(cfg: SuiteConfig) -> str:
    """Stable digest of everything except seed and output location."""
    data = config_to_dict(cfg)
    data.pop("seed", None)
    data.pop("output_dir", None)
    blob = json.dumps(data, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:12]


def save_config_snapshot(cfg: SuiteConfig, path: str | Path) -> None:
    Path(path).write_text(yaml.safe_dump(config_to_dict(cfg), sort_keys=False))
