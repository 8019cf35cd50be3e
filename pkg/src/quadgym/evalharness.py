"""Policy evaluation: cost of transport, timed command-switch runs, and
morphology comparison reports.

The harness runs a trained policy deterministically (mean action, no
observation noise, no pushes, fixed friction and mass) on a single terrain
kind tiled at its maximum difficulty, logs the full trajectory at control
rate, and reduces each run to a cost-of-transport number: positive mechanical
work divided by weight times horizontal path length. Paired seeds make
two-variant comparisons deterministic and repeatable.
"""

from __future__ import annotations

import copy
import io
from dataclasses import dataclass
from typing import Callable, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from .config import SuiteConfig
from .envrl import VectorEnv, _world_to_base
from .learner.mlp import mlp_forward
from .learner.ppo import PolicyParams
from .learner.trainer import RunningNorm, config_fingerprint, load_checkpoint
from .terrain import TerrainKind, build_arena, sample_height

__all__ = [
    "TrajectoryLog",
    "CoTReport",
    "EvalPolicy",
    "cost_of_transport",
    "run_protocol",
    "compare_morphologies",
    "export_traces",
    "load_traces",
    "report_rows",
    "format_report_table",
    "write_report_csv",
    "comparison_columns",
    "format_comparison_table",
    "write_comparison_csv",
    "DEFAULT_EVAL_KINDS",
]

# Table rows are reported in this order: the two reference surfaces first,
# then the four procedural obstacle families.
DEFAULT_EVAL_KINDS = (
    TerrainKind.FLAT,
    TerrainKind.SMOOTH_SLOPE,
    TerrainKind.ROUGH_SLOPE,
    TerrainKind.STAIRS_UP,
    TerrainKind.STAIRS_DOWN,
    TerrainKind.RANDOM_OBSTACLES,
    TerrainKind.WAVY,
)

TRACE_COLUMNS = (
    "time",
    "vx_meas",
    "vx_cmd",
    "vy_meas",
    "vy_cmd",
    "wz_meas",
    "wz_cmd",
    "height_meas",
    "height_des",
)

# Horizontal displacement below this is treated as "immobile": cost of
# transport divides by distance, so near-zero travel produces meaningless
# numbers rather than expensive gaits.
IMMOBILE_DISTANCE_M = 0.1


# ---------------------------------------------------------------------------
# trajectory records
# ---------------------------------------------------------------------------


@dataclass
class TrajectoryLog:
    """Control-rate record of one evaluation run.

    Arrays share the leading step axis. `base_velocity` and `yaw_rate` are
    expressed in the base frame, matching the command convention; positions
    stay in the world frame so path length can be integrated. A leading
    t = 0 row captures the spawn state with zero actuation.
    """

    time: np.ndarray            # (T,) s, strictly increasing
    base_position: np.ndarray   # (T, 3) world frame, m
    base_velocity: np.ndarray   # (T, 3) base frame, m/s
    yaw_rate: np.ndarray        # (T,) base frame wz, rad/s
    commands: np.ndarray        # (T, 3) commanded (vx, vy, wz)
    base_height: np.ndarray     # (T,) height above local terrain, m
    desired_height: np.ndarray  # (T,) commanded height, m
    tau: np.ndarray             # (T, dof) actuator torques/forces
    joint_velocity: np.ndarray  # (T, dof) actuator rates
    variant: str = ""
    terrain: str = ""
    seed: int = 0
    config_sha: str = ""
    fell: bool = False

    def __post_init__(self):
        t = np.asarray(self.time, dtype=np.float64)
        n = t.shape[0]
        if t.ndim != 1:
            raise ValueError("time must be one-dimensional")
        if n >= 2 and not np.all(np.diff(t) > 0.0):
            raise ValueError("time must be strictly increasing")
        expected = {
            "base_position": (n, 3),
            "base_velocity": (n, 3),
            "yaw_rate": (n,),
            "commands": (n, 3),
            "base_height": (n,),
            "desired_height": (n,),
        }
        for name, shape in expected.items():
            arr = np.asarray(getattr(self, name), dtype=np.float64)
            if arr.shape != shape:
                raise ValueError(f"{name} must have shape {shape}, got {arr.shape}")
            setattr(self, name, arr)
        tau = np.asarray(self.tau, dtype=np.float64)
        qd = np.asarray(self.joint_velocity, dtype=np.float64)
        if tau.ndim != 2 or tau.shape[0] != n:
            raise ValueError(f"tau must have shape ({n}, dof), got {tau.shape}")
        if qd.shape != tau.shape:
            raise ValueError("joint_velocity must match tau's shape")
        self.time = t
        self.tau = tau
        self.joint_velocity = qd

    @property
    def n_steps(self) -> int:
        return int(self.time.shape[0])

    def duration(self) -> float:
        return float(self.time[-1] - self.time[0]) if self.n_steps else 0.0


@dataclass(frozen=True)
class CoTReport:
    """Per-(terrain, variant) evaluation summary over a batch of runs.

    `per_run_cot` holds one entry per run; None marks an immobile run
    (horizontal travel under the immobility threshold). `mean_cot` averages
    the numeric entries and is None when every run was immobile.
    """

    terrain: str
    variant: str
    per_run_cot: Tuple[Optional[float], ...]
    mean_cot: Optional[float]
    mean_velocity_error: float  # mean ||(vx, vy) - command||, m/s
    mean_height_error: float    # mean |height - desired|, m
    falls: int
    seeds: Tuple[int, ...] = ()

    def __post_init__(self):
        numeric = [c for c in self.per_run_cot if c is not None]
        if any(c < 0.0 for c in numeric):
            raise ValueError("cost of transport cannot be negative")
        if numeric:
            mean = float(np.mean(numeric))
            if self.mean_cot is None or abs(self.mean_cot - mean) > 1e-12:
                raise ValueError("mean_cot must equal the mean of per-run values")
        elif self.mean_cot is not None:
            raise ValueError("mean_cot must be None when all runs are immobile")


# ---------------------------------------------------------------------------
# cost of transport
# ---------------------------------------------------------------------------


def cost_of_transport(log: TrajectoryLog, mass: float, gravity: float = 9.81):
    """Positive mechanical work per unit weight and horizontal path length.

    Each record's actuator powers tau_i * qd_i are clipped below at zero,
    summed, and integrated over the interval ending at that record; the
    total is divided by mass * gravity * D with D the horizontal path length
    of the base. Returns None (the "immobile" marker) when D is under
    IMMOBILE_DISTANCE_M; raises on empty or non-finite logs.
    """
    if log.n_steps == 0:
        raise ValueError("trajectory log is empty")
    if not (mass > 0.0 and gravity > 0.0):
        raise ValueError("mass and gravity must be positive")
    for name in ("time", "base_position", "tau", "joint_velocity"):
        arr = getattr(log, name)
        if not np.isfinite(arr).all():
            raise ValueError(f"non-finite entries in {name}")

    dts = np.diff(log.time, prepend=0.0)
    power = np.maximum(log.tau * log.joint_velocity, 0.0).sum(axis=1)
    work = float(np.sum(power * dts))

    xy = log.base_position[:, :2]
    distance = float(np.sum(np.hypot(*np.diff(xy, axis=0).T))) if log.n_steps > 1 else 0.0
    if distance < IMMOBILE_DISTANCE_M:
        return None
    return work / (mass * gravity * distance)


# ---------------------------------------------------------------------------
# policies
# ---------------------------------------------------------------------------


@dataclass
class EvalPolicy:
    """Deterministic wrapper: normalized observation -> actor mean action."""

    params: PolicyParams
    norm: RunningNorm
    variant: str = ""

    @property
    def obs_dim(self) -> int:
        return self.params.obs_dim

    def __call__(self, obs: np.ndarray) -> np.ndarray:
        return mlp_forward(self.params.actor, self.norm.normalize(obs))

    @classmethod
    def from_checkpoint(cls, path: str) -> "EvalPolicy":
        ck = load_checkpoint(path)
        return cls(params=ck["policy"], norm=ck["norm"],
                   variant=ck["meta"].get("variant", ""))


# ---------------------------------------------------------------------------
# evaluation protocol
# ---------------------------------------------------------------------------


def run_protocol(policy: Callable[[np.ndarray], np.ndarray],
                 variant: str,
                 kind: Union[TerrainKind, str],
                 seed: int,
                 cfg: Optional[SuiteConfig] = None):
    """One timed evaluation run; returns (TrajectoryLog, cost of transport).

    The robot spawns at the center of a tiling x tiling arena of `kind` at
    its maximum difficulty level. Commands are drawn once at t = 0 and
    redrawn once at the configured switch time; observation noise, pushes,
    and reset randomization are disabled and friction is fixed, so the run
    is a pure function of (policy, variant, kind, seed). A base collision or
    divergence ends the run early: the pre-fall segment is kept and the fall
    is flagged on the log.
    """
    cfg = copy.deepcopy(cfg) if cfg is not None else SuiteConfig()
    ec = cfg.eval
    kind = TerrainKind.parse(kind)
    # the episode clock must not cut the protocol short
    cfg.env.max_episode_s = ec.duration_s

    max_level = cfg.env.curriculum.max_level
    tiling = int(ec.tiling)
    layout = [[(kind, max_level)] * tiling for _ in range(tiling)]
    arena = build_arena(layout, seeds=int(seed), cfg=cfg.terrain)

    env = VectorEnv(
        variant, cfg=cfg, n_envs=1, seed=int(seed), arena=arena,
        noise_enabled=False, pushes_enabled=False, curriculum_enabled=False,
        randomize_on_reset=False, friction_override=ec.friction,
        auto_reset=False, spawn_tile=(tiling // 2, tiling // 2),
    )
    obs_dim = getattr(policy, "obs_dim", None)
    if obs_dim is not None and obs_dim != env.obs_dim:
        raise ValueError(
            f"policy expects {obs_dim}-D observations but variant "
            f"'{variant}' emits {env.obs_dim}-D")

    dt = env.control_dt
    n_steps = int(round(ec.duration_s / dt))
    switch_step = int(round(ec.command_switch_s / dt))
    dof = env.dof
    T = n_steps + 1

    time = np.zeros(T)
    base_position = np.zeros((T, 3))
    base_velocity = np.zeros((T, 3))
    yaw_rate = np.zeros(T)
    commands = np.zeros((T, 3))
    base_height = np.zeros(T)
    desired_height = np.full(T, cfg.env.reward.desired_base_height)
    tau = np.zeros((T, dof))
    joint_velocity = np.zeros((T, dof))

    obs = env.reset()

    def record(row: int, t: float):
        b = env.batch
        pos = b.pos[0]
        time[row] = t
        base_position[row] = pos
        base_velocity[row] = _world_to_base(b.quat[:1], b.linvel[:1])[0]
        yaw_rate[row] = _world_to_base(b.quat[:1], b.angvel[:1])[0, 2]
        base_height[row] = pos[2] - float(sample_height(env.arena, pos[0], pos[1]))
        if env.last_log is not None:
            tau[row] = env.last_log.tau[0]
            joint_velocity[row] = env.last_log.joint_velocity[0]

    record(0, 0.0)
    commands[0] = env.commands[0]

    fell = False
    rows = 1
    for k in range(1, n_steps + 1):
        commands[k] = env.commands[0]
        action = np.asarray(policy(obs))
        obs, rewards, dones, info = env.step(action.reshape(1, dof))
        record(k, k * dt)
        rows = k + 1
        if dones[0] and not info["time_outs"][0]:
            fell = True
            break
        if k == switch_step:
            env.resample_commands()

    log = TrajectoryLog(
        time=time[:rows], base_position=base_position[:rows],
        base_velocity=base_velocity[:rows], yaw_rate=yaw_rate[:rows],
        commands=commands[:rows], base_height=base_height[:rows],
        desired_height=desired_height[:rows], tau=tau[:rows],
        joint_velocity=joint_velocity[:rows],
        variant=str(variant), terrain=kind.value, seed=int(seed),
        config_sha=config_fingerprint(cfg), fell=fell,
    )
    mass = env.spec.base_mass + ec.leg_mass_allowance
    return log, cost_of_transport(log, mass, cfg.sim.gravity)


def _tracking_errors(log: TrajectoryLog) -> Tuple[float, float]:
    vel_err = np.hypot(log.base_velocity[:, 0] - log.commands[:, 0],
                       log.base_velocity[:, 1] - log.commands[:, 1])
    height_err = np.abs(log.base_height - log.desired_height)
    return float(np.mean(vel_err)), float(np.mean(height_err))


def compare_morphologies(policies: Mapping[str, Callable],
                         kinds: Optional[Sequence] = None,
                         runs_per_kind: int = 5,
                         seeds: Optional[Sequence[int]] = None,
                         cfg: Optional[SuiteConfig] = None,
                         keep_logs: bool = False):
    """Paired-seed evaluation grid; returns a list of CoTReport.

    Every (kind, variant) cell runs `runs_per_kind` protocol runs, and run r
    uses the same seed for every variant, so terrain and command draws are
    paired across the comparison. Reports are ordered by (kind, variant in
    the mapping's order, run index). With keep_logs=True returns
    (reports, {(kind, variant): [TrajectoryLog, ...]}).
    """
    if not policies:
        raise ValueError("no policies given")
    kinds = [TerrainKind.parse(k) for k in (kinds or DEFAULT_EVAL_KINDS)]
    if seeds is None:
        seeds = tuple(range(runs_per_kind))
    seeds = tuple(int(s) for s in seeds)
    if len(seeds) != runs_per_kind:
        raise ValueError(
            f"need {runs_per_kind} seeds, got {len(seeds)}")
    for variant, policy in policies.items():
        if policy is None:
            raise ValueError(f"missing policy for variant '{variant}'")

    reports = []
    logs = {}
    for kind in kinds:
        for variant, policy in policies.items():
            per_run = []
            vel_errs = []
            height_errs = []
            falls = 0
            cell_logs = []
            for s in seeds:
                log, cot = run_protocol(policy, variant, kind, s, cfg=cfg)
                per_run.append(cot)
                ve, he = _tracking_errors(log)
                vel_errs.append(ve)
                height_errs.append(he)
                falls += int(log.fell)
                if keep_logs:
                    cell_logs.append(log)
            numeric = [c for c in per_run if c is not None]
            reports.append(CoTReport(
                terrain=kind.value, variant=str(variant),
                per_run_cot=tuple(per_run),
                mean_cot=float(np.mean(numeric)) if numeric else None,
                mean_velocity_error=float(np.mean(vel_errs)),
                mean_height_error=float(np.mean(height_errs)),
                falls=falls, seeds=seeds,
            ))
            if keep_logs:
                logs[(kind.value, str(variant))] = cell_logs
    return (reports, logs) if keep_logs else reports


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------


def _fmt(value) -> str:
    if value is None:
        return "immobile"
    return repr(float(value))


def export_traces(log: TrajectoryLog, out_path: str) -> None:
    """Write the tracking trace CSV: measured vs commanded velocity/height.

    One metadata line, a fixed header, then one full-precision row per
    record, so re-importing reproduces the series bit for bit.
    """
    buf = io.StringIO()
    buf.write(f"# config={log.config_sha} seed={log.seed} "
              f"variant={log.variant} terrain={log.terrain}\n")
    buf.write(",".join(TRACE_COLUMNS) + "\n")
    series = np.column_stack([
        log.time,
        log.base_velocity[:, 0], log.commands[:, 0],
        log.base_velocity[:, 1], log.commands[:, 1],
        log.yaw_rate, log.commands[:, 2],
        log.base_height, log.desired_height,
    ])
    for row in series:
        buf.write(",".join(repr(float(v)) for v in row) + "\n")
    with open(out_path, "w") as fh:
        fh.write(buf.getvalue())


def load_traces(path: str) -> dict:
    """Read a trace CSV back into {column: array}; inverse of export_traces."""
    with open(path) as fh:
        lines = [ln.rstrip("\n") for ln in fh if not ln.startswith("#")]
    if not lines:
        raise ValueError(f"no data in {path}")
    header = lines[0].split(",")
    data = np.array([[float(v) for v in ln.split(",")] for ln in lines[1:]],
                    dtype=np.float64).reshape(len(lines) - 1, len(header))
    return {name: data[:, i] for i, name in enumerate(header)}


def report_rows(reports: Sequence[CoTReport]):
    """Flatten reports to (header, rows-of-strings) for CSV/table output."""
    runs = max(len(r.per_run_cot) for r in reports)
    header = ["terrain", "variant"]
    header += [f"cot_run{i + 1}" for i in range(runs)]
    header += ["mean_cot", "mean_velocity_error_ms", "mean_height_error_m",
               "falls"]
    rows = []
    for r in reports:
        cells = [r.terrain, r.variant]
        cells += [_fmt(c) for c in r.per_run_cot]
        cells += [""] * (runs - len(r.per_run_cot))
        cells += [_fmt(r.mean_cot), repr(r.mean_velocity_error),
                  repr(r.mean_height_error), str(r.falls)]
        rows.append(cells)
    return header, rows


def _meta_line(reports: Sequence[CoTReport], cfg: Optional[SuiteConfig]) -> str:
    sha = config_fingerprint(cfg if cfg is not None else SuiteConfig())
    seeds = reports[0].seeds if reports else ()
    variants = sorted({r.variant for r in reports})
    return (f"# config={sha} seeds={','.join(str(s) for s in seeds)} "
            f"variants={','.join(variants)}")


def write_report_csv(reports: Sequence[CoTReport], path: str,
                     cfg: Optional[SuiteConfig] = None) -> None:
    header, rows = report_rows(reports)
    with open(path, "w") as fh:
        fh.write(_meta_line(reports, cfg) + "\n")
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(row) + "\n")


def _aligned(header, rows) -> str:
    widths = [max(len(h), *(len(r[i]) for r in rows)) if rows else len(h)
              for i, h in enumerate(header)]
    out = ["  ".join(h.ljust(w) for h, w in zip(header, widths)).rstrip()]
    for row in rows:
        out.append("  ".join(c.ljust(w) for c, w in zip(row, widths)).rstrip())
    return "\n".join(out) + "\n"


def format_report_table(reports: Sequence[CoTReport]) -> str:
    """Human-readable aligned-text rendering of report_rows."""
    header, rows = report_rows(reports)
    short = []
    for cells in rows:
        short.append(cells[:2] + [c if c in ("", "immobile") else f"{float(c):.4f}"
                                  for c in cells[2:-1]] + [cells[-1]])
    return _aligned(header, short)


def comparison_columns(reports: Sequence[CoTReport]):
    """Pivot reports into one row per terrain, one mean-CoT column per variant.

    Returns (variants, rows) with rows = [terrain, mean cot per variant...]
    ordered by first appearance of each terrain.
    """
    variants = []
    terrains = []
    for r in reports:
        if r.variant not in variants:
            variants.append(r.variant)
        if r.terrain not in terrains:
            terrains.append(r.terrain)
    cell = {(r.terrain, r.variant): r.mean_cot for r in reports}
    rows = []
    for t in terrains:
        rows.append([t] + [cell.get((t, v)) for v in variants])
    return variants, rows


def format_comparison_table(reports: Sequence[CoTReport]) -> str:
    variants, rows = comparison_columns(reports)
    header = ["terrain"] + [f"cot_{v}" for v in variants]
    cells = [[r[0]] + [("immobile" if c is None else f"{c:.4f}") for c in r[1:]]
             for r in rows]
    return _aligned(header, cells)


def write_comparison_csv(reports: Sequence[CoTReport], path: str,
                         cfg: Optional[SuiteConfig] = None) -> None:
    variants, rows = comparison_columns(reports)
    header = ["terrain"] + [f"cot_{v}" for v in variants]
    with open(path, "w") as fh:
        fh.write(_meta_line(reports, cfg) + "\n")
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join([row[0]] + [_fmt(c) for c in row[1:]]) + "\n")
