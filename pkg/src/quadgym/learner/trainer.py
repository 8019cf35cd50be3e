"""Training loop: rollouts, normalization, PPO updates, checkpoints, metrics.

Runs are deterministic for a fixed seed: the metrics CSV is byte-identical
across repeats and checkpoints hold identical parameters. Checkpoint writes
go through a temp file and an atomic rename, so an interrupted run never
leaves a torn file behind.
"""

import dataclasses
import hashlib
import json
import os

import numpy as np

from ..config import PpoConfig, SuiteConfig, config_to_dict
from ..envrl import RewardBreakdown, VectorEnv
from .mlp import AdamState, MlpParams, mlp_forward
from .ppo import PolicyParams, RolloutBuffer, compute_gae, init_policy, \
    policy_act, ppo_update

__all__ = [
    "RunningNorm", "TrainResult", "config_fingerprint", "save_checkpoint",
    "load_checkpoint", "train",
]

METRICS_COLUMNS = (
    "iteration", "mean_total_reward",
    *RewardBreakdown.TERM_FIELDS,
    "mean_kl", "lr", "mean_terrain_level",
)

CHECKPOINT_VERSION = 1


class RunningNorm:
    """Running mean/variance normalizer with a freeze switch for evaluation."""

    def __init__(self, dim: int, clip: float = 10.0, eps: float = 1e-8):
        self.mean = np.zeros(dim)
        self.var = np.ones(dim)
        self.count = 0.0
        self.clip = clip
        self.eps = eps
        self.frozen = False

    def update(self, x: np.ndarray) -> None:
        if self.frozen:
            return
        x = np.atleast_2d(x)
        b_mean = x.mean(axis=0)
        b_var = x.var(axis=0)
        b_count = x.shape[0]
        delta = b_mean - self.mean
        total = self.count + b_count
        self.mean = self.mean + delta * (b_count / total)
        m_a = self.var * self.count
        m_b = b_var * b_count
        self.var = (m_a + m_b + delta * delta * (self.count * b_count / total)) / total
        self.count = total

    def normalize(self, x: np.ndarray) -> np.ndarray:
        z = (x - self.mean) / np.sqrt(self.var + self.eps)
        return np.clip(z, -self.clip, self.clip)


def config_fingerprint(cfg: SuiteConfig) -> str:
    payload = json.dumps(config_to_dict(cfg), sort_keys=True)
    return hashlib.sha256(payload.encode()).hexdigest()[:16]


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------


def _mlp_arrays(prefix: str, p: MlpParams) -> dict:
    out = {}
    for i, (w, b) in enumerate(zip(p.weights, p.biases)):
        out[f"{prefix}_w{i}"] = w
        out[f"{prefix}_b{i}"] = b
    return out


def _mlp_from_arrays(prefix: str, data) -> MlpParams:
    weights, biases = [], []
    i = 0
    while f"{prefix}_w{i}" in data:
        weights.append(np.array(data[f"{prefix}_w{i}"]))
        biases.append(np.array(data[f"{prefix}_b{i}"]))
        i += 1
    return MlpParams(weights, biases)


def save_checkpoint(path: str, pp: PolicyParams, norm: RunningNorm,
                    opt: AdamState, lr: float, iteration: int,
                    cfg: SuiteConfig, variant: str,
                    levels=None) -> None:
    meta = {
        "version": CHECKPOINT_VERSION,
        "variant": str(variant),
        "config_sha": config_fingerprint(cfg),
        "iteration": int(iteration),
        "obs_dim": pp.obs_dim,
        "act_dim": pp.act_dim,
    }
    arrays = {
        **_mlp_arrays("actor", pp.actor),
        **_mlp_arrays("critic", pp.critic),
        "log_std": pp.log_std,
        "norm_mean": norm.mean,
        "norm_var": norm.var,
        "norm_count": np.array(norm.count),
        "adam_t": np.array(opt.t),
        "lr": np.array(lr),
        "iteration": np.array(iteration),
        "meta": np.array(json.dumps(meta, sort_keys=True)),
    }
    for i, (m, v) in enumerate(zip(opt.m, opt.v)):
        arrays[f"adam_m{i}"] = m
        arrays[f"adam_v{i}"] = v
    if levels is not None:
        arrays["levels"] = np.asarray(levels, dtype=np.int64)
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    tmp = path + ".tmp"
    with open(tmp, "wb") as fh:
        np.savez(fh, **arrays)
    os.replace(tmp, path)


def load_checkpoint(path: str) -> dict:
    with np.load(path, allow_pickle=False) as data:
        meta = json.loads(str(data["meta"]))
        if meta.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {meta.get('version')}")
        pp = PolicyParams(_mlp_from_arrays("actor", data),
                          np.array(data["log_std"]),
                          _mlp_from_arrays("critic", data))
        norm = RunningNorm(pp.obs_dim)
        norm.mean = np.array(data["norm_mean"])
        norm.var = np.array(data["norm_var"])
        norm.count = float(data["norm_count"])
        n_arrays = len(pp.param_list())
        opt = AdamState(
            m=[np.array(data[f"adam_m{i}"]) for i in range(n_arrays)],
            v=[np.array(data[f"adam_v{i}"]) for i in range(n_arrays)],
            t=int(data["adam_t"]),
        )
        out = {
            "policy": pp,
            "norm": norm,
            "opt": opt,
            "lr": float(data["lr"]),
            "iteration": int(data["iteration"]),
            "meta": meta,
        }
        if "levels" in data:
            out["levels"] = np.array(data["levels"])
    return out


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------


@dataclasses.dataclass
class TrainResult:
    iterations_run: int
    metrics_path: str
    checkpoint_path: str
    policy: PolicyParams
    norm: RunningNorm
    first_mean_reward: float
    last_mean_reward: float


def _format_row(values) -> str:
    parts = []
    for v in values:
        parts.append(repr(float(v)) if isinstance(v, float) else str(v))
    return ",".join(parts) + "\n"


def train(variant, cfg: SuiteConfig | None = None, out_dir: str = "runs/train",
          seed: int | None = None, iterations: int | None = None,
          num_envs: int | None = None, resume: str | None = None,
          progress=None) -> TrainResult:
    """Train one morphology; writes metrics.csv and checkpoints under out_dir."""
    cfg = cfg or SuiteConfig()
    tc = cfg.train
    seed = cfg.seed if seed is None else int(seed)
    iterations = tc.iterations if iterations is None else int(iterations)
    num_envs = tc.num_envs if num_envs is None else int(num_envs)
    horizon = tc.steps_per_iteration

    env = VectorEnv(
        variant, cfg=cfg, n_envs=num_envs, seed=seed,
        terrain_kinds=tc.terrain_kinds or None,
        min_level=tc.min_level or None,
        max_level=tc.max_level or None,
    )

    start_iteration = 1
    lr = cfg.ppo.lr_init
    if resume is not None:
        ck = load_checkpoint(resume)
        if ck["meta"]["config_sha"] != config_fingerprint(cfg):
            raise ValueError("checkpoint was produced with a different config")
        if ck["meta"]["variant"] != str(env.spec.variant.value):
            raise ValueError("checkpoint is for a different morphology")
        pp, norm, opt = ck["policy"], ck["norm"], ck["opt"]
        lr = ck["lr"]
        start_iteration = ck["iteration"] + 1
        if "levels" in ck and len(ck["levels"]) == num_envs:
            for i, lvl in enumerate(ck["levels"]):
                env.curriculum[i] = dataclasses.replace(env.curriculum[i],
                                                        level=int(lvl))
    else:
        pp = init_policy(env.obs_dim, env.action_dim,
                         np.random.default_rng(np.random.SeedSequence([seed, 1])),
                         cfg.ppo)
        norm = RunningNorm(env.obs_dim)
        opt = AdamState.like(pp.param_list())

    rng = np.random.default_rng(np.random.SeedSequence([seed, 2 + start_iteration]))
    buffer = RolloutBuffer(num_envs, horizon, env.obs_dim, env.action_dim)

    os.makedirs(out_dir, exist_ok=True)
    ckpt_dir = os.path.join(out_dir, "checkpoints")
    os.makedirs(ckpt_dir, exist_ok=True)
    metrics_path = os.path.join(out_dir, "metrics.csv")
    mode = "a" if (resume is not None and os.path.exists(metrics_path)) else "w"
    metrics = open(metrics_path, mode)
    if mode == "w":
        metrics.write(",".join(METRICS_COLUMNS) + "\n")

    obs_raw = env.reset()
    norm.update(obs_raw)
    obs = norm.normalize(obs_raw)
    first_mean = float("nan")
    last_mean = float("nan")
    final_path = os.path.join(ckpt_dir, "checkpoint_final.npz")
    # rewards enter the buffer as rate * dt so returns stay O(1); metrics
    # report the raw per-step term means
    reward_scale = env.control_dt

    try:
        for it in range(start_iteration, iterations + 1):
            buffer.reset()
            term_sums = {f: 0.0 for f in RewardBreakdown.TERM_FIELDS}
            total_sum = 0.0
            for _ in range(horizon):
                action, logp, mean, value = policy_act(pp, obs, rng)
                obs_raw, rewards, dones, info = env.step(action)
                norm.update(obs_raw)
                next_obs = norm.normalize(obs_raw)

                next_values = mlp_forward(pp.critic, next_obs)[:, 0]
                if dones.any():
                    next_values = np.where(dones, 0.0, next_values)
                    tos = info["time_outs"]
                    if tos.any():
                        t_obs = norm.normalize(info["terminal_observation"][tos])
                        next_values[tos] = mlp_forward(pp.critic, t_obs)[:, 0]

                buffer.add(obs, action, logp, rewards.total * reward_scale,
                           value, dones, next_values, mean=mean)
                total_sum += float(np.mean(rewards.total))
                for f in term_sums:
                    term_sums[f] += float(np.mean(getattr(rewards, f)))
                obs = next_obs

            compute_gae(buffer, cfg.ppo.gamma, cfg.ppo.lam)
            pp, stats, opt = ppo_update(pp, buffer, cfg.ppo, rng, opt, lr)
            lr = stats.lr

            mean_reward = total_sum / horizon
            if it == start_iteration:
                first_mean = mean_reward
            last_mean = mean_reward
            row = [it, mean_reward]
            row += [term_sums[f] / horizon for f in RewardBreakdown.TERM_FIELDS]
            row += [stats.mean_kl, lr, float(np.mean(env.level_array()))]
            metrics.write(_format_row(row))
            metrics.flush()
            if progress is not None:
                progress(it, mean_reward, stats)

            if tc.checkpoint_interval > 0 and it % tc.checkpoint_interval == 0:
                save_checkpoint(
                    os.path.join(ckpt_dir, f"checkpoint_{it:06d}.npz"),
                    pp, norm, opt, lr, it, cfg, env.spec.variant.value,
                    levels=env.level_array())
    finally:
        metrics.close()

    save_checkpoint(final_path, pp, norm, opt, lr, iterations, cfg,
                    env.spec.variant.value, levels=env.level_array())
    return TrainResult(
        iterations_run=iterations - start_iteration + 1,
        metrics_path=metrics_path,
        checkpoint_path=final_path,
        policy=pp,
        norm=norm,
        first_mean_reward=first_mean,
        last_mean_reward=last_mean,
    )
