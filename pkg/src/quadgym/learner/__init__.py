"""Actor-critic networks and PPO, implemented directly on numpy arrays."""

from .mlp import (
    AdamState,
    MlpGrads,
    MlpParams,
    adam_step,
    clip_grad_norm,
    elu,
    init_mlp,
    mlp_backward,
    mlp_forward,
    mlp_forward_cache,
)
from .ppo import (
    PolicyParams,
    RolloutBuffer,
    UpdateStats,
    compute_gae,
    gaussian_entropy,
    gaussian_kl,
    gaussian_log_prob,
    init_policy,
    policy_act,
    policy_sample,
    ppo_update,
    surrogate_gradients,
)
from .trainer import (
    RunningNorm,
    TrainResult,
    config_fingerprint,
    load_checkpoint,
    save_checkpoint,
    train,
)

__all__ = [
    "AdamState", "MlpGrads", "MlpParams", "adam_step", "clip_grad_norm",
    "elu", "init_mlp", "mlp_backward", "mlp_forward", "mlp_forward_cache",
    "PolicyParams", "RolloutBuffer", "UpdateStats", "compute_gae",
    "gaussian_entropy", "gaussian_kl", "gaussian_log_prob", "init_policy",
    "policy_act", "policy_sample", "ppo_update", "surrogate_gradients",
    "RunningNorm", "TrainResult", "config_fingerprint", "load_checkpoint",
    "save_checkpoint", "train",
]
