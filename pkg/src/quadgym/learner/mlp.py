"""Small fully-connected networks with hand-written reverse-mode gradients.

Everything is float64 numpy: forward, backward, and the Adam optimizer. The
networks are tiny (three hidden layers) and the policies must be bitwise
reproducible across runs, which rules out framework nondeterminism.
"""

import dataclasses

import numpy as np

__all__ = [
    "MlpParams", "MlpGrads", "AdamState", "elu", "init_mlp", "mlp_forward",
    "mlp_forward_cache", "mlp_backward", "adam_step", "clip_grad_norm",
]


@dataclasses.dataclass
class MlpParams:
    """Affine layers W_i (fan_in x fan_out) + b_i; ELU between, linear output."""

    weights: list
    biases: list

    def __post_init__(self):
        if len(self.weights) != len(self.biases):
            raise ValueError("weights and biases must pair up")
        for i in range(len(self.weights) - 1):
            if self.weights[i].shape[1] != self.weights[i + 1].shape[0]:
                raise ValueError(f"layer {i} output {self.weights[i].shape[1]} "
                                 f"!= layer {i + 1} input {self.weights[i + 1].shape[0]}")
        for w, b in zip(self.weights, self.biases):
            if b.shape != (w.shape[1],):
                raise ValueError("bias shape must match layer output width")

    @property
    def sizes(self) -> tuple:
        return tuple([self.weights[0].shape[0]] +
                     [w.shape[1] for w in self.weights])

    @property
    def n_params(self) -> int:
        return sum(w.size for w in self.weights) + sum(b.size for b in self.biases)

    def param_list(self) -> list:
        return list(self.weights) + list(self.biases)

    def copy(self) -> "MlpParams":
        return MlpParams([w.copy() for w in self.weights],
                         [b.copy() for b in self.biases])


@dataclasses.dataclass
class MlpGrads:
    d_weights: list
    d_biases: list

    def param_list(self) -> list:
        return list(self.d_weights) + list(self.d_biases)


def elu(x):
    """ELU with alpha=1; C1-continuous at 0."""
    return np.where(x > 0.0, x, np.expm1(x))


def _elu_deriv(z):
    return np.where(z > 0.0, 1.0, np.exp(z))


def _orthogonal(rng, fan_in: int, fan_out: int, gain: float) -> np.ndarray:
    a = rng.standard_normal((max(fan_in, fan_out), min(fan_in, fan_out)))
    q, r = np.linalg.qr(a)
    q = q * np.sign(np.diag(r))  # fix the sign convention so init is unique
    if fan_in < fan_out:
        q = q.T
    return np.ascontiguousarray(gain * q)


def init_mlp(sizes, rng, hidden_gain: float = np.sqrt(2.0),
             out_gain: float = 1.0) -> MlpParams:
    """Orthogonal weights (gain sqrt(2) on hidden, `out_gain` on output), zero biases."""
    sizes = list(sizes)
    if len(sizes) < 2:
        raise ValueError("need at least input and output widths")
    weights, biases = [], []
    for i in range(len(sizes) - 1):
        gain = out_gain if i == len(sizes) - 2 else hidden_gain
        weights.append(_orthogonal(rng, sizes[i], sizes[i + 1], gain))
        biases.append(np.zeros(sizes[i + 1]))
    return MlpParams(weights, biases)


def mlp_forward(p: MlpParams, x: np.ndarray) -> np.ndarray:
    """Forward pass; accepts a single vector or a (batch, in) matrix."""
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    h = x[None, :] if single else x
    if h.shape[1] != p.weights[0].shape[0]:
        raise ValueError(f"input width {h.shape[1]} != {p.weights[0].shape[0]}")
    last = len(p.weights) - 1
    for i, (w, b) in enumerate(zip(p.weights, p.biases)):
        h = h @ w + b
        if i != last:
            h = elu(h)
    return h[0] if single else h


def mlp_forward_cache(p: MlpParams, x: np.ndarray):
    """Forward pass keeping per-layer inputs and pre-activations for backward."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError("cached forward expects a (batch, in) matrix")
    if x.shape[1] != p.weights[0].shape[0]:
        raise ValueError(f"input width {x.shape[1]} != {p.weights[0].shape[0]}")
    inputs, preacts = [], []
    h = x
    last = len(p.weights) - 1
    for i, (w, b) in enumerate(zip(p.weights, p.biases)):
        inputs.append(h)
        z = h @ w + b
        preacts.append(z)
        h = elu(z) if i != last else z
    return h, (inputs, preacts)


def mlp_backward(p: MlpParams, cache, upstream: np.ndarray) -> MlpGrads:
    """Exact gradients of sum(upstream * output) w.r.t. every parameter.

    `upstream` is dLoss/dOutput, (batch, out); any mean-over-batch factor
    belongs to the caller. Summation over the batch happens here.
    """
    inputs, preacts = cache
    upstream = np.asarray(upstream, dtype=np.float64)
    d_weights = [None] * len(p.weights)
    d_biases = [None] * len(p.biases)
    delta = upstream
    for i in range(len(p.weights) - 1, -1, -1):
        if i != len(p.weights) - 1:
            delta = delta * _elu_deriv(preacts[i])
        d_weights[i] = inputs[i].T @ delta
        d_biases[i] = delta.sum(axis=0)
        if i > 0:
            delta = delta @ p.weights[i].T
    return MlpGrads(d_weights, d_biases)


# ---------------------------------------------------------------------------
# optimizer
# ---------------------------------------------------------------------------


@dataclasses.dataclass
class AdamState:
    m: list
    v: list
    t: int = 0

    @classmethod
    def like(cls, params: list) -> "AdamState":
        return cls([np.zeros_like(a) for a in params],
                   [np.zeros_like(a) for a in params], 0)


def clip_grad_norm(grads: list, max_norm: float) -> float:
    """Scale the gradient list in place to a global L2 norm cap; returns the norm."""
    total = 0.0
    for g in grads:
        total += float(np.sum(g * g))
    norm = np.sqrt(total)
    if max_norm > 0.0 and norm > max_norm:
        scale = max_norm / (norm + 1e-12)
        for g in grads:
            g *= scale
    return norm


def adam_step(params: list, grads: list, state: AdamState, lr: float,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8,
              sgd_indices: tuple = ()) -> None:
    """One Adam update, applied to every array in `params` in place.

    Entries listed in `sgd_indices` take a plain unnormalized SGD step
    instead. Adam rescales every coordinate's step to ~lr regardless of
    gradient size, so a parameter whose gradient contains a small constant
    bias (e.g. a fixed entropy bonus) would drift at full speed; the raw
    step keeps such biases proportionate.
    """
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ValueError("params, grads, and optimizer state must align")
    state.t += 1
    b1t = 1.0 - beta1 ** state.t
    b2t = 1.0 - beta2 ** state.t
    for k, (p, g, m, v) in enumerate(zip(params, grads, state.m, state.v)):
        if k in sgd_indices:
            p -= lr * g
            continue
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        p -= lr * (m / b1t) / (np.sqrt(v / b2t) + eps)
