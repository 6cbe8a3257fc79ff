"""Actor-critic MLP with a shared tanh trunk, written against plain numpy.

Parameters live in an ordered ``dict[str, ndarray]`` so the optimizer,
checkpointing and gradient checks can treat them uniformly. Weight
matrices are stored ``(fan_in, fan_out)`` and applied as ``x @ W + b``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np


@dataclass(frozen=True)
class MLPShape:
    input_dim: int = 3
    hidden_layers: int = 2
    width: int = 64
    action_dim: int = 6

    def problems(self) -> list[str]:
        out = []
        for name in ("input_dim", "hidden_layers", "width", "action_dim"):
            if getattr(self, name) < 1:
                out.append(f"ppo.{name} must be >= 1, got {getattr(self, name)}")
        return out

    def layer_dims(self) -> list[tuple[str, int, int]]:
        dims = []
        fan_in = self.input_dim
        for i in range(self.hidden_layers):
            dims.append((f"trunk.{i}", fan_in, self.width))
            fan_in = self.width
        dims.append(("policy", self.width, self.action_dim))
        dims.append(("value", self.width, 1))
        return dims

    def param_count(self) -> int:
        return sum(i * o + o for _, i, o in self.layer_dims())

    def forward_macs(self) -> int:
        """Multiply-adds for one observation through trunk and both heads."""
        return sum(i * o for _, i, o in self.layer_dims())

    def backward_macs(self) -> int:
        """Multiply-adds per sample for weight gradients plus the input
        gradients of every layer except the first."""
        dims = self.layer_dims()
        weight_grads = sum(i * o for _, i, o in dims)
        input_grads = sum(i * o for name, i, o in dims if name != "trunk.0")
        return weight_grads + input_grads


@dataclass
class PolicyNetwork:
    shape: MLPShape
    params: dict[str, np.ndarray]

    def copy(self) -> "PolicyNetwork":
        return PolicyNetwork(self.shape, {k: v.copy() for k, v in self.params.items()})

    def flat(self) -> np.ndarray:
        return np.concatenate([v.ravel() for v in self.params.values()])


def init_network(shape: MLPShape, seed: int | np.random.Generator = 0) -> PolicyNetwork:
    """Weights ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)), biases zero."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.Generator(np.random.PCG64(seed))
    params: dict[str, np.ndarray] = {}
    for name, fan_in, fan_out in shape.layer_dims():
        bound = 1.0 / np.sqrt(fan_in)
        params[f"{name}.weight"] = rng.uniform(-bound, bound, size=(fan_in, fan_out))
        params[f"{name}.bias"] = np.zeros(fan_out)
    return PolicyNetwork(shape, params)


class ForwardCache(NamedTuple):
    activations: list[np.ndarray]  # input followed by each hidden layer output
    logits: np.ndarray
    value: np.ndarray


def forward_batch(net: PolicyNetwork, obs: np.ndarray) -> ForwardCache:
    p = net.params
    h = np.atleast_2d(np.asarray(obs, dtype=float))
    acts = [h]
    for i in range(net.shape.hidden_layers):
        h = np.tanh(h @ p[f"trunk.{i}.weight"] + p[f"trunk.{i}.bias"])
        acts.append(h)
    logits = h @ p["policy.weight"] + p["policy.bias"]
    value = (h @ p["value.weight"] + p["value.bias"])[:, 0]
    return ForwardCache(acts, logits, value)


def forward(net: PolicyNetwork, obs: np.ndarray) -> tuple[np.ndarray, float]:
    cache = forward_batch(net, obs)
    return cache.logits[0], float(cache.value[0])


def log_softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def softmax(logits: np.ndarray) -> np.ndarray:
    z = np.exp(logits - logits.max(axis=-1, keepdims=True))
    return z / z.sum(axis=-1, keepdims=True)


@dataclass
class LossInputs:
    obs: np.ndarray
    actions: np.ndarray
    old_log_probs: np.ndarray
    advantages: np.ndarray
    returns: np.ndarray


@dataclass(frozen=True)
class LossCoefficients:
    clip_epsilon: float = 0.2
    value_loss_coeff: float = 0.5
    entropy_coeff: float = 0.01


@dataclass
class LossStats:
    total: float
    policy: float
    value: float
    entropy: float
    approx_kl: float
    clip_fraction: float


def _surrogate_terms(logits, batch: LossInputs, eps: float):
    logp_all = log_softmax(logits)
    n = logits.shape[0]
    logp = logp_all[np.arange(n), batch.actions]
    ratio = np.exp(logp - batch.old_log_probs)
    adv = batch.advantages
    unclipped = ratio * adv
    clipped = np.clip(ratio, 1.0 - eps, 1.0 + eps) * adv
    return logp_all, logp, ratio, unclipped, clipped


def ppo_loss(net: PolicyNetwork, batch: LossInputs, coef: LossCoefficients) -> LossStats:
    """Composite loss: clipped surrogate + c_v * value MSE - c_e * entropy."""
    cache = forward_batch(net, batch.obs)
    logp_all, logp, ratio, unclipped, clipped = _surrogate_terms(cache.logits, batch, coef.clip_epsilon)
    policy = -float(np.mean(np.minimum(unclipped, clipped)))
    value = float(np.mean((cache.value - batch.returns) ** 2))
    probs = np.exp(logp_all)
    entropy = float(np.mean(-(probs * logp_all).sum(axis=1)))
    total = policy + coef.value_loss_coeff * value - coef.entropy_coeff * entropy
    return LossStats(
        total,
        policy,
        value,
        entropy,
        float(np.mean(batch.old_log_probs - logp)),
        float(np.mean(np.abs(ratio - 1.0) > coef.clip_epsilon)),
    )


def backward(
    net: PolicyNetwork, batch: LossInputs, coef: LossCoefficients
) -> tuple[LossStats, dict[str, np.ndarray]]:
    """Loss statistics and exact gradients of ``ppo_loss`` for every parameter."""
    p = net.params
    cache = forward_batch(net, batch.obs)
    n = cache.logits.shape[0]
    eps = coef.clip_epsilon
    logp_all, logp, ratio, unclipped, clipped = _surrogate_terms(cache.logits, batch, eps)
    probs = np.exp(logp_all)
    ent_per = -(probs * logp_all).sum(axis=1)

    # min() takes the clipped branch on ties, whose slope is zero unless the
    # ratio is strictly inside the trust region.
    use_clipped = clipped <= unclipped
    inside = (ratio > 1.0 - eps) & (ratio < 1.0 + eps)
    slope = np.where(use_clipped & ~inside, 0.0, ratio * batch.advantages)
    d_logp = -slope / n

    onehot = np.zeros_like(probs)
    onehot[np.arange(n), batch.actions] = 1.0
    d_logits = d_logp[:, None] * (onehot - probs)
    d_logits += (coef.entropy_coeff / n) * probs * (logp_all + ent_per[:, None])
    d_value = coef.value_loss_coeff * 2.0 * (cache.value - batch.returns) / n

    grads: dict[str, np.ndarray] = {}
    h = cache.activations[-1]
    grads["policy.weight"] = h.T @ d_logits
    grads["policy.bias"] = d_logits.sum(axis=0)
    grads["value.weight"] = h.T @ d_value[:, None]
    grads["value.bias"] = np.array([d_value.sum()])
    dh = d_logits @ p["policy.weight"].T + d_value[:, None] @ p["value.weight"].T
    for i in reversed(range(net.shape.hidden_layers)):
        out = cache.activations[i + 1]
        dz = dh * (1.0 - out * out)
        grads[f"trunk.{i}.weight"] = cache.activations[i].T @ dz
        grads[f"trunk.{i}.bias"] = dz.sum(axis=0)
        if i > 0:
            dh = dz @ p[f"trunk.{i}.weight"].T

    policy = -float(np.mean(np.minimum(unclipped, clipped)))
    value = float(np.mean((cache.value - batch.returns) ** 2))
    entropy = float(ent_per.mean())
    stats = LossStats(
        policy + coef.value_loss_coeff * value - coef.entropy_coeff * entropy,
        policy,
        value,
        entropy,
        float(np.mean(batch.old_log_probs - logp)),
        float(np.mean(np.abs(ratio - 1.0) > eps)),
    )
    return stats, {k: grads[k] for k in p}


class Adam:
    def __init__(self, params: dict[str, np.ndarray], lr: float = 3e-4,
                 betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8):
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        c1 = 1.0 - self.b1**self.t
        c2 = 1.0 - self.b2**self.t
        for k, g in grads.items():
            m = self.m[k]
            v = self.v[k]
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            params[k] -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
