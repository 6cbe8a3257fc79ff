"""PPO training loop for the UAV positioning environment."""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from .. import env as uav_env
from ..env import EnvConfig, EnvState
from ..probe import ComplexityProbe
from ..scene import Vec3
from .network import (
    Adam,
    LossCoefficients,
    LossInputs,
    LossStats,
    MLPShape,
    PolicyNetwork,
    backward,
    forward,
    init_network,
    log_softmax,
)


class PPOError(RuntimeError):
    pass


@dataclass(frozen=True)
class PPOHyperparams:
    gamma: float = 0.99
    gae_lambda: float = 0.95
    clip_epsilon: float = 0.2
    learning_rate: float = 3e-4
    update_epochs: int = 4
    minibatch_size: int = 64
    value_loss_coeff: float = 0.5
    entropy_coeff: float = 0.01
    episodes: int = 300
    seed: int = 0
    reward_normalization: bool = True
    bootstrap_time_limit: bool = True

    def problems(self) -> list[str]:
        out = []
        if not 0.0 <= self.gamma <= 1.0:
            out.append(f"ppo.gamma must be in [0, 1], got {self.gamma}")
        if not 0.0 <= self.gae_lambda <= 1.0:
            out.append(f"ppo.gae_lambda must be in [0, 1], got {self.gae_lambda}")
        if not self.clip_epsilon > 0:
            out.append(f"ppo.clip_epsilon must be > 0, got {self.clip_epsilon}")
        if not self.learning_rate > 0:
            out.append(f"ppo.learning_rate must be > 0, got {self.learning_rate}")
        for name in ("update_epochs", "minibatch_size", "episodes"):
            if getattr(self, name) < 1:
                out.append(f"ppo.{name} must be >= 1, got {getattr(self, name)}")
        if self.value_loss_coeff < 0 or self.entropy_coeff < 0:
            out.append("ppo.value_loss_coeff and ppo.entropy_coeff must be >= 0")
        if self.seed < 0:
            out.append(f"seed must be a non-negative integer, got {self.seed}")
        return out

    @property
    def coefficients(self) -> LossCoefficients:
        return LossCoefficients(self.clip_epsilon, self.value_loss_coeff, self.entropy_coeff)


class RewardScaler:
    """Standardizes rewards with the running mean and std of raw rewards.

    dB-sum rewards carry a large constant offset (tens of dB per receiver)
    while a single move changes them by a fraction of a dB. Left in, the
    offset inflates value targets to ~r/(1-gamma) and any lag in fitting
    them swamps the per-step differences that carry the signal; centering
    removes it. Only the agent sees scaled rewards; metrics keep raw values.
    """

    def __init__(self):
        self.count = 0
        self.mean = 0.0
        self.m2 = 0.0

    def __call__(self, reward: float) -> float:
        self.count += 1
        delta = reward - self.mean
        self.mean += delta / self.count
        self.m2 += delta * (reward - self.mean)
        var = self.m2 / self.count
        return (reward - self.mean) / math.sqrt(var + 1e-8)


@dataclass(frozen=True)
class Transition:
    s: np.ndarray
    a: int
    r: float
    s_next: np.ndarray
    log_prob: float
    value: float
    done: bool

    def dimensionality(self) -> int:
        return self.s.size + 1 + 1 + self.s_next.size + 1 + 1 + 1


@dataclass
class EpisodeMetrics:
    episode: int
    sinr_db: tuple[float, ...]
    capacity: tuple[float, ...]
    capacity_sum: float
    episode_return: float
    policy_loss: float
    value_loss: float
    entropy: float


@dataclass
class TrainResult:
    network: PolicyNetwork
    metrics: list[EpisodeMetrics] = field(default_factory=list)


def sample_action(logits: np.ndarray, rng: np.random.Generator) -> tuple[int, float]:
    """Inverse-CDF draw from softmax(logits); returns (action, log-prob)."""
    logp = log_softmax(np.asarray(logits, dtype=float))
    cdf = np.cumsum(np.exp(logp))
    u = rng.random() * cdf[-1]
    a = int(min(np.searchsorted(cdf, u, side="right"), len(cdf) - 1))
    # Skip zero-probability slots the search can land on at exact CDF plateaus.
    while logp[a] == -np.inf:
        a -= 1
    return a, float(logp[a])


def compute_gae(
    trajectory: Sequence[Transition], gamma: float, lam: float, last_value: float = 0.0
) -> tuple[np.ndarray, np.ndarray]:
    """Generalized advantage estimates and value targets.

    ``last_value`` bootstraps V(s_next) of the final transition when the
    trajectory is cut without a terminal flag.
    """
    n = len(trajectory)
    if n == 0:
        raise PPOError("compute_gae needs a non-empty trajectory")
    adv = np.zeros(n)
    running = 0.0
    for t in reversed(range(n)):
        tr = trajectory[t]
        next_value = trajectory[t + 1].value if t + 1 < n else last_value
        live = 0.0 if tr.done else 1.0
        delta = tr.r + gamma * next_value * live - tr.value
        running = delta + gamma * lam * live * running
        adv[t] = running
    values = np.array([tr.value for tr in trajectory])
    return adv, adv + values


def ppo_update(
    net: PolicyNetwork,
    optimizer: Adam,
    trajectory: Sequence[Transition],
    advantages: np.ndarray,
    returns: np.ndarray,
    hyper: PPOHyperparams,
    rng: np.random.Generator,
    probe: ComplexityProbe | None = None,
) -> LossStats:
    """Clipped-surrogate epochs over shuffled minibatches; mean stats returned."""
    n = len(trajectory)
    if n == 0:
        raise PPOError("ppo_update needs at least one transition")
    obs = np.stack([t.s for t in trajectory])
    actions = np.array([t.a for t in trajectory], dtype=int)
    old_logp = np.array([t.log_prob for t in trajectory])
    adv = np.asarray(advantages, dtype=float)
    std = adv.std()
    if adv.var() >= 1e-8:
        adv = (adv - adv.mean()) / std
    returns = np.asarray(returns, dtype=float)
    coef = hyper.coefficients

    totals = np.zeros(6)
    count = 0
    for epoch in range(hyper.update_epochs):
        order = rng.permutation(n)
        for mb, start in enumerate(range(0, n, hyper.minibatch_size)):
            idx = order[start : start + hyper.minibatch_size]
            batch = LossInputs(obs[idx], actions[idx], old_logp[idx], adv[idx], returns[idx])
            stats, grads = backward(net, batch, coef)
            if not (math.isfinite(stats.total) and all(np.all(np.isfinite(g)) for g in grads.values())):
                raise PPOError(
                    f"non-finite loss in epoch {epoch} minibatch {mb} "
                    f"(indices {idx.tolist()}): total={stats.total}"
                )
            optimizer.step(net.params, grads)
            if probe is not None:
                probe.macs += len(idx) * (net.shape.forward_macs() + net.shape.backward_macs())
            totals += (stats.total, stats.policy, stats.value, stats.entropy, stats.approx_kl, stats.clip_fraction)
            count += 1
    return LossStats(*(totals / count))


def _episode(
    net: PolicyNetwork,
    config: EnvConfig,
    rng: np.random.Generator,
    probe: ComplexityProbe | None,
    start: EnvState,
):
    state = start
    transitions: list[Transition] = []
    reports = []
    per_step_paths = config.scene.n_receivers * (1 + len(config.scene.faces))
    while True:
        s = uav_env.observe(config, state)
        logits, value = forward(net, s)
        a, logp = sample_action(logits, rng)
        res = uav_env.step(config, state, a)
        s_next = uav_env.observe(config, res.next_state)
        tr = Transition(s, a, res.reward, s_next, logp, value, res.done)
        transitions.append(tr)
        reports.append(res.reports)
        if probe is not None:
            probe.steps += 1
            probe.candidate_paths += per_step_paths
            probe.macs += net.shape.forward_macs()
            probe.transitions += 1
            probe.transition_values += tr.dimensionality()
            probe.peak_buffer_values = max(probe.peak_buffer_values, len(transitions) * tr.dimensionality())
        state = res.next_state
        if res.done:
            return transitions, reports


def train(
    env_config: EnvConfig,
    hyper: PPOHyperparams = PPOHyperparams(),
    shape: MLPShape = MLPShape(),
    probe: ComplexityProbe | None = None,
    on_episode: Callable[[EpisodeMetrics], None] | None = None,
) -> TrainResult:
    """Run ``hyper.episodes`` episodes, one PPO update after each."""
    seeds = np.random.SeedSequence(hyper.seed).spawn(3)
    net = init_network(shape, np.random.Generator(np.random.PCG64(seeds[0])))
    act_rng = np.random.Generator(np.random.PCG64(seeds[1]))
    start_rng = np.random.Generator(np.random.PCG64(seeds[2]))
    optimizer = Adam(net.params, lr=hyper.learning_rate)
    scaler = RewardScaler() if hyper.reward_normalization else None
    result = TrainResult(net)
    n_rx = env_config.scene.n_receivers

    for ep in range(hyper.episodes):
        start = uav_env.reset(env_config, start_rng)
        try:
            if probe is not None:
                with probe.phase("rollout"):
                    transitions, reports = _episode(net, env_config, act_rng, probe, start)
            else:
                transitions, reports = _episode(net, env_config, act_rng, probe, start)
            learn = transitions
            if scaler is not None:
                learn = [replace(t, r=scaler(t.r)) for t in transitions]
            last_value = 0.0
            if hyper.bootstrap_time_limit:
                # The episode ends on a step budget, not a terminal state.
                learn = learn[:-1] + [replace(learn[-1], done=False)]
                last_value = forward(net, learn[-1].s_next)[1]
            adv, ret = compute_gae(learn, hyper.gamma, hyper.gae_lambda, last_value)
            if probe is not None:
                with probe.phase("update"):
                    stats = ppo_update(net, optimizer, transitions, adv, ret, hyper, act_rng, probe)
                probe.episodes += 1
            else:
                stats = ppo_update(net, optimizer, transitions, adv, ret, hyper, act_rng)
        except (PPOError, uav_env.EnvError) as exc:
            raise PPOError(f"episode {ep}: {exc}") from exc

        steps = len(reports)
        sinr = tuple(math.fsum(r[i].sinr_db for r in reports) / steps for i in range(n_rx))
        cap = tuple(math.fsum(r[i].capacity for r in reports) / steps for i in range(n_rx))
        m = EpisodeMetrics(
            ep,
            sinr,
            cap,
            math.fsum(cap),
            math.fsum(t.r for t in transitions),
            stats.policy,
            stats.value,
            stats.entropy,
        )
        result.metrics.append(m)
        if on_episode is not None:
            on_episode(m)
    return result


@dataclass
class Rollout:
    positions: list[Vec3]
    rewards: list[float]
    actions: list[int]
    best_position: Vec3
    best_reward: float
    best_reports: tuple


def greedy_rollout(net: PolicyNetwork, env_config: EnvConfig) -> Rollout:
    """Argmax-action episode from reset. The start position counts as visited;
    the best position is the earliest one attaining the maximum reward."""
    state = uav_env.reset(env_config)
    reward, reports = uav_env.evaluate_position(env_config, state.uav_pos)
    positions, rewards, actions = [state.uav_pos], [reward], []
    best = (reward, state.uav_pos, reports)
    while state.step_index < env_config.episode_length:
        logits, _ = forward(net, uav_env.observe(env_config, state))
        a = int(np.argmax(logits))
        res = uav_env.step(env_config, state, a)
        state = res.next_state
        positions.append(state.uav_pos)
        rewards.append(res.reward)
        actions.append(a)
        if res.reward > best[0]:
            best = (res.reward, state.uav_pos, res.reports)
    return Rollout(positions, rewards, actions, best[1], best[0], best[2])
