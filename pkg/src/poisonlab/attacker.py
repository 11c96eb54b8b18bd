"""DDPG attacker whose replay buffer keeps a discount per transition."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .nn import Adam, Mlp, soft_update


@dataclass(frozen=True)
class AttackerParams:
    batch_size: int = 64
    rho: float = 0.005
    noise_theta: float = 0.15
    noise_sigma: float = 0.2
    warmup_episodes: int = 30
    buffer_capacity: int = 50_000
    actor_lr: float = 3e-6
    critic_lr: float = 1e-3
    actor_hidden: tuple = (400, 300)
    critic_hidden: tuple = (400, 300)
    reward: str = "acc"  # or "soft_acc"
    final_layer_init: float = 3e-3  # output layers start in [-v, v]; 0 keeps fan-in init

    def __post_init__(self):
        if self.batch_size < 1 or self.buffer_capacity < 1:
            raise ValueError("batch size and buffer capacity must be positive")
        if not 0.0 <= self.rho <= 1.0:
            raise ValueError("rho must lie in [0, 1]")
        if self.warmup_episodes < 0:
            raise ValueError("warmup must be non-negative")
        if self.final_layer_init < 0:
            raise ValueError("final_layer_init must be non-negative")
        if self.reward not in ("acc", "soft_acc"):
            raise ValueError("reward must be 'acc' or 'soft_acc'")


@dataclass(frozen=True, eq=False)
class TransitionRecord:
    x: np.ndarray
    u: np.ndarray
    r: float
    x_next: np.ndarray
    gamma: float
    done: bool


class OUNoise:
    """Mean-reverting Gaussian noise, one independent process per component."""

    def __init__(self, dim: int, theta: float, sigma: float, rng: np.random.Generator):
        self.dim, self.theta, self.sigma, self.rng = dim, theta, sigma, rng
        self.state = np.zeros(dim)

    def reset(self):
        self.state = np.zeros(self.dim)

    def sample(self) -> np.ndarray:
        self.state = self.state - self.theta * self.state + self.sigma * self.rng.standard_normal(self.dim)
        return self.state.copy()


class ReplayBuffer:
    def __init__(self, capacity: int):
        self.capacity = capacity
        self._items: deque = deque(maxlen=capacity)

    def __len__(self):
        return len(self._items)

    def store(self, rec: TransitionRecord) -> None:
        self._items.append(rec)

    def sample(self, n: int, rng: np.random.Generator) -> list[TransitionRecord]:
        if n > len(self._items):
            raise ValueError(f"cannot sample {n} records from a buffer of {len(self._items)}")
        idx = rng.choice(len(self._items), size=n, replace=False)
        return [self._items[i] for i in idx]


def select_action(actor: Mlp, x, noise: OUNoise | None = None, explore: bool = False) -> np.ndarray:
    u = actor.forward(x)
    if explore:
        if noise is None:
            raise ValueError("exploration needs a noise process")
        u = u + noise.sample()
    return np.clip(u, -1.0, 1.0)


def _stack(batch, attr):
    return np.stack([getattr(r, attr) for r in batch])


def bellman_targets(batch, critic_target: Mlp, actor_target: Mlp) -> np.ndarray:
    """``y = r + gamma * Q'(x', actor'(x'))``, using each record's own gamma."""
    r = np.array([rec.r for rec in batch], dtype=np.float64)
    gamma = np.array([rec.gamma for rec in batch], dtype=np.float64)
    done = np.array([rec.done for rec in batch], dtype=bool)
    x_next = _stack(batch, "x_next")
    q_next = critic_target.forward(np.hstack([x_next, actor_target.forward(x_next)]))[:, 0]
    return np.where(done, r, r + gamma * q_next)


class DdpgAgent:
    def __init__(self, state_dim: int, action_dim: int, params: AttackerParams,
                 rng: np.random.Generator):
        self.params = params
        self.state_dim, self.action_dim = state_dim, action_dim
        self.actor = Mlp([state_dim, *params.actor_hidden, action_dim],
                         ["relu"] * len(params.actor_hidden) + ["tanh"], rng)
        self.critic = Mlp([state_dim + action_dim, *params.critic_hidden, 1],
                          ["relu"] * len(params.critic_hidden) + ["identity"], rng)
        if params.final_layer_init > 0:
            # small output layers keep the Tanh unsaturated and early Q estimates near zero
            v = params.final_layer_init
            for net in (self.actor, self.critic):
                net.weights[-1][...] = rng.uniform(-v, v, net.weights[-1].shape)
                net.biases[-1][...] = rng.uniform(-v, v, net.biases[-1].shape)
        self.actor_target = self.actor.copy()
        self.critic_target = self.critic.copy()
        self.actor_opt = Adam(lr=params.actor_lr)
        self.critic_opt = Adam(lr=params.critic_lr)
        self.buffer = ReplayBuffer(params.buffer_capacity)
        self.noise = OUNoise(action_dim, params.noise_theta, params.noise_sigma, rng)

    def act(self, x, explore: bool) -> np.ndarray:
        return select_action(self.actor, x, self.noise, explore)

    def update(self, rng: np.random.Generator):
        """One critic step, one actor step, then soft target updates.

        Returns ``(critic_loss, mean_q)``, or None while the buffer is too small.
        """
        n = self.params.batch_size
        if len(self.buffer) < n:
            return None
        batch = self.buffer.sample(n, rng)
        y = bellman_targets(batch, self.critic_target, self.actor_target)
        x, u = _stack(batch, "x"), _stack(batch, "u")

        q, cache = self.critic.forward_cache(np.hstack([x, u]))
        err = q[:, 0] - y
        critic_loss = float(np.mean(err**2))
        grads, _ = self.critic.backward(cache, (2.0 / n) * err[:, None])
        self.critic_opt.step(self.critic, grads)

        mu, actor_cache = self.actor.forward_cache(x)
        q_pi, cache = self.critic.forward_cache(np.hstack([x, mu]))
        _, in_grad = self.critic.backward(cache, np.full((n, 1), 1.0 / n))
        # ascend mean Q by descending its negative
        actor_grads, _ = self.actor.backward(actor_cache, -in_grad[:, self.state_dim:])
        self.actor_opt.step(self.actor, actor_grads)

        soft_update(self.critic_target, self.critic, self.params.rho)
        soft_update(self.actor_target, self.actor, self.params.rho)
        return critic_loss, float(q_pi.mean())

    def save(self, directory, tag: str) -> None:
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        self.actor.save(d / f"actor_{tag}.w")
        self.critic.save(d / f"critic_{tag}.w")
