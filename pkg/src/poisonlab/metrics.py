"""Attack quality metrics: @Acc, @SoftAcc, partial soft accuracy and @Effort."""

from __future__ import annotations

import math
from dataclasses import dataclass, fields

import numpy as np

from .victim import PolicyEstimate, TargetSpec


@dataclass
class MetricRow:
    episode: int
    attack_step: int
    acc: float
    soft_acc: float
    partial_soft_acc: float
    effort: float  # nan at step 0: no attack action yet
    wall_time_s: float
    raw_divergence: float
    gamma: float
    reward: float

    @classmethod
    def columns(cls) -> list[str]:
        return [f.name for f in fields(cls)]


def _check(target: TargetSpec):
    if target.n_states == 0:
        raise ValueError("target has no states")


def adopted(policy: PolicyEstimate, state: int, action: int) -> bool:
    """True when ``action`` is strictly the most probable action in ``state``."""
    row = policy.probs[state]
    others = np.delete(row, action)
    return bool(row[action] > others.max())


def acc(policy: PolicyEstimate, target: TargetSpec) -> float:
    _check(target)
    hits = sum(adopted(policy, s, a) for s, a in zip(target.states, target.actions))
    return hits / target.n_states


def soft_acc(policy: PolicyEstimate, target: TargetSpec) -> float:
    _check(target)
    total = sum(policy.probs[s, a] for s, a in zip(target.states, target.actions))
    return float(total) / target.n_states


def partial_soft_acc(policy: PolicyEstimate, target: TargetSpec) -> float:
    """Like :func:`soft_acc` but only states where the target action already wins count."""
    _check(target)
    total = sum(
        policy.probs[s, a] for s, a in zip(target.states, target.actions) if adopted(policy, s, a)
    )
    return float(total) / target.n_states


def effort(h_prev, h_cur) -> float:
    """Mean absolute per-cell altitude change."""
    h_prev = np.asarray(h_prev, dtype=np.float64)
    h_cur = np.asarray(h_cur, dtype=np.float64)
    if h_prev.shape != h_cur.shape:
        raise ValueError("altitude vectors differ in length")
    return float(np.mean(np.abs(h_cur - h_prev)))


def is_undefined(value: float) -> bool:
    return isinstance(value, float) and math.isnan(value)
