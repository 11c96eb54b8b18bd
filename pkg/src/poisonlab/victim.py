"""Tabular Q-learning victim with softmax exploration.

The attacker only ever sees what this module exports to it: the behaviour
trace (last action per state) and the empirical policy built from the last
``history`` actions per state. The Q table stays private to the victim.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit

from .gridworld import ACTIONS, N_ACTIONS, GridSpec, GridWorld, transition_tensor

NO_ACTION = -1
SYMBOLS = ACTIONS + ("-",)


@dataclass(frozen=True)
class VictimParams:
    gamma: float = 0.90
    alpha: float = 0.100
    temperature: float = 0.2
    episodes_per_step: int = 80
    history: int = 8

    def __post_init__(self):
        if not 0.0 < self.gamma < 1.0:
            raise ValueError("victim gamma must lie in (0, 1)")
        if self.temperature <= 0:
            raise ValueError("temperature must be positive")
        if self.episodes_per_step < 0 or self.history < 1:
            raise ValueError("episodes_per_step >= 0 and history >= 1 required")


@dataclass(frozen=True)
class BehaviorTrace:
    """Last observed action per state; ``NO_ACTION`` marks unvisited states."""

    symbols: np.ndarray

    def __post_init__(self):
        s = np.asarray(self.symbols, dtype=np.int64)
        if s.ndim != 1 or np.any((s < NO_ACTION) | (s >= N_ACTIONS)):
            raise ValueError("trace symbols must be in {-1, 0, 1, 2, 3}")
        object.__setattr__(self, "symbols", s)

    def __len__(self):
        return len(self.symbols)

    def __str__(self):
        return "".join(SYMBOLS[a] for a in self.symbols)

    @classmethod
    def parse(cls, text: str) -> "BehaviorTrace":
        return cls(np.array([SYMBOLS.index(ch) if ch != "-" else NO_ACTION for ch in text]))

    @classmethod
    def empty(cls, n_cells: int) -> "BehaviorTrace":
        return cls(np.full(n_cells, NO_ACTION))

    @property
    def visited(self) -> np.ndarray:
        return self.symbols != NO_ACTION


@dataclass(frozen=True)
class PolicyEstimate:
    """Empirical per-state action distribution (``M x 4``)."""

    probs: np.ndarray

    def to_csv(self) -> str:
        return "\n".join(",".join(repr(float(v)) for v in row) for row in self.probs) + "\n"

    @classmethod
    def from_csv(cls, text: str) -> "PolicyEstimate":
        rows = [line for line in text.splitlines() if line.strip()]
        return cls(np.array([[float(v) for v in line.split(",")] for line in rows]))

    @classmethod
    def from_history(cls, history: np.ndarray, counts: np.ndarray) -> "PolicyEstimate":
        """Build from a ring buffer of recent actions (``M x h``) and fill counts."""
        n_cells, h = history.shape
        probs = np.full((n_cells, N_ACTIONS), 1.0 / N_ACTIONS)
        for s in range(n_cells):
            n = min(int(counts[s]), h)
            if n:
                probs[s] = np.bincount(history[s, :n], minlength=N_ACTIONS) / n
        return cls(probs)


@dataclass(frozen=True)
class TargetSpec:
    """Attacker-desired path: ``states[i]`` should take ``actions[i]``."""

    states: tuple
    actions: tuple

    def __post_init__(self):
        if len(self.states) != len(self.actions):
            raise ValueError("one target action per target state")

    @property
    def n_states(self) -> int:
        return len(self.states)


def softmax_probs(q_row: np.ndarray, temperature: float) -> np.ndarray:
    z = np.asarray(q_row, dtype=np.float64) / temperature
    z = np.exp(z - z.max())
    return z / z.sum()


def softmax_action(q: np.ndarray, s: int, temperature: float, rng: np.random.Generator) -> int:
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    return int(rng.choice(N_ACTIONS, p=softmax_probs(q[s], temperature)))


def td_update(q: np.ndarray, s: int, a: int, r: float, s_next: int, terminal: bool,
              params: VictimParams) -> np.ndarray:
    """One Q-learning update, in place. Terminal transitions bootstrap from 0."""
    bootstrap = 0.0 if terminal else q[s_next].max()
    q[s, a] += params.alpha * (r + params.gamma * bootstrap - q[s, a])
    return q


@njit(cache=True)
def _train_kernel(q, cdf, start, goal, max_steps, n_episodes, alpha, gamma, temperature,
                  reward, act_u, env_u, history, counts, trace):
    n_states = q.shape[0]
    n_act = q.shape[1]
    h = history.shape[1]
    k = 0
    probs = np.empty(n_act)
    for _ in range(n_episodes):
        s = start
        for _t in range(max_steps):
            # softmax action
            qmax = q[s, 0]
            for a in range(1, n_act):
                if q[s, a] > qmax:
                    qmax = q[s, a]
            total = 0.0
            for a in range(n_act):
                probs[a] = np.exp((q[s, a] - qmax) / temperature)
                total += probs[a]
            x = act_u[k] * total
            act = n_act - 1
            acc = 0.0
            for a in range(n_act):
                acc += probs[a]
                if x < acc:
                    act = a
                    break
            # environment transition
            y = env_u[k]
            k += 1
            nxt = n_states - 1
            for c in range(n_states):
                if y < cdf[s, act, c]:
                    nxt = c
                    break
            trace[s] = act
            history[s, counts[s] % h] = act
            counts[s] += 1
            terminal = nxt == goal
            if terminal:
                target = reward
            else:
                best = q[nxt, 0]
                for a in range(1, n_act):
                    if q[nxt, a] > best:
                        best = q[nxt, a]
                target = reward + gamma * best
            q[s, act] += alpha * (target - q[s, act])
            s = nxt
            if terminal:
                break
    return k


def _recent_first(history: np.ndarray, counts: np.ndarray) -> np.ndarray:
    """Reorder each ring buffer so the filled slots come first."""
    out = history.copy()
    h = history.shape[1]
    for s in range(history.shape[0]):
        if counts[s] > h:
            start = counts[s] % h
            out[s] = np.roll(history[s], -start)
    return out


def train_and_trace(world: GridWorld, q: np.ndarray, params: VictimParams,
                    rng: np.random.Generator, n_episodes: int | None = None,
                    use_jit: bool = True, env_rng: np.random.Generator | None = None):
    """Run ``params.episodes_per_step`` victim episodes in ``world``.

    Updates ``q`` in place and returns ``(q, trace, policy)``. Trace and
    policy reflect only this observation period. Action choices draw from
    ``rng`` and move outcomes from ``env_rng`` (``rng`` when omitted).
    """
    spec = world.spec
    n_episodes = params.episodes_per_step if n_episodes is None else n_episodes
    tensor = transition_tensor(world)
    cdf = np.cumsum(tensor, axis=2)
    cdf[:, :, -1] = 1.0
    n_draws = n_episodes * spec.max_episode_steps
    act_u = rng.random(n_draws)
    env_u = (env_rng if env_rng is not None else rng).random(n_draws)
    history = np.zeros((spec.n_cells, params.history), dtype=np.int64)
    counts = np.zeros(spec.n_cells, dtype=np.int64)
    trace = np.full(spec.n_cells, NO_ACTION, dtype=np.int64)
    kernel = _train_kernel if use_jit else _train_kernel.py_func
    kernel(q, cdf, spec.start, spec.goal, spec.max_episode_steps, n_episodes,
           params.alpha, params.gamma, params.temperature, spec.victim_reward,
           act_u, env_u, history, counts, trace)
    policy = PolicyEstimate.from_history(_recent_first(history, counts), counts)
    return q, BehaviorTrace(trace), policy


class Victim:
    """Victim state carried across the attack steps of one attack episode."""

    def __init__(self, spec: GridSpec, params: VictimParams, seed, env_seed=None):
        self.spec = spec
        self.params = params
        self.rng = np.random.default_rng(seed)
        # one shared stream unless the environment gets its own seed
        self.env_rng = self.rng if env_seed is None else np.random.default_rng(env_seed)
        self.q = np.zeros((spec.n_cells, N_ACTIONS))

    def observe(self, world: GridWorld):
        _, trace, policy = train_and_trace(world, self.q, self.params, self.rng,
                                           env_rng=self.env_rng)
        return trace, policy

    def greedy_path(self, world: GridWorld, max_len: int | None = None) -> list[int]:
        """Follow argmax-Q with the most likely transition; used for sanity checks."""
        tensor = transition_tensor(world)
        s, path = self.spec.start, [self.spec.start]
        for _ in range(max_len or self.spec.n_cells * 2):
            if s == self.spec.goal:
                break
            s = int(np.argmax(tensor[s, int(np.argmax(self.q[s]))]))
            path.append(s)
        return path


def make_target_policy(policy: PolicyEstimate, trace: BehaviorTrace, target: TargetSpec):
    """Overwrite target states with one-hot target actions in both pi and tau."""
    probs = policy.probs.copy()
    symbols = trace.symbols.copy()
    for s, a in zip(target.states, target.actions):
        probs[s] = 0.0
        probs[s, a] = 1.0
        symbols[s] = a
    return PolicyEstimate(probs), BehaviorTrace(symbols)


def _simple_paths(spec: GridSpec, length: int):
    """All simple start->goal paths with exactly ``length`` moves (DFS order)."""
    goal = spec.goal
    path = [spec.start]
    on_path = {spec.start}

    def dfs():
        cur = path[-1]
        moves_left = length - (len(path) - 1)
        if moves_left == 0:
            if cur == goal:
                yield list(path)
            return
        if cur == goal or spec.manhattan(cur, goal) > moves_left:
            return
        for a in range(N_ACTIONS):
            nxt = spec.neighbour(cur, a)
            if nxt is None or nxt in on_path:
                continue
            path.append(nxt)
            on_path.add(nxt)
            yield from dfs()
            path.pop()
            on_path.discard(nxt)

    yield from dfs()


def _is_chordless(spec: GridSpec, path: list[int]) -> bool:
    pos = {c: i for i, c in enumerate(path)}
    for i, c in enumerate(path):
        for a in range(N_ACTIONS):
            n = spec.neighbour(c, a)
            if n is not None and n in pos and abs(pos[n] - i) > 1:
                return False
    return True


def _shortcut_score(spec: GridSpec, path: list[int]) -> float:
    """Expected agreement of the path with a flat-world shortest-path policy.

    A target move that shortens the distance to the goal matches a flat-world
    optimal move; ties among several optimal moves are split evenly.
    """
    score = 0.0
    for s, nxt in zip(path[:-1], path[1:]):
        d = spec.manhattan(s, spec.goal)
        n_opt = sum(
            1 for a in range(N_ACTIONS)
            if (n := spec.neighbour(s, a)) is not None and spec.manhattan(n, spec.goal) < d
        )
        if spec.manhattan(nxt, spec.goal) < d:
            score += 1.0 / n_opt
    return score


def default_target(spec: GridSpec) -> TargetSpec:
    """A start->goal path three times as long as the shortest one.

    Paths with no shortcuts between non-consecutive cells are preferred, then
    the one agreeing least with the flat-world shortest-path policy; ties go
    to the first path in N/S/E/W depth-first order.
    """
    length = 3 * spec.manhattan(spec.start, spec.goal)
    candidates = list(_simple_paths(spec, length))
    if not candidates:
        raise ValueError(f"no simple path of {length} moves from {spec.start} to {spec.goal}")
    chordless = [p for p in candidates if _is_chordless(spec, p)]
    pool = chordless or candidates
    best = min(pool, key=lambda p: _shortcut_score(spec, p))
    actions = []
    for s, nxt in zip(best[:-1], best[1:]):
        actions.append(next(a for a in range(N_ACTIONS) if spec.neighbour(s, a) == nxt))
    return TargetSpec(tuple(best[:-1]), tuple(actions))


def target_path(spec: GridSpec, target: TargetSpec) -> list[int]:
    """Cells visited by the target path, goal included."""
    return list(target.states) + [spec.goal]
