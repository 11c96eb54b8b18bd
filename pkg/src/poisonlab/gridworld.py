"""Elevation grid world: the victim's environment.

Cells are indexed row-major (``cell = row * width + col``). Actions are the
four cardinal moves N, S, E, W (indices 0..3). The outcome of a move is a
softmax over the four directions whose logits reward the intended direction
and penalise climbing::

    logit(m) = kappa * [m == intended] - beta * (h_dest(m) - h_cell)

A direction leading off the grid keeps the agent in place with zero slope.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

ACTIONS = ("N", "S", "E", "W")
N_ACTIONS = 4
# (d_row, d_col) per action index
MOVES = ((-1, 0), (1, 0), (0, 1), (0, -1))


@dataclass(frozen=True)
class GridSpec:
    width: int = 4
    height: int = 4
    start: int = 4
    goal: int = 2
    beta: float = 1.5
    kappa: float = 3.0
    h_lo: float = 0.0
    h_hi: float = 5.0
    max_episode_steps: int = 100
    victim_reward: float = -1.0

    def __post_init__(self):
        m = self.width * self.height
        if self.width < 1 or self.height < 1:
            raise ValueError("grid dimensions must be positive")
        if not (0 <= self.start < m and 0 <= self.goal < m):
            raise ValueError("start and goal must be cells of the grid")
        if self.start == self.goal:
            raise ValueError("start and goal must differ")
        if not self.h_lo < self.h_hi:
            raise ValueError("altitude bounds must satisfy h_lo < h_hi")
        if self.beta < 0 or self.kappa < 0:
            raise ValueError("beta and kappa must be non-negative")
        if self.max_episode_steps < 1:
            raise ValueError("max_episode_steps must be positive")

    @property
    def n_cells(self) -> int:
        return self.width * self.height

    @property
    def diameter(self) -> int:
        return (self.width - 1) + (self.height - 1)

    def coords(self, cell: int) -> tuple[int, int]:
        return divmod(int(cell), self.width)

    def neighbour(self, cell: int, action: int) -> int | None:
        """Cell reached by a successful move, or None when it leaves the grid."""
        r, c = self.coords(cell)
        dr, dc = MOVES[action]
        rr, cc = r + dr, c + dc
        if 0 <= rr < self.height and 0 <= cc < self.width:
            return rr * self.width + cc
        return None

    def manhattan(self, a: int, b: int) -> int:
        ra, ca = self.coords(a)
        rb, cb = self.coords(b)
        return abs(ra - rb) + abs(ca - cb)


@dataclass(frozen=True, eq=False)
class GridWorld:
    """A grid spec plus the current altitude field.

    Instances are treated as values: :func:`apply_attack` returns a new world
    and the transition tensor is computed lazily once per instance.
    """

    spec: GridSpec
    altitudes: np.ndarray
    _tensor: list = field(default_factory=list, repr=False, compare=False)

    def __post_init__(self):
        h = np.array(self.altitudes, dtype=np.float64)
        if h.shape != (self.spec.n_cells,):
            raise ValueError(f"expected {self.spec.n_cells} altitudes, got {h.shape}")
        if np.any(h < self.spec.h_lo) or np.any(h > self.spec.h_hi):
            raise ValueError("altitude outside bounds")
        h.setflags(write=False)
        object.__setattr__(self, "altitudes", h)

    @property
    def n_cells(self) -> int:
        return self.spec.n_cells

    def to_json(self) -> str:
        s = self.spec
        return json.dumps(
            {
                "width": s.width,
                "height": s.height,
                "start": s.start,
                "goal": s.goal,
                "altitudes": [float(v) for v in self.altitudes],
                "kappa": s.kappa,
                "beta": s.beta,
                "bounds": [s.h_lo, s.h_hi],
            }
        )

    @classmethod
    def from_json(cls, text: str, **spec_overrides) -> "GridWorld":
        d = json.loads(text)
        spec = GridSpec(
            width=d["width"],
            height=d["height"],
            start=d["start"],
            goal=d["goal"],
            kappa=d["kappa"],
            beta=d["beta"],
            h_lo=d["bounds"][0],
            h_hi=d["bounds"][1],
            **spec_overrides,
        )
        return cls(spec, np.asarray(d["altitudes"], dtype=np.float64))


def flat_world(spec: GridSpec) -> GridWorld:
    mid = 0.5 * (spec.h_lo + spec.h_hi)
    return GridWorld(spec, np.full(spec.n_cells, mid))


def default_env() -> GridWorld:
    """The canonical flat 4x4 world used by every experiment."""
    return flat_world(GridSpec())


def _direction_logits(world: GridWorld, cell: int, intended: int) -> tuple[np.ndarray, list]:
    spec = world.spec
    h = world.altitudes
    logits = np.empty(N_ACTIONS)
    dests = []
    for m in range(N_ACTIONS):
        dest = spec.neighbour(cell, m)
        if dest is None:
            dest, dh = cell, 0.0
        else:
            dh = h[dest] - h[cell]
        logits[m] = spec.kappa * (m == intended) - spec.beta * dh
        dests.append(dest)
    return logits, dests


def transition_probs(world: GridWorld, cell: int, intended: int) -> np.ndarray:
    """Distribution over destination cells for one (cell, intended action)."""
    if not 0 <= cell < world.n_cells:
        raise ValueError(f"cell {cell} out of range")
    if not 0 <= intended < N_ACTIONS:
        raise ValueError(f"action {intended} out of range")
    logits, dests = _direction_logits(world, cell, intended)
    w = np.exp(logits - logits.max())
    w /= w.sum()
    out = np.zeros(world.n_cells)
    for m, dest in enumerate(dests):
        out[dest] += w[m]
    return out


def transition_tensor(world: GridWorld) -> np.ndarray:
    """Full ``M x 4 x M`` transition tensor, cached on the world."""
    if world._tensor:
        return world._tensor[0]
    spec = world.spec
    m_cells = spec.n_cells
    h = world.altitudes
    # dest[s, m] and slope[s, m] for every cell and direction
    dest = np.empty((m_cells, N_ACTIONS), dtype=np.intp)
    slope = np.zeros((m_cells, N_ACTIONS))
    for s in range(m_cells):
        for m in range(N_ACTIONS):
            d = spec.neighbour(s, m)
            if d is None:
                dest[s, m] = s
            else:
                dest[s, m] = d
                slope[s, m] = h[d] - h[s]
    logits = -spec.beta * slope[:, None, :] + spec.kappa * np.eye(N_ACTIONS)[None, :, :]
    logits -= logits.max(axis=2, keepdims=True)
    w = np.exp(logits)
    w /= w.sum(axis=2, keepdims=True)
    tensor = np.zeros((m_cells, N_ACTIONS, m_cells))
    rows = np.arange(m_cells)
    for a in range(N_ACTIONS):
        for m in range(N_ACTIONS):
            np.add.at(tensor[:, a, :], (rows, dest[:, m]), w[:, a, m])
    tensor.setflags(write=False)
    world._tensor.append(tensor)
    return tensor


def step(world: GridWorld, state: int, action: int, rng: np.random.Generator):
    """Sample one victim move. The episode step budget is tracked by the caller."""
    p = transition_tensor(world)[state, action]
    nxt = int(rng.choice(world.n_cells, p=p))
    done = nxt == world.spec.goal
    return nxt, world.spec.victim_reward, done


def apply_attack(world: GridWorld, u) -> GridWorld:
    """Add an attack vector to the altitudes, clamped to the altitude bounds."""
    u = np.asarray(u, dtype=np.float64)
    if u.shape != (world.n_cells,):
        raise ValueError(f"attack must have {world.n_cells} components")
    if not np.all(np.isfinite(u)) or np.any(np.abs(u) > 1.0):
        raise ValueError("attack components must lie in [-1, 1]")
    spec = world.spec
    h = np.clip(world.altitudes + u, spec.h_lo, spec.h_hi)
    return GridWorld(spec, h)
