"""Joint state-action chains, their divergences, and the dynamic discount.

A joint state is a ``(cell, action)`` pair flattened as ``cell * 4 + action``.
The chain built from a transition tensor ``T`` and a policy ``pi`` moves as

    P[(s, a), (s', a')] = T(s' | s, a) * pi(a' | s')
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linprog

from .gridworld import N_ACTIONS, GridSpec

KLR_EPS = 1e-6
STOCHASTIC_TOL = 1e-9

WD_KINDS = ("wd", "targetwd", "defaultwd")
KLR_KINDS = ("klr", "targetklr", "defaultklr")
DIVERGENCE_KINDS = WD_KINDS + KLR_KINDS
VARIANTS = ("wd", "klr", "targetwd", "targetklr", "fixed")
_LP_OPTIONS = {"presolve": False, "primal_feasibility_tolerance": 1e-10,
               "dual_feasibility_tolerance": 1e-10}


@dataclass(frozen=True)
class JointChain:
    P: np.ndarray
    q0_joint: np.ndarray

    @property
    def n_states(self) -> int:
        return self.P.shape[0]


def _check_rows(name: str, arr: np.ndarray):
    if np.any(arr < -STOCHASTIC_TOL) or np.any(np.abs(arr.sum(axis=-1) - 1.0) > STOCHASTIC_TOL):
        raise ValueError(f"{name} rows must be probability distributions")


def build_joint_chain(T, pi, q0) -> JointChain:
    T = np.asarray(T, dtype=np.float64)
    pi = np.asarray(pi, dtype=np.float64)
    q0 = np.asarray(q0, dtype=np.float64)
    m, n_act, m2 = T.shape
    if m != m2 or pi.shape != (m, n_act) or q0.shape != (m,):
        raise ValueError("shape mismatch between T, pi and q0")
    _check_rows("T", T)
    _check_rows("pi", pi)
    _check_rows("q0", q0)
    P = (T.reshape(m * n_act, m)[:, :, None] * pi[None, :, :]).reshape(m * n_act, m * n_act)
    return JointChain(P, (q0[:, None] * pi).reshape(-1))


def kstep_distribution(chain: JointChain, k: int) -> np.ndarray:
    if k < 0:
        raise ValueError("k must be non-negative")
    p = chain.q0_joint.copy()
    for _ in range(k):
        p = p @ chain.P
    return p


def ground_metric(spec: GridSpec, x: int, y: int, n_actions: int = N_ACTIONS) -> float:
    """Manhattan cell distance over the grid diameter, plus 1 if actions differ."""
    sx, ax = divmod(int(x), n_actions)
    sy, ay = divmod(int(y), n_actions)
    return spec.manhattan(sx, sy) / spec.diameter + float(ax != ay)


def ground_matrix(spec: GridSpec, n_actions: int = N_ACTIONS) -> np.ndarray:
    cells = np.arange(spec.n_cells)
    rows, cols = np.divmod(cells, spec.width)
    manh = np.abs(rows[:, None] - rows[None, :]) + np.abs(cols[:, None] - cols[None, :])
    cell_d = np.repeat(np.repeat(manh / spec.diameter, n_actions, 0), n_actions, 1)
    acts = np.tile(np.arange(n_actions), spec.n_cells)
    return cell_d + (acts[:, None] != acts[None, :])


def wasserstein1(p, q, cost, metric: bool = True) -> float:
    """Exact W1 between ``p`` and ``q`` under the cost matrix ``cost``.

    Solved as the transport LP over the supports of ``p`` and ``q``. With
    ``metric=True`` the cost is assumed to be a metric, so mass shared by both
    distributions stays put at zero cost and is removed before solving.
    """
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    cost = np.asarray(cost, dtype=np.float64)
    if p.shape != q.shape or p.ndim != 1 or cost.shape != (len(p), len(p)):
        raise ValueError("p, q and cost must share one support set")
    for name, v in (("p", p), ("q", q)):
        if np.any(v < 0) or abs(v.sum() - 1.0) > STOCHASTIC_TOL:
            raise ValueError(f"{name} is not a normalized distribution")
    if metric:
        shared = np.minimum(p, q)
        p, q = p - shared, q - shared
    mass = p.sum()
    if mass <= 1e-15 or q.sum() <= 1e-15:
        return 0.0
    # solve on unit mass so solver tolerances do not swamp small residuals
    p, q = p / mass, q / q.sum()
    src = np.flatnonzero(p > 0)
    dst = np.flatnonzero(q > 0)
    if len(src) == 1 or len(dst) == 1:
        # a single source or sink leaves exactly one feasible plan
        return mass * float(np.sum(np.outer(p[src], q[dst]) * cost[np.ix_(src, dst)]))
    ns, nd = len(src), len(dst)
    c = cost[np.ix_(src, dst)].ravel()
    a_eq = np.zeros((ns + nd, ns * nd))
    for i in range(ns):
        a_eq[i, i * nd:(i + 1) * nd] = 1.0
    for j in range(nd):
        a_eq[ns + j, j::nd] = 1.0
    b_eq = np.concatenate([p[src], q[dst]])
    # presolve misjudges feasibility when masses sit near its default tolerance
    res = linprog(c, A_eq=a_eq, b_eq=b_eq, bounds=(0, None), method="highs-ds",
                  options=_LP_OPTIONS)
    if res.status != 0:
        raise RuntimeError(f"transport LP failed: {res.message}")
    return mass * max(float(res.fun), 0.0)


def stationary_distribution(P, tol: float = 1e-10, max_iter: int = 10_000) -> np.ndarray:
    """Power iteration with repeated squaring on the lazy chain ``(I + P) / 2``.

    The lazy chain has the same stationary distribution and is aperiodic.
    Squaring the iteration matrix each round means round ``n`` applies
    ``2**n`` steps, which matters for nearly reducible chains (steep
    altitude walls leave escape probabilities near 1e-6).
    """
    P = np.asarray(P, dtype=np.float64)
    n = P.shape[0]
    step = 0.5 * (np.eye(n) + P)
    mu = np.full(n, 1.0 / n)
    for _ in range(max_iter):
        mu = mu @ step
        mu /= mu.sum()
        if np.abs(mu @ P - mu).sum() < tol:
            return mu
        step = step @ step
        step /= step.sum(axis=1, keepdims=True)
    raise RuntimeError("power iteration did not converge")


def klr(chain1: JointChain, chain2: JointChain, eps: float = KLR_EPS) -> float:
    """KL divergence rate of ``chain1`` from ``chain2``.

    Rows are weighted by the stationary distribution of the eps-smoothed
    first chain; eps also guards the log ratio against zero entries.
    """
    P1, P2 = chain1.P, chain2.P
    if P1.shape != P2.shape:
        raise ValueError("chains have different joint state sets")
    smooth = P1 + eps
    smooth /= smooth.sum(axis=1, keepdims=True)
    mu = stationary_distribution(smooth)
    rows = np.sum(P1 * np.log((P1 + eps) / (P2 + eps)), axis=1)
    return float(mu @ rows)


@dataclass(frozen=True)
class DiscountConfig:
    variant: str = "wd"
    k: int = 5
    gamma_min: float = 0.80
    gamma_max: float = 0.99
    c_d: float = 1.0
    fixed_gamma: float | None = None

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown discount variant {self.variant!r}")
        if self.variant == "fixed":
            if self.fixed_gamma is None or not 0.0 < self.fixed_gamma < 1.0:
                raise ValueError("fixed discount needs gamma in (0, 1)")
        elif not 0.5 < self.gamma_min < self.gamma_max < 1.0:
            raise ValueError("need 0.5 < gamma_min < gamma_max < 1")
        if self.c_d <= 0 or self.k < 0:
            raise ValueError("c_d must be positive and k non-negative")

    @classmethod
    def for_variant(cls, name: str, **overrides) -> "DiscountConfig":
        """Parse ``wd``, ``klr``, ``targetwd``, ``targetklr`` or ``fixed:<gamma>``."""
        name = name.strip().lower()
        if name.startswith("fixed"):
            _, _, value = name.partition(":")
            return cls(variant="fixed", fixed_gamma=float(value), **overrides)
        lo = 0.90 if name in KLR_KINDS else 0.80
        kw = {"gamma_min": lo, "gamma_max": 0.99}
        kw.update(overrides)
        return cls(variant=name, **kw)

    @property
    def bounds(self) -> tuple[float, float]:
        if self.variant == "fixed":
            return (self.fixed_gamma, self.fixed_gamma)
        return (self.gamma_min, self.gamma_max)

    def label(self) -> str:
        return f"fixed:{self.fixed_gamma}" if self.variant == "fixed" else self.variant


def squash(D: float, cfg: DiscountConfig) -> float:
    if cfg.variant == "fixed":
        return cfg.fixed_gamma
    D = max(float(D), 0.0)
    if np.isinf(D):
        return cfg.gamma_max
    g = cfg.gamma_min + (cfg.gamma_max - cfg.gamma_min) * D / (D + cfg.c_d)
    return min(max(g, cfg.gamma_min), cfg.gamma_max)


class DivergenceContext:
    """Shared inputs for the divergences of one attack step.

    ``T_default``, ``pi_star`` and ``q0`` are fixed over an attack episode,
    so the perfect chain and its k-step distribution are built once.
    """

    def __init__(self, spec: GridSpec, T_default, pi_star, q0, k: int = 5):
        self.spec = spec
        self.k = k
        self.cost = ground_matrix(spec)
        self.T_default = np.asarray(T_default)
        self.pi_star = np.asarray(pi_star)
        self.q0 = np.asarray(q0, dtype=np.float64)
        self.perfect = build_joint_chain(self.T_default, self.pi_star, self.q0)
        self.perfect_k = kstep_distribution(self.perfect, k)

    def _chain(self, kind: str, T_cur, pi):
        if kind in ("wd", "klr"):
            return build_joint_chain(T_cur, pi, self.q0)
        if kind in ("targetwd", "targetklr"):
            return build_joint_chain(T_cur, self.pi_star, self.q0)
        if kind in ("defaultwd", "defaultklr"):
            return build_joint_chain(self.T_default, pi, self.q0)
        raise ValueError(f"unknown divergence kind {kind!r}")

    def raw(self, kind: str, T_cur, pi) -> float:
        chain = self._chain(kind, T_cur, pi)
        if kind in WD_KINDS:
            return wasserstein1(kstep_distribution(chain, self.k), self.perfect_k, self.cost)
        return klr(chain, self.perfect)

    def all_raw(self, T_cur, pi) -> dict[str, float]:
        return {kind: self.raw(kind, T_cur, pi) for kind in DIVERGENCE_KINDS}


def dynamic_discount(cfg: DiscountConfig, T_cur, T_default, pi, pi_star, q0,
                     spec: GridSpec, ctx: DivergenceContext | None = None):
    """Return ``(gamma, raw_divergence)``; fixed configs report a nan divergence."""
    if cfg.variant == "fixed":
        return cfg.fixed_gamma, float("nan")
    ctx = ctx or DivergenceContext(spec, T_default, pi_star, q0, cfg.k)
    D = ctx.raw(cfg.variant, T_cur, pi)
    return squash(D, cfg), D


def debug_record(cfg: DiscountConfig, raw_divergence: float, gamma: float) -> str:
    return json.dumps({"variant": cfg.label(), "raw_divergence": raw_divergence, "gamma": gamma})
