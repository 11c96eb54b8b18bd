"""Attack episodes, the training loop and test-time evaluation."""

from __future__ import annotations

import csv
import json
import logging
import time
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from .. import __version__
from ..attacker import DdpgAgent, TransitionRecord, select_action
from ..codec import LATENT_DIM, Codec, build_corpus, pretrain
from ..divergence import DivergenceContext, debug_record, squash
from ..gridworld import GridWorld, apply_attack, flat_world, transition_tensor
from ..metrics import acc, effort, partial_soft_acc, soft_acc
from ..nn import Mlp
from ..victim import Victim, default_target, make_target_policy
from .archive import StrategyArchive
from .config import ExperimentConfig

log = logging.getLogger("poisonlab")

METRIC_COLUMNS = ["run_id", "seed", "episode", "attack_step", "acc", "soft_acc",
                  "partial_soft_acc", "effort", "raw_divergence", "gamma", "reward"]
TIMING_COLUMNS = ["run_id", "seed", "episode", "attack_step", "wall_time_s"]

# stream tags that keep training and evaluation environment noise apart
_TRAIN_STREAM = 1
_EVAL_STREAM = 2


def attacker_state(world: GridWorld, phi: np.ndarray) -> np.ndarray:
    """Altitudes rescaled to [-1, 1] followed by the latent behaviour."""
    s = world.spec
    mid, half = 0.5 * (s.h_lo + s.h_hi), 0.5 * (s.h_hi - s.h_lo)
    return np.concatenate([(world.altitudes - mid) / half, phi])


def state_dim(cfg: ExperimentConfig) -> int:
    return cfg.grid.n_cells + LATENT_DIM


@dataclass
class EpisodeResult:
    steps: list = field(default_factory=list)
    transitions: list = field(default_factory=list)

    @property
    def final_acc(self) -> float:
        return self.steps[-1]["acc"]


class _Observer:
    """Victim observation plus all per-step measurements."""

    def __init__(self, cfg, codec, victim, compute_all):
        self.cfg = cfg
        self.codec = codec
        self.victim = victim
        self.compute_all = compute_all
        self.default = flat_world(cfg.grid)
        self.T_default = transition_tensor(self.default)
        self.target = default_target(cfg.grid)
        self.q0 = np.zeros(cfg.grid.n_cells)
        self.q0[cfg.grid.start] = 1.0

    def measure(self, world):
        trace, policy = self.victim.observe(world)
        pi_star, _ = make_target_policy(policy, trace, self.target)
        T_cur = transition_tensor(world)
        variant = self.cfg.discount.variant
        divs = {}
        raw = float("nan")
        if self.compute_all or variant != "fixed":
            ctx = DivergenceContext(self.cfg.grid, self.T_default, pi_star.probs, self.q0,
                                    self.cfg.discount.k)
            divs = ctx.all_raw(T_cur, policy.probs) if self.compute_all else {
                variant: ctx.raw(variant, T_cur, policy.probs)}
            raw = divs.get(variant, raw)
        row = {
            "acc": acc(policy, self.target),
            "soft_acc": soft_acc(policy, self.target),
            "partial_soft_acc": partial_soft_acc(policy, self.target),
            "raw_divergence": raw,
            "divergences": divs,
        }
        return attacker_state(world, self.codec.encode(trace)), row


def run_attack_episode(cfg: ExperimentConfig, actor: Mlp, codec: Codec, victim: Victim,
                       agent: DdpgAgent | None = None, explore: bool = False,
                       compute_all: bool = False, on_transition=None) -> EpisodeResult:
    """One attack on a fresh victim in the default world.

    Step 0 observes the victim in the unattacked world; steps 1..horizon
    each apply one attack and observe again. The episode stops early once
    the target behaviour is fully adopted. ``on_transition`` is called after
    every stored transition (training hooks network updates there).
    """
    obs = _Observer(cfg, codec, victim, compute_all)
    world = obs.default
    result = EpisodeResult()

    t0 = time.monotonic()
    x, row = obs.measure(world)
    row.update(attack_step=0, effort=float("nan"), gamma=float("nan"), reward=float("nan"),
               wall_time_s=time.monotonic() - t0)
    result.steps.append(row)

    for t in range(1, cfg.horizon + 1):
        t0 = time.monotonic()
        if explore:
            u = agent.act(x, explore=True)
        else:
            u = select_action(actor, x)
        new_world = apply_attack(world, u)
        x_next, row = obs.measure(new_world)
        reward = row["acc"] if cfg.attacker.reward == "acc" else row["soft_acc"]
        gamma = squash(row["raw_divergence"], cfg.discount)
        done = row["acc"] >= 1.0 or t == cfg.horizon
        row.update(attack_step=t, effort=effort(world.altitudes, new_world.altitudes),
                   gamma=gamma, reward=reward, wall_time_s=time.monotonic() - t0)
        result.steps.append(row)
        rec = TransitionRecord(x, u, reward, x_next, gamma, done)
        result.transitions.append(rec)
        if on_transition is not None:
            on_transition(rec)
        world, x = new_world, x_next
        if row["acc"] >= 1.0:
            break
    return result


def obtain_codec(cfg: ExperimentConfig, out_dir: Path | None = None) -> Codec:
    """Load the configured codec, or pretrain one and save it."""
    if cfg.codec_dir and (Path(cfg.codec_dir) / "codec.json").exists():
        return Codec.load(cfg.codec_dir, cfg.grid)
    return pretrain_codec(cfg, Path(cfg.codec_dir) if cfg.codec_dir else out_dir / "codec")


def pretrain_codec(cfg: ExperimentConfig, out: Path, n_victim: int = 5000,
                   n_random: int = 1000) -> Codec:
    rng = np.random.default_rng([cfg.seed, 9])
    log.info("building codec corpus (%d victim + %d random traces)", n_victim, n_random)
    corpus = build_corpus(cfg.grid, rng, n_victim, n_random, cfg.victim)
    codec = Codec.create(cfg.grid, rng)
    codec, losses = pretrain(codec, corpus, epochs=cfg.codec_epochs, rng=rng,
                             batch_size=cfg.codec_batch)
    log.info("codec loss %.4f -> %.4f", losses[0], losses[-1])
    codec.save(out)
    return codec


def _fmt(v) -> str:
    return repr(float(v))


def train(cfg: ExperimentConfig, codec: Codec | None = None, progress_every: int = 50):
    """Train one attacker; writes metrics, timing, archive and manifest under ``cfg.out_dir``."""
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    started = datetime.now(timezone.utc).isoformat()
    (out / "config.json").write_text(cfg.to_json() + "\n")
    codec = codec or obtain_codec(cfg, out)

    agent = DdpgAgent(state_dim(cfg), cfg.grid.n_cells, cfg.attacker,
                      np.random.default_rng([cfg.seed, 0]))
    sample_rng = np.random.default_rng([cfg.seed, 3])
    archive = StrategyArchive()
    n_updates = 0

    with open(out / "metrics.csv", "w", newline="") as mf, \
            open(out / "timing.csv", "w", newline="") as tf, \
            open(out / "divergence_debug.jsonl", "w") as df:
        mw, tw = csv.writer(mf), csv.writer(tf)
        mw.writerow(METRIC_COLUMNS)
        tw.writerow(TIMING_COLUMNS)
        for ep in range(1, cfg.episodes + 1):
            agent.noise.reset()
            learning = ep > cfg.attacker.warmup_episodes

            def on_transition(rec):
                nonlocal n_updates
                agent.buffer.store(rec)
                if learning and agent.update(sample_rng) is not None:
                    n_updates += 1

            victim = Victim(cfg.grid, cfg.victim, cfg.seed, env_seed=[cfg.seed, _TRAIN_STREAM, ep])
            res = run_attack_episode(cfg, agent.actor, codec, victim, agent, explore=True,
                                     compute_all=True, on_transition=on_transition)
            for s in res.steps:
                mw.writerow([cfg.label, cfg.seed, ep, s["attack_step"], _fmt(s["acc"]),
                             _fmt(s["soft_acc"]), _fmt(s["partial_soft_acc"]), _fmt(s["effort"]),
                             _fmt(s["raw_divergence"]), _fmt(s["gamma"]), _fmt(s["reward"])])
                tw.writerow([cfg.label, cfg.seed, ep, s["attack_step"], _fmt(s["wall_time_s"])])
                if s["attack_step"] >= 1:
                    df.write(debug_record(cfg.discount, s["raw_divergence"], s["gamma"]) + "\n")
            archive.update(ep, res.steps, agent.actor)
            if progress_every and ep % progress_every == 0:
                mf.flush()
                log.info("%s episode %d: final acc %.3f, best mean acc %.3f, updates %d",
                         cfg.label, ep, res.final_acc, archive.best[("acc", "mean")], n_updates)

    archive.save(out / "archive")
    archive.write_history(out / "archive_history.csv")
    agent.save(out / "checkpoints", f"final_{cfg.episodes}")
    manifest = {
        "config_digest": cfg.digest(),
        "code_version": __version__,
        "seeds": {"train": cfg.seed, "eval": list(cfg.eval_seeds)},
        "start": started,
        "end": datetime.now(timezone.utc).isoformat(),
        "updates": n_updates,
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
    return archive, out / "metrics.csv"


@dataclass
class EvalReport:
    traces: list
    summary: dict

    def to_json(self) -> str:
        return json.dumps({"traces": self.traces, "summary": self.summary}, indent=2)

    @classmethod
    def load(cls, path) -> "EvalReport":
        d = json.loads(Path(path).read_text())
        return cls(d["traces"], d["summary"])

    def final_acc(self, group: str) -> list[float]:
        return [t["acc"][-1] for t in self.traces if t["group"] == group]

    def mean_acc(self, group: str | None = None) -> list[float]:
        """Per-attack mean @Acc over all recorded steps."""
        return [float(np.mean(t["acc"])) for t in self.traces
                if group is None or t["group"] == group]


def evaluate(cfg: ExperimentConfig, actor: Mlp, codec: Codec) -> EvalReport:
    """Noiseless attacks on 10 training-seed victims and 10 fresh-seed victims.

    The training-seed victims share the training seed for their own choices
    and differ in environment noise, so the ten attacks are not copies.
    """
    runs = [("same", cfg.seed, i) for i in range(cfg.n_eval_same)]
    runs += [("different", s, i) for i, s in enumerate(cfg.eval_seeds)]
    traces = []
    for group, vseed, i in runs:
        victim = Victim(cfg.grid, cfg.victim, vseed, env_seed=[vseed, _EVAL_STREAM, i])
        res = run_attack_episode(cfg, actor, codec, victim)
        traces.append({
            "group": group,
            "victim_seed": vseed,
            "index": i,
            "acc": [s["acc"] for s in res.steps],
            "soft_acc": [s["soft_acc"] for s in res.steps],
            "effort": [s["effort"] for s in res.steps[1:]],
            "time": [s["wall_time_s"] for s in res.steps[1:]],
        })
    report = EvalReport(traces, {})
    for group in ("same", "different"):
        finals = report.final_acc(group)
        report.summary[group] = {
            "test_acc": float(np.mean(finals)) if finals else float("nan"),
            "final_acc": finals,
            "max_effort": max((max(t["effort"]) for t in traces if t["group"] == group),
                              default=float("nan")),
        }
    return report


def sweep_fixed(cfg: ExperimentConfig, gammas, codec: Codec | None = None) -> dict:
    """Train once per fixed discount; returns ``{gamma: archive}``."""
    gammas = list(gammas)
    if not gammas:
        raise ValueError("empty discount list")
    base = Path(cfg.out_dir)
    base.mkdir(parents=True, exist_ok=True)
    codec = codec or obtain_codec(cfg, base)
    results, table = {}, []
    for g in gammas:
        sub = cfg.with_discount(f"fixed:{g}").replace(out_dir=str(base / f"fixed_{g:.2f}"),
                                                     run_id=f"fixed:{g}_s{cfg.seed}")
        archive, _ = train(sub, codec)
        results[g] = archive
        table.append({"gamma": g, "best_mean_acc": archive.best[("acc", "mean")],
                      "best_last_acc": archive.best[("acc", "last")],
                      "best_mean_effort": archive.best[("effort", "mean")]})
    (base / "sweep_summary.json").write_text(json.dumps(table, indent=2) + "\n")
    return results
