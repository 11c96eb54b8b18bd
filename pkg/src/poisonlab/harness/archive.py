"""Best-so-far attack strategies, one slot per (criterion, aggregation)."""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from ..divergence import DIVERGENCE_KINDS
from ..nn import Mlp

CRITERIA = DIVERGENCE_KINDS + ("acc", "soft_acc", "partial_soft_acc", "effort", "time")
LOWER_IS_BETTER = frozenset(DIVERGENCE_KINDS + ("effort", "time"))
AGGREGATIONS = ("last", "mean", "cumulative")


def aggregate(values, how: str) -> float:
    v = np.asarray(values, dtype=np.float64)
    if len(v) == 0:
        raise ValueError("no attack steps to aggregate")
    if how == "last":
        return float(v[-1])
    if how == "mean":
        return float(v.mean())
    if how == "cumulative":
        return float(v.sum())
    raise ValueError(f"unknown aggregation {how!r}")


def episode_criteria(steps) -> dict[str, list[float]]:
    """Per-criterion series over the attack steps (step 0 excluded)."""
    attack = [s for s in steps if s["attack_step"] >= 1]
    out = {c: [s["divergences"][c] for s in attack] for c in DIVERGENCE_KINDS}
    for c in ("acc", "soft_acc", "partial_soft_acc", "effort"):
        out[c] = [s[c] for s in attack]
    out["time"] = [s["wall_time_s"] for s in attack]
    return out


def is_better_or_equal(criterion: str, value: float, incumbent: float | None) -> bool:
    if incumbent is None:
        return True
    if criterion in LOWER_IS_BETTER:
        return value <= incumbent
    return value >= incumbent


class StrategyArchive:
    def __init__(self):
        self.best: dict[tuple[str, str], float] = {}
        self.episode: dict[tuple[str, str], int] = {}
        self.actors: dict[tuple[str, str], Mlp] = {}
        self.history: list[tuple] = []

    @staticmethod
    def slots():
        return [(c, a) for c in CRITERIA for a in AGGREGATIONS]

    def update(self, episode: int, steps, actor: Mlp) -> list[tuple[str, str]]:
        series = episode_criteria(steps)
        snapshot = None
        stored = []
        for c, a in self.slots():
            value = aggregate(series[c], a)
            slot = (c, a)
            hit = is_better_or_equal(c, value, self.best.get(slot))
            if hit:
                snapshot = snapshot or actor.copy()
                self.best[slot] = value
                self.episode[slot] = episode
                self.actors[slot] = snapshot
                stored.append(slot)
            self.history.append((episode, c, a, value, self.best[slot], int(hit)))
        return stored

    def actor_for(self, criterion: str = "acc", how: str = "mean") -> Mlp:
        return self.actors[(criterion, how)]

    def save(self, directory) -> None:
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        for (c, a), actor in self.actors.items():
            ep = self.episode[(c, a)]
            slot_dir = d / f"{c}_{a}"
            slot_dir.mkdir(exist_ok=True)
            weights = f"actor_{c}-{a}_{ep}.w"
            for old in slot_dir.glob("actor_*.w"):
                old.unlink()
            actor.save(slot_dir / weights)
            meta = {"criterion": c, "aggregation": a, "value": self.best[(c, a)],
                    "episode": ep, "weights": weights,
                    "lower_is_better": c in LOWER_IS_BETTER}
            (slot_dir / "slot.json").write_text(json.dumps(meta, indent=2) + "\n")

    def write_history(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["episode", "criterion", "aggregation", "episode_value", "best_value", "stored"])
            for row in self.history:
                w.writerow([row[0], row[1], row[2], repr(row[3]), repr(row[4]), row[5]])


def load_slot(directory, criterion: str = "acc", how: str = "mean") -> Mlp:
    slot_dir = Path(directory) / f"{criterion}_{how}"
    meta = json.loads((slot_dir / "slot.json").read_text())
    return Mlp.load(slot_dir / meta["weights"])


def read_history(path) -> list[dict]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    for r in rows:
        r["episode"] = int(r["episode"])
        r["episode_value"] = float(r["episode_value"])
        r["best_value"] = float(r["best_value"])
        r["stored"] = int(r["stored"])
    return rows
