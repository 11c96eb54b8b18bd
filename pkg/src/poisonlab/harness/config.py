"""Experiment configuration, stored as JSON with the dataclass field names."""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field

from ..attacker import AttackerParams
from ..divergence import DiscountConfig
from ..gridworld import GridSpec
from ..victim import VictimParams

TRAIN_SEEDS = (0, 7, 16, 25)
FIXED_SWEEP = (0.80, 0.85, 0.90, 0.95, 0.99)


@dataclass(frozen=True)
class ExperimentConfig:
    discount: DiscountConfig = field(default_factory=lambda: DiscountConfig.for_variant("wd"))
    attacker: AttackerParams = field(default_factory=AttackerParams)
    victim: VictimParams = field(default_factory=VictimParams)
    grid: GridSpec = field(default_factory=GridSpec)
    episodes: int = 1000
    horizon: int = 15
    seed: int = 0
    eval_seeds: tuple = tuple(range(101, 111))
    n_eval_same: int = 10
    out_dir: str = "runs/default"
    codec_dir: str | None = None
    codec_epochs: int = 60
    codec_batch: int = 8
    run_id: str = ""

    def __post_init__(self):
        if self.episodes < 1 or self.horizon < 1:
            raise ValueError("episodes and horizon must be positive")
        if self.seed in self.eval_seeds:
            raise ValueError("different-seed evaluation victims must not reuse the training seed")
        object.__setattr__(self, "eval_seeds", tuple(int(s) for s in self.eval_seeds))

    def replace(self, **kw) -> "ExperimentConfig":
        return dataclasses.replace(self, **kw)

    def with_discount(self, name: str) -> "ExperimentConfig":
        d = self.discount
        return self.replace(discount=DiscountConfig.for_variant(name, k=d.k, c_d=d.c_d))

    @property
    def label(self) -> str:
        return self.run_id or f"{self.discount.label()}_s{self.seed}"

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def digest(self) -> str:
        """Hash of everything that affects results (output paths excluded)."""
        d = self.to_dict()
        d.pop("out_dir")
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()[:16]

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        d = dict(d)
        if "discount" in d:
            d["discount"] = DiscountConfig(**d["discount"])
        if "attacker" in d:
            a = dict(d["attacker"])
            for key in ("actor_hidden", "critic_hidden"):
                if key in a:
                    a[key] = tuple(a[key])
            d["attacker"] = AttackerParams(**a)
        if "victim" in d:
            d["victim"] = VictimParams(**d["victim"])
        if "grid" in d:
            d["grid"] = GridSpec(**d["grid"])
        if "eval_seeds" in d:
            d["eval_seeds"] = tuple(d["eval_seeds"])
        return cls(**d)

    @classmethod
    def from_json(cls, text: str) -> "ExperimentConfig":
        return cls.from_dict(json.loads(text))

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        with open(path) as fh:
            return cls.from_json(fh.read())
