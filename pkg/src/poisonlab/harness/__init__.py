from .archive import StrategyArchive
from .config import ExperimentConfig
from .runner import EvalReport, evaluate, run_attack_episode, sweep_fixed, train
from .stats import sliding_window_max, wilcoxon_signed_rank

__all__ = [
    "EvalReport",
    "ExperimentConfig",
    "StrategyArchive",
    "evaluate",
    "run_attack_episode",
    "sliding_window_max",
    "sweep_fixed",
    "train",
    "wilcoxon_signed_rank",
]
