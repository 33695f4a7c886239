from .analysis import MemoryHistogram, analyze_memory
from .bench import BenchConfig, BenchResult, bench_complexity, linear_slot_count
from .config import DataConfig, RunConfig, TrainConfig, load_config
from .evaluate import evaluate, load_bank_snapshot, save_bank_snapshot, write_reports
from .train import Adam, TrainingError, average_checkpoints, train

__all__ = [
    "Adam",
    "BenchConfig",
    "BenchResult",
    "DataConfig",
    "MemoryHistogram",
    "RunConfig",
    "TrainConfig",
    "TrainingError",
    "analyze_memory",
    "average_checkpoints",
    "bench_complexity",
    "evaluate",
    "linear_slot_count",
    "load_bank_snapshot",
    "load_config",
    "save_bank_snapshot",
    "train",
    "write_reports",
]
