from .davis import export_davis_style, load_davis_style
from .metrics import metric_f, metric_j, metric_prediction, psnr, sequence_jf, ssim
from .synthetic import SequenceSample, SyntheticConfig, gen_dataset, gen_moving_shapes

__all__ = [
    "SequenceSample",
    "SyntheticConfig",
    "export_davis_style",
    "gen_dataset",
    "gen_moving_shapes",
    "load_davis_style",
    "metric_f",
    "metric_j",
    "metric_prediction",
    "psnr",
    "sequence_jf",
    "ssim",
]
