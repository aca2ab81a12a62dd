"""Multi-scale spatial-temporal recurrent network for traffic-flow forecasting."""
from .data import (DataError, Metrics, SampleSet, SynthConfig, TrafficSeries, load_series, metrics,
                   prepare_dataset, synth_generate)
from .model import MSSTRN, TABLE7_STACKS, VARIANTS, Checkpoint, ModelConfig, build_model, l1_loss
from .numeric import ConfigError, MsstrnError, NumericError, ShapeError
from .trainer import TrainConfig, TrainHistory, evaluate, export_predictions, train

__all__ = [
    "MSSTRN", "TABLE7_STACKS", "VARIANTS", "Checkpoint", "ConfigError", "DataError", "Metrics",
    "ModelConfig", "MsstrnError", "NumericError", "SampleSet", "ShapeError", "SynthConfig",
    "TrafficSeries", "TrainConfig", "TrainHistory", "build_model", "evaluate", "export_predictions",
    "l1_loss", "load_series", "metrics", "prepare_dataset", "synth_generate", "train",
]
