from fsdrive.predictor.data import (
    WindowSet,
    build_windows,
    read_dataset,
    split_windows,
    write_dataset,
)
from fsdrive.predictor.decomposition import Decomposition, decompose, moving_average
from fsdrive.predictor.model import (
    ForecastModel,
    ModelConfig,
    TrajectorySeries,
    forecast,
    load_model,
    save_model,
)
from fsdrive.predictor.training import (
    PlainRecurrentBaseline,
    PredictorMetrics,
    TrainConfig,
    evaluate,
    train,
)

__all__ = [
    "Decomposition",
    "moving_average",
    "decompose",
    "TrajectorySeries",
    "ModelConfig",
    "ForecastModel",
    "forecast",
    "save_model",
    "load_model",
    "WindowSet",
    "write_dataset",
    "read_dataset",
    "build_windows",
    "split_windows",
    "TrainConfig",
    "PredictorMetrics",
    "PlainRecurrentBaseline",
    "train",
    "evaluate",
]
