from fsdrive.runtime.loop import (
    AblationToggles,
    DirectiveSnapshot,
    EpisodeRunner,
    RunConfig,
    run_episode,
)
from fsdrive.runtime.plots import emit_plots
from fsdrive.runtime.predictors import (
    ConstantVelocityPredictor,
    HistoryTracker,
    ModelPredictor,
)

__all__ = [
    "AblationToggles",
    "DirectiveSnapshot",
    "EpisodeRunner",
    "RunConfig",
    "run_episode",
    "emit_plots",
    "ConstantVelocityPredictor",
    "HistoryTracker",
    "ModelPredictor",
]
