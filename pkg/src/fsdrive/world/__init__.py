from fsdrive.world.log import EpisodeLog, TickRecord
from fsdrive.world.metrics import EpisodeMetrics, compute_metrics
from fsdrive.world.scenario import (
    BUILTIN_SCENARIOS,
    ScenarioError,
    ScenarioSpec,
    builtin_scenario_path,
    load_scenario_dict,
    load_scenario_file,
)
from fsdrive.world.simulator import (
    IdmParams,
    TrafficEntity,
    World,
    idm_acceleration,
    ttc_estimate,
)

__all__ = [
    "EpisodeLog",
    "TickRecord",
    "EpisodeMetrics",
    "compute_metrics",
    "ScenarioError",
    "ScenarioSpec",
    "load_scenario_dict",
    "load_scenario_file",
    "builtin_scenario_path",
    "BUILTIN_SCENARIOS",
    "World",
    "TrafficEntity",
    "IdmParams",
    "idm_acceleration",
    "ttc_estimate",
]
