"""Trajectory dataset generation from background-agent rollouts.

Runs each shipped scenario ego-free several times with seeded desired-speed
jitter and records every agent's position at the fast rate, producing the
columnar file the forecaster trains on.
"""

from __future__ import annotations

import numpy as np

from fsdrive.world.scenario import BUILTIN_SCENARIOS, builtin_scenario_path, load_scenario_file
from fsdrive.world.simulator import World

__all__ = ["generate_dataset_rows"]


def generate_dataset_rows(
    episodes_per_scenario: int = 6,
    seed: int = 0,
    scenarios: tuple[str, ...] = BUILTIN_SCENARIOS,
    max_ticks: int | None = None,
    obs_noise_std: float = 0.1,
):
    """Yield (episode_id, entity_id, class, t, x, y) rows.

    Recorded positions carry seeded Gaussian observation noise
    (``obs_noise_std`` meters) to mimic perception jitter; the underlying
    simulation stays deterministic.
    """
    rng = np.random.default_rng(seed)
    rows = []
    for name in scenarios:
        spec = load_scenario_file(builtin_scenario_path(name))
        for k in range(episodes_per_scenario):
            episode_id = f"{name}-{k:02d}"
            world = World(spec, ego_enabled=False, speed_jitter=rng)
            ticks = max_ticks or int(spec.duration_cap_s / world.dyn.T_s)
            for _ in range(ticks):
                world.step(None)
                for e in world.traffic_entities():
                    nx = e.x + rng.normal(0.0, obs_noise_std)
                    ny = e.y + rng.normal(0.0, obs_noise_std)
                    rows.append(
                        (episode_id, e.entity_id, e.kind, round(world.t, 3), nx, ny)
                    )
    return rows
