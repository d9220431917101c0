"""Obstacle-path predictors feeding the solver horizon."""

from __future__ import annotations

import math
from collections import deque

import numpy as np

from fsdrive.predictor.model import ForecastModel, TrajectorySeries, forecast
from fsdrive.world.simulator import TrafficEntity

__all__ = ["HistoryTracker", "ConstantVelocityPredictor", "ModelPredictor"]


class HistoryTracker:
    """Per-entity position history at the fast rate."""

    def __init__(self, t_in: int = 30) -> None:
        self.t_in = t_in
        self._buffers: dict[int, deque] = {}

    def update(self, entities: list[TrafficEntity]) -> None:
        for e in entities:
            buf = self._buffers.setdefault(e.entity_id, deque(maxlen=self.t_in))
            buf.append((e.x, e.y))

    def window(self, entity_id: int) -> np.ndarray | None:
        buf = self._buffers.get(entity_id)
        if not buf:
            return None
        values = list(buf)
        # young tracks are backfilled by replicating the oldest observation
        while len(values) < self.t_in:
            values.insert(0, values[0])
        return np.asarray(values)


class ConstantVelocityPredictor:
    """Projects each entity along its current heading at its current speed."""

    def __init__(self, n_steps: int, t_s: float = 0.05) -> None:
        self.n_steps = n_steps
        self.t_s = t_s

    def predict(self, entities: list[TrafficEntity], tracker: HistoryTracker | None = None):
        out: dict[int, np.ndarray] = {}
        steps = np.arange(1, self.n_steps + 1)[:, None] * self.t_s
        for e in entities:
            vel = np.array([e.speed * math.cos(e.heading), e.speed * math.sin(e.heading)])
            out[e.entity_id] = np.array([e.x, e.y]) + steps * vel
        return out


class ModelPredictor:
    """Runs the trained forecaster on tracked histories.

    Entities without a full history yet fall back to constant velocity.
    """

    def __init__(self, model: ForecastModel, t_s: float = 0.05) -> None:
        self.model = model
        self.t_s = t_s
        self._fallback = ConstantVelocityPredictor(model.cfg.n_out, t_s)

    @property
    def n_steps(self) -> int:
        return self.model.cfg.n_out

    def predict(self, entities: list[TrafficEntity], tracker: HistoryTracker):
        out: dict[int, np.ndarray] = {}
        pending: list[TrafficEntity] = []
        for e in entities:
            window = tracker.window(e.entity_id)
            if window is None:
                pending.append(e)
                continue
            out[e.entity_id] = forecast(
                self.model, TrajectorySeries(window, dt=self.t_s)
            )
        if pending:
            out.update(self._fallback.predict(pending))
        return out
