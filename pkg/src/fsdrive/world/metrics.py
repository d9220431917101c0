"""Episode scoring: collisions, rule violations, impolite behavior, TTC, time.

Collision and impolite-behavior events are taken from the per-tick event
tokens the simulator emits (other agents' poses are not logged); red-line
and marking crossings are derived independently from the logged ego states
plus the scenario map, so hand-constructed logs can exercise them.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from fsdrive.world.log import EpisodeLog

__all__ = ["EpisodeMetrics", "compute_metrics", "TTC_ALARM_S", "IB_DEBOUNCE_S"]

TTC_ALARM_S = 1.5
IB_DEBOUNCE_S = 2.0
COLLISION_REFRACTORY_S = 1.0
MARKING_DEBOUNCE_S = 2.0


@dataclass
class EpisodeMetrics:
    collisions: int
    trv: int
    ib: int
    ttc_alarm_s: float
    travel_time_s: float
    comp_time_mean_ms: float
    comp_time_std_ms: float
    completed: bool

    def violations(self) -> int:
        return self.collisions + self.trv + self.ib


def _collision_count(log: EpisodeLog) -> int:
    last_contact: dict[str, float] = {}
    count = 0
    for tick in log.ticks:
        present = {tok.split(":", 1)[1] for tok in tick.events.split(";") if tok.startswith("col:")}
        for eid in sorted(present):
            prev = last_contact.get(eid)
            if prev is None or tick.t - prev > COLLISION_REFRACTORY_S:
                count += 1
            last_contact[eid] = tick.t
    return count


def _ib_count(log: EpisodeLog) -> int:
    last: dict[str, float] = {}
    count = 0
    for tick in log.ticks:
        agents = {tok.split(":", 1)[1] for tok in tick.events.split(";") if tok.startswith("ib:")}
        for aid in sorted(agents):
            prev = last.get(aid)
            if prev is None or tick.t - prev >= IB_DEBOUNCE_S:
                count += 1
            last[aid] = tick.t
    return count


def _red_crossings(log: EpisodeLog) -> int:
    """Stop-line crossings while the bound light is red, from ego states."""
    spec = log.scenario
    route = spec.ego.route
    bindings = []
    for sl in spec.stop_lines:
        lane = spec.lanes[sl.lane_id]
        pos = lane.centerline.point_at(sl.s)
        heading = lane.centerline.tangent_at(sl.s)
        s_r, dist = route.project(pos)
        if dist < 1.5 and abs(_ang_diff(route.tangent_at(s_r), heading)) < math.pi / 4:
            bindings.append((s_r, sl.light_id))
    if not bindings:
        return 0
    pts = np.array([[tick.p_x, tick.p_y] for tick in log.ticks])
    s_arr, _ = route.project_many(pts)
    count = 0
    for s_stop, light_id in bindings:
        for k in range(1, len(log.ticks)):
            if s_arr[k - 1] < s_stop <= s_arr[k]:
                if spec.lights[light_id].state_at(log.ticks[k].t) == "red":
                    count += 1
    return count


def _marking_crossings(log: EpisodeLog) -> int:
    """Ego center crossing a non-crossable marking of its route corridor."""
    spec = log.scenario
    lane = spec.ego_lane
    if lane.left_crossable and lane.right_crossable:
        return 0
    route = spec.ego.route
    half = lane.width / 2.0
    pts = np.array([[tick.p_x, tick.p_y] for tick in log.ticks])
    s_arr, _ = route.project_many(pts)
    base = route.points_at(s_arr)
    ang = route.tangents_at(s_arr)
    rel = pts - base
    d = -np.sin(ang) * rel[:, 0] + np.cos(ang) * rel[:, 1]
    count = 0
    for sign, crossable in ((1.0, lane.left_crossable), (-1.0, lane.right_crossable)):
        if crossable:
            continue
        outside = sign * d >= half
        last = -math.inf
        for k in range(1, len(outside)):
            if outside[k] and not outside[k - 1]:
                t = log.ticks[k].t
                if t - last >= MARKING_DEBOUNCE_S:
                    count += 1
                last = t
    return count


def compute_metrics(log: EpisodeLog) -> EpisodeMetrics:
    """Score one complete episode log."""
    if not log.ticks:
        raise ValueError("episode log is empty")
    t_s = log.ticks[1].t - log.ticks[0].t if len(log.ticks) > 1 else 0.05
    alarm_ticks = sum(1 for tick in log.ticks if tick.min_ttc < TTC_ALARM_S)
    travel_time = log.completed_time if log.completed_time is not None else log.duration_s
    solve_ms = np.array([tick.solve_ms for tick in log.ticks])
    return EpisodeMetrics(
        collisions=_collision_count(log),
        trv=_red_crossings(log) + _marking_crossings(log),
        ib=_ib_count(log),
        ttc_alarm_s=alarm_ticks * t_s,
        travel_time_s=travel_time,
        comp_time_mean_ms=float(solve_ms.mean()),
        comp_time_std_ms=float(solve_ms.std()),
        completed=log.completed_time is not None,
    )


def _ang_diff(a: float, b: float) -> float:
    return math.atan2(math.sin(a - b), math.cos(a - b))
