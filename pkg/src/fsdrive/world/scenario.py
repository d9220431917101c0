"""Scenario documents: schema, geometry compilation, validation.

A scenario is a JSON document describing the map (lanes, stop lines,
lights), the ego (spawn, route, reference speed), and the background agents
(class, route, behavior). Polylines may be given as raw point lists or as
primitive lists (``line``/``arc``) that are compiled at load time.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from fsdrive.geometry import Polyline

__all__ = [
    "ScenarioError",
    "LaneSpec",
    "StopLineSpec",
    "LightSpec",
    "AgentSpec",
    "EgoSpec",
    "ScenarioSpec",
    "load_scenario_file",
    "load_scenario_dict",
    "builtin_scenario_path",
    "BUILTIN_SCENARIOS",
]

BUILTIN_SCENARIOS = ("ml_acc", "roundabout", "intersection", "mix_t_junction")

VEHICLE_ROUTE_TOLERANCE = 3.0
VRU_MAP_MARGIN = 30.0


class ScenarioError(ValueError):
    """Schema or geometry violations; collects every problem found."""

    def __init__(self, problems: list[str]) -> None:
        super().__init__("; ".join(problems))
        self.problems = problems


def compile_polyline(spec) -> Polyline:
    """Raw [[x, y], ...] list or a list of line/arc primitives."""
    if not spec:
        raise ValueError("empty polyline spec")
    if isinstance(spec[0], dict):
        pts: list[list[float]] = []
        for prim in spec:
            kind = prim.get("type")
            if kind == "line":
                n = int(prim.get("n", 2))
                seg = np.linspace(prim["from"], prim["to"], max(n, 2))
            elif kind == "arc":
                start = math.radians(prim["start_deg"])
                end = math.radians(prim["end_deg"])
                n = int(prim.get("n", max(8, int(abs(end - start) * 24))))
                ang = np.linspace(start, end, max(n, 2))
                cx, cy = prim["center"]
                r = prim["radius"]
                seg = np.column_stack([cx + r * np.cos(ang), cy + r * np.sin(ang)])
            else:
                raise ValueError(f"unknown polyline primitive {kind!r}")
            if pts and np.allclose(pts[-1], seg[0], atol=1e-9):
                seg = seg[1:]
            pts.extend(seg.tolist())
        return Polyline(pts)
    return Polyline(spec)


@dataclass
class LaneSpec:
    lane_id: str
    centerline: Polyline
    width: float
    left_crossable: bool
    right_crossable: bool


@dataclass
class StopLineSpec:
    stop_id: str
    lane_id: str
    s: float
    light_id: str


@dataclass
class LightSpec:
    light_id: str
    position: tuple[float, float]
    schedule: tuple[tuple[str, float], ...]  # (state, duration seconds)
    offset: float = 0.0

    def state_at(self, t: float) -> str:
        cycle = sum(d for _, d in self.schedule)
        phase = (t + self.offset) % cycle
        for state, duration in self.schedule:
            if phase < duration:
                return state
            phase -= duration
        return self.schedule[-1][0]


@dataclass
class AgentSpec:
    agent_id: int
    kind: str  # "vehicle" | "vru"
    route: Polyline
    spawn_s: float
    speed: float
    behavior: str  # "idm" | "scripted"
    start_time: float = 0.0
    length: float = 4.6
    width: float = 1.9
    radius: float = 0.35


@dataclass
class EgoSpec:
    spawn: tuple[float, float, float, float]  # x, y, heading, speed
    route: Polyline
    lane_id: str
    v_ref: float
    length: float = 4.6
    width: float = 1.9


@dataclass
class ScenarioSpec:
    name: str
    kind: str
    seed: int
    duration_cap_s: float
    lanes: dict[str, LaneSpec]
    stop_lines: list[StopLineSpec]
    lights: dict[str, LightSpec]
    ego: EgoSpec
    agents: list[AgentSpec]
    raw: dict = field(repr=False, default_factory=dict)

    @property
    def ego_lane(self) -> LaneSpec:
        return self.lanes[self.ego.lane_id]


def _validate(spec: ScenarioSpec) -> list[str]:
    problems: list[str] = []
    ids = [a.agent_id for a in spec.agents]
    if len(ids) != len(set(ids)):
        problems.append("agent ids must be unique")
    if spec.ego.lane_id not in spec.lanes:
        problems.append(f"ego lane {spec.ego.lane_id!r} not in map")
    for sl in spec.stop_lines:
        if sl.lane_id not in spec.lanes:
            problems.append(f"stop line {sl.stop_id} references unknown lane {sl.lane_id}")
        if sl.light_id not in spec.lights:
            problems.append(f"stop line {sl.stop_id} references unknown light {sl.light_id}")

    all_points = np.concatenate([lane.centerline.points for lane in spec.lanes.values()])
    lo = all_points.min(axis=0) - VRU_MAP_MARGIN
    hi = all_points.max(axis=0) + VRU_MAP_MARGIN

    def on_lanes(route: Polyline) -> bool:
        for point in route.points:
            if not any(
                lane.centerline.project(point)[1] <= VEHICLE_ROUTE_TOLERANCE
                for lane in spec.lanes.values()
            ):
                return False
        return True

    if not on_lanes(spec.ego.route):
        problems.append("ego route leaves the mapped lanes")
    for agent in spec.agents:
        if agent.kind == "vehicle":
            if not on_lanes(agent.route):
                problems.append(f"agent {agent.agent_id} route leaves the mapped lanes")
        else:
            pts = agent.route.points
            if np.any(pts < lo) or np.any(pts > hi):
                problems.append(f"agent {agent.agent_id} route leaves the map area")
        if agent.spawn_s >= agent.route.length:
            problems.append(f"agent {agent.agent_id} spawns beyond its route end")
    return problems


def load_scenario_dict(doc: dict, name: str = "inline") -> ScenarioSpec:
    """Build and validate a scenario from a parsed document.

    Raises ScenarioError listing every violation found.
    """
    problems: list[str] = []
    try:
        lanes = {
            l["id"]: LaneSpec(
                lane_id=l["id"],
                centerline=compile_polyline(l["centerline"]),
                width=float(l.get("width", 3.5)),
                left_crossable=bool(l.get("left_crossable", True)),
                right_crossable=bool(l.get("right_crossable", True)),
            )
            for l in doc["map"]["lanes"]
        }
        lights = {
            t["id"]: LightSpec(
                light_id=t["id"],
                position=tuple(t["position"]),
                schedule=tuple((s, float(d)) for s, d in t["schedule"]),
                offset=float(t.get("offset", 0.0)),
            )
            for t in doc["map"].get("lights", [])
        }
        stop_lines = [
            StopLineSpec(
                stop_id=s.get("id", f"sl{i}"),
                lane_id=s["lane"],
                s=float(s["s"]),
                light_id=s["light"],
            )
            for i, s in enumerate(doc["map"].get("stop_lines", []))
        ]
        ego_doc = doc["ego"]
        ego = EgoSpec(
            spawn=tuple(float(v) for v in ego_doc["spawn"]),
            route=compile_polyline(ego_doc["route"]),
            lane_id=ego_doc["lane"],
            v_ref=float(ego_doc["v_ref"]),
            length=float(ego_doc.get("length", 4.6)),
            width=float(ego_doc.get("width", 1.9)),
        )
        agents = [
            AgentSpec(
                agent_id=int(a["id"]),
                kind=a["class"],
                route=compile_polyline(a["route"]),
                spawn_s=float(a.get("spawn_s", 0.0)),
                speed=float(a["speed"]),
                behavior=a.get("behavior", "idm" if a["class"] == "vehicle" else "scripted"),
                start_time=float(a.get("start_time", 0.0)),
                length=float(a.get("length", 4.6)),
                width=float(a.get("width", 1.9)),
                radius=float(a.get("radius", 0.35)),
            )
            for a in doc.get("agents", [])
        ]
    except (KeyError, TypeError, ValueError) as exc:
        raise ScenarioError([f"schema error: {exc!r}"]) from exc

    spec = ScenarioSpec(
        name=doc.get("name", name),
        kind=doc.get("kind", "others"),
        seed=int(doc.get("seed", 0)),
        duration_cap_s=float(doc.get("duration_cap_s", 60.0)),
        lanes=lanes,
        stop_lines=stop_lines,
        lights=lights,
        ego=ego,
        agents=agents,
        raw=doc,
    )
    problems.extend(_validate(spec))
    if problems:
        raise ScenarioError(problems)
    return spec


def builtin_scenario_path(name: str) -> Path:
    if name not in BUILTIN_SCENARIOS:
        raise ValueError(f"unknown scenario {name!r}; choose from {BUILTIN_SCENARIOS}")
    return Path(str(resources.files("fsdrive.scenarios").joinpath(f"{name}.json")))


def load_scenario_file(path: str | Path) -> ScenarioSpec:
    path = Path(path)
    if not path.exists() and path.suffix == "" and str(path) in BUILTIN_SCENARIOS:
        path = builtin_scenario_path(str(path))
    with open(path) as fh:
        doc = json.load(fh)
    return load_scenario_dict(doc, name=path.stem)
