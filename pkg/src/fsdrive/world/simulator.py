"""Deterministic 2D traffic world.

Background vehicles follow their routes under IDM with signal compliance and
gap-acceptance yielding at route-crossing conflict points; VRUs walk
scripted paths at constant speed; the ego advances through the shared
single-track dynamics. Stepping is single-threaded and, for a fixed
scenario, fully deterministic.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from shapely.geometry import LineString

from fsdrive.attention.snapshot import EntityObservation, LightObservation, SceneSnapshot
from fsdrive.dynamics import ControlInput, DynamicsParams, EgoState, step as dyn_step
from fsdrive.fields import FieldEntity, LaneMarkings, StopLineGeometry
from fsdrive.geometry import Polyline
from fsdrive.world.scenario import AgentSpec, ScenarioSpec

__all__ = ["TrafficEntity", "World", "IdmParams", "idm_acceleration", "ttc_estimate"]

SENSE_RANGE = 60.0
CONFLICT_ZONE = 8.0
CONFLICT_STOP_MARGIN = 6.0
CONFLICT_LOOKAHEAD = 60.0
EGO_DEFER_DISTANCE = 15.0  # gap acceptance vs the ego decided near the junction
LEADER_LOOKAHEAD = 80.0
LANE_CAPTURE = 2.0
HARD_BRAKE_LIMIT = -8.0
IB_THRESHOLD = -4.0


@dataclass(frozen=True)
class TrafficEntity:
    """Externally visible state of one surrounding agent."""

    entity_id: int
    kind: str
    x: float
    y: float
    heading: float
    speed: float
    length: float = 4.6
    width: float = 1.9
    radius: float = 0.35


@dataclass
class IdmParams:
    a_max: float = 2.0
    b_comf: float = 2.0
    s0: float = 2.0
    headway: float = 1.5
    delta: float = 4.0


def idm_acceleration(v: float, v0: float, gap: float, dv: float, p: IdmParams) -> float:
    """Car-following acceleration toward desired speed v0 against a leader."""
    gap = max(gap, 0.1)
    s_star = p.s0 + max(0.0, v * p.headway + v * dv / (2.0 * math.sqrt(p.a_max * p.b_comf)))
    return p.a_max * (1.0 - (v / max(v0, 0.1)) ** p.delta - (s_star / gap) ** 2)


def ttc_estimate(rel_pos, rel_vel, r_sum: float) -> float:
    """Constant-velocity point-mass time to reach footprint contact."""
    px, py = rel_pos
    vx, vy = rel_vel
    c = px * px + py * py - r_sum * r_sum
    if c <= 0.0:
        return 0.0
    a = vx * vx + vy * vy
    b = 2.0 * (px * vx + py * vy)
    if a <= 1e-12:
        return math.inf
    disc = b * b - 4.0 * a * c
    if disc < 0.0:
        return math.inf
    root = (-b - math.sqrt(disc)) / (2.0 * a)
    return root if root >= 0.0 else math.inf


def _rect_corners(x, y, heading, length, width):
    c, s = math.cos(heading), math.sin(heading)
    hl, hw = length / 2.0, width / 2.0
    return np.array(
        [
            [x + c * hl - s * hw, y + s * hl + c * hw],
            [x + c * hl + s * hw, y + s * hl - c * hw],
            [x - c * hl + s * hw, y - s * hl - c * hw],
            [x - c * hl - s * hw, y - s * hl + c * hw],
        ]
    )


def _obb_overlap(c1, c2) -> bool:
    """Separating-axis test for two convex quads."""
    for corners in (c1, c2):
        for i in range(4):
            edge = corners[(i + 1) % 4] - corners[i]
            axis = np.array([-edge[1], edge[0]])
            p1 = c1 @ axis
            p2 = c2 @ axis
            if p1.max() < p2.min() or p2.max() < p1.min():
                return False
    return True


def _rect_disc_overlap(corners, center, radius) -> bool:
    # project the circle center onto the rectangle via its axes
    edge_x = corners[1] - corners[0]
    edge_y = corners[3] - corners[0]
    rel = np.asarray(center) - corners[0]
    lx = np.clip(rel @ edge_x / (edge_x @ edge_x), 0.0, 1.0)
    ly = np.clip(rel @ edge_y / (edge_y @ edge_y), 0.0, 1.0)
    closest = corners[0] + lx * edge_x + ly * edge_y
    return float(np.hypot(*(np.asarray(center) - closest))) <= radius


@dataclass
class _Agent:
    spec: AgentSpec
    s: float
    v: float
    desired: float
    active: bool = True
    last_accel: float = 0.0
    stop_bindings: list[tuple[float, str]] = field(default_factory=list)
    conflicts: list[tuple[float, int, float]] = field(default_factory=list)  # (s_self, other_route, s_other)

    @property
    def half_len(self) -> float:
        return self.spec.length / 2.0 if self.spec.kind == "vehicle" else self.spec.radius

    def pose(self):
        pos = self.spec.route.point_at(self.s)
        heading = self.spec.route.tangent_at(self.s)
        return float(pos[0]), float(pos[1]), float(heading)


class World:
    """Simulation state for one episode."""

    def __init__(
        self,
        spec: ScenarioSpec,
        dyn: DynamicsParams | None = None,
        ego_enabled: bool = True,
        speed_jitter: np.random.Generator | None = None,
    ) -> None:
        self.spec = spec
        self.dyn = dyn or DynamicsParams()
        self.ego_enabled = ego_enabled
        self.t = 0.0
        self.tick = 0
        x, y, heading, speed = spec.ego.spawn
        self.ego = EgoState(x, y, heading, speed, 0.0, 0.0)
        self.ego_done_time: float | None = None
        self._routes: list[Polyline] = [spec.ego.route] + [a.route for a in spec.agents]
        self.agents: list[_Agent] = []
        for a in spec.agents:
            desired = a.speed
            if speed_jitter is not None and a.kind == "vehicle":
                desired *= float(speed_jitter.uniform(0.8, 1.2))
            v0 = desired if a.kind == "vehicle" else 0.0
            self.agents.append(_Agent(spec=a, s=a.spawn_s, v=v0, desired=desired))
        self._bind_stop_lines()
        self._find_conflicts()
        self.ego_markings = LaneMarkings(
            spec.ego.route,
            spec.ego_lane.width,
            left_crossable=spec.ego_lane.left_crossable,
            right_crossable=spec.ego_lane.right_crossable,
        )

    # ------------------------------------------------------------------ setup

    def _stop_points(self):
        pts = []
        for sl in self.spec.stop_lines:
            lane = self.spec.lanes[sl.lane_id]
            pos = lane.centerline.point_at(sl.s)
            heading = lane.centerline.tangent_at(sl.s)
            pts.append((sl, pos, heading))
        return pts

    def _bind_stop_lines(self) -> None:
        stop_pts = self._stop_points()
        self.ego_stop_bindings: list[tuple[float, str]] = []
        for sl, pos, heading in stop_pts:
            s_r, dist = self.spec.ego.route.project(pos)
            if dist < 1.5 and abs(_ang_diff(self.spec.ego.route.tangent_at(s_r), heading)) < math.pi / 4:
                self.ego_stop_bindings.append((s_r, sl.light_id))
        self.ego_stop_bindings.sort()
        for agent in self.agents:
            if agent.spec.kind != "vehicle":
                continue
            for sl, pos, heading in stop_pts:
                s_r, dist = agent.spec.route.project(pos)
                if dist < 1.5 and abs(
                    _ang_diff(agent.spec.route.tangent_at(s_r), heading)
                ) < math.pi / 4:
                    agent.stop_bindings.append((s_r, sl.light_id))
            agent.stop_bindings.sort()

    def _find_conflicts(self) -> None:
        """Route-pair crossing points; near-parallel touches (merges) ignored."""
        lines = [LineString(r.points) for r in self._routes]
        crossings: dict[tuple[int, int], list[tuple[float, float]]] = {}
        for i in range(len(lines)):
            for j in range(len(lines)):
                if i == j:
                    continue
                inter = lines[i].intersection(lines[j])
                points = []
                if inter.is_empty:
                    continue
                if inter.geom_type == "Point":
                    points = [inter]
                elif inter.geom_type == "MultiPoint":
                    points = list(inter.geoms)
                else:
                    continue  # collinear overlap = merge, handled as leader-following
                for pt in points:
                    s_i, _ = self._routes[i].project((pt.x, pt.y))
                    s_j, _ = self._routes[j].project((pt.x, pt.y))
                    ang = _ang_diff(
                        self._routes[i].tangent_at(s_i), self._routes[j].tangent_at(s_j)
                    )
                    if abs(ang) < math.radians(20):
                        continue
                    crossings.setdefault((i, j), []).append((s_i, s_j))
        for agent_idx, agent in enumerate(self.agents, start=1):
            if agent.spec.kind != "vehicle":
                continue
            for (i, j), pairs in crossings.items():
                if i != agent_idx:
                    continue
                for s_i, s_j in pairs:
                    agent.conflicts.append((s_i, j, s_j))
            agent.conflicts.sort()

    # ------------------------------------------------------------ ego context

    def ego_route_progress(self) -> float:
        s, _ = self.spec.ego.route.project((self.ego.p_x, self.ego.p_y))
        return s

    def ego_completed(self) -> bool:
        return self.ego_route_progress() >= self.spec.ego.route.length - 1.0

    def light_state(self, light_id: str) -> str:
        return self.spec.lights[light_id].state_at(self.t)

    def next_ego_stop(self) -> tuple[float, str] | None:
        """(arc distance to stop line, light id) for the next uncrossed stop."""
        s_ego = self.ego_route_progress()
        for s_stop, light_id in self.ego_stop_bindings:
            if s_stop >= s_ego - 0.5:
                return s_stop - s_ego, light_id
        return None

    def stop_geometry(self) -> tuple[StopLineGeometry | None, float | None]:
        """Traffic-light stop geometry for the field, plus its route position."""
        nxt = self.next_ego_stop()
        if nxt is None:
            return None, None
        dist, light_id = nxt
        s_stop = self.ego_route_progress() + dist
        pos = self.spec.ego.route.point_at(s_stop)
        heading = self.spec.ego.route.tangent_at(s_stop)
        beta = 1 if self.light_state(light_id) == "red" else 0
        return StopLineGeometry(beta=beta, p_x=float(pos[0]), p_y=float(pos[1]), heading=heading), s_stop

    # ------------------------------------------------------------- observation

    def traffic_entities(self) -> list[TrafficEntity]:
        out = []
        for agent in self.agents:
            if not agent.active:
                continue
            x, y, heading = agent.pose()
            out.append(
                TrafficEntity(
                    entity_id=agent.spec.agent_id,
                    kind=agent.spec.kind,
                    x=x,
                    y=y,
                    heading=heading,
                    speed=agent.v,
                    length=agent.spec.length,
                    width=agent.spec.width,
                    radius=agent.spec.radius,
                )
            )
        return out

    def field_entities(self) -> tuple[tuple[FieldEntity, ...], tuple[FieldEntity, ...]]:
        vehicles, vrus = [], []
        for e in self.traffic_entities():
            item = FieldEntity(e.entity_id, e.kind, e.x, e.y)
            (vehicles if e.kind == "vehicle" else vrus).append(item)
        return tuple(vehicles), tuple(vrus)

    def sense(self) -> SceneSnapshot:
        """Ground-truth snapshot of everything within sensing range."""
        ego = self.ego
        entities = []
        for e in self.traffic_entities():
            if math.hypot(e.x - ego.p_x, e.y - ego.p_y) <= SENSE_RANGE:
                entities.append(
                    EntityObservation(
                        entity_id=e.entity_id,
                        kind=e.kind,
                        x=e.x,
                        y=e.y,
                        heading=e.heading,
                        speed=e.speed,
                    )
                )
        lights = []
        nxt = self.next_ego_stop()
        if nxt is not None and nxt[0] <= SENSE_RANGE:
            dist, light_id = nxt
            lights.append(
                LightObservation(
                    light_id=light_id, state=self.light_state(light_id), distance_m=dist
                )
            )
        lane = self.spec.ego_lane
        return SceneSnapshot(
            timestamp=self.t,
            ego=ego,
            entities=tuple(entities),
            lights=tuple(lights),
            marking_left_crossable=lane.left_crossable,
            marking_right_crossable=lane.right_crossable,
            scenario_kind=self.spec.kind,
        )

    def min_ttc(self, horizon_s: float = 4.0, step_s: float = 0.05) -> float:
        """Smallest projected time to footprint contact against any agent.

        A point-mass circumradius projection prefilters each pair; candidate
        pairs are refined by sampling actual footprint overlap along the
        constant-velocity extrapolation, so adjacent-lane passes with a
        constant lateral gap do not raise phantom contacts.
        """
        ego = self.ego
        c, s = math.cos(ego.phi), math.sin(ego.phi)
        ego_vel = np.array([ego.v_x * c - ego.v_y * s, ego.v_y * c + ego.v_x * s])
        ego_radius = math.hypot(self.spec.ego.length, self.spec.ego.width) / 2.0
        best = math.inf
        for e in self.traffic_entities():
            r_other = (
                math.hypot(e.length, e.width) / 2.0 if e.kind == "vehicle" else e.radius
            )
            vel = np.array([e.speed * math.cos(e.heading), e.speed * math.sin(e.heading)])
            coarse = ttc_estimate(
                (e.x - ego.p_x, e.y - ego.p_y),
                (vel[0] - ego_vel[0], vel[1] - ego_vel[1]),
                ego_radius + r_other,
            )
            if coarse > horizon_s or coarse >= best:
                continue
            t = max(coarse, 0.0)
            while t <= horizon_s:
                ego_box = _rect_corners(
                    ego.p_x + ego_vel[0] * t,
                    ego.p_y + ego_vel[1] * t,
                    ego.phi,
                    self.spec.ego.length,
                    self.spec.ego.width,
                )
                ox, oy = e.x + vel[0] * t, e.y + vel[1] * t
                if e.kind == "vehicle":
                    hit = _obb_overlap(ego_box, _rect_corners(ox, oy, e.heading, e.length, e.width))
                else:
                    hit = _rect_disc_overlap(ego_box, (ox, oy), e.radius)
                if hit:
                    best = min(best, t)
                    break
                t += step_s
        return float(best)

    def collisions_now(self) -> list[int]:
        """Ids of agents whose footprint currently overlaps the ego's."""
        if not self.ego_enabled:
            return []
        ego_box = _rect_corners(
            self.ego.p_x, self.ego.p_y, self.ego.phi, self.spec.ego.length, self.spec.ego.width
        )
        hits = []
        for e in self.traffic_entities():
            if e.kind == "vehicle":
                box = _rect_corners(e.x, e.y, e.heading, e.length, e.width)
                if _obb_overlap(ego_box, box):
                    hits.append(e.entity_id)
            else:
                if _rect_disc_overlap(ego_box, (e.x, e.y), e.radius):
                    hits.append(e.entity_id)
        return hits

    def agent_collisions_now(self) -> list[tuple[int, int]]:
        """Vehicle-vehicle overlaps among background agents (ego excluded)."""
        boxes = {}
        for e in self.traffic_entities():
            if e.kind == "vehicle":
                boxes[e.entity_id] = _rect_corners(e.x, e.y, e.heading, e.length, e.width)
        pairs = []
        ids = sorted(boxes)
        for i, a in enumerate(ids):
            for b in ids[i + 1 :]:
                if _obb_overlap(boxes[a], boxes[b]):
                    pairs.append((a, b))
        return pairs

    # ---------------------------------------------------------------- stepping

    def _project_onto(self, route: Polyline, pos, heading, speed):
        s, dist = route.project(pos)
        if dist > LANE_CAPTURE:
            return None
        tangent = route.tangent_at(s)
        if abs(_ang_diff(tangent, heading)) > math.pi / 3:
            return None
        v_along = speed * math.cos(_ang_diff(heading, tangent))
        return s, v_along

    def _route_occupants(self, route_idx: int):
        """(s, v, half_len, is_ego, agent_id) of everyone on a route."""
        occupants = []
        route = self._routes[route_idx]
        if self.ego_enabled:
            c, s_ = math.cos(self.ego.phi), math.sin(self.ego.phi)
            speed = math.hypot(
                self.ego.v_x * c - self.ego.v_y * s_, self.ego.v_y * c + self.ego.v_x * s_
            )
            proj = self._project_onto(route, (self.ego.p_x, self.ego.p_y), self.ego.phi, speed)
            if proj is not None:
                occupants.append((proj[0], proj[1], self.spec.ego.length / 2.0, True, -1))
        for idx, agent in enumerate(self.agents, start=1):
            if not agent.active or agent.spec.kind != "vehicle":
                continue
            if idx == route_idx:
                occupants.append((agent.s, agent.v, agent.half_len, False, agent.spec.agent_id))
            else:
                x, y, heading = agent.pose()
                proj = self._project_onto(route, (x, y), heading, agent.v)
                if proj is not None:
                    occupants.append((proj[0], proj[1], agent.half_len, False, agent.spec.agent_id))
        return occupants

    def _agent_accel(self, idx: int, agent: _Agent, idm: IdmParams) -> tuple[float, bool]:
        """(acceleration, ego_attributable) for one IDM vehicle."""
        route_idx = idx + 1
        candidates: list[tuple[float, bool]] = [
            (idm.a_max * (1.0 - (agent.v / max(agent.desired, 0.1)) ** idm.delta), False)
        ]
        # leader on my own route
        occupants = self._route_occupants(route_idx)
        best_gap = None
        for s_o, v_o, half_o, is_ego, a_id in occupants:
            if a_id == agent.spec.agent_id and not is_ego:
                continue
            ds = s_o - agent.s
            if 0.05 < ds <= LEADER_LOOKAHEAD:
                gap = ds - half_o - agent.half_len
                if best_gap is None or gap < best_gap[0]:
                    best_gap = (gap, v_o, is_ego)
        if best_gap is not None:
            gap, v_o, is_ego = best_gap
            candidates.append(
                (idm_acceleration(agent.v, agent.desired, gap, agent.v - v_o, idm), is_ego)
            )
        # red lights
        for s_stop, light_id in agent.stop_bindings:
            if self.spec.lights[light_id].state_at(self.t) != "red":
                continue
            ds = s_stop - agent.s
            if -0.5 < ds <= LEADER_LOOKAHEAD:
                gap = ds - agent.half_len
                candidates.append(
                    (idm_acceleration(agent.v, agent.desired, gap, agent.v, idm), False)
                )
        # crossing conflicts: the later arrival yields; always defer to the ego
        for s_c, other_route, s_c_other in agent.conflicts:
            ds = s_c - agent.s
            if not 0.0 < ds <= CONFLICT_LOOKAHEAD:
                continue
            t_self = ds / max(agent.v, 1.0)
            for s_o, v_o, half_o, is_ego, a_id in self._route_occupants(other_route):
                d_o = s_c_other - s_o
                if d_o < -CONFLICT_ZONE:
                    continue  # already cleared
                inside = abs(d_o) < CONFLICT_ZONE
                t_o = max(d_o, 0.0) / max(v_o, 1.0)
                if is_ego:
                    # yield only if the ego would arrive before this agent
                    # has cleared the conflict zone
                    t_clear = (ds + CONFLICT_ZONE) / max(agent.v, 1.0) + 1.0
                    must_yield = inside or (ds <= EGO_DEFER_DISTANCE and t_o < t_clear)
                else:
                    tie_break = 0.5 if a_id > agent.spec.agent_id else 0.0
                    must_yield = inside or t_o < t_self - tie_break
                if must_yield and ds > CONFLICT_STOP_MARGIN * 0.5:
                    gap = ds - CONFLICT_STOP_MARGIN - agent.half_len
                    candidates.append(
                        (idm_acceleration(agent.v, agent.desired, gap, agent.v, idm), is_ego)
                    )
        accel, from_ego = min(candidates, key=lambda c: c[0])
        return max(accel, HARD_BRAKE_LIMIT), from_ego

    def step(self, ego_control: ControlInput | None = None, idm: IdmParams | None = None):
        """Advance one sample; returns per-tick event tokens."""
        idm = idm or IdmParams()
        events: list[str] = []
        # background agents move on the pre-step ego/agent states
        plans = []
        for idx, agent in enumerate(self.agents):
            if not agent.active:
                plans.append(None)
                continue
            if self.t < agent.spec.start_time:
                plans.append((agent.v, agent.s, 0.0, False))
                continue
            if agent.spec.kind == "vru" or agent.spec.behavior == "scripted":
                v = agent.spec.speed
                s_new = min(agent.s + v * self.dyn.T_s, agent.spec.route.length)
                plans.append((v if s_new < agent.spec.route.length else 0.0, s_new, 0.0, False))
                continue
            accel, from_ego = self._agent_accel(idx, agent, idm)
            v_new = max(0.0, agent.v + accel * self.dyn.T_s)
            s_new = agent.s + v_new * self.dyn.T_s
            plans.append((v_new, s_new, accel, from_ego))

        for agent, plan in zip(self.agents, plans):
            if plan is None:
                continue
            v_new, s_new, accel, from_ego = plan
            agent.v = v_new
            agent.s = s_new
            agent.last_accel = accel
            if self.ego_enabled and accel < IB_THRESHOLD and from_ego:
                events.append(f"ib:{agent.spec.agent_id}")
            if agent.spec.kind == "vehicle" and agent.s >= agent.spec.route.length - 1e-6:
                agent.active = False  # left the map

        if self.ego_enabled and ego_control is not None:
            self.ego = dyn_step(self.ego, ego_control, self.dyn)

        self.t += self.dyn.T_s
        self.tick += 1

        if self.ego_enabled:
            for hit in self.collisions_now():
                events.append(f"col:{hit}")
            if self.ego_done_time is None and self.ego_completed():
                self.ego_done_time = self.t
                events.append("done")
        return events


def _ang_diff(a: float, b: float) -> float:
    return math.atan2(math.sin(a - b), math.cos(a - b))
