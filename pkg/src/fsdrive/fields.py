"""Potential-function families and the attention-gated composite field.

Four families shape the motion-planning cost: lane markings (crossable and
non-crossable variants of the lateral-distance potential), surrounding
vehicles (two-point ellipsoid wrapping), vulnerable road users (circular),
and red traffic lights (stop-line plus lateral confinement). The composite
sums only the terms the slow-system directive has switched on.

Sign convention for the lateral distance: ``LaneMarkingRef.phi`` is the
reflected lane tangent (``-tangent_angle``) so the (sin, cos) projection in
the distance formula recovers the ego's left-lateral offset for every road
heading; ``sigma=-1`` then selects the left marking and ``sigma=+1`` the
right one, and the distance grows as the ego moves away from that marking.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field
from typing import Mapping, Protocol, Sequence

import numpy as np

from fsdrive.attention.directive import AttentionDirective
from fsdrive.attention.zones import OUT_OF_RANGE, ZoneGeometry, classify_zone
from fsdrive.dynamics import EgoState
from fsdrive.geometry import Polyline

D_EPS = 0.05


@dataclass(frozen=True)
class LaneMarkingRef:
    """Nearest centerline reference for one lane marking."""

    p_x: float
    p_y: float
    phi: float
    sigma: int  # -1 left marking, +1 right marking (see module docstring)
    crossable: bool = True

    def __post_init__(self) -> None:
        if self.sigma not in (-1, 1):
            raise ValueError("sigma must be -1 or +1")


@dataclass
class FieldParams:
    """Intensities, exponents and geometry of all potential families."""

    a_NR: float = 100.0
    b_NR: float = 2.0
    a_CR: float = 10.0
    b_CR: float = 0.5
    a_V: float = 500.0
    b_V: float = 1.0
    a_VRU: float = 500.0
    b_VRU: float = 1.0
    a_TL1: float = 200.0
    a_TL2: float = 1000.0
    w_R: float = 3.5
    r_a: float = 2.4
    r_b: float = 1.0
    r_offset: float = 0.25
    # ego evaluation-point offsets along the heading (front/rear axle midpoints)
    pt_front: float = 1.287
    pt_rear: float = 1.603
    d_eps: float = D_EPS

    # inner/outer breakpoints of the non-crossable marking potential
    s_inner: float = dc_field(default=0.1, repr=False)
    s_outer: float = dc_field(default=1.5, repr=False)

    def __post_init__(self) -> None:
        for name in ("a_NR", "b_NR", "a_CR", "a_V", "b_V", "a_VRU", "b_VRU", "a_TL1", "a_TL2"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.w_R <= 0 or self.r_a <= 0 or self.r_b <= 0:
            raise ValueError("geometry parameters must be positive")

    @property
    def e_s(self) -> float:
        """Offset making the non-crossable potential vanish at the outer edge."""
        return self.a_NR / self.s_outer**self.b_NR

    @property
    def m_s(self) -> float:
        """Plateau value of the non-crossable potential inside the inner edge."""
        return self.a_NR / self.s_inner**self.b_NR - self.e_s

    @property
    def r_b_eff(self) -> float:
        """Laterally inflated minor semi-axis used by the composite field."""
        return self.r_b + self.r_offset


@dataclass(frozen=True)
class TrafficLightContext:
    """Red-light indicator and clamped ego distances for the stop potential."""

    beta: int
    d_x_ev: float
    d_yl_ev: float
    d_yr_ev: float

    def __post_init__(self) -> None:
        if self.beta not in (0, 1):
            raise ValueError("beta must be 0 or 1")
        for name in ("d_x_ev", "d_yl_ev", "d_yr_ev"):
            object.__setattr__(self, name, max(getattr(self, name), D_EPS))


# ---------------------------------------------------------------------------
# individual potential families


def lateral_distance(x: EgoState, mk: LaneMarkingRef, w_R: float) -> float:
    """Lateral distance from the ego to a lane marking."""
    dx = x.p_x - mk.p_x
    dy = x.p_y - mk.p_y
    return mk.sigma * (math.sin(mk.phi) * dx + math.cos(mk.phi) * dy) + w_R / 2.0


def f_crossable(s_r: float, params: FieldParams) -> float:
    """Quadratic well pulling the ego back toward the lane center."""
    if s_r < params.b_CR:
        return params.a_CR * (s_r - params.b_CR) ** 2
    return 0.0


def f_noncrossable(s_r: float, params: FieldParams) -> float:
    """Repulsive barrier with a plateau inside and a smooth cutoff outside."""
    if s_r <= params.s_inner:
        return params.m_s
    if s_r < params.s_outer:
        return params.a_NR / s_r**params.b_NR - params.e_s
    return 0.0


def _saturate_delta(dx: float, dy: float, d_eps: float) -> tuple[float, float]:
    """Rescale a separation vector to length ``d_eps`` if it is shorter."""
    r = math.hypot(dx, dy)
    if r >= d_eps:
        return dx, dy
    if r == 0.0:
        return d_eps, 0.0
    scale = d_eps / r
    return dx * scale, dy * scale


def f_vehicle(
    ego_pts: Sequence[tuple[float, float]],
    obstacle_pos: tuple[float, float],
    params: FieldParams,
    r_b: float | None = None,
) -> float:
    """Ellipsoid-wrapped repulsion summed over the ego evaluation points.

    ``r_b`` overrides the minor semi-axis (the composite passes the inflated
    value). Separations below ``d_eps`` saturate instead of diverging.
    """
    rb = params.r_b if r_b is None else r_b
    ra = params.r_a
    numerator = params.a_V * (ra * rb) ** 2
    total = 0.0
    for px, py in ego_pts:
        dx, dy = _saturate_delta(px - obstacle_pos[0], py - obstacle_pos[1], params.d_eps)
        q = rb**2 * dx**2 + ra**2 * dy**2
        total += numerator / q**params.b_V
    return total


def f_vru(
    ego_pos: tuple[float, float], vru_pos: tuple[float, float], params: FieldParams
) -> float:
    """Circular repulsion centered on a vulnerable road user."""
    dx, dy = _saturate_delta(ego_pos[0] - vru_pos[0], ego_pos[1] - vru_pos[1], params.d_eps)
    return params.a_VRU / (dx**2 + dy**2) ** params.b_VRU


def f_traffic_light(ctx: TrafficLightContext, params: FieldParams) -> float:
    """Stop-line repulsion plus lateral confinement, active only on red."""
    if ctx.beta == 0:
        return 0.0
    return (
        params.a_TL1 / ctx.d_x_ev
        + params.a_TL2 / ctx.d_yl_ev
        + params.a_TL2 / ctx.d_yr_ev
    )


def ego_evaluation_points(x: EgoState, params: FieldParams) -> list[tuple[float, float]]:
    """Front/rear axle midpoints used by the vehicle potential."""
    c, s = math.cos(x.phi), math.sin(x.phi)
    return [
        (x.p_x + params.pt_front * c, x.p_y + params.pt_front * s),
        (x.p_x - params.pt_rear * c, x.p_y - params.pt_rear * s),
    ]


# ---------------------------------------------------------------------------
# scene description consumed by the composite


@dataclass(frozen=True)
class FieldEntity:
    entity_id: int
    kind: str  # "vehicle" | "vru"
    x: float
    y: float


class MarkingProvider(Protocol):
    def refs_at(
        self, p_x: float, p_y: float
    ) -> tuple[LaneMarkingRef | None, LaneMarkingRef | None]: ...


@dataclass(frozen=True)
class FixedMarkings:
    """Constant (left, right) marking references, mainly for tests."""

    left: LaneMarkingRef | None = None
    right: LaneMarkingRef | None = None

    def refs_at(self, p_x, p_y):
        return self.left, self.right


class LaneMarkings:
    """Marking references recomputed from the lane centerline per query point."""

    def __init__(
        self,
        centerline: Polyline,
        width: float,
        left_crossable: bool = True,
        right_crossable: bool = True,
    ) -> None:
        self.centerline = centerline
        self.width = width
        self.left_crossable = left_crossable
        self.right_crossable = right_crossable

    def refs_at(self, p_x, p_y):
        s, _ = self.centerline.project((p_x, p_y))
        base = self.centerline.point_at(s)
        ang = self.centerline.tangent_at(s)
        left = LaneMarkingRef(base[0], base[1], -ang, -1, self.left_crossable)
        right = LaneMarkingRef(base[0], base[1], -ang, +1, self.right_crossable)
        return left, right

    def batch_geometry(self, pts: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """(left offsets d, tangent angles) for an (N, 2) array of points."""
        s_arr, _ = self.centerline.project_many(pts)
        base = self.centerline.points_at(s_arr)
        ang = self.centerline.tangents_at(s_arr)
        rel = pts - base
        d = -np.sin(ang) * rel[:, 0] + np.cos(ang) * rel[:, 1]
        return d, ang


@dataclass(frozen=True)
class StopLineGeometry:
    """Red indicator plus stop-line position and approach heading."""

    beta: int
    p_x: float
    p_y: float
    heading: float


@dataclass(frozen=True)
class FieldScene:
    """Everything the composite field needs besides the ego state."""

    vehicles: tuple[FieldEntity, ...] = ()
    vrus: tuple[FieldEntity, ...] = ()
    markings: MarkingProvider | None = None
    stop_line: StopLineGeometry | None = None


# ---------------------------------------------------------------------------
# attention-gated composite


def _gated_entities(
    entities: tuple[FieldEntity, ...],
    x: EgoState,
    directive: AttentionDirective,
    zone_geometry: ZoneGeometry,
) -> list[FieldEntity]:
    kept = []
    for e in entities:
        zone = classify_zone((e.x, e.y), x, zone_geometry)
        if zone == OUT_OF_RANGE:
            continue
        if directive.zone_flag(zone):
            kept.append(e)
    return kept


def _entity_position(e: FieldEntity, predictions) -> tuple[float, float]:
    if predictions is not None and e.entity_id in predictions:
        px, py = predictions[e.entity_id]
        return float(px), float(py)
    return e.x, e.y


def _tl_context(
    scene: FieldScene, x: EgoState, directive: AttentionDirective, params: FieldParams
) -> TrafficLightContext | None:
    sl = scene.stop_line
    if sl is None:
        return None
    d_x = math.cos(sl.heading) * (sl.p_x - x.p_x) + math.sin(sl.heading) * (sl.p_y - x.p_y)
    d_yl = d_yr = params.w_R / 2.0
    if scene.markings is not None:
        left, right = scene.markings.refs_at(x.p_x, x.p_y)
        if left is not None:
            d_yl = lateral_distance(x, left, params.w_R)
        if right is not None:
            d_yr = lateral_distance(x, right, params.w_R)
    return TrafficLightContext(beta=sl.beta, d_x_ev=d_x, d_yl_ev=d_yl, d_yr_ev=d_yr)


def total_field(
    scene: FieldScene,
    x: EgoState,
    directive: AttentionDirective,
    predictions: Mapping[int, tuple[float, float]] | None,
    params: FieldParams,
    zone_geometry: ZoneGeometry = ZoneGeometry(),
) -> float:
    """Attention-gated sum of all active potential terms at one state.

    Vehicles and VRUs contribute only when their risk zone is flagged;
    markings switch between the crossable and non-crossable family per the
    directive; the traffic-light term is gated by the block-to-wait flag.
    Obstacle positions come from ``predictions`` when present (keyed by
    entity id for the queried horizon step), else from the scene.
    """
    value = 0.0
    ego_pts = ego_evaluation_points(x, params)
    for e in _gated_entities(scene.vehicles, x, directive, zone_geometry):
        value += f_vehicle(ego_pts, _entity_position(e, predictions), params, r_b=params.r_b_eff)
    ego_pos = (x.p_x, x.p_y)
    for e in _gated_entities(scene.vrus, x, directive, zone_geometry):
        value += f_vru(ego_pos, _entity_position(e, predictions), params)
    if scene.markings is not None:
        left, right = scene.markings.refs_at(x.p_x, x.p_y)
        for ref, crossable in ((left, directive.mks[0]), (right, directive.mks[1])):
            if ref is None:
                continue
            s_r = lateral_distance(x, ref, params.w_R)
            value += f_crossable(s_r, params) if crossable else f_noncrossable(s_r, params)
    if directive.btw:
        ctx = _tl_context(scene, x, directive, params)
        if ctx is not None:
            value += f_traffic_light(ctx, params)
    return value


def field_gradient(
    scene: FieldScene,
    x: EgoState,
    directive: AttentionDirective,
    predictions: Mapping[int, tuple[float, float]] | None,
    params: FieldParams,
    zone_geometry: ZoneGeometry = ZoneGeometry(),
) -> np.ndarray:
    """Analytic gradient of ``total_field`` w.r.t. the 6-vector state."""
    grad = np.zeros(6)
    c, s = math.cos(x.phi), math.sin(x.phi)
    ego_pts = ego_evaluation_points(x, params)
    offsets = (params.pt_front, -params.pt_rear)
    rb = params.r_b_eff
    ra = params.r_a
    numerator = params.a_V * (ra * rb) ** 2
    for e in _gated_entities(scene.vehicles, x, directive, zone_geometry):
        ox, oy = _entity_position(e, predictions)
        for (px, py), off in zip(ego_pts, offsets):
            dx, dy = px - ox, py - oy
            if math.hypot(dx, dy) < params.d_eps:
                continue  # saturated plateau
            q = rb**2 * dx**2 + ra**2 * dy**2
            dF_dq = -params.b_V * numerator / q ** (params.b_V + 1)
            qx = 2 * rb**2 * dx
            qy = 2 * ra**2 * dy
            grad[0] += dF_dq * qx
            grad[1] += dF_dq * qy
            grad[2] += dF_dq * (qx * (-off * s) + qy * (off * c))
    for e in _gated_entities(scene.vrus, x, directive, zone_geometry):
        ox, oy = _entity_position(e, predictions)
        dx, dy = x.p_x - ox, x.p_y - oy
        if math.hypot(dx, dy) < params.d_eps:
            continue
        q = dx**2 + dy**2
        dF_dq = -params.b_VRU * params.a_VRU / q ** (params.b_VRU + 1)
        grad[0] += dF_dq * 2 * dx
        grad[1] += dF_dq * 2 * dy
    if scene.markings is not None:
        left, right = scene.markings.refs_at(x.p_x, x.p_y)
        for ref, crossable in ((left, directive.mks[0]), (right, directive.mks[1])):
            if ref is None:
                continue
            s_r = lateral_distance(x, ref, params.w_R)
            if crossable:
                dF_ds = 2 * params.a_CR * (s_r - params.b_CR) if s_r < params.b_CR else 0.0
            elif params.s_inner < s_r < params.s_outer:
                dF_ds = -params.a_NR * params.b_NR / s_r ** (params.b_NR + 1)
            else:
                dF_ds = 0.0
            grad[0] += dF_ds * ref.sigma * math.sin(ref.phi)
            grad[1] += dF_ds * ref.sigma * math.cos(ref.phi)
    if directive.btw and scene.stop_line is not None:
        sl = scene.stop_line
        ctx = _tl_context(scene, x, directive, params)
        if ctx is not None and ctx.beta == 1:
            raw_dx = math.cos(sl.heading) * (sl.p_x - x.p_x) + math.sin(sl.heading) * (
                sl.p_y - x.p_y
            )
            if raw_dx > params.d_eps:
                coeff = -params.a_TL1 / ctx.d_x_ev**2
                grad[0] += coeff * (-math.cos(sl.heading))
                grad[1] += coeff * (-math.sin(sl.heading))
            if scene.markings is not None:
                left, right = scene.markings.refs_at(x.p_x, x.p_y)
                for ref, d_val in ((left, ctx.d_yl_ev), (right, ctx.d_yr_ev)):
                    if ref is None:
                        continue
                    raw = lateral_distance(x, ref, params.w_R)
                    if raw > params.d_eps:
                        coeff = -params.a_TL2 / d_val**2
                        grad[0] += coeff * ref.sigma * math.sin(ref.phi)
                        grad[1] += coeff * ref.sigma * math.cos(ref.phi)
    return grad


# ---------------------------------------------------------------------------
# vectorized horizon evaluation for the optimizer


class HorizonField:
    """Field value and state-gradient along a whole planned horizon.

    The caller supplies already-gated obstacle paths: ``vehicle_paths`` and
    ``vru_paths`` are (n, N, 2) arrays of predicted positions per horizon
    step. Marking references are recomputed per step from the lane geometry.
    Produces the same numbers as summing ``total_field`` per step with
    all-ones zone flags over the gated set.
    """

    def __init__(
        self,
        params: FieldParams,
        mks: tuple[int, int],
        btw: int,
        vehicle_paths: np.ndarray | None = None,
        vru_paths: np.ndarray | None = None,
        markings: LaneMarkings | FixedMarkings | None = None,
        stop_line: StopLineGeometry | None = None,
    ) -> None:
        self.params = params
        self.mks = mks
        self.btw = btw
        self.vehicle_paths = vehicle_paths if vehicle_paths is not None else np.zeros((0, 0, 2))
        self.vru_paths = vru_paths if vru_paths is not None else np.zeros((0, 0, 2))
        self.markings = markings
        self.stop_line = stop_line

    def _marking_sides(
        self, pts: np.ndarray
    ) -> list[tuple[np.ndarray, np.ndarray, int]]:
        """Per existing side: (s_R array (N,), ds/dpos array (N, 2), crossable flag)."""
        p = self.params
        n = len(pts)
        sides: list[tuple[np.ndarray, np.ndarray, int]] = []
        if self.markings is None:
            return sides
        if isinstance(self.markings, LaneMarkings):
            d, ang = self.markings.batch_geometry(pts)
            for sigma, crossable in ((-1, self.mks[0]), (1, self.mks[1])):
                s_r = sigma * d + p.w_R / 2.0
                ds_dp = sigma * np.stack([-np.sin(ang), np.cos(ang)], axis=1)
                sides.append((s_r, ds_dp, crossable))
            return sides
        left, right = self.markings.refs_at(0.0, 0.0)
        for ref, crossable in ((left, self.mks[0]), (right, self.mks[1])):
            if ref is None:
                continue
            rel = pts - np.array([ref.p_x, ref.p_y])
            bracket = math.sin(ref.phi) * rel[:, 0] + math.cos(ref.phi) * rel[:, 1]
            s_r = ref.sigma * bracket + p.w_R / 2.0
            ds_dp = np.tile(
                ref.sigma * np.array([math.sin(ref.phi), math.cos(ref.phi)]), (n, 1)
            )
            sides.append((s_r, ds_dp, crossable))
        return sides

    def evaluate(self, X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Return per-step values (N,) and gradients (N, 6) for states X (N, 6)."""
        p = self.params
        n_steps = X.shape[0]
        vals = np.zeros(n_steps)
        grads = np.zeros((n_steps, 6))
        pos = X[:, :2]
        phi = X[:, 2]
        c, s = np.cos(phi), np.sin(phi)

        if self.vehicle_paths.shape[0]:
            rb, ra = p.r_b_eff, p.r_a
            numerator = p.a_V * (ra * rb) ** 2
            offsets = np.array([p.pt_front, -p.pt_rear])
            pts = pos[:, None, :] + offsets[None, :, None] * np.stack([c, s], axis=1)[:, None, :]
            delta = pts[None, :, :, :] - self.vehicle_paths[:, :, None, :]  # (n_v, N, 2, 2)
            dxx, dyy = delta[..., 0], delta[..., 1]
            r = np.hypot(dxx, dyy)
            live = r >= p.d_eps
            scale = np.where(live, 1.0, p.d_eps / np.maximum(r, 1e-12))
            dxx, dyy = dxx * scale, dyy * scale
            q = rb**2 * dxx**2 + ra**2 * dyy**2
            f = numerator / q**p.b_V
            vals += f.sum(axis=(0, 2))
            dF_dq = np.where(live, -p.b_V * f / q, 0.0)
            qx = 2 * rb**2 * dxx
            qy = 2 * ra**2 * dyy
            grads[:, 0] += (dF_dq * qx).sum(axis=(0, 2))
            grads[:, 1] += (dF_dq * qy).sum(axis=(0, 2))
            dphi = qx * (-offsets[None, None, :] * s[None, :, None]) + qy * (
                offsets[None, None, :] * c[None, :, None]
            )
            grads[:, 2] += (dF_dq * dphi).sum(axis=(0, 2))

        if self.vru_paths.shape[0]:
            delta = pos[None, :, :] - self.vru_paths  # (n_p, N, 2)
            r = np.hypot(delta[..., 0], delta[..., 1])
            live = r >= p.d_eps
            scale = np.where(live, 1.0, p.d_eps / np.maximum(r, 1e-12))
            delta = delta * scale[..., None]
            q = (delta**2).sum(axis=-1)
            f = p.a_VRU / q**p.b_VRU
            vals += f.sum(axis=0)
            dF_dq = np.where(live, -p.b_VRU * f / q, 0.0)
            grads[:, 0] += (dF_dq * 2 * delta[..., 0]).sum(axis=0)
            grads[:, 1] += (dF_dq * 2 * delta[..., 1]).sum(axis=0)

        sides = self._marking_sides(pos)
        for s_r, ds_dp, crossable in sides:
            if crossable:
                active = s_r < p.b_CR
                vals += np.where(active, p.a_CR * (s_r - p.b_CR) ** 2, 0.0)
                dF_ds = np.where(active, 2 * p.a_CR * (s_r - p.b_CR), 0.0)
            else:
                inner = s_r <= p.s_inner
                mid = (~inner) & (s_r < p.s_outer)
                sr_safe = np.maximum(s_r, p.s_inner)
                vals += np.where(
                    inner, p.m_s, np.where(mid, p.a_NR / sr_safe**p.b_NR - p.e_s, 0.0)
                )
                dF_ds = np.where(mid, -p.a_NR * p.b_NR / sr_safe ** (p.b_NR + 1), 0.0)
            grads[:, :2] += dF_ds[:, None] * ds_dp

        if self.btw and self.stop_line is not None and self.stop_line.beta == 1:
            sl = self.stop_line
            t_hat = np.array([math.cos(sl.heading), math.sin(sl.heading)])
            raw_dx = (np.array([sl.p_x, sl.p_y]) - pos) @ t_hat
            d_x = np.maximum(raw_dx, p.d_eps)
            vals += p.a_TL1 / d_x
            live = raw_dx > p.d_eps
            grads[:, :2] += np.where(live, -p.a_TL1 / d_x**2, 0.0)[:, None] * (-t_hat)[None, :]
            for s_r, ds_dp, _ in sides:
                d_y = np.maximum(s_r, p.d_eps)
                vals += p.a_TL2 / d_y
                live = s_r > p.d_eps
                coeff = np.where(live, -p.a_TL2 / d_y**2, 0.0)
                grads[:, :2] += coeff[:, None] * ds_dp
            # missing sides fall back to the half-lane default distance
            vals += (2 - len(sides)) * p.a_TL2 / max(p.w_R / 2.0, p.d_eps)

        return vals, grads
