"""Receding-horizon optimal control over the single-track model.

Direct single shooting: the decision variable is the stacked control
sequence, states are reconstructed by rolling the dynamics, and gradients
come from a discrete adjoint pass, so dynamic feasibility holds by
construction. Input boxes are enforced by the bounded quasi-Newton
optimizer; state boxes enter as smooth hinge penalties.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field as dc_field
from typing import Mapping

import numpy as np
from scipy.optimize import minimize

from fsdrive.attention.directive import AttentionDirective
from fsdrive.attention.zones import OUT_OF_RANGE, ZoneGeometry, classify_zone
from fsdrive.dynamics import ControlInput, DynamicsParams, EgoState, rollout
from fsdrive.fields import FieldParams, FieldScene, HorizonField
from fsdrive.geometry import Polyline

__all__ = [
    "SolverConfig",
    "Solution",
    "RouteLostError",
    "build_reference",
    "solve_step",
    "shift_warm_start",
    "ShootingProblem",
    "gate_scene",
]

ROUTE_LOST_DISTANCE = 50.0


class RouteLostError(RuntimeError):
    """Ego is too far from the route polyline to build a reference."""


@dataclass
class SolverConfig:
    N: int = 25
    Q: np.ndarray = dc_field(default_factory=lambda: np.array([1.0, 1.0, 0.5, 0.5, 0.1, 0.1]))
    R: np.ndarray = dc_field(default_factory=lambda: np.array([0.5, 10.0]))
    R_d: np.ndarray = dc_field(default_factory=lambda: np.array([1.0, 20.0]))
    u_min: np.ndarray = dc_field(default_factory=lambda: np.array([-6.0, -0.5]))
    u_max: np.ndarray = dc_field(default_factory=lambda: np.array([3.0, 0.5]))
    # forward driving only by default: a soft floor keeps v_x non-negative
    x_min: np.ndarray = dc_field(
        default_factory=lambda: np.array([-np.inf, -np.inf, -np.inf, 0.0, -np.inf, -np.inf])
    )
    x_max: np.ndarray = dc_field(default_factory=lambda: np.full(6, np.inf))
    state_penalty: float = 1e3
    max_iters: int = 60
    tol_grad: float = 1e-3
    tol_step: float = 1e-6

    def __post_init__(self) -> None:
        for name in ("Q", "R", "R_d", "u_min", "u_max", "x_min", "x_max"):
            setattr(self, name, np.asarray(getattr(self, name), dtype=float))
        if self.N < 2:
            raise ValueError("horizon must be at least 2 steps")
        if np.any(self.Q < 0) or np.any(self.R < 0) or np.any(self.R_d < 0):
            raise ValueError("weights must be non-negative")
        if np.any(self.u_min > self.u_max) or np.any(self.x_min > self.x_max):
            raise ValueError("bounds must be ordered")


@dataclass
class Solution:
    X: np.ndarray  # (N, 6) states, equals rollout(x0, U)
    U: np.ndarray  # (N, 2) controls within bounds
    cost: float
    iterations: int
    solve_time_ms: float
    converged: bool

    @property
    def first_control(self) -> ControlInput:
        return ControlInput(float(self.U[0, 0]), float(self.U[0, 1]))


def build_reference(
    route: Polyline,
    x: EgoState,
    v_ref: float,
    n_steps: int,
    t_s: float = 0.05,
    s_max: float | None = None,
) -> np.ndarray:
    """Reference states from the global route.

    Projects the ego onto the route and advances ``v_ref * t_s`` of arc
    length per step; reference heading follows the route tangent (unwrapped
    against the ego heading so tracking errors stay continuous). ``s_max``
    optionally caps progression, e.g. at a stop line while waiting.
    """
    s0, dist = route.project((x.p_x, x.p_y))
    if dist > ROUTE_LOST_DISTANCE:
        raise RouteLostError(f"ego is {dist:.1f} m from the route")
    ref = np.zeros((n_steps, 6))
    prev_heading = x.phi
    prev_s = s0
    for tau in range(n_steps):
        s = s0 + v_ref * t_s * (tau + 1)
        if s_max is not None:
            s = min(s, s_max)
        pos = route.point_at(s)
        heading = route.tangent_at(s)
        # unwrap against the previous reference heading
        while heading - prev_heading > math.pi:
            heading -= 2 * math.pi
        while heading - prev_heading < -math.pi:
            heading += 2 * math.pi
        ref[tau, 0:2] = pos
        ref[tau, 2] = heading
        ref[tau, 3] = max((s - prev_s) / t_s, 0.0) if s_max is not None else v_ref
        prev_heading = heading
        prev_s = s
    return ref


def gate_scene(
    scene: FieldScene,
    x0: EgoState,
    directive: AttentionDirective,
    predictions: Mapping[int, np.ndarray] | None,
    n_steps: int,
    zone_geometry: ZoneGeometry = ZoneGeometry(),
) -> tuple[np.ndarray, np.ndarray, list[int]]:
    """Admit entities whose risk zone is flagged; build per-step path arrays.

    Returns (vehicle_paths, vru_paths, admitted ids). Entities without a
    prediction hold their current position over the horizon.
    """

    def admit(entities):
        paths = []
        ids = []
        for e in entities:
            zone = classify_zone((e.x, e.y), x0, zone_geometry)
            if zone == OUT_OF_RANGE or not directive.zone_flag(zone):
                continue
            if predictions is not None and e.entity_id in predictions:
                path = np.asarray(predictions[e.entity_id], dtype=float)
                if path.shape != (n_steps, 2):
                    raise ValueError(
                        f"prediction for entity {e.entity_id} must be ({n_steps}, 2)"
                    )
            else:
                path = np.tile([e.x, e.y], (n_steps, 1))
            paths.append(path)
            ids.append(e.entity_id)
        if paths:
            return np.stack(paths), ids
        return np.zeros((0, n_steps, 2)), ids

    veh, veh_ids = admit(scene.vehicles)
    vru, vru_ids = admit(scene.vrus)
    return veh, vru, veh_ids + vru_ids


class ShootingProblem:
    """Fused objective/gradient of the shooting transcription.

    The value pass rolls the dynamics and accumulates tracking, effort,
    smoothness, field, and state-hinge terms; the gradient pass runs the
    discrete adjoint backwards through the analytic step Jacobians.
    """

    def __init__(
        self,
        x0: EgoState,
        ref: np.ndarray,
        cfg: SolverConfig,
        horizon_field: HorizonField,
        dyn: DynamicsParams,
    ) -> None:
        if ref.shape != (cfg.N, 6):
            raise ValueError(f"reference must be ({cfg.N}, 6)")
        self.x0 = x0
        self.ref = ref
        self.cfg = cfg
        self.field = horizon_field
        self.dyn = dyn
        self._has_state_box = bool(
            np.any(np.isfinite(cfg.x_min)) or np.any(np.isfinite(cfg.x_max))
        )

    # -- forward rollout keeping adjoint ingredients ------------------------

    def _roll(self, U: np.ndarray):
        p = self.dyn
        ts = p.T_s
        X = np.empty((self.cfg.N, 6))
        jac = []  # per step: dict of partials needed by the adjoint
        px, py, phi, vx, vy, om = self.x0.as_tuple()
        for tau in range(self.cfg.N):
            a, delta = U[tau]
            sin_phi = math.sin(phi)
            cos_phi = math.cos(phi)
            vxc = vx if vx > p.v_x_floor else p.v_x_floor
            live = vx > p.v_x_floor
            Dv = p.m_a * vxc - ts * (p.k_f + p.k_r)
            Dw = p.I_z * vxc - ts * (p.l_f**2 * p.k_f + p.l_r**2 * p.k_r)
            Nv = (
                p.m_a * vx * vy
                + ts * p.L_k * om
                - ts * p.k_f * delta * vx
                - ts * p.m_a * vx * vx * om
            )
            Nw = p.I_z * vx * om + ts * p.L_k * vy - ts * p.l_f * p.k_f * delta * vx
            px1 = px + ts * (vx * cos_phi - vy * sin_phi)
            py1 = py + ts * (vy * cos_phi + vx * sin_phi)
            phi1 = phi + ts * om
            vx1 = vx + ts * a
            vy1 = Nv / Dv
            om1 = Nw / Dw
            # partials (a13, a23, a14, a24, a15, a25, a54, a55, a56, a64,
            # a65, a66, b5, b6) of the step map wrt state and steering
            jac.append(
                (
                    ts * (-vx * sin_phi - vy * cos_phi),
                    ts * (-vy * sin_phi + vx * cos_phi),
                    ts * cos_phi,
                    ts * sin_phi,
                    -ts * sin_phi,
                    ts * cos_phi,
                    (
                        (p.m_a * vy - ts * p.k_f * delta - 2 * ts * p.m_a * vx * om) * Dv
                        - Nv * (p.m_a if live else 0.0)
                    )
                    / (Dv * Dv),
                    p.m_a * vx / Dv,
                    (ts * p.L_k - ts * p.m_a * vx * vx) / Dv,
                    (
                        (p.I_z * om - ts * p.l_f * p.k_f * delta) * Dw
                        - Nw * (p.I_z if live else 0.0)
                    )
                    / (Dw * Dw),
                    ts * p.L_k / Dw,
                    p.I_z * vx / Dw,
                    -ts * p.k_f * vx / Dv,
                    -ts * p.l_f * p.k_f * vx / Dw,
                )
            )
            px, py, phi, vx, vy, om = px1, py1, phi1, vx1, vy1, om1
            X[tau] = (px, py, phi, vx, vy, om)
        return X, jac

    def value_and_grad(self, u_flat: np.ndarray) -> tuple[float, np.ndarray]:
        cfg = self.cfg
        U = u_flat.reshape(cfg.N, 2)
        X, jac = self._roll(U)

        err = X - self.ref
        cost = float(np.sum(err**2 @ cfg.Q))
        g_x = 2.0 * err * cfg.Q[None, :]

        cost += float(np.sum(U**2 @ cfg.R))
        g_u = 2.0 * U * cfg.R[None, :]
        du = U[1:] - U[:-1]
        cost += float(np.sum(du**2 @ cfg.R_d))
        rate = 2.0 * du * cfg.R_d[None, :]
        g_u[1:] += rate
        g_u[:-1] -= rate

        f_vals, f_grads = self.field.evaluate(X)
        cost += float(f_vals.sum())
        g_x += f_grads

        if self._has_state_box:
            over = np.maximum(X - cfg.x_max[None, :], 0.0)
            under = np.maximum(cfg.x_min[None, :] - X, 0.0)
            over = np.where(np.isfinite(cfg.x_max)[None, :], over, 0.0)
            under = np.where(np.isfinite(cfg.x_min)[None, :], under, 0.0)
            cost += cfg.state_penalty * float(np.sum(over**2 + under**2))
            g_x += cfg.state_penalty * 2.0 * (over - under)

        # adjoint sweep
        grad = np.empty_like(U)
        gx_list = g_x.tolist()
        gu_list = g_u.tolist()
        ts = self.dyn.T_s
        lam = (0.0,) * 6
        for tau in range(cfg.N - 1, -1, -1):
            g0, g1, g2, g3, g4, g5 = gx_list[tau]
            if tau == cfg.N - 1:
                lam = (g0, g1, g2, g3, g4, g5)
            else:
                a13, a23, a14, a24, a15, a25, a54, a55, a56, a64, a65, a66, _, _ = jac[tau + 1]
                l0, l1, l2, l3, l4, l5 = lam
                lam = (
                    g0 + l0,
                    g1 + l1,
                    g2 + a13 * l0 + a23 * l1 + l2,
                    g3 + a14 * l0 + a24 * l1 + l3 + a54 * l4 + a64 * l5,
                    g4 + a15 * l0 + a25 * l1 + a55 * l4 + a65 * l5,
                    g5 + ts * l2 + a56 * l4 + a66 * l5,
                )
            b5, b6 = jac[tau][12], jac[tau][13]
            grad[tau, 0] = gu_list[tau][0] + ts * lam[3]
            grad[tau, 1] = gu_list[tau][1] + b5 * lam[4] + b6 * lam[5]
        return cost, grad.ravel()


def solve_step(
    x0: EgoState,
    directive: AttentionDirective,
    scene: FieldScene,
    predictions: Mapping[int, np.ndarray] | None,
    ref: np.ndarray,
    cfg: SolverConfig,
    warm: Solution | None = None,
    *,
    dyn: DynamicsParams | None = None,
    field_params: FieldParams | None = None,
    zone_geometry: ZoneGeometry = ZoneGeometry(),
) -> Solution:
    """Solve the gated OCP from the current state.

    Deterministic given identical inputs and warm start. On non-convergence
    the best iterate is returned with ``converged=False``; the runtime
    decides whether to reuse it or fall back to comfort braking.
    """
    t_start = time.perf_counter()
    dyn = dyn or DynamicsParams()
    field_params = field_params or FieldParams()

    veh_paths, vru_paths, _ = gate_scene(
        scene, x0, directive, predictions, cfg.N, zone_geometry
    )
    hf = HorizonField(
        field_params,
        mks=directive.mks,
        btw=directive.btw,
        vehicle_paths=veh_paths,
        vru_paths=vru_paths,
        markings=scene.markings,
        stop_line=scene.stop_line,
    )
    problem = ShootingProblem(x0, ref, cfg, hf, dyn)

    if warm is not None and warm.U.shape == (cfg.N, 2):
        u0 = warm.U.copy()
    else:
        u0 = np.zeros((cfg.N, 2))
    u0 = np.clip(u0, cfg.u_min[None, :], cfg.u_max[None, :])

    bounds = [(cfg.u_min[k % 2], cfg.u_max[k % 2]) for k in range(cfg.N * 2)]
    warm_cost, _ = problem.value_and_grad(u0.ravel())
    result = minimize(
        problem.value_and_grad,
        u0.ravel(),
        jac=True,
        method="L-BFGS-B",
        bounds=bounds,
        options={
            "maxiter": cfg.max_iters,
            "gtol": cfg.tol_grad,
            "ftol": cfg.tol_step,
        },
    )
    u_opt = np.clip(result.x.reshape(cfg.N, 2), cfg.u_min[None, :], cfg.u_max[None, :])
    cost, _ = problem.value_and_grad(u_opt.ravel())
    converged = bool(result.success)
    if cost > warm_cost + 1e-9:
        # never hand back something worse than the warm start
        u_opt = u0
        cost = warm_cost
        converged = False

    states = rollout(x0, [ControlInput(float(a), float(d)) for a, d in u_opt], dyn)
    X = np.array([s.as_tuple() for s in states])
    ms = (time.perf_counter() - t_start) * 1e3
    return Solution(
        X=X,
        U=u_opt,
        cost=float(cost),
        iterations=int(result.nit),
        solve_time_ms=ms,
        converged=converged,
    )


def shift_warm_start(prev: Solution) -> Solution:
    """Shift controls one step and duplicate the last one."""
    U = np.vstack([prev.U[1:], prev.U[-1:]])
    return Solution(
        X=prev.X.copy(),
        U=U,
        cost=prev.cost,
        iterations=0,
        solve_time_ms=0.0,
        converged=prev.converged,
    )
