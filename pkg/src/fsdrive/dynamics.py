"""Discrete-time nonlinear single-track vehicle model and rollout.

The same update is used by the trajectory optimizer (as the shooting model)
and by the simulator (as the ego plant), so the model-plant pair is exact by
construction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

__all__ = [
    "EgoState",
    "ControlInput",
    "DynamicsParams",
    "DynamicsError",
    "step",
    "rollout",
    "normalize_angle",
]


class DynamicsError(ValueError):
    """Raised for non-finite states or a degenerate dynamics denominator."""


def normalize_angle(angle: float) -> float:
    """Wrap an angle to (-pi, pi]."""
    wrapped = math.atan2(math.sin(angle), math.cos(angle))
    # atan2 returns [-pi, pi]; fold the open end onto +pi.
    if wrapped == -math.pi:
        wrapped = math.pi
    return wrapped


@dataclass(frozen=True)
class EgoState:
    """Planar vehicle state: position, heading, body-frame velocities, yaw rate."""

    p_x: float
    p_y: float
    phi: float
    v_x: float
    v_y: float
    omega: float

    def as_tuple(self) -> tuple[float, float, float, float, float, float]:
        return (self.p_x, self.p_y, self.phi, self.v_x, self.v_y, self.omega)

    def is_finite(self) -> bool:
        return all(math.isfinite(v) for v in self.as_tuple())


@dataclass(frozen=True)
class ControlInput:
    """Longitudinal acceleration (m/s^2) and front steering angle (rad)."""

    a: float
    delta: float

    def as_tuple(self) -> tuple[float, float]:
        return (self.a, self.delta)


@dataclass
class DynamicsParams:
    """Single-track model parameters.

    ``L_k = l_f*k_f - l_r*k_r`` is derived and recomputed on construction and
    via :meth:`refresh`. ``v_x_floor`` regularizes the lateral/yaw update
    denominators at low speed: denominators are evaluated with
    ``max(v_x, v_x_floor)`` while numerators keep the true ``v_x``, so the
    model is unchanged at driving speeds and bounded at standstill.
    """

    k_f: float = -102129.83
    k_r: float = -89999.98
    l_f: float = 1.287
    l_r: float = 1.603
    m_a: float = 1699.98
    I_z: float = 2699.98
    T_s: float = 0.05
    v_x_floor: float = 0.5
    L_k: float = field(init=False)

    def __post_init__(self) -> None:
        if self.m_a <= 0 or self.I_z <= 0:
            raise ValueError("mass and yaw inertia must be positive")
        if self.l_f <= 0 or self.l_r <= 0:
            raise ValueError("axle distances must be positive")
        if self.T_s <= 0:
            raise ValueError("time step must be positive")
        self.refresh()

    def refresh(self) -> None:
        """Recompute the derived yaw-coupling term after editing k/l values."""
        self.L_k = self.l_f * self.k_f - self.l_r * self.k_r


_DENOM_EPS = 1e-9


def step(x: EgoState, u: ControlInput, p: DynamicsParams) -> EgoState:
    """Advance the state one sample.

    Raises:
        DynamicsError: non-finite input state, or a lateral/yaw denominator
            whose magnitude stays below 1e-9 even after the low-speed clamp.
    """
    if not x.is_finite():
        raise DynamicsError(f"non-finite state: {x}")

    sin_phi = math.sin(x.phi)
    cos_phi = math.cos(x.phi)
    ts = p.T_s

    # Denominators use the clamped longitudinal speed; numerators do not.
    v_x_den = max(x.v_x, p.v_x_floor)
    den_vy = p.m_a * v_x_den - ts * (p.k_f + p.k_r)
    den_om = p.I_z * v_x_den - ts * (p.l_f**2 * p.k_f + p.l_r**2 * p.k_r)
    if abs(den_vy) < _DENOM_EPS or abs(den_om) < _DENOM_EPS:
        raise DynamicsError(
            f"degenerate dynamics denominator at v_x={x.v_x} (clamped {v_x_den})"
        )

    p_x = x.p_x + ts * (x.v_x * cos_phi - x.v_y * sin_phi)
    p_y = x.p_y + ts * (x.v_y * cos_phi + x.v_x * sin_phi)
    phi = normalize_angle(x.phi + ts * x.omega)
    v_x = x.v_x + ts * u.a
    v_y = (
        p.m_a * x.v_x * x.v_y
        + ts * p.L_k * x.omega
        - ts * p.k_f * u.delta * x.v_x
        - ts * p.m_a * x.v_x**2 * x.omega
    ) / den_vy
    omega = (
        p.I_z * x.v_x * x.omega
        + ts * p.L_k * x.v_y
        - ts * p.l_f * p.k_f * u.delta * x.v_x
    ) / den_om

    return EgoState(p_x, p_y, phi, v_x, v_y, omega)


def rollout(
    x0: EgoState, controls: list[ControlInput] | tuple[ControlInput, ...], p: DynamicsParams
) -> list[EgoState]:
    """Apply ``step`` repeatedly; element ``tau`` is the state after ``controls[tau]``."""
    if len(controls) < 1:
        raise ValueError("rollout needs at least one control")
    states: list[EgoState] = []
    x = x0
    for tau, u in enumerate(controls):
        try:
            x = step(x, u, p)
        except DynamicsError as exc:
            raise DynamicsError(f"rollout failed at step {tau}: {exc}") from exc
        states.append(x)
    return states
