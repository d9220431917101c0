"""Ego-relative risk-zone classification.

Zones are bearing quadrants around the ego heading with a range cutoff:
front |theta| <= 45 deg, left theta in (45, 135), rear |theta| >= 135,
right theta in (-135, -45). The half-open boundaries make the in-range
partition exact.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from fsdrive.dynamics import EgoState, normalize_angle

OUT_OF_RANGE = "out_of_range"


@dataclass(frozen=True)
class ZoneGeometry:
    range_m: float = 50.0


def classify_zone(
    position: tuple[float, float], ego: EgoState, geometry: ZoneGeometry = ZoneGeometry()
) -> str:
    """Zone name for a point, or ``"out_of_range"`` beyond the cutoff."""
    dx = position[0] - ego.p_x
    dy = position[1] - ego.p_y
    if math.hypot(dx, dy) > geometry.range_m:
        return OUT_OF_RANGE
    theta = normalize_angle(math.atan2(dy, dx) - ego.phi)
    quarter = math.pi / 4
    if abs(theta) <= quarter:
        return "front"
    if abs(theta) >= 3 * quarter:
        return "rear"
    return "left" if theta > 0 else "right"
