"""Ground-truth scene snapshot handed to the slow system."""

from __future__ import annotations

from dataclasses import dataclass, field

from fsdrive.dynamics import EgoState

PERSPECTIVES = ("front", "left", "right", "rear")


@dataclass(frozen=True)
class EntityObservation:
    entity_id: int
    kind: str  # "vehicle" | "vru"
    x: float
    y: float
    heading: float
    speed: float


@dataclass(frozen=True)
class LightObservation:
    light_id: str
    state: str  # "red" | "yellow" | "green"
    distance_m: float  # along the ego route to the stop line


@dataclass(frozen=True)
class CameraImage:
    camera: str  # one of PERSPECTIVES
    b64: str


@dataclass(frozen=True)
class SceneSnapshot:
    """Either camera images, a structured entity table, or both.

    In simulation the table is always present and images are absent; a live
    deployment would populate ``images`` instead.
    """

    timestamp: float
    ego: EgoState
    entities: tuple[EntityObservation, ...] = ()
    lights: tuple[LightObservation, ...] = ()
    marking_left_crossable: bool = True
    marking_right_crossable: bool = True
    scenario_kind: str = "others"
    images: tuple[CameraImage, ...] = field(default=())
