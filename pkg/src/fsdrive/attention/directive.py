"""Structured slow-system output and its tolerant parser.

The slow system answers with a dictionary carrying scene labels, four
risk-zone flags, per-side lane-marking crossability, and a block-to-wait
flag. Providers wrap the dictionary in prose, so parsing scans the reply for
the first JSON object that validates.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

SCENE_LABELS = ("intersection", "roundabout", "straight urban road", "highway", "others")
ZONE_NAMES = ("front", "left", "right", "rear")


class DirectiveParseError(ValueError):
    """No JSON object in the reply satisfied the directive schema."""


@dataclass(frozen=True)
class AttentionDirective:
    """Slow-system decision consumed by the fast control loop.

    zones: at-risk flags in (front, left, right, rear) order.
    mks:   (left, right) lane-marking crossability, 1 = crossable.
    btw:   block-to-wait flag; activates the traffic-light potential.
    """

    scene: tuple[str, ...]
    zones: tuple[int, int, int, int]
    mks: tuple[int, int]
    btw: int

    def __post_init__(self) -> None:
        if not self.scene:
            raise ValueError("scene labels must be non-empty")
        for label in self.scene:
            if label not in SCENE_LABELS:
                raise ValueError(f"unknown scene label {label!r}")
        if len(self.zones) != 4 or any(z not in (0, 1) for z in self.zones):
            raise ValueError("zones must be 4 flags in {0,1}")
        if len(self.mks) != 2 or any(m not in (0, 1) for m in self.mks):
            raise ValueError("mks must be 2 flags in {0,1}")
        if self.btw not in (0, 1):
            raise ValueError("btw must be 0 or 1")

    @classmethod
    def all_at_risk(cls) -> "AttentionDirective":
        """Conservative fail-safe: every zone at risk, markings non-crossable,
        block-to-wait armed (the traffic-light term is still zero unless a red
        light is actually sensed)."""
        return cls(scene=("others",), zones=(1, 1, 1, 1), mks=(0, 0), btw=1)

    def zone_flag(self, zone: str) -> int:
        return self.zones[ZONE_NAMES.index(zone)]

    def to_json(self) -> str:
        return json.dumps(
            {
                "scene": list(self.scene),
                "zones": list(self.zones),
                "mks": list(self.mks),
                "btw": self.btw,
            }
        )


def _coerce_flag(value) -> int:
    if isinstance(value, bool):
        return int(value)
    if isinstance(value, int) and value in (0, 1):
        return value
    raise ValueError(f"flag must be boolean or 0/1, got {value!r}")


def _directive_from_payload(payload) -> AttentionDirective:
    if not isinstance(payload, dict):
        raise ValueError("directive payload must be an object")
    missing = {"scene", "zones", "mks", "btw"} - payload.keys()
    if missing:
        raise ValueError(f"missing keys: {sorted(missing)}")
    scene = payload["scene"]
    if isinstance(scene, str):
        scene = [scene]
    if not isinstance(scene, list):
        raise ValueError("scene must be a list of labels")
    zones = payload["zones"]
    mks = payload["mks"]
    if not isinstance(zones, list) or len(zones) != 4:
        raise ValueError("zones must be a list of 4 flags")
    if not isinstance(mks, list) or len(mks) != 2:
        raise ValueError("mks must be a list of 2 flags")
    return AttentionDirective(
        scene=tuple(scene),
        zones=tuple(_coerce_flag(z) for z in zones),
        mks=tuple(_coerce_flag(m) for m in mks),
        btw=_coerce_flag(payload["btw"]),
    )


def parse_directive(text: str) -> AttentionDirective:
    """Extract the first schema-valid JSON object from a model reply.

    Tolerant of surrounding prose and of other JSON fragments appearing
    before the directive.
    """
    decoder = json.JSONDecoder()
    errors: list[str] = []
    pos = text.find("{")
    while pos != -1:
        try:
            payload, _ = decoder.raw_decode(text, pos)
        except json.JSONDecodeError:
            pos = text.find("{", pos + 1)
            continue
        try:
            return _directive_from_payload(payload)
        except ValueError as exc:
            errors.append(str(exc))
        pos = text.find("{", pos + 1)
    detail = f" (rejected candidates: {errors})" if errors else ""
    raise DirectiveParseError(f"no schema-valid directive object in reply{detail}")
