"""Two-step prompt construction.

Stage 1 renders the snapshot into per-perspective questions (camera images
when present, otherwise a textual scene table embedded as a machine-readable
SCENE_TABLE block). Stage 2 reconstructs the stage-1 answer verbatim into a
new human message with the response-format contract in the system message.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from importlib import resources
from string import Template

from fsdrive.attention.snapshot import PERSPECTIVES, CameraImage, SceneSnapshot
from fsdrive.attention.zones import ZoneGeometry, classify_zone

SCENE_TABLE_MARK = "SCENE_TABLE:"


@dataclass(frozen=True)
class PromptBundle:
    system: str
    human: str
    exemplars: tuple[tuple[str, str], ...] = ()
    images: tuple[CameraImage, ...] = field(default=())

    def with_exemplars(self, exemplars) -> "PromptBundle":
        return PromptBundle(self.system, self.human, tuple(exemplars), self.images)


def _load_template(name: str) -> Template:
    text = resources.files("fsdrive.templates").joinpath(name).read_text()
    return Template(text)


def render_scene_table(snap: SceneSnapshot, zone_geometry: ZoneGeometry = ZoneGeometry()) -> str:
    """Deterministic JSON block describing the ground-truth scene."""
    rows = []
    for e in sorted(snap.entities, key=lambda e: e.entity_id):
        zone = classify_zone((e.x, e.y), snap.ego, zone_geometry)
        rows.append(
            {
                "id": e.entity_id,
                "kind": e.kind,
                "zone": zone,
                "distance": round(math.hypot(e.x - snap.ego.p_x, e.y - snap.ego.p_y), 2),
                "x": round(e.x, 2),
                "y": round(e.y, 2),
                "heading": round(e.heading, 3),
                "speed": round(e.speed, 2),
            }
        )
    table = {
        "scenario": snap.scenario_kind,
        "ego_speed": round(snap.ego.v_x, 2),
        "entities": rows,
        "lights": [
            {"id": l.light_id, "state": l.state, "distance": round(l.distance_m, 2)}
            for l in sorted(snap.lights, key=lambda l: l.light_id)
        ],
        "markings": {
            "left_crossable": bool(snap.marking_left_crossable),
            "right_crossable": bool(snap.marking_right_crossable),
        },
    }
    return SCENE_TABLE_MARK + " " + json.dumps(table, sort_keys=True)


def parse_scene_table(text: str) -> dict | None:
    """Recover the last SCENE_TABLE block from a prompt or answer."""
    idx = text.rfind(SCENE_TABLE_MARK)
    if idx == -1:
        return None
    try:
        payload, _ = json.JSONDecoder().raw_decode(text, idx + len(SCENE_TABLE_MARK) + 1)
    except json.JSONDecodeError:
        return None
    return payload if isinstance(payload, dict) else None


def _perspective_sections(snap: SceneSnapshot, zone_geometry: ZoneGeometry) -> str:
    sections = []
    if snap.images:
        by_camera = {img.camera: img for img in snap.images}
        for name in PERSPECTIVES:
            if name in by_camera:
                sections.append(
                    f"[{name.upper()} CAMERA]\n<image attached: {name} view>\n"
                )
    else:
        zone_map = {name: [] for name in PERSPECTIVES}
        for e in sorted(snap.entities, key=lambda e: e.entity_id):
            zone = classify_zone((e.x, e.y), snap.ego, zone_geometry)
            if zone in zone_map:
                dist = math.hypot(e.x - snap.ego.p_x, e.y - snap.ego.p_y)
                zone_map[zone].append(f"{e.kind} #{e.entity_id} at {dist:.1f} m")
        for name in PERSPECTIVES:
            listing = "; ".join(zone_map[name]) if zone_map[name] else "clear"
            sections.append(f"[{name.upper()} VIEW]\n{listing}\n")
        sections.append(render_scene_table(snap, zone_geometry) + "\n")
    return "\n".join(sections)


def build_stage1_prompt(
    snap: SceneSnapshot,
    template: Template | None = None,
    zone_geometry: ZoneGeometry = ZoneGeometry(),
) -> PromptBundle:
    """Per-perspective stage-1 questions; deterministic for a given snapshot."""
    template = template or _load_template("stage1_human.txt")
    human = template.substitute(
        timestamp=f"{snap.timestamp:.2f}",
        ego_speed=f"{snap.ego.v_x:.2f}",
        perspective_sections=_perspective_sections(snap, zone_geometry),
    )
    system = _load_template("stage1_system.txt").template
    ordered = tuple(
        img for name in PERSPECTIVES for img in snap.images if img.camera == name
    )
    return PromptBundle(system=system, human=human, images=ordered)


def reconstruct_stage2_prompt(
    h1: PromptBundle, a1: str, template: Template | None = None
) -> PromptBundle:
    """Embed the stage-1 answer verbatim into the stage-2 human message."""
    if not a1 or not a1.strip():
        raise ValueError("stage-1 answer must be non-empty")
    template = template or _load_template("stage2_human.txt")
    human = template.substitute(stage1_answer=a1)
    system = _load_template("stage2_system.txt").template
    return PromptBundle(system=system, human=human, exemplars=h1.exemplars)
