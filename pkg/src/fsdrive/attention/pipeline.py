"""Slow-system execution: retrieve, describe, reason, parse."""

from __future__ import annotations

from dataclasses import dataclass

from fsdrive.attention.directive import AttentionDirective, DirectiveParseError, parse_directive
from fsdrive.attention.prompts import (
    PromptBundle,
    build_stage1_prompt,
    reconstruct_stage2_prompt,
)
from fsdrive.attention.providers import ChatProvider, ProviderError
from fsdrive.attention.snapshot import SceneSnapshot
from fsdrive.attention.zones import ZoneGeometry

__all__ = ["DialogueRecord", "SlowSystemError", "run_two_step", "run_one_step"]


class SlowSystemError(RuntimeError):
    """Carries the pipeline stage that failed."""

    def __init__(self, stage: str, message: str) -> None:
        super().__init__(f"[{stage}] {message}")
        self.stage = stage


@dataclass(frozen=True)
class DialogueRecord:
    human: dict[str, str]
    answer: dict[str, str]
    tags: tuple[str, ...]


def run_two_step(
    provider: ChatProvider,
    snap: SceneSnapshot,
    memory=None,
    k: int = 3,
    zone_geometry: ZoneGeometry = ZoneGeometry(),
) -> tuple[AttentionDirective, DialogueRecord]:
    """Retrieve exemplars, describe the scene, reason, and parse the directive.

    With the deterministic mock provider this is a pure function of the
    snapshot and the memory contents.
    """
    h1 = build_stage1_prompt(snap, zone_geometry=zone_geometry)
    exemplars: tuple[tuple[str, str], ...] = ()
    if memory is not None and len(memory) > 0:
        items = memory.retrieve_text(h1.human, k)
        exemplars = tuple((it.human["stage1"], it.answer["stage2"]) for it in items)
    h1 = h1.with_exemplars(exemplars)

    try:
        a1 = provider.complete(h1.system, h1.human, h1.exemplars)
    except ProviderError as exc:
        raise SlowSystemError("stage1", str(exc)) from exc
    try:
        h2 = reconstruct_stage2_prompt(h1, a1)
    except ValueError as exc:
        raise SlowSystemError("reconstruct", str(exc)) from exc
    try:
        a2 = provider.complete(h2.system, h2.human, h2.exemplars)
    except ProviderError as exc:
        raise SlowSystemError("stage2", str(exc)) from exc
    try:
        directive = parse_directive(a2)
    except DirectiveParseError as exc:
        raise SlowSystemError("parse", str(exc)) from exc

    record = DialogueRecord(
        human={"stage1": h1.human, "stage2": h2.human},
        answer={"stage1": a1, "stage2": a2},
        tags=(snap.scenario_kind, *directive.scene),
    )
    return directive, record


def run_one_step(
    provider: ChatProvider,
    snap: SceneSnapshot,
    zone_geometry: ZoneGeometry = ZoneGeometry(),
) -> tuple[AttentionDirective, DialogueRecord]:
    """Single-stage variant used when two-step reasoning is ablated."""
    h1 = build_stage1_prompt(snap, zone_geometry=zone_geometry)
    try:
        a1 = provider.complete(h1.system, h1.human, ())
    except ProviderError as exc:
        raise SlowSystemError("one_step", str(exc)) from exc
    try:
        directive = parse_directive(a1)
    except DirectiveParseError as exc:
        raise SlowSystemError("parse", str(exc)) from exc
    record = DialogueRecord(
        human={"stage1": h1.human, "stage2": ""},
        answer={"stage1": a1, "stage2": ""},
        tags=(snap.scenario_kind,),
    )
    return directive, record
