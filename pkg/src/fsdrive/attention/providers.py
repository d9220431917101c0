"""Chat-completion providers: deterministic mocks and an HTTP client.

Simulation runs use the rule-based mocks so episodes are reproducible; the
HTTP provider targets any chat-completions-style endpoint for live use.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass
from typing import Protocol, Sequence

import requests

from fsdrive.attention.prompts import parse_scene_table

__all__ = [
    "ProviderError",
    "ChatProvider",
    "MockRules",
    "RuleBasedProvider",
    "OneStepMockProvider",
    "ScriptedProvider",
    "FailingProvider",
    "HttpProviderConfig",
    "HttpChatProvider",
]


class ProviderError(RuntimeError):
    """The provider could not produce a reply."""


class ChatProvider(Protocol):
    def complete(
        self, system: str, human: str, exemplars: Sequence[tuple[str, str]] = ()
    ) -> str: ...


ZONES_ORDER = ("front", "left", "right", "rear")


@dataclass
class MockRules:
    """Thresholds of the deterministic scene reasoner.

    ``no_exemplar_factor`` shrinks every range when retrieval returned no
    exemplars, modeling the loss of in-context anticipation.
    """

    vehicle_range: float = 45.0
    vru_range: float = 50.0
    btw_range: float = 40.0
    honor_markings: bool = True
    no_exemplar_factor: float = 0.5


def _directive_payload(table: dict, rules: MockRules, factor: float) -> dict:
    zones = {name: 0 for name in ZONES_ORDER}
    for row in table.get("entities", ()):
        limit = (rules.vru_range if row["kind"] == "vru" else rules.vehicle_range) * factor
        if row["zone"] in zones and row["distance"] <= limit:
            zones[row["zone"]] = 1
    btw = 0
    for light in table.get("lights", ()):
        if light["state"] == "red" and 0.0 <= light["distance"] <= rules.btw_range * factor:
            btw = 1
    markings = table.get("markings", {})
    if rules.honor_markings:
        mks = [int(bool(markings.get("left_crossable", True))),
               int(bool(markings.get("right_crossable", True)))]
    else:
        mks = [1, 1]
    valid = {"intersection", "roundabout", "straight urban road", "highway", "others"}
    scene = table.get("scenario", "others")
    return {
        "scene": [scene if scene in valid else "others"],
        "zones": [zones[name] for name in ZONES_ORDER],
        "mks": mks,
        "btw": btw,
    }


class RuleBasedProvider:
    """Deterministic two-step mock.

    Stage 1 acts as a scene describer: it narrates the ground-truth table and
    carries the machine-readable block through its answer. Stage 2 applies
    fixed risk rules to the carried table and answers with prose plus the
    directive dictionary.
    """

    def __init__(self, rules: MockRules | None = None) -> None:
        self.rules = rules or MockRules()

    def complete(self, system: str, human: str, exemplars=()) -> str:
        table = parse_scene_table(human)
        if table is None:
            raise ProviderError("mock provider found no scene table in the prompt")
        if "BEGIN_STAGE1_ANSWER" in human:
            factor = 1.0 if exemplars else self.rules.no_exemplar_factor
            payload = _directive_payload(table, self.rules, factor)
            flagged = [z for z, f in zip(ZONES_ORDER, payload["zones"]) if f]
            prose = (
                "Risk assessment: "
                + (f"zones at risk: {', '.join(flagged)}. " if flagged else "no zone at risk. ")
                + ("Holding for a red light. " if payload["btw"] else "")
            )
            return prose + json.dumps(payload)
        # stage 1: narrate and carry the table forward verbatim
        idx = human.rfind("SCENE_TABLE:")
        table_block = human[idx:].splitlines()[0]
        n_veh = sum(1 for r in table.get("entities", ()) if r["kind"] == "vehicle")
        n_vru = sum(1 for r in table.get("entities", ()) if r["kind"] == "vru")
        reds = [l["id"] for l in table.get("lights", ()) if l["state"] == "red"]
        prose = (
            f"The scene is a {table.get('scenario', 'road')} with {n_veh} vehicle(s) "
            f"and {n_vru} pedestrian(s) in view. "
            + (f"Red light ahead: {', '.join(reds)}. " if reds else "No red light in view. ")
        )
        return prose + "\n" + table_block


class OneStepMockProvider:
    """Degraded single-step mock: crude, short-sighted scene understanding.

    Used when the two-step reasoning feature is ablated; it answers the
    directive dictionary directly from the raw stage-1 prompt, detecting
    only very close entities and ignoring lights and marking rules.
    """

    def __init__(self, detect_range: float = 12.0) -> None:
        self.detect_range = detect_range

    def complete(self, system: str, human: str, exemplars=()) -> str:
        table = parse_scene_table(human)
        if table is None:
            raise ProviderError("one-step mock found no scene table")
        zones = {name: 0 for name in ZONES_ORDER}
        for row in table.get("entities", ()):
            if row["zone"] in zones and row["distance"] <= self.detect_range:
                zones[row["zone"]] = 1
        payload = {
            "scene": ["others"],
            "zones": [zones[name] for name in ZONES_ORDER],
            "mks": [1, 1],
            "btw": 0,
        }
        return "Quick look: " + json.dumps(payload)


class ScriptedProvider:
    """Replays canned replies in order; repeats the last one when exhausted."""

    def __init__(self, replies: Sequence[str], loop_last: bool = True) -> None:
        if not replies:
            raise ValueError("scripted provider needs at least one reply")
        self.replies = list(replies)
        self.loop_last = loop_last
        self.calls = 0

    def complete(self, system: str, human: str, exemplars=()) -> str:
        if self.calls < len(self.replies):
            reply = self.replies[self.calls]
        elif self.loop_last:
            reply = self.replies[-1]
        else:
            raise ProviderError("scripted provider exhausted")
        self.calls += 1
        return reply


class FailingProvider:
    """Always raises, for fault-injection tests."""

    def __init__(self, message: str = "provider unavailable") -> None:
        self.message = message
        self.calls = 0

    def complete(self, system: str, human: str, exemplars=()) -> str:
        self.calls += 1
        raise ProviderError(self.message)


@dataclass
class HttpProviderConfig:
    endpoint: str
    model: str
    timeout_s: float = 20.0
    token_env: str = "FSDRIVE_API_TOKEN"
    temperature: float = 0.0
    max_retries: int = 1  # single retry on failure


class HttpChatProvider:
    """POSTs chat-completions requests to a configurable endpoint.

    The bearer token is read from the environment; exemplar dialogue pairs
    become alternating user/assistant turns ahead of the live message.
    """

    def __init__(self, config: HttpProviderConfig) -> None:
        self.config = config

    def _messages(self, system, human, exemplars, images=()):
        messages = [{"role": "system", "content": system}]
        for ex_human, ex_answer in exemplars:
            messages.append({"role": "user", "content": ex_human})
            messages.append({"role": "assistant", "content": ex_answer})
        if images:
            parts = [{"type": "text", "text": human}]
            for img in images:
                parts.append(
                    {
                        "type": "image_url",
                        "image_url": {"url": f"data:image/png;base64,{img.b64}"},
                    }
                )
            messages.append({"role": "user", "content": parts})
        else:
            messages.append({"role": "user", "content": human})
        return messages

    def complete(self, system: str, human: str, exemplars=(), images=()) -> str:
        payload = {
            "model": self.config.model,
            "messages": self._messages(system, human, exemplars, images),
            "temperature": self.config.temperature,
        }
        headers = {"Content-Type": "application/json"}
        token = os.environ.get(self.config.token_env)
        if token:
            headers["Authorization"] = f"Bearer {token}"
        last_error: Exception | None = None
        for _ in range(self.config.max_retries + 1):
            try:
                resp = requests.post(
                    self.config.endpoint,
                    json=payload,
                    headers=headers,
                    timeout=self.config.timeout_s,
                )
                resp.raise_for_status()
                body = resp.json()
                return body["choices"][0]["message"]["content"]
            except (requests.RequestException, KeyError, IndexError, ValueError) as exc:
                last_error = exc
        raise ProviderError(f"chat endpoint failed after retry: {last_error}")
