from fsdrive.attention.directive import (
    SCENE_LABELS,
    ZONE_NAMES,
    AttentionDirective,
    DirectiveParseError,
    parse_directive,
)
from fsdrive.attention.pipeline import (
    DialogueRecord,
    SlowSystemError,
    run_one_step,
    run_two_step,
)
from fsdrive.attention.prompts import (
    PromptBundle,
    build_stage1_prompt,
    parse_scene_table,
    reconstruct_stage2_prompt,
    render_scene_table,
)
from fsdrive.attention.providers import (
    ChatProvider,
    FailingProvider,
    HttpChatProvider,
    HttpProviderConfig,
    MockRules,
    OneStepMockProvider,
    ProviderError,
    RuleBasedProvider,
    ScriptedProvider,
)
from fsdrive.attention.snapshot import (
    PERSPECTIVES,
    CameraImage,
    EntityObservation,
    LightObservation,
    SceneSnapshot,
)
from fsdrive.attention.zones import ZoneGeometry, classify_zone

__all__ = [
    "AttentionDirective",
    "DirectiveParseError",
    "parse_directive",
    "SCENE_LABELS",
    "ZONE_NAMES",
    "ZoneGeometry",
    "classify_zone",
    "SceneSnapshot",
    "EntityObservation",
    "LightObservation",
    "CameraImage",
    "PERSPECTIVES",
    "PromptBundle",
    "build_stage1_prompt",
    "reconstruct_stage2_prompt",
    "render_scene_table",
    "parse_scene_table",
    "ChatProvider",
    "ProviderError",
    "MockRules",
    "RuleBasedProvider",
    "OneStepMockProvider",
    "ScriptedProvider",
    "FailingProvider",
    "HttpProviderConfig",
    "HttpChatProvider",
    "DialogueRecord",
    "SlowSystemError",
    "run_two_step",
    "run_one_step",
]
