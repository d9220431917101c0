import json
import math
import threading
from http.server import BaseHTTPRequestHandler, HTTPServer

import pytest

from fsdrive.attention import (
    AttentionDirective,
    CameraImage,
    DirectiveParseError,
    EntityObservation,
    FailingProvider,
    HttpChatProvider,
    HttpProviderConfig,
    LightObservation,
    MockRules,
    OneStepMockProvider,
    RuleBasedProvider,
    SceneSnapshot,
    ScriptedProvider,
    SlowSystemError,
    ZoneGeometry,
    build_stage1_prompt,
    classify_zone,
    parse_directive,
    parse_scene_table,
    reconstruct_stage2_prompt,
    run_one_step,
    run_two_step,
)
from fsdrive.dynamics import EgoState
from fsdrive.memory import HashEmbedding, MemoryStore


def ego(px=0.0, py=0.0, phi=0.0, vx=8.0):
    return EgoState(px, py, phi, vx, 0.0, 0.0)


def snapshot(entities=(), lights=(), images=(), kind="straight urban road", **kw):
    return SceneSnapshot(
        timestamp=1.0,
        ego=ego(),
        entities=tuple(entities),
        lights=tuple(lights),
        images=tuple(images),
        scenario_kind=kind,
        **kw,
    )


# ---------------------------------------------------------------------------
# directive parsing


def test_parse_bare_directive():
    d = parse_directive('{"scene":["straight urban road"],"zones":[1,0,0,0],"mks":[1,0],"btw":0}')
    assert d.zones == (1, 0, 0, 0)
    assert d.mks == (1, 0)
    assert d.btw == 0
    assert d.scene == ("straight urban road",)


def test_parse_rejects_bad_zone_length():
    with pytest.raises(DirectiveParseError):
        parse_directive('{"scene":["others"],"zones":[1,0,0],"mks":[1,0],"btw":0}')


def test_parse_embedded_in_prose_fuzz():
    payload = '{"scene":["intersection"],"zones":[0,1,0,0],"mks":[0,0],"btw":1}'
    wrappers = [
        "Here is my assessment: @@ based on the scene.",
        "Reasoning first. {not json} then @@",
        "prefix [1,2,3] @@ suffix",
        "@@",
        "The answer:\n\n@@\n\nDone.",
        'I considered {"scene": "incomplete"} earlier, final: @@',
    ]
    want = parse_directive(payload)
    for wrapper in wrappers:
        assert parse_directive(wrapper.replace("@@", payload)) == want


def test_parse_accepts_booleans():
    d = parse_directive('{"scene":["others"],"zones":[true,false,false,true],"mks":[true,true],"btw":false}')
    assert d.zones == (1, 0, 0, 1)
    assert d.btw == 0


def test_parse_serialize_roundtrip():
    d = AttentionDirective(
        scene=("intersection", "others"), zones=(1, 0, 1, 0), mks=(0, 1), btw=1
    )
    assert parse_directive(d.to_json()) == d


def test_parse_no_object():
    with pytest.raises(DirectiveParseError):
        parse_directive("no structured content here")


# ---------------------------------------------------------------------------
# zone classification


def test_zone_basic_bearings():
    assert classify_zone((10.0, 0.0), ego()) == "front"
    assert classify_zone((0.0, 20.0), ego()) == "left"
    assert classify_zone((0.0, -20.0), ego()) == "right"
    assert classify_zone((-10.0, 0.0), ego()) == "rear"
    assert classify_zone((60.0, 0.0), ego()) == "out_of_range"


def test_zone_boundaries_half_open():
    r = 10.0
    for ang, want in [
        (math.pi / 4, "front"),
        (-math.pi / 4, "front"),
        (3 * math.pi / 4, "rear"),
        (-3 * math.pi / 4, "rear"),
        (math.pi / 4 + 1e-9, "left"),
        (-math.pi / 4 - 1e-9, "right"),
    ]:
        pos = (r * math.cos(ang), r * math.sin(ang))
        assert classify_zone(pos, ego()) == want


def test_zone_respects_ego_heading():
    e = ego(phi=math.pi / 2)
    assert classify_zone((0.0, 10.0), e) == "front"
    assert classify_zone((-10.0, 0.0), e) == "left"


def test_zone_partition_in_range():
    import numpy as np

    rng = np.random.default_rng(0)
    for _ in range(500):
        pos = tuple(rng.uniform(-49, 49, 2) / math.sqrt(2))
        e = ego(phi=rng.uniform(-math.pi, math.pi))
        zone = classify_zone(pos, e)
        assert zone in ("front", "left", "right", "rear")


# ---------------------------------------------------------------------------
# prompts


def test_stage1_camera_sections_fixed_order():
    images = [CameraImage(c, "aGk=") for c in ("rear", "left", "front", "right")]
    bundle = build_stage1_prompt(snapshot(images=images))
    human = bundle.human
    order = [human.index(f"[{c.upper()} CAMERA]") for c in ("front", "left", "right", "rear")]
    assert order == sorted(order)
    assert bundle.images[0].camera == "front"


def test_stage1_table_mode_replaces_images():
    ents = [EntityObservation(1, "vehicle", 15.0, 0.0, 0.0, 5.0)]
    bundle = build_stage1_prompt(snapshot(entities=ents))
    assert "SCENE_TABLE:" in bundle.human
    assert "CAMERA" not in bundle.human
    table = parse_scene_table(bundle.human)
    assert table["entities"][0]["zone"] == "front"


def test_stage1_deterministic():
    ents = [
        EntityObservation(2, "vru", 5.0, 5.0, 0.0, 1.2),
        EntityObservation(1, "vehicle", 15.0, 0.0, 0.0, 5.0),
    ]
    lights = [LightObservation("tl1", "red", 30.0)]
    b1 = build_stage1_prompt(snapshot(entities=ents, lights=lights))
    b2 = build_stage1_prompt(snapshot(entities=ents, lights=lights))
    assert b1.human == b2.human and b1.system == b2.system


def test_stage2_embeds_answer_verbatim():
    bundle = build_stage1_prompt(snapshot())
    a1 = 'Odd chars: {"x": [1,2]} "quoted" $dollar 100% \\backslash\nnewline'
    h2 = reconstruct_stage2_prompt(bundle, a1)
    assert a1 in h2.human
    assert "scene" in h2.system and "zones" in h2.system and "btw" in h2.system


def test_stage2_rejects_empty_answer():
    bundle = build_stage1_prompt(snapshot())
    with pytest.raises(ValueError):
        reconstruct_stage2_prompt(bundle, "   ")


# ---------------------------------------------------------------------------
# two-step pipeline with mocks


def test_two_step_empty_road():
    directive, record = run_two_step(RuleBasedProvider(), snapshot())
    assert directive.zones == (0, 0, 0, 0)
    assert directive.btw == 0
    assert record.human["stage1"] and record.answer["stage2"]


def test_two_step_red_light_sets_btw():
    # 15 m is inside the btw range even under the no-exemplar degradation
    snap = snapshot(lights=[LightObservation("tl1", "red", 15.0)])
    directive, _ = run_two_step(RuleBasedProvider(), snap)
    assert directive.btw == 1
    green = snapshot(lights=[LightObservation("tl1", "green", 15.0)])
    directive, _ = run_two_step(RuleBasedProvider(), green)
    assert directive.btw == 0


def test_two_step_flags_zones_and_markings():
    snap = snapshot(
        entities=[
            EntityObservation(1, "vehicle", 20.0, 0.0, 0.0, 4.0),
            EntityObservation(2, "vru", 0.0, 12.0, 0.0, 1.0),
        ],
        marking_left_crossable=True,
        marking_right_crossable=False,
    )
    directive, _ = run_two_step(RuleBasedProvider(), snap)
    assert directive.zones == (1, 1, 0, 0)
    assert directive.mks == (1, 0)


def test_two_step_is_pure_function_of_inputs():
    snap = snapshot(entities=[EntityObservation(1, "vehicle", 20.0, 3.0, 0.1, 4.0)])
    d1, r1 = run_two_step(RuleBasedProvider(), snap)
    d2, r2 = run_two_step(RuleBasedProvider(), snap)
    assert d1 == d2
    assert r1 == r2


def test_two_step_with_memory_exemplars():
    store = MemoryStore(HashEmbedding())
    snap0 = snapshot(entities=[EntityObservation(1, "vehicle", 30.0, 0.0, 0.0, 4.0)])
    d0, rec0 = run_two_step(RuleBasedProvider(), snap0)
    store.record(rec0.human, rec0.answer, rec0.tags)

    # without exemplars the mock halves its ranges: 30 m vehicle not flagged
    d_no_mem, _ = run_two_step(RuleBasedProvider(), snap0, memory=None)
    assert d_no_mem.zones == (0, 0, 0, 0)
    # with an exemplar available the full 45 m range applies
    d_mem, _ = run_two_step(RuleBasedProvider(), snap0, memory=store)
    assert d_mem.zones == (1, 0, 0, 0)


def test_two_step_malformed_stage2_raises_with_stage():
    stage1 = RuleBasedProvider()
    snap = snapshot(entities=[EntityObservation(1, "vehicle", 10.0, 0.0, 0.0, 4.0)])
    b1 = build_stage1_prompt(snap)
    a1 = stage1.complete(b1.system, b1.human)
    scripted = ScriptedProvider([a1, "garbled {not json"])
    with pytest.raises(SlowSystemError) as err:
        run_two_step(scripted, snap)
    assert err.value.stage == "parse"


def test_two_step_provider_failure_carries_stage():
    with pytest.raises(SlowSystemError) as err:
        run_two_step(FailingProvider(), snapshot())
    assert err.value.stage == "stage1"


def test_one_step_mock_is_short_sighted():
    far = snapshot(
        entities=[EntityObservation(1, "vehicle", 20.0, 0.0, 0.0, 4.0)],
        lights=[LightObservation("tl1", "red", 20.0)],
        marking_right_crossable=False,
    )
    directive, _ = run_one_step(OneStepMockProvider(), far)
    assert directive.zones == (0, 0, 0, 0)  # beyond its 12 m sight
    assert directive.btw == 0
    assert directive.mks == (1, 1)  # ignores marking rules
    near = snapshot(entities=[EntityObservation(1, "vehicle", 8.0, 0.0, 0.0, 4.0)])
    directive, _ = run_one_step(OneStepMockProvider(), near)
    assert directive.zones == (1, 0, 0, 0)


# ---------------------------------------------------------------------------
# HTTP provider against a local endpoint


class _Handler(BaseHTTPRequestHandler):
    requests_seen = []
    fail_first = False

    def do_POST(self):
        body = json.loads(self.rfile.read(int(self.headers["Content-Length"])))
        type(self).requests_seen.append(
            {"path": self.path, "auth": self.headers.get("Authorization"), "body": body}
        )
        if type(self).fail_first and len(type(self).requests_seen) == 1:
            self.send_response(500)
            self.end_headers()
            return
        reply = {
            "choices": [
                {"message": {"role": "assistant", "content": '{"scene":["others"],"zones":[0,0,0,0],"mks":[1,1],"btw":0}'}}
            ]
        }
        data = json.dumps(reply).encode()
        self.send_response(200)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(data)))
        self.end_headers()
        self.wfile.write(data)

    def log_message(self, *args):
        pass


@pytest.fixture
def http_server():
    _Handler.requests_seen = []
    _Handler.fail_first = False
    server = HTTPServer(("127.0.0.1", 0), _Handler)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    yield f"http://127.0.0.1:{server.server_port}/v1/chat/completions"
    server.shutdown()


def test_http_provider_posts_messages(http_server, monkeypatch):
    monkeypatch.setenv("FSDRIVE_API_TOKEN", "secret-token")
    provider = HttpChatProvider(HttpProviderConfig(endpoint=http_server, model="test-model"))
    reply = provider.complete("sys text", "human text", exemplars=[("ex h", "ex a")])
    assert parse_directive(reply).zones == (0, 0, 0, 0)
    seen = _Handler.requests_seen[0]
    assert seen["auth"] == "Bearer secret-token"
    assert seen["body"]["model"] == "test-model"
    assert seen["body"]["temperature"] == 0
    roles = [m["role"] for m in seen["body"]["messages"]]
    assert roles == ["system", "user", "assistant", "user"]


def test_http_provider_retries_once(http_server):
    _Handler.fail_first = True
    provider = HttpChatProvider(HttpProviderConfig(endpoint=http_server, model="m"))
    reply = provider.complete("s", "h")
    assert "zones" in reply
    assert len(_Handler.requests_seen) == 2


def test_http_provider_raises_after_retry(monkeypatch):
    from fsdrive.attention.providers import ProviderError

    provider = HttpChatProvider(
        HttpProviderConfig(endpoint="http://127.0.0.1:9/closed", model="m", timeout_s=0.2)
    )
    with pytest.raises(ProviderError):
        provider.complete("s", "h")
