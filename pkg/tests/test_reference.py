import json
import sys

import pytest
from hypothesis import given, strategies as st

from coskill.config import ReferenceConfig
from coskill.errors import ExternalUnavailable, InvalidExternalReply, NoCandidates
from coskill.reference import (
    ReplayStub,
    SubprocessEndpoint,
    assign_references,
    build_query,
    endpoint_from_config,
    majority_assign,
    parse_reply,
    request_hash,
    select_reference,
)
from coskill.segmentation import detect_episodes


@pytest.fixture(scope="module")
def demo_eps(tabletop_data):
    demos, anns = tabletop_data
    return demos[0], detect_episodes(demos[0]), anns[0]


def test_query_has_exact_frame_count_and_excludes_mover(demo_eps):
    demo, eps, _ = demo_eps
    for n in (1, 4, 7):
        q = build_query(eps[0], demo, n)
        assert len(q.frames) == n
        assert eps[0].motion_object not in q.candidates
        line = json.loads(q.request_line("pick one"))
        assert line["candidates"] == list(q.candidates)


def test_oracle_matches_annotations(demo_eps):
    demo, eps, ann = demo_eps
    for ep, a in zip(eps, ann):
        assert select_reference(ep, demo, "oracle", annotations=ann) == a["reference"]


def test_heuristic_agrees_with_script_on_corpus(tabletop_data):
    demos, anns = tabletop_data
    hits = total = 0
    for demo, ann in zip(demos, anns):
        for ep, a in zip(detect_episodes(demo), ann):
            hits += select_reference(ep, demo, "heuristic") == a["reference"]
            total += 1
    assert hits == total


def test_parse_reply_contract():
    assert parse_reply('{"reference": "pan"}', ("pan", "lid")) == "pan"
    for bad in ("pan", "{}", '{"reference": 3}', '{"reference": "sink"}', "[1]"):
        with pytest.raises(InvalidExternalReply):
            parse_reply(bad, ("pan", "lid"))


@given(st.text(max_size=40))
def test_parse_reply_never_returns_a_non_candidate(reply):
    try:
        out = parse_reply(reply, ("a", "b"))
    except InvalidExternalReply:
        return
    assert out in ("a", "b")


def test_replay_stub_keys_by_request_hash(demo_eps, tmp_path):
    demo, eps, _ = demo_eps
    cfg = ReferenceConfig(selector="external")
    line = build_query(eps[0], demo, cfg.n_frames).request_line(cfg.instruction)
    path = tmp_path / "replies.json"
    path.write_text(json.dumps({request_hash(line): '{"reference": "dishrack"}'}))
    stub = endpoint_from_config(f"replay:{path}")
    assert select_reference(eps[0], demo, "external", endpoint=stub, config=cfg) == "dishrack"
    assert stub.requests == [line]
    with pytest.raises(ExternalUnavailable):
        stub("unknown request")


def test_external_falls_back_to_heuristic_when_unavailable(tabletop_data):
    demos, anns = tabletop_data
    eps = [detect_episodes(demos[0])]
    cfg = ReferenceConfig(selector="external")
    out = assign_references(demos[:1], eps, cfg, endpoint=ReplayStub({}))
    assert out == [a["reference"] for a in anns[0]]
    strict = ReferenceConfig(selector="external", fallback_to_heuristic=False)
    with pytest.raises(ExternalUnavailable):
        assign_references(demos[:1], [detect_episodes(demos[0])], strict, endpoint=ReplayStub({}))


def test_subprocess_endpoint_round_trip():
    script = "import sys, json; r = json.loads(sys.stdin.readline()); print(json.dumps({'reference': r['candidates'][-1]}))"
    ep = SubprocessEndpoint(f"{sys.executable} -c \"{script}\"")
    reply = ep(json.dumps({"candidates": ["a", "b"]}))
    assert json.loads(reply) == {"reference": "b"}
    with pytest.raises(ExternalUnavailable):
        SubprocessEndpoint("/nonexistent/binary")("{}")


def test_invalid_endpoint_reply_is_an_error(demo_eps):
    demo, eps, _ = demo_eps
    with pytest.raises(InvalidExternalReply):
        select_reference(eps[0], demo, "external", endpoint=lambda _: '{"reference": "lid_of_nothing"}')


def test_oracle_without_matching_annotation(demo_eps):
    demo, eps, _ = demo_eps
    with pytest.raises(NoCandidates):
        select_reference(eps[0], demo, "oracle", annotations=[])


def test_majority_assignment_ties_go_to_first_seen():
    out = majority_assign({"g": ["x", "y", "y", "x"], "h": ["z"]})
    assert out == {"g": "x", "h": "z"}
    with pytest.raises(ValueError):
        majority_assign({"g": []})
