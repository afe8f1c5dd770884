import json
import time

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from coskill.errors import ParseError, SchemaError, SearchBudgetExceeded, Unreachable
from coskill.planner import Goal, load_goal, plan, validate
from coskill.predicates import GroundAtom as G

from domains import bfs_length, pick_place_ops, pick_place_problem, random_strips


def test_goal_already_satisfied_gives_empty_plan():
    objects, s0, _, _ = pick_place_problem(np.random.default_rng(0), 3, 4, 0)
    assert len(plan(s0, frozenset(), pick_place_ops(), objects)) == 0


def test_single_move():
    objects = {"a": "thing", "p": "place", "q": "place"}
    s0 = frozenset({G("At", ("a", "p")), G("HandEmpty", ()), G("Free", ("q",))})
    sk = plan(s0, {G("At", ("a", "q"))}, pick_place_ops(), objects)
    assert [str(s) for s in sk] == ["pick(a, p)", "place(a, q)"]
    assert validate(sk, s0, {G("At", ("a", "q"))})


def test_unreachable_and_budget():
    objects = {"a": "thing", "p": "place"}
    s0 = frozenset({G("At", ("a", "p")), G("HandEmpty", ())})
    with pytest.raises(Unreachable):
        plan(s0, {G("At", ("a", "z"))}, pick_place_ops(), objects)
    rng = np.random.default_rng(1)
    objects, s0, goal, _ = pick_place_problem(rng, 5, 7, 10)
    with pytest.raises(SearchBudgetExceeded):
        plan(s0, goal, pick_place_ops(), objects, node_cap=1)


@settings(max_examples=60)
@given(st.integers(0, 2**31 - 1))
def test_length_matches_bfs_on_pick_place(seed):
    rng = np.random.default_rng(seed)
    objects, s0, goal, insts = pick_place_problem(rng, int(rng.integers(1, 4)), int(rng.integers(3, 6)), int(rng.integers(0, 8)))
    sk = plan(s0, goal, pick_place_ops(), objects)
    assert len(sk) == bfs_length(s0, goal, insts)
    assert validate(sk, s0, goal)


@settings(max_examples=100)
@given(st.integers(0, 2**31 - 1))
def test_length_matches_bfs_on_random_strips(seed):
    rng = np.random.default_rng(seed)
    s0, goal, ops = random_strips(rng)
    want = bfs_length(s0, goal, ops)
    if want is None:
        with pytest.raises(Unreachable):
            plan(s0, goal, [], {}, ground=ops)
        return
    sk = plan(s0, goal, [], {}, ground=ops)
    assert len(sk) == want
    assert validate(sk, s0, goal)


def test_plan_is_deterministic():
    rng = np.random.default_rng(7)
    objects, s0, goal, _ = pick_place_problem(rng, 4, 6, 8)
    a = plan(s0, goal, pick_place_ops(), objects)
    b = plan(s0, goal, pick_place_ops(), dict(reversed(list(objects.items()))))
    assert a == b


def test_validate_rejects_wrong_skeletons():
    objects = {"a": "thing", "p": "place", "q": "place"}
    s0 = frozenset({G("At", ("a", "p")), G("HandEmpty", ()), G("Free", ("q",))})
    sk = plan(s0, {G("At", ("a", "q"))}, pick_place_ops(), objects)
    assert not validate(type(sk)(sk.steps[1:]), s0, {G("At", ("a", "q"))})
    assert not validate(sk, s0, {G("At", ("a", "p"))})


def test_goal_file_parsing(tmp_path):
    g = Goal(frozenset({G("At", ("a", "q")), G("HandEmpty", ())}))
    p = tmp_path / "goal.json"
    p.write_text(g.to_json())
    assert load_goal(p) == g
    assert load_goal(g.to_json()) == g
    with pytest.raises(ParseError):
        load_goal("{not json")
    with pytest.raises(SchemaError):
        load_goal(json.dumps({"atoms": []}))
    with pytest.raises(SchemaError):
        g.check_names({"At"})


def test_twelve_object_latency_smoke():
    rng = np.random.default_rng(3)
    objects, s0, goal, _ = pick_place_problem(rng, 5, 7, 10)
    t = time.perf_counter()
    sk = plan(s0, goal, pick_place_ops(), objects)
    assert time.perf_counter() - t < 1.0
    assert len(sk) <= 10
