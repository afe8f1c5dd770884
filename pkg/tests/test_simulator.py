import math

import numpy as np
import pytest

from coskill.errors import UnknownObject
from coskill.geometry import Pose, Twist, compose, relative_pose
from coskill.scenarios import kitchen_scenario, single_pickplace_scenario
from coskill.simulator import build_world, generate_play
from coskill.world import CLOSED, OPEN


def _world_with_block():
    sc = single_pickplace_scenario(0)
    return build_world(sc)


def test_zero_twist_only_advances_time():
    w = _world_with_block()
    before = w.snapshot()
    after = w.step(Twist.zero(), None, 0.01)
    assert after == before
    assert w.time == pytest.approx(0.01)


def test_rigid_attachment():
    w = _world_with_block()
    block = w.objects["block"]
    w.ee_pose = compose(block.pose, Pose([0.001, 0, 0], [0, 1, 0, 0]))
    w.step(Twist.zero(), CLOSED, 0.01)
    assert w.attached == "block"
    rel0 = relative_pose(w.ee_pose, block.pose)
    start = block.pose.position.copy()
    for _ in range(100):
        w.step(Twist([0.1, 0, 0], [0, 0, 0]), None, 0.01)
    assert np.allclose(block.pose.position - start, [0.1, 0, 0], atol=1e-9)
    for _ in range(100):
        w.step(Twist([0.0, 0.05, 0], [0.1, 0, 0.2]), None, 0.01)
        rel = relative_pose(w.ee_pose, block.pose)
        assert np.max(np.abs(rel.position - rel0.position)) < 1e-9
    w.step(Twist.zero(), OPEN, 0.01)
    assert w.attached is None


def test_nothing_attached_out_of_range():
    w = _world_with_block()
    w.step(Twist.zero(), CLOSED, 0.01)
    assert w.attached is None and w.gripper == CLOSED


def _door_world(q=0.0):
    w = build_world(kitchen_scenario("counter", q))
    door = w.objects["door"]
    w.ee_pose = compose(door.pose, door.grasp_offset)
    w.step(Twist.zero(), CLOSED, 0.01)
    assert w.attached == "door"
    return w, door


def test_revolute_arc_length():
    w, door = _door_world()
    art = door.articulation
    # constraint-projection oracle: handle radius from the hinge, tangential speed
    local = relative_pose(art.origin, w.ee_pose).position
    r = math.hypot(local[0], local[1])
    dtheta = 0.4
    n, dt = 200, 0.01
    for _ in range(n):
        local = relative_pose(art.origin, w.ee_pose).position
        tangent = np.array([-local[1], local[0], 0.0]) / math.hypot(local[0], local[1])
        v = art.origin.apply(tangent) - art.origin.position
        w.step(Twist(v * r * dtheta / (n * dt), np.zeros(3)), None, dt)
    assert abs(art.q - dtheta) < 1e-3


def test_articulation_on_manifold_and_clamped():
    w, door = _door_world()
    art = door.articulation
    for _ in range(300):
        w.step(Twist([-0.5, 0.3, 0.1], [0, 0, 0]), None, 0.01)
        assert door.pose.allclose(art.fk(art.q), atol=1e-9)
        assert art.q_min <= art.q <= art.q_max


def test_inject_events():
    w, door = _door_world(1.0)
    w.inject({"event": "reclose", "id": "door"})
    assert door.articulation.q == 0.0 and w.attached is None
    with pytest.raises(UnknownObject):
        w.inject({"event": "teleport", "id": "nope", "pose": {"p": [0, 0, 0], "q": [1, 0, 0, 0]}})
    w.inject({"event": "teleport", "id": "cheese", "pose": {"p": [0.1, 0.2, 0.0], "q": [1, 0, 0, 0]}})
    assert np.allclose(w.objects["cheese"].pose.position, [0.1, 0.2, 0.0])
    assert [e["event"] for e in w.event_log] == ["reclose", "teleport"]


def test_detach_freezes_object():
    w = _world_with_block()
    block = w.objects["block"]
    w.ee_pose = compose(block.pose, block.grasp_offset)
    w.step(Twist.zero(), CLOSED, 0.01)
    w.step(Twist([0, 0, 0.1], [0, 0, 0]), None, 0.1)
    w.inject({"event": "detach"})
    drop = block.pose
    w.step(Twist([0.1, 0, 0], [0, 0, 0]), None, 0.1)
    assert w.attached is None and block.pose == drop


def test_generate_play_deterministic():
    a, ann_a = generate_play(single_pickplace_scenario(5))
    b, ann_b = generate_play(single_pickplace_scenario(5))
    assert a == b and ann_a == ann_b
    c, _ = generate_play(single_pickplace_scenario(6))
    assert not (a == c)


def test_generate_play_places_object():
    demo, ann = generate_play(single_pickplace_scenario(1))
    assert len(ann) == 1 and ann[0]["reference"] == "pan"
    end = demo.state(len(demo) - 1)
    rel = relative_pose(end.pose("pan"), end.pose("banana"))
    assert np.linalg.norm(rel.position - [0, 0, 0.04]) < 0.03


def test_door_script_opens_and_closes():
    sc = kitchen_scenario("cabinet", 0.0, [{"intent": "open", "target": "door", "reference": "cabinet"}])
    demo, ann = generate_play(sc)
    w = build_world(sc)
    q_end = relative_pose(w.objects["door"].articulation.origin, demo.state(len(demo) - 1).pose("door"))
    assert ann[0]["intent"] == "open"
    assert np.linalg.norm(q_end.position - w.objects["door"].pose.position) > 0.0
