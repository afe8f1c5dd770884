import csv

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.linalg import null_space

from coskill.config import ExecutorConfig
from coskill.evaluation import resolve_goal
from coskill.executor import (
    FailMem,
    Executor,
    execute,
    gamma_and_normal,
    modulate_velocity,
    modulation_matrix,
    track,
)
from coskill.geometry import Twist, exp_rotation, quat_to_matrix
from coskill.scenarios import single_pickplace_scenario, tabletop_scenario
from coskill.simulator import Ellipsoid, build_world


def random_ellipsoid(rng, center=None):
    c = rng.uniform(-0.3, 0.3, 3) if center is None else np.asarray(center, float)
    return Ellipsoid(c, rng.uniform(0.05, 0.2, 3), quat_to_matrix(exp_rotation(rng.normal(size=3))))


def modulation_oracle(gamma, normal):
    """E diag(lambda) E^-1 with an independently built (non-orthonormal-assumed) basis."""
    E = np.column_stack([normal, null_space(normal[None, :])])
    lam = np.diag([1 - 1 / gamma, 1 + 1 / gamma, 1 + 1 / gamma])
    return E @ lam @ np.linalg.inv(E)


@settings(max_examples=100)
@given(st.integers(0, 2**31 - 1))
def test_modulation_matrix_matches_oracle(seed):
    rng = np.random.default_rng(seed)
    n = rng.normal(size=3)
    n /= np.linalg.norm(n)
    gamma = 1.0 + rng.exponential(2.0)
    assert np.allclose(modulation_matrix(gamma, n), modulation_oracle(gamma, n), atol=1e-12)


def test_gamma_of_axis_aligned_ellipsoid():
    e = Ellipsoid(np.zeros(3), np.array([0.1, 0.2, 0.3]))
    g, n = gamma_and_normal(e, np.array([0.2, 0, 0]))
    assert g == pytest.approx(4.0)
    assert np.allclose(n, [1, 0, 0])
    assert e.gamma(np.array([0, 0.2, 0])) == pytest.approx(1.0)


def test_far_field_is_identity(rng):
    e = random_ellipsoid(rng)
    v = rng.normal(size=3)
    x = e.center + 1e4 * np.array([1.0, 0, 0])
    out, gmin, _ = modulate_velocity(-v if v @ (x - e.center) > 0 else v, x, [e])
    assert gmin > 1e6
    assert np.linalg.norm(out - (-v if v @ (x - e.center) > 0 else v)) < 1e-6 * np.linalg.norm(v)


def test_velocity_leaving_obstacle_is_untouched(rng):
    e = random_ellipsoid(rng)
    x = e.center + e.basis @ (1.5 * e.axes * np.array([1, 0, 0]))
    _, n = gamma_and_normal(e, x)
    v = n + 0.3 * null_space(n[None, :])[:, 0]
    out, _, inside = modulate_velocity(v, x, [e])
    assert np.allclose(out, v) and not inside


def test_boundary_kills_inward_normal_component(rng):
    e = random_ellipsoid(rng)
    x = e.center + e.basis @ (e.axes * np.array([0, 0, 1.0]))
    _, n = gamma_and_normal(e, x)
    out, g, _ = modulate_velocity(-n + 0.1 * null_space(n[None, :])[:, 1], x, [e])
    assert g == pytest.approx(1.0)
    assert abs(out @ n) < 1e-9


def test_inside_obstacle_clamps_inward_motion(rng):
    e = random_ellipsoid(rng)
    x = e.center + 0.5 * e.basis @ (e.axes * np.array([1.0, 0, 0]))
    _, n = gamma_and_normal(e, x)
    out, g, inside = modulate_velocity(-2 * n, x, [e])
    assert inside and g < 1 and out @ n >= -1e-12


def modulated_rollout(x0, goal, ells, dt=0.01, steps=800, v_max=0.5):
    x = np.array(x0, float)
    gmin = np.inf
    for _ in range(steps):
        v = -(x - goal)
        s = np.linalg.norm(v)
        if s > v_max:
            v *= v_max / s
        v, g, _ = modulate_velocity(v, x, ells)
        gmin = min(gmin, g)
        x = x + dt * v
        if np.linalg.norm(x - goal) < 1e-3:
            break
    return x, gmin


def test_rollouts_stay_outside_obstacle():
    worst = np.inf
    for seed in range(100):
        rng = np.random.default_rng(seed)
        e = random_ellipsoid(rng, center=np.zeros(3))
        start = rng.normal(size=3)
        start = 0.6 * start / np.linalg.norm(start)
        _, g = modulated_rollout(start, -start, [e])
        worst = min(worst, g)
    assert worst >= 1 - 1e-6


def test_track_matches_scalar_closed_form():
    cmd = Twist([0.1, -0.2, 0.3], [0.0, 0.5, -0.1])
    cur = Twist.zero()
    cfg = ExecutorConfig(damping=20.0, control_dt=0.01)
    out = track(cmd, cur, cfg)
    want = cmd.as_vector() * (1 - np.exp(-0.2))
    assert np.allclose(out.as_vector(), want, atol=1e-12)


@given(st.lists(st.floats(0.1, 50), min_size=6, max_size=6), st.lists(st.floats(-1, 1), min_size=6, max_size=6))
def test_track_never_overshoots(d, e0):
    cfg = ExecutorConfig(damping=d, control_dt=0.01)
    cmd = Twist.zero()
    cur = Twist(e0[:3], e0[3:])
    out = track(cmd, cur, cfg).as_vector()
    assert np.all(np.abs(out) <= np.abs(np.array(e0)) + 1e-15)
    assert np.all(out * np.array(e0) >= 0)


def test_failmem_is_an_ordered_set():
    fm = FailMem()
    fm.add(("a", ()))
    fm.add(("b", ()))
    fm.add(("a", ()))
    assert fm.items() == [("a", ()), ("b", ())]
    fm.discard(("a", ()))
    assert ("a", ()) not in fm and len(fm) == 1
    fm.clear()
    assert len(fm) == 0


@pytest.fixture(scope="module")
def single_task(single_learned):
    bundle, _ = single_learned
    spec = {
        "goal_example": {
            "scenario": tabletop_scenario({"lid": "dishrack", "banana": "pan", "block": "red_plate"}, seed=9).to_dict(),
            "pairs": [["banana", "pan"]],
        }
    }
    start = single_pickplace_scenario(50)
    start.script = []
    return bundle, resolve_goal(bundle, spec), start


def test_executes_pick_place_and_is_reproducible(single_task, tmp_path):
    bundle, goal, start = single_task
    rep = execute(goal, build_world(start), bundle, seed=0, telemetry=str(tmp_path / "tel.csv"))
    assert rep.success and rep.replans == 0
    assert [s.split("(")[0] for s in rep.plans[0]] == ["premotion_thing_type_0", "motion_thing_type_cookware_type_0"]
    again = execute(goal, build_world(start), bundle, seed=0)
    rep.save(tmp_path / "a.json")
    again.save(tmp_path / "b.json")
    assert (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()
    rows = list(csv.reader(open(tmp_path / "tel.csv")))
    assert rows[0] == ["t", "x", "y", "z", "qw", "qx", "qy", "qz", "operator", "gamma_min", "v_norm", "w_norm"]
    assert len(rows) > 100


def test_forced_effect_failure_resamples_once(single_task):
    bundle, goal, start = single_task
    start = start.with_seed(51)
    start.disturbances = [{"event": "perturb_attractor", "on": {"op": "motion_thing"}, "offset": [0, 0.08, 0]}]
    rep = execute(goal, build_world(start), bundle, seed=0, disturbances=start.disturbances)
    assert rep.success
    assert rep.resamples == 1
    assert any(e["kind"] == "effect_failed" for e in rep.events)


def test_goal_already_true_needs_no_plan(single_task):
    bundle, goal, start = single_task
    w = build_world(tabletop_scenario({"lid": "dishrack", "banana": "pan", "block": "red_plate"}, seed=9))
    rep = execute(goal, w, bundle)
    assert rep.success and rep.plan_calls == 0


def test_executor_config_validation(single_task):
    bundle, _, start = single_task
    with pytest.raises(ValueError):
        Executor(bundle, build_world(start), ExecutorConfig(replan_limit=0))
