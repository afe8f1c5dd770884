import numpy as np
import pytest
from hypothesis import settings, strategies as st

from coskill.geometry import Pose

settings.register_profile("default", max_examples=50, deadline=None)
settings.load_profile("default")


def random_quat(rng):
    q = rng.normal(size=4)
    return q / np.linalg.norm(q)


def random_pose(rng, scale=1.0):
    return Pose(rng.uniform(-scale, scale, 3), random_quat(rng))


@st.composite
def poses(draw, scale=2.0):
    p = draw(st.lists(st.floats(-scale, scale), min_size=3, max_size=3))
    q = draw(st.lists(st.floats(-1, 1), min_size=4, max_size=4))
    q = np.array(q)
    n = np.linalg.norm(q)
    if n < 1e-3:
        q = np.array([1.0, 0, 0, 0])
    return Pose(p, q)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# --------------------------------------------------------------------------
# learned fixtures, built once per session

from pathlib import Path  # noqa: E402

from coskill.config import Config  # noqa: E402
from coskill.pipeline import learn  # noqa: E402
from coskill.scenarios import kitchen_corpus, single_pickplace_scenario, tabletop_corpus  # noqa: E402
from coskill.simulator import generate_play  # noqa: E402

ROOT = Path(__file__).resolve().parents[1]
FIXTURES = Path(__file__).resolve().parent / "fixtures"


def _play(scenarios):
    out = [generate_play(s) for s in scenarios]
    return [d for d, _ in out], [a for _, a in out]


@pytest.fixture(scope="session")
def tabletop_data():
    return _play(tabletop_corpus(0))


@pytest.fixture(scope="session")
def kitchen_data():
    return _play(kitchen_corpus(0))


@pytest.fixture(scope="session")
def single_data():
    return _play([single_pickplace_scenario(s) for s in range(4)])


@pytest.fixture(scope="session")
def kitchen_config():
    return Config.load(ROOT / "configs" / "kitchen.json")


@pytest.fixture(scope="session")
def tabletop_learned(tabletop_data):
    demos, anns = tabletop_data
    return learn(demos, Config(), anns)


@pytest.fixture(scope="session")
def kitchen_learned(kitchen_data, kitchen_config):
    demos, anns = kitchen_data
    return learn(demos, kitchen_config, anns)


@pytest.fixture(scope="session")
def single_learned(single_data):
    demos, anns = single_data
    return learn(demos, Config(), anns)


# --------------------------------------------------------------------------
# operator comparison up to renaming

import itertools  # noqa: E402
import json  # noqa: E402


def load_truth_operators(path=None) -> list:
    raw = json.loads(Path(path or FIXTURES / "tabletop_operators.json").read_text())
    conv = lambda s: frozenset((p, tuple(a)) for p, a in s)  # noqa: E731
    return [
        {
            "phase": o["phase"],
            "gripper": o["gripper"],
            "params": {v: t for v, t in o["params"]},
            "pre": conv(o["pre"]),
            "add": conv(o["add"]),
            "delete": conv(o["delete"]),
            "maintain": conv(o["maintain"]),
        }
        for o in raw
    ]


def _as_plain(op) -> dict:
    conv = lambda s: frozenset((a.predicate, tuple(a.args)) for a in s)  # noqa: E731
    return {
        "phase": op.phase,
        "gripper": op.gripper,
        "params": dict(op.params),
        "pre": conv(op.pre),
        "add": conv(op.add),
        "delete": conv(op.delete),
        "maintain": conv(op.maintain),
    }


def same_up_to_renaming(a: dict, b: dict) -> bool:
    """Equal lifted operators under some type-preserving variable bijection
    that fixes the role variables ?obj and ?ref."""
    if a["phase"] != b["phase"] or a["gripper"] != b["gripper"]:
        return False
    if sorted(a["params"].values()) != sorted(b["params"].values()):
        return False
    fixed = [v for v in ("?obj", "?ref") if v in a["params"]]
    if any(a["params"][v] != b["params"].get(v) for v in fixed):
        return False
    free_a = sorted(v for v in a["params"] if v not in fixed)
    free_b = [v for v in b["params"] if v not in fixed]
    for perm in itertools.permutations(free_b):
        sigma = dict(zip(free_a, perm), **{v: v for v in fixed})
        if any(a["params"][v] != b["params"][sigma[v]] for v in free_a):
            continue
        ren = lambda s: frozenset((p, tuple(sigma[x] for x in args)) for p, args in s)  # noqa: E731
        if all(ren(a[k]) == b[k] for k in ("pre", "add", "delete", "maintain")):
            return True
    return False


def match_operators(learned: list, truth: list) -> tuple:
    """(matched count, unmatched learned names, unmatched truth indices)."""
    plain = [(op.name, _as_plain(op)) for op in learned]
    left = list(range(len(truth)))
    unmatched = []
    for name, p in plain:
        hit = next((i for i in left if same_up_to_renaming(p, truth[i])), None)
        if hit is None:
            unmatched.append(name)
        else:
            left.remove(hit)
    return len(plain) - len(unmatched), unmatched, left


# --------------------------------------------------------------------------
# acceptance summary: one line per criterion, shown after the run

ACCEPTANCE_LINES: dict = {}


def record_criterion(n: int, ok: bool, detail: str) -> None:
    line = f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES[n] = line
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[n])
