"""Built-in scene layouts and scripted corpora.

``tabletop`` mirrors a play-data roster: two things, a lid, a pan, a dish
rack and two plates. ``kitchen`` is a cabinet with a hinged door, a counter
and a piece of cheese, used for multi-step composition.
"""

from __future__ import annotations

import math

from .simulator import Scenario

DOWN = [0.0, 1.0, 0.0, 0.0]  # ee z-axis pointing at the table

TABLETOP_TYPES = ["thing_type", "lid_type", "cookware_type", "cabinet_type", "drawer_type", "container_type"]
KITCHEN_TYPES = ["thing_type", "cabinet_type", "door_type", "counter_type", "obstacle_type"]

# initial arrangement is tidier than the demonstrator's placements
_SLOT_JITTER = {"pos": 0.003, "yaw": math.radians(2.0)}


def _fixture(oid, typ, xy, slot_z, z=0.0):
    return {
        "id": oid,
        "type": typ,
        "pose": {"p": [xy[0], xy[1], z], "q": [1, 0, 0, 0]},
        "graspable": False,
        "place_offset": {"p": [0, 0, slot_z], "q": [1, 0, 0, 0]},
    }


def _movable(oid, typ, rest_on, grasp_z=0.03):
    return {
        "id": oid,
        "type": typ,
        "rest_on": rest_on,
        "jitter": dict(_SLOT_JITTER),
        "grasp_offset": {"p": [0, 0, grasp_z], "q": DOWN},
    }


def tabletop_scenario(placement: dict, script=(), seed: int = 0, name: str = "tabletop") -> Scenario:
    """``placement`` maps block/banana/lid to the fixture they start on."""
    objects = [
        _fixture("pan", "cookware_type", (0.60, 0.00), 0.04),
        _fixture("dishrack", "cabinet_type", (0.60, 0.35), 0.06),
        _fixture("red_plate", "drawer_type", (0.30, -0.30), 0.02),
        _fixture("white_plate", "container_type", (0.60, -0.35), 0.02),
        _movable("lid", "lid_type", placement["lid"], 0.02),
        _movable("banana", "thing_type", placement["banana"]),
        _movable("block", "thing_type", placement["block"]),
    ]
    return Scenario(
        seed=seed,
        types=list(TABLETOP_TYPES),
        objects=objects,
        ee={"p": [0.40, 0.0, 0.30], "q": DOWN},
        script=[dict(s) for s in script],
        name=name,
    )


def _pp(target, ref):
    return {"intent": "pickplace", "target": target, "reference": ref}


# Each entry: initial placement, then the episode script. No two things share
# a fixture and things only enter the pan while the lid sits on the rack.
TABLETOP_PLAY = [
    (
        {"lid": "pan", "banana": "white_plate", "block": "red_plate"},
        [_pp("lid", "dishrack"), _pp("banana", "pan"), _pp("block", "white_plate"), _pp("banana", "red_plate"), _pp("lid", "pan")],
    ),
    (
        {"lid": "dishrack", "banana": "pan", "block": "white_plate"},
        [_pp("banana", "red_plate"), _pp("block", "pan"), _pp("banana", "white_plate"), _pp("block", "red_plate"), _pp("lid", "pan")],
    ),
    (
        {"lid": "pan", "banana": "red_plate", "block": "white_plate"},
        [_pp("lid", "dishrack"), _pp("banana", "pan"), _pp("block", "red_plate"), _pp("banana", "white_plate"), _pp("block", "pan")],
    ),
    (
        {"lid": "dishrack", "banana": "white_plate", "block": "red_plate"},
        [_pp("block", "pan"), _pp("banana", "red_plate"), _pp("block", "white_plate"), _pp("lid", "pan")],
    ),
    (
        {"lid": "pan", "banana": "white_plate", "block": "red_plate"},
        [_pp("lid", "dishrack"), _pp("block", "pan"), _pp("banana", "red_plate"), _pp("block", "white_plate"), _pp("lid", "pan")],
    ),
    (
        {"lid": "pan", "banana": "red_plate", "block": "white_plate"},
        [_pp("lid", "dishrack"), _pp("lid", "pan"), _pp("lid", "dishrack"), _pp("banana", "pan")],
    ),
]


def tabletop_corpus(seed: int = 0, repeats: int = 2) -> list[Scenario]:
    return [
        tabletop_scenario(place, script, seed=seed * 1000 + 10 * r + i, name=f"tabletop{r}_{i}")
        for r in range(repeats)
        for i, (place, script) in enumerate(TABLETOP_PLAY)
    ]


def kitchen_scenario(cheese_on: str = "cabinet", door_q: float = 0.0, script=(), seed: int = 0,
                     name: str = "kitchen", obstacle=None) -> Scenario:
    # hinge frame: x along the closed door (world -y), z = world -z, so
    # increasing q swings the handle toward the robot (world -x)
    s = math.sqrt(0.5)
    hinge_q = [0.0, -s, s, 0.0]
    objects = [
        _fixture("cabinet", "cabinet_type", (0.75, 0.25), 0.03, z=0.20),
        _fixture("counter", "counter_type", (0.35, -0.30), 0.03),
        {
            "id": "door",
            "type": "door_type",
            "kind": "articulated",
            "articulation": {
                "joint": "revolute",
                "origin": {"p": [0.55, 0.45, 0.25], "q": hinge_q},
                "offset": {"p": [0.30, 0.0, 0.0], "q": [1, 0, 0, 0]},
                "range": [0.0, 1.5],
                "q": door_q,
                "open_q": 1.3,
                "parent": "cabinet",
            },
            # approach the handle along -y of the door frame
            "grasp_offset": {"p": [0.0, 0.03, 0.0], "q": [s, s, 0.0, 0.0]},
        },
        _movable("cheese", "thing_type", cheese_on),
    ]
    if obstacle is not None:
        objects.append(
            {
                "id": "vase",
                "type": "obstacle_type",
                "pose": {"p": list(obstacle["center"]), "q": [1, 0, 0, 0]},
                "graspable": False,
                "ellipsoid": {"center": [0, 0, 0], "axes": list(obstacle["axes"])},
            }
        )
    return Scenario(
        seed=seed,
        types=list(KITCHEN_TYPES),
        objects=objects,
        ee={"p": [0.40, 0.0, 0.30], "q": DOWN},
        script=[dict(x) for x in script],
        name=name,
    )


def _door(intent):
    return {"intent": intent, "target": "door", "reference": "cabinet"}


KITCHEN_PLAY = [
    ("cabinet", [_door("open"), _pp("cheese", "counter"), _door("close")]),
    ("counter", [_door("open"), _pp("cheese", "cabinet"), _door("close")]),
]


def kitchen_corpus(seed: int = 0, repeats: int = 10) -> list[Scenario]:
    out = []
    for r in range(repeats):
        for i, (cheese_on, script) in enumerate(KITCHEN_PLAY):
            out.append(
                kitchen_scenario(cheese_on, 0.0, script, seed=seed * 1000 + 10 * r + i, name=f"kitchen{r}_{i}")
            )
    return out


def single_pickplace_scenario(seed: int = 0) -> Scenario:
    return tabletop_scenario(
        {"lid": "dishrack", "banana": "white_plate", "block": "red_plate"},
        [{**_pp("banana", "pan"), "double_approach": False}],
        seed=seed,
        name="single",
    )


# Evaluation tasks: start placement, a goal placement and the (object, fixture)
# pairs of it that the goal asks for. Goals are read off the goal placement
# with the learned predicates, so they are independent of cluster naming.
_ALL_PLATES = {"lid": "dishrack", "banana": "white_plate", "block": "red_plate"}

TABLETOP_TASKS = [
    ("PanBanana", _ALL_PLATES, {"lid": "dishrack", "banana": "pan", "block": "red_plate"}, [("banana", "pan")]),
    ("PanBlock", _ALL_PLATES, {"lid": "dishrack", "banana": "white_plate", "block": "pan"}, [("block", "pan")]),
    ("UncoverPan", {"lid": "pan", "banana": "white_plate", "block": "red_plate"}, _ALL_PLATES, [("lid", "dishrack")]),
    ("CoverPan", _ALL_PLATES, {"lid": "pan", "banana": "white_plate", "block": "red_plate"}, [("lid", "pan")]),
    ("BananaToRed", {"lid": "dishrack", "banana": "white_plate", "block": "pan"},
     {"lid": "dishrack", "banana": "red_plate", "block": "pan"}, [("banana", "red_plate")]),
    ("BlockToWhite", {"lid": "dishrack", "banana": "red_plate", "block": "pan"},
     {"lid": "dishrack", "banana": "red_plate", "block": "white_plate"}, [("block", "white_plate")]),
    ("UncoverAndFill", {"lid": "pan", "banana": "white_plate", "block": "red_plate"},
     {"lid": "dishrack", "banana": "pan", "block": "red_plate"}, [("banana", "pan")]),
    ("SwapPlates", _ALL_PLATES, {"lid": "dishrack", "banana": "red_plate", "block": "white_plate"},
     [("banana", "red_plate"), ("block", "white_plate")]),
    ("ClearAndCover", {"lid": "dishrack", "banana": "pan", "block": "white_plate"},
     {"lid": "pan", "banana": "red_plate", "block": "white_plate"}, [("lid", "pan"), ("banana", "red_plate")]),
    ("ClearPan", {"lid": "dishrack", "banana": "pan", "block": "white_plate"},
     {"lid": "dishrack", "banana": "red_plate", "block": "white_plate"}, [("banana", "red_plate")]),
    ("LongPlay", {"lid": "pan", "banana": "white_plate", "block": "red_plate"},
     {"lid": "dishrack", "banana": "pan", "block": "white_plate"}, [("banana", "pan"), ("block", "white_plate")]),
    ("Tidy", {"lid": "dishrack", "banana": "pan", "block": "red_plate"},
     {"lid": "pan", "banana": "white_plate", "block": "red_plate"}, [("banana", "white_plate"), ("lid", "pan")]),
]


def tabletop_task_suite(seed: int = 0) -> dict:
    tasks = []
    for i, (name, start, goal, pairs) in enumerate(TABLETOP_TASKS):
        tasks.append(
            {
                "name": name,
                "scenario": tabletop_scenario(start, seed=seed * 1000 + i, name=name).to_dict(),
                "goal_example": {
                    "scenario": tabletop_scenario(goal, seed=seed * 1000 + 500 + i).to_dict(),
                    "pairs": [list(p) for p in pairs],
                },
            }
        )
    return {"tasks": tasks}


def store_cheese_task(seed: int = 0, disturbances=()) -> dict:
    """Cheese inside the closed cabinet; goal: door closed and cheese on the counter."""
    start = kitchen_scenario("cabinet", 0.0, seed=seed, name="StoreCheese")
    start.disturbances = [dict(d) for d in disturbances]
    return {
        "name": "StoreCheese",
        "scenario": start.to_dict(),
        "goal_example": {
            "scenario": kitchen_scenario("counter", 0.0, seed=seed + 1).to_dict(),
            "pairs": [["door", "cabinet"], ["cheese", "counter"]],
        },
    }
