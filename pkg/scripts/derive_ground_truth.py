"""Ground-truth lifted operators for the tabletop play corpus.

Replays each script symbolically (who rests on which fixture, what is held,
gripper state) with no poses, predicates or segmentation involved, then
lifts and intersects the transitions. Assumes one relation cluster per
(subject type, reference type) pair, which is what the tabletop layout
produces: every fixture has its own type.

    python3 scripts/derive_ground_truth.py tests/fixtures/tabletop_operators.json
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

from coskill.scenarios import TABLETOP_PLAY, tabletop_scenario

GRIPPER = ("GripperOpen", ())


def rel(subj_t, ref_t):
    return f"RelPose({subj_t},{ref_t})-0"


def ee_at(t):
    return f"RelPose(ee,{t})-0"


def atoms(loc, held, types):
    out = {(rel(types[o], types[f]), (o, f)) for o, f in loc.items() if o != held}
    if held is None:
        out.add(GRIPPER)
    else:
        out.add((ee_at(types[held]), (held,)))
    return frozenset(out)


def lift(s0, s1, held, roles, types):
    """Name non-role objects ?<type><n> in order of the sorted atoms they occur in."""
    names = dict(roles)
    effects = (s1 - s0) | (s0 - s1)

    def key(a):
        return (0 if a in effects else 1, a[0], tuple(names.get(x, "~" + types[x]) for x in a[1]), a[1])

    count = {}
    for a in sorted(s0 | s1 | held, key=key):
        for x in a[1]:
            if x not in names:
                names[x] = f"?{types[x]}{count.get(types[x], 0)}"
                count[types[x]] = count.get(types[x], 0) + 1
    lf = lambda s: frozenset((p, tuple(names[x] for x in args)) for p, args in s)  # noqa: E731
    return lf(s0), lf(s1), lf(held), {v: types[o] for o, v in names.items()}


def transitions():
    for placement, script in TABLETOP_PLAY:
        sc = tabletop_scenario(placement, script)
        types = {o["id"]: o["type"] for o in sc.objects}
        loc = dict(placement)
        for step in script:
            obj, dest = step["target"], step["reference"]
            before = atoms(loc, None, types)
            grasped = atoms(loc, obj, types)
            # premotion: held = atoms true throughout the approach (the object
            # itself is masked once grasped, so its resting relation is not)
            yield "premotion", before, grasped, before & grasped, {obj: "?obj"}, types, "closed"
            loc[obj] = dest
            after = atoms(loc, None, types)
            carrying = grasped  # nothing else changes while carrying
            yield "motion", grasped, after, carrying, {obj: "?obj", dest: "?ref"}, types, "open"


def derive() -> list:
    groups = {}
    for phase, s0, s1, held, roles, types, grip in transitions():
        l0, l1, lh, vtypes = lift(s0, s1, held, roles, types)
        key = (phase, l1 - l0, l0 - l1)
        g = groups.setdefault(key, {"pre": l0, "maintain": lh, "types": dict(vtypes), "gripper": grip})
        g["pre"] &= l0
        g["maintain"] &= lh
        g["types"].update(vtypes)
    out = []
    for (phase, add, delete), g in sorted(groups.items(), key=lambda kv: (kv[0][0], sorted(kv[0][1]), sorted(kv[0][2]))):
        used = {v for _, args in g["pre"] | add | delete | g["maintain"] for v in args}
        out.append(
            {
                "phase": phase,
                "gripper": g["gripper"],
                "params": sorted([v, g["types"][v]] for v in used),
                "pre": sorted([p, list(a)] for p, a in g["pre"]),
                "add": sorted([p, list(a)] for p, a in add),
                "delete": sorted([p, list(a)] for p, a in delete),
                "maintain": sorted([p, list(a)] for p, a in g["maintain"]),
            }
        )
    return out


if __name__ == "__main__":
    ops = derive()
    text = json.dumps(ops, indent=1) + "\n"
    if len(sys.argv) > 1:
        Path(sys.argv[1]).parent.mkdir(parents=True, exist_ok=True)
        Path(sys.argv[1]).write_text(text)
        print(f"{len(ops)} operators written to {sys.argv[1]}")
    else:
        print(text)
