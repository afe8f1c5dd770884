"""Lifted operator induction from abstracted episode boundaries.

Every episode yields up to two transitions (premotion, motion). A transition
is lifted by giving the motion object the variable ``?obj``, the reference
``?ref`` and every other object a ``?<type><n>`` name in first-use order.
Transitions with identical lifted effects form one operator whose
precondition and maintain sets are the intersections over its members.
"""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field
from typing import NamedTuple, Optional

from .errors import TypeMismatch
from .predicates import GroundAtom, Libraries, abstract_range
from .world import CLOSED, OPEN

log = logging.getLogger(__name__)

PREMOTION = "premotion"
MOTION = "motion"


class LiftedAtom(NamedTuple):
    predicate: str
    args: tuple  # variable names

    def __str__(self):
        return f"{self.predicate}({', '.join(self.args)})"


@dataclass(frozen=True)
class BoundaryStates:
    s_before_pre: frozenset
    s_start: frozenset
    s_after: frozenset
    held_pre: frozenset  # atoms true at every sample of [t0, t_start]
    held_motion: frozenset  # atoms true at every sample of [t_start, t_stop]


def _intersect(states) -> frozenset:
    states = list(states)
    out = set(states[0])
    for s in states[1:]:
        out &= s
    return frozenset(out)


def boundary_states(demos: list, episodes: list, libs: Libraries) -> list:
    out = []
    for demo, eps in zip(demos, episodes):
        per = []
        for ep in eps:
            pre_states = abstract_range(demo, ep.t0, ep.t_start + 1, libs)
            mot_states = abstract_range(demo, ep.t_start, ep.t_stop + 1, libs)
            after = abstract_range(demo, ep.post_end, ep.post_end + 1, libs)[0]
            per.append(
                BoundaryStates(pre_states[0], mot_states[0], after, _intersect(pre_states), _intersect(mot_states))
            )
        out.append(per)
    return out


@dataclass(frozen=True)
class Transition:
    demo: int
    episode: int
    phase: str
    s0: frozenset
    s1: frozenset
    held: frozenset
    roles: tuple  # ((object id, variable), ...)
    types: tuple  # ((object id, type), ...)
    gripper: str


def transitions_from(demos: list, episodes: list, boundaries: list) -> list:
    out = []
    for d, (demo, eps, bnds) in enumerate(zip(demos, episodes, boundaries)):
        types = tuple(sorted(demo.state(0).typed_objects().items()))
        for e, (ep, b) in enumerate(zip(eps, bnds)):
            if ep.t_start > ep.t0:
                out.append(
                    Transition(
                        d, e, PREMOTION, b.s_before_pre, b.s_start, b.held_pre,
                        ((ep.motion_object, "?obj"),), types, demo.state(ep.t_start).gripper,
                    )
                )
            out.append(
                Transition(
                    d, e, MOTION, b.s_start, b.s_after, b.held_motion,
                    ((ep.motion_object, "?obj"), (ep.reference_object, "?ref")), types,
                    demo.state(ep.post_end).gripper,
                )
            )
    return out


def lift_transition(tr: Transition):
    """Returns (varmap id->var, var types, lifted s0, s1, held)."""
    types = dict(tr.types)
    varmap = dict(tr.roles)
    add = tr.s1 - tr.s0
    delete = tr.s0 - tr.s1
    effects = add | delete

    def key(atom):
        return (
            0 if atom in effects else 1,
            atom.predicate,
            tuple(varmap.get(a, "~" + types.get(a, "")) for a in atom.args),
            atom.args,
        )

    counts: dict = {}
    for atom in sorted(tr.s0 | tr.s1 | tr.held, key=key):
        for a in atom.args:
            if a not in varmap:
                t = types[a]
                varmap[a] = f"?{t}{counts.get(t, 0)}"
                counts[t] = counts.get(t, 0) + 1
    var_types = {v: types[o] for o, v in varmap.items()}

    def lift(s):
        return frozenset(LiftedAtom(a.predicate, tuple(varmap[x] for x in a.args)) for a in s)

    return varmap, var_types, lift(tr.s0), lift(tr.s1), lift(tr.held)


@dataclass
class Operator:
    name: str
    phase: str
    params: tuple  # ((variable, type), ...)
    pre: frozenset
    add: frozenset
    delete: frozenset
    maintain: frozenset
    gripper: str = OPEN
    skill_ref: Optional[str] = None
    segments: list = field(default_factory=list)  # (demo, episode, phase)

    def __post_init__(self):
        if self.add & self.delete:
            raise ValueError(f"{self.name}: add and delete overlap")
        pvars = {v for v, _ in self.params}
        for atom in self.pre | self.add | self.delete | self.maintain:
            missing = set(atom.args) - pvars
            if missing:
                raise ValueError(f"{self.name}: variables {missing} not in params")

    @property
    def param_types(self) -> dict:
        return dict(self.params)

    def to_dict(self) -> dict:
        enc = lambda s: [[a.predicate, list(a.args)] for a in sorted(s)]  # noqa: E731
        return {
            "name": self.name,
            "phase": self.phase,
            "params": [list(p) for p in self.params],
            "pre": enc(self.pre),
            "add": enc(self.add),
            "del": enc(self.delete),
            "maintain": enc(self.maintain),
            "gripper": self.gripper,
            "skill_ref": self.skill_ref,
            "segments": [list(s) for s in self.segments],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Operator":
        dec = lambda s: frozenset(LiftedAtom(p, tuple(a)) for p, a in s)  # noqa: E731
        return cls(
            d["name"], d["phase"], tuple(tuple(p) for p in d["params"]), dec(d["pre"]), dec(d["add"]),
            dec(d["del"]), dec(d["maintain"]), d.get("gripper", OPEN), d.get("skill_ref"),
            [tuple(s) for s in d.get("segments", [])],
        )

    def listing(self) -> str:
        fmt = lambda s: ", ".join(sorted(str(a) for a in s)) or "-"  # noqa: E731
        params = " ".join(f"{v}:{t}" for v, t in self.params)
        return (
            f"{self.name}({params})\n  pre: {fmt(self.pre)}\n  add: {fmt(self.add)}\n"
            f"  del: {fmt(self.delete)}\n  maintain: {fmt(self.maintain)}\n  gripper: {self.gripper}"
        )


def induce_operators(transitions: list) -> list:
    groups: dict = {}
    order = []
    for tr in transitions:
        varmap, vtypes, s0, s1, held = lift_transition(tr)
        add, delete = s1 - s0, s0 - s1
        if not add and not delete:
            log.warning("demo %d episode %d %s: no symbolic effect, transition dropped", tr.demo, tr.episode, tr.phase)
            continue
        key = (tr.phase, add, delete)
        if key not in groups:
            groups[key] = []
            order.append(key)
        groups[key].append((tr, vtypes, s0, held))

    # deterministic order independent of demonstration order
    def sort_key(key):
        phase, add, delete = key
        return (phase != PREMOTION, sorted(add), sorted(delete))

    ops = []
    counts: dict = {}
    for key in sorted(order, key=sort_key):
        phase, add, delete = key
        members = groups[key]
        pre = _intersect(m[2] for m in members)
        maintain = _intersect(m[3] for m in members)
        vtypes = {}
        for m in members:
            vtypes.update(m[1])
        used = {v for a in pre | add | delete | maintain for v in a.args} | {"?obj"} | ({"?ref"} if phase == MOTION else set())
        params = tuple(sorted(((v, vtypes[v]) for v in used), key=lambda p: (p[0] not in ("?obj", "?ref"), p[0] != "?obj", p[0])))
        grippers = {m[0].gripper for m in members}
        gripper = CLOSED if grippers == {CLOSED} else OPEN
        if len(grippers) > 1:
            log.warning("operator group %s mixes gripper outcomes; using open", key[0])
        stem = "_".join([phase, vtypes["?obj"]] + ([vtypes["?ref"]] if phase == MOTION else []))
        n = counts.get(stem, 0)
        counts[stem] = n + 1
        name = f"{stem}_{n}"
        ops.append(
            Operator(
                name, phase, params, pre, add, delete, maintain, gripper, skill_ref=name,
                segments=[(m[0].demo, m[0].episode, phase) for m in members],
            )
        )
    return ops


# --------------------------------------------------------------------------
# grounding


@dataclass(frozen=True)
class GroundOp:
    op_name: str
    args: tuple  # object ids in params order
    pre: frozenset
    add: frozenset
    delete: frozenset
    maintain: frozenset

    def __str__(self):
        return f"{self.op_name}({', '.join(self.args)})"

    def applicable(self, state: frozenset) -> bool:
        return self.pre <= state

    def apply(self, state: frozenset) -> frozenset:
        return (state - self.delete) | self.add

    @property
    def key(self) -> tuple:
        return (self.op_name, self.args)


def _ground_set(atoms, binding) -> frozenset:
    return frozenset(GroundAtom(a.predicate, tuple(binding[v] for v in a.args)) for a in atoms)


def ground(op: Operator, binding: dict, state: Optional[frozenset] = None, objects: Optional[dict] = None):
    """Ground ``op`` under ``binding``. With ``state`` given, returns None when
    the instance is not applicable. ``objects`` (id -> type) enables type checks."""
    for v, t in op.params:
        if v not in binding:
            raise TypeMismatch(f"{op.name}: binding misses {v}")
        if objects is not None:
            if binding[v] not in objects:
                raise TypeMismatch(f"{op.name}: unknown object {binding[v]!r}")
            if objects[binding[v]] != t:
                raise TypeMismatch(f"{op.name}: {v} needs {t}, {binding[v]} is {objects[binding[v]]}")
    inst = GroundOp(
        op.name,
        tuple(binding[v] for v, _ in op.params),
        _ground_set(op.pre, binding),
        _ground_set(op.add, binding),
        _ground_set(op.delete, binding),
        _ground_set(op.maintain, binding),
    )
    if state is not None and not inst.applicable(state):
        return None
    return inst


def ground_all(ops: list, objects: dict) -> list:
    """Every type-consistent binding of every operator (``objects``: id -> type)."""
    by_type: dict = {}
    for oid in sorted(objects):
        by_type.setdefault(objects[oid], []).append(oid)
    out = []
    seen = set()
    for op in ops:
        domains = [by_type.get(t, []) for _, t in op.params]
        for combo in itertools.product(*domains):
            binding = {v: o for (v, _), o in zip(op.params, combo)}
            inst = ground(op, binding)
            if inst.key not in seen:
                seen.add(inst.key)
                out.append(inst)
    return out


def operators_listing(ops: list) -> str:
    return "\n\n".join(op.listing() for op in ops)
