"""A* over ground-atom states with unit action costs."""

from __future__ import annotations

import heapq
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

from .errors import ParseError, SchemaError, SearchBudgetExceeded, Unreachable
from .operators import ground_all
from .predicates import GroundAtom


@dataclass(frozen=True)
class PlanSkeleton:
    steps: tuple  # GroundOp, in order

    def __len__(self):
        return len(self.steps)

    def __iter__(self):
        return iter(self.steps)

    def listing(self) -> str:
        return "\n".join(f"{i + 1}. {s}" for i, s in enumerate(self.steps)) or "(empty plan)"


@dataclass(frozen=True)
class Goal:
    atoms: frozenset

    def satisfied(self, state: frozenset) -> bool:
        return self.atoms <= state

    def check_names(self, known: set) -> None:
        bad = sorted({a.predicate for a in self.atoms} - set(known))
        if bad:
            raise SchemaError(f"unknown predicates in goal: {bad}")

    def to_json(self) -> str:
        atoms = [{"predicate": a.predicate, "args": list(a.args)} for a in sorted(self.atoms)]
        return json.dumps({"goal": atoms})


def load_goal(source) -> Goal:
    """Parse ``{"goal": [{"predicate": ..., "args": [...]}, ...]}`` from a path or str."""
    text = Path(source).read_text() if isinstance(source, Path) or (isinstance(source, str) and not source.lstrip().startswith("{")) else source
    try:
        d = json.loads(text)
    except json.JSONDecodeError as e:
        raise ParseError(f"goal file: {e}") from e
    try:
        return Goal(frozenset(GroundAtom(a["predicate"], tuple(a["args"])) for a in d["goal"]))
    except (KeyError, TypeError) as e:
        raise SchemaError(f"goal file: {e}") from e


def _heuristic(state: frozenset, goal: frozenset, per_step: int) -> int:
    missing = len(goal - state)
    return math.ceil(missing / per_step) if missing else 0


def plan(
    s0: frozenset,
    goal,
    ops: list,
    objects: dict,
    node_cap: int = 1_000_000,
    ground: Optional[list] = None,
) -> PlanSkeleton:
    """Minimal-length skeleton from ``s0`` to a superset of ``goal``.

    The heuristic counts missing goal atoms, divided by the most goal atoms a
    single instance can add so that it stays admissible.
    """
    goal_atoms = goal.atoms if isinstance(goal, Goal) else frozenset(goal)
    s0 = frozenset(s0)
    if goal_atoms <= s0:
        return PlanSkeleton(())
    instances = ground if ground is not None else ground_all(ops, objects)
    instances = sorted(instances, key=lambda g: (g.op_name, g.args))
    per_step = max([len(g.add & goal_atoms) for g in instances] + [1])

    counter = 0
    frontier = [(_heuristic(s0, goal_atoms, per_step), 0, counter, s0)]
    parent: dict = {s0: None}
    cost = {s0: 0}
    closed = set()
    expanded = 0
    while frontier:
        f, g, _, state = heapq.heappop(frontier)
        if state in closed:
            continue
        if goal_atoms <= state:
            steps = []
            while parent[state] is not None:
                prev, inst = parent[state]
                steps.append(inst)
                state = prev
            return PlanSkeleton(tuple(reversed(steps)))
        closed.add(state)
        expanded += 1
        if expanded > node_cap:
            raise SearchBudgetExceeded(f"expanded more than {node_cap} nodes")
        for inst in instances:
            if not inst.pre <= state:
                continue
            nxt = inst.apply(state)
            if nxt in closed:
                continue
            if g + 1 < cost.get(nxt, math.inf):
                cost[nxt] = g + 1
                parent[nxt] = (state, inst)
                counter += 1
                heapq.heappush(frontier, (g + 1 + _heuristic(nxt, goal_atoms, per_step), g + 1, counter, nxt))
    raise Unreachable("goal is unreachable from the initial state")


def validate(skeleton, s0: frozenset, goal) -> bool:
    goal_atoms = goal.atoms if isinstance(goal, Goal) else frozenset(goal)
    state = frozenset(s0)
    for inst in skeleton:
        if not inst.pre <= state:
            return False
        state = inst.apply(state)
    return goal_atoms <= state
