"""Task suites: goal resolution, repeated execution and metrics tables."""

from __future__ import annotations

import csv
import io

import numpy as np

from .bundle import ModelBundle
from .executor import execute
from .planner import Goal
from .predicates import GroundAtom, abstract
from .simulator import Scenario, build_world


def resolve_goal(bundle: ModelBundle, spec: dict) -> Goal:
    """A goal spec is either explicit atoms or an example scenario plus the
    object pairs whose relations should match it."""
    if "goal" in spec:
        return Goal(frozenset(GroundAtom(a["predicate"], tuple(a["args"])) for a in spec["goal"]))
    ex = spec["goal_example"]
    world = build_world(Scenario.from_dict(ex["scenario"]), bundle.config.sim)
    state = abstract(world.snapshot(), bundle.libraries)
    pairs = {tuple(p) for p in ex["pairs"]}
    return Goal(frozenset(a for a in state if a.args in pairs))


def trial_seed(seed: int, task: int, trial: int) -> int:
    return seed * 100003 + task * 1009 + trial


def evaluate_suite(bundle: ModelBundle, suite: dict, trials: int, seed: int = 0, excfg=None) -> list:
    """Rows of (task, trials, success rate, mean replans, mean resamples, mean plan ms)."""
    rows = []
    if trials <= 0:
        return rows
    for ti, task in enumerate(suite["tasks"]):
        goal = resolve_goal(bundle, task)
        base = Scenario.from_dict(task["scenario"])
        wins, replans, resamples, lat = 0, [], [], []
        for k in range(trials):
            sc = base.with_seed(trial_seed(seed, ti, k))
            rep = execute(goal, build_world(sc, bundle.config.sim), bundle, excfg, seed + k, sc.disturbances)
            wins += rep.success
            replans.append(rep.replans)
            resamples.append(rep.resamples)
            lat.extend(rep.plan_wall_s)
        rows.append((task["name"], trials, wins / trials, float(np.mean(replans)), float(np.mean(resamples)),
                     1000 * float(np.mean(lat)) if lat else 0.0))
    return rows


def _fmt(x) -> str:
    if isinstance(x, str):
        return x
    if isinstance(x, (int, np.integer)):
        return str(x)
    return f"{x:.3f}"


def metrics_table(rows: list, timing: bool = True) -> tuple:
    """(csv text, aligned text table); an average row closes a non-empty table."""
    header = ["task", "trials", "success", "replans", "resamples"] + (["plan_ms"] if timing else [])
    body = [list(r[: len(header)]) for r in rows]
    if body:
        body.append(["average", sum(r[1] for r in body)] + [float(np.mean([r[i] for r in body])) for i in range(2, len(header))])
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    cells = [header] + [[_fmt(x) for x in r] for r in body]
    for r in cells[1:]:
        w.writerow(r)
    widths = [max(len(c[i]) for c in cells) for i in range(len(header))]
    lines = ["  ".join(c[i].ljust(widths[i]) if i == 0 else c[i].rjust(widths[i]) for i in range(len(header))) for c in cells]
    return buf.getvalue(), "\n".join(lines)
