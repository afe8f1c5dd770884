"""Command line: simulate-demos, learn, execute, eval, rollout, make-goal."""

from __future__ import annotations

import csv
import json
import logging
import sys
from pathlib import Path

import click

from .bundle import ModelBundle
from .evaluation import evaluate_suite, metrics_table, resolve_goal
from .config import Config
from .errors import CoskillError
from .executor import SUCCESS, execute
from .geometry import Pose
from .planner import load_goal
from .simulator import Scenario, build_world, generate_play
from .world import load_demonstrations, save_demonstrations

log = logging.getLogger("coskill")
_ERRORS = (CoskillError, ValueError, KeyError, OSError)


class _Ctx:
    def __init__(self, config_path, seed):
        self.config_path = config_path
        self.config = Config.load(config_path) if config_path else Config()
        if seed is not None:
            self.config.seed = seed
        self.seed = self.config.seed


def _fail(e: Exception) -> None:
    click.echo(f"error: {type(e).__name__}: {e}", err=True)
    sys.exit(2)


@click.group()
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False), default=None, help="JSON config file")
@click.option("--seed", type=int, default=None, help="overrides the config seed")
@click.option("--log-level", default="WARNING", show_default=True)
@click.pass_context
def main(ctx, config_path, seed, log_level):
    logging.basicConfig(level=getattr(logging, log_level.upper(), logging.WARNING), format="%(levelname)s %(name)s: %(message)s")
    try:
        ctx.obj = _Ctx(config_path, seed)
    except _ERRORS as e:
        _fail(e)


# --------------------------------------------------------------------------


def annotations_path(demos_path) -> Path:
    p = Path(demos_path)
    return p.with_name(p.name + ".annotations.json")


@main.command("simulate-demos")
@click.option("--suite", type=click.Choice(["tabletop", "kitchen", "single"]), default=None)
@click.option("--scenario", "scenario_path", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--repeats", type=int, default=None, help="corpus repeats (suite default if omitted)")
@click.option("--out", required=True, type=click.Path(dir_okay=False))
@click.pass_obj
def simulate_demos(obj, suite, scenario_path, repeats, out):
    """Run the scripted demonstrator; writes demos plus an annotation sidecar."""
    from . import scenarios

    if (suite is None) == (scenario_path is None):
        raise click.UsageError("give exactly one of --suite or --scenario")
    try:
        if scenario_path:
            scens = [Scenario.load(scenario_path)]
        elif suite == "tabletop":
            scens = scenarios.tabletop_corpus(obj.seed, **({"repeats": repeats} if repeats else {}))
        elif suite == "kitchen":
            scens = scenarios.kitchen_corpus(obj.seed, **({"repeats": repeats} if repeats else {}))
        else:
            scens = [scenarios.single_pickplace_scenario(obj.seed + i) for i in range(repeats or 1)]
        demos, anns = [], []
        for sc in scens:
            d, a = generate_play(sc, obj.config.sim)
            demos.append(d)
            anns.append(a)
        save_demonstrations(demos, out)
        annotations_path(out).write_text(json.dumps(anns) + "\n")
    except _ERRORS as e:
        _fail(e)
    minutes = sum(d.times[-1] - d.times[0] for d in demos) / 60.0
    click.echo(f"wrote {len(demos)} demonstrations ({minutes:.1f} min) to {out}")


@main.command()
@click.argument("demos_path", type=click.Path(dir_okay=False))
@click.option("--out", required=True, type=click.Path(dir_okay=False))
@click.option("--annotations", "ann_path", type=click.Path(dir_okay=False), default=None,
              help="ground-truth annotations for the oracle selector (default: the demos sidecar)")
@click.pass_obj
def learn(obj, demos_path, out, ann_path):
    """Segment, select references, fit predicates, induce operators, learn skills."""
    from .pipeline import learn as run_learn
    from .reference import endpoint_from_config

    cfg = obj.config
    try:
        demos = load_demonstrations(demos_path)
        anns = None
        ann_file = Path(ann_path) if ann_path else annotations_path(demos_path)
        if cfg.reference.selector == "oracle":
            if not ann_file.exists():
                raise CoskillError(f"oracle reference selection needs annotations ({ann_file} not found)")
            anns = json.loads(ann_file.read_text())
        endpoint = endpoint_from_config(cfg.reference.endpoint) if cfg.reference.selector == "external" else None
        bundle, summary = run_learn(demos, cfg, anns, endpoint)
        bundle.save(out)
    except _ERRORS as e:
        _fail(e)
    for line in summary.lines():
        click.echo(line)
    click.echo(f"bundle written to {out}")


@main.command("make-goal")
@click.argument("bundle_path", type=click.Path(exists=True, dir_okay=False))
@click.argument("example_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--pair", "pairs", multiple=True, required=True, help="subject:reference, repeatable")
@click.option("--out", required=True, type=click.Path(dir_okay=False))
def make_goal(bundle_path, example_path, pairs, out):
    """Write a goal file holding the relations that hold in an example scene."""
    try:
        bundle = ModelBundle.load(bundle_path)
        spec = {"goal_example": {"scenario": Scenario.load(example_path).to_dict(), "pairs": [p.split(":") for p in pairs]}}
        goal = resolve_goal(bundle, spec)
    except _ERRORS as e:
        _fail(e)
    Path(out).write_text(goal.to_json() + "\n")
    click.echo(f"{len(goal.atoms)} goal atoms written to {out}")


@main.command()
@click.argument("bundle_path", type=click.Path(exists=True, dir_okay=False))
@click.argument("scenario_path", type=click.Path(exists=True, dir_okay=False))
@click.argument("goal_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--report", "report_path", type=click.Path(dir_okay=False), default=None)
@click.option("--telemetry", type=click.Path(dir_okay=False), default=None)
@click.pass_obj
def execute_cmd(obj, bundle_path, scenario_path, goal_path, report_path, telemetry):
    """Run the executor in the simulator. Exit 0 iff the goal is reached."""
    try:
        bundle = ModelBundle.load(bundle_path)
        scenario = Scenario.load(scenario_path)
        goal = load_goal(Path(goal_path))
        goal.check_names(bundle.libraries.by_name().keys() | {"GripperOpen"})
        world = build_world(scenario, bundle.config.sim)
        excfg = obj.config.executor if obj.config_path else bundle.config.executor
        rep = execute(goal, world, bundle, excfg, obj.seed, scenario.disturbances, telemetry)
    except _ERRORS as e:
        _fail(e)
    if report_path:
        rep.save(report_path)
    click.echo(f"{rep.outcome}: replans={rep.replans} resamples={rep.resamples} plan_calls={rep.plan_calls}")
    if rep.plans:
        click.echo("skeleton:")
        for i, s in enumerate(rep.plans[0]):
            click.echo(f"  {i + 1}. {s}")
    if rep.reason:
        click.echo(rep.reason)
    sys.exit(0 if rep.outcome == SUCCESS else 1)


main.add_command(execute_cmd, "execute")


@main.command("eval")
@click.argument("bundle_path", type=click.Path(exists=True, dir_okay=False))
@click.argument("suite_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--trials", type=int, default=10, show_default=True)
@click.option("--csv", "csv_path", type=click.Path(dir_okay=False), default=None)
@click.option("--no-timing", is_flag=True, help="omit wall-clock planning latency (for reproducible output)")
@click.pass_obj
def eval_cmd(obj, bundle_path, suite_path, trials, csv_path, no_timing):
    """Success rate, replans, resamples and planning latency per task."""
    try:
        bundle = ModelBundle.load(bundle_path)
        suite = json.loads(Path(suite_path).read_text())
        excfg = obj.config.executor if obj.config_path else None
        rows = evaluate_suite(bundle, suite, trials, obj.seed, excfg)
    except _ERRORS as e:
        _fail(e)
    text_csv, table = metrics_table(rows, timing=not no_timing)
    if csv_path:
        Path(csv_path).write_text(text_csv)
    click.echo(table)


@main.command()
@click.argument("bundle_path", type=click.Path(exists=True, dir_okay=False))
@click.argument("skill_id")
@click.option("--starts", "starts_path", type=click.Path(exists=True, dir_okay=False), default=None,
              help="CSV of x,y,z[,qw,qx,qy,qz] in the skill frame (default: demonstration starts)")
@click.option("--out", "out_csv", required=True, type=click.Path(dir_okay=False))
@click.option("--plot", "plot_path", type=click.Path(dir_okay=False), default=None, help="vector plot (.svg/.pdf)")
@click.option("--t-max", type=float, default=60.0, show_default=True)
@click.pass_obj
def rollout(obj, bundle_path, skill_id, starts_path, out_csv, plot_path, t_max):
    """Roll a skill out from given starts; write CSV and an x-y projection plot."""
    from .skills import rollout as run_rollout

    try:
        bundle = ModelBundle.load(bundle_path)
        skill = bundle.skill(skill_id)
    except _ERRORS as e:
        _fail(e)
    q_star = skill.orientation_ds.attractor_q
    starts = []
    if starts_path:
        with open(starts_path) as fh:
            for row in csv.reader(fh):
                if not row or row[0].startswith("#") or row[0] == "x":
                    continue
                vals = [float(x) for x in row]
                starts.append(Pose(vals[:3], vals[3:7] if len(vals) >= 7 else q_star))
    else:
        starts = [Pose(d[0], q_star) for d in skill.demos]
    cfg = obj.config.skills
    results = [run_rollout(skill, s, cfg.dt, t_max, cfg.conv_v, cfg.conv_w) for s in starts]
    with open(out_csv, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["rollout", "t", "x", "y", "z", "qw", "qx", "qy", "qz", "converged"])
        for i, r in enumerate(results):
            for t, p, q in zip(r.t, r.pos, r.quat):
                w.writerow([i, format(t, ".6g")] + [format(float(v), ".9g") for v in (*p, *q)] + [int(r.converged)])
    if plot_path:
        plot_rollouts(skill, results, plot_path)
    n_conv = sum(r.converged for r in results)
    click.echo(f"{n_conv}/{len(results)} rollouts converged; written to {out_csv}")


def plot_rollouts(skill, results, path) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(5, 5))
    for i, d in enumerate(skill.demos):
        ax.plot(d[:, 0], d[:, 1], color="0.6", lw=1, label="demonstration" if i == 0 else None, gid=f"demo{i}")
    for i, r in enumerate(results):
        ax.plot(r.pos[:, 0], r.pos[:, 1], color="tab:blue", lw=1.2, label="rollout" if i == 0 else None, gid=f"rollout{i}")
    a = skill.position_ds.attractor
    ax.plot([a[0]], [a[1]], "k*", ms=12, label="attractor", gid="attractor")
    ax.set_xlabel("x [m]")
    ax.set_ylabel("y [m]")
    ax.set_title(skill.id, fontsize=9)
    ax.set_aspect("equal", adjustable="datalim")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


if __name__ == "__main__":
    main()
