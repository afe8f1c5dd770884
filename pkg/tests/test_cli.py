import csv
import json

import pytest
from click.testing import CliRunner

from coskill.cli import main
from coskill.evaluation import metrics_table
from coskill.scenarios import single_pickplace_scenario, tabletop_scenario


@pytest.fixture(scope="module")
def workdir(tmp_path_factory, single_learned):
    d = tmp_path_factory.mktemp("cli")
    single_learned[0].save(d / "single.bundle")
    start = single_pickplace_scenario(50)
    start.script = []
    start.save(d / "start.json")
    tabletop_scenario({"lid": "dishrack", "banana": "pan", "block": "red_plate"}, seed=9).save(d / "example.json")
    return d


def run(*args):
    return CliRunner().invoke(main, [str(a) for a in args], catch_exceptions=False)


def test_simulate_and_learn_reproduce_the_fixture_bundle(workdir, single_learned):
    r = run("--seed", 0, "simulate-demos", "--suite", "single", "--repeats", 4, "--out", workdir / "d.jsonl")
    assert r.exit_code == 0, r.output
    assert (workdir / "d.jsonl.annotations.json").exists()
    r = run("learn", workdir / "d.jsonl", "--out", workdir / "learned.bundle")
    assert r.exit_code == 0, r.output
    assert "operators:      2" in r.output
    assert (workdir / "learned.bundle").read_text() == single_learned[0].dumps()


def test_learn_reports_stage_errors(workdir):
    (workdir / "empty.jsonl").write_text("")
    r = run("learn", workdir / "empty.jsonl", "--out", workdir / "x.bundle")
    assert r.exit_code != 0


def test_make_goal_and_execute(workdir):
    r = run("make-goal", workdir / "single.bundle", workdir / "example.json", "--pair", "banana:pan", "--out", workdir / "goal.json")
    assert r.exit_code == 0, r.output
    r = run("execute", workdir / "single.bundle", workdir / "start.json", workdir / "goal.json",
            "--report", workdir / "rep.json", "--telemetry", workdir / "tel.csv")
    assert r.exit_code == 0, r.output
    assert json.loads((workdir / "rep.json").read_text())["outcome"] == "Success"
    assert (workdir / "tel.csv").stat().st_size > 0


def test_execute_impossible_goal_exits_nonzero(workdir):
    goal = {"goal": [{"predicate": "RelPose(thing_type,cookware_type)-0", "args": ["cheese", "pan"]}]}
    (workdir / "imp.json").write_text(json.dumps(goal))
    r = run("execute", workdir / "single.bundle", workdir / "start.json", workdir / "imp.json", "--report", workdir / "imp_rep.json")
    assert r.exit_code == 1
    rep = json.loads((workdir / "imp_rep.json").read_text())
    assert rep["outcome"] == "Failure" and rep["reason"].startswith("Unreachable")


def test_execute_unknown_predicate_is_an_error(workdir):
    (workdir / "bad.json").write_text(json.dumps({"goal": [{"predicate": "Nope", "args": []}]}))
    r = run("execute", workdir / "single.bundle", workdir / "start.json", workdir / "bad.json")
    assert r.exit_code == 2 and "SchemaError" in r.output


def test_rollout_plot_has_demo_and_rollout_curves(workdir):
    r = run("rollout", workdir / "single.bundle", "premotion_thing_type_0", "--out", workdir / "r.csv", "--plot", workdir / "r.svg")
    assert r.exit_code == 0, r.output
    svg = (workdir / "r.svg").read_text()
    assert sum(f'id="demo{i}"' in svg for i in range(10)) == 4
    assert sum(f'id="rollout{i}"' in svg for i in range(10)) == 4
    assert 'id="attractor"' in svg


def test_rollout_from_attractor_is_a_single_row(workdir, single_learned):
    sk = single_learned[0].skill("premotion_thing_type_0")
    a = sk.attractor
    (workdir / "starts.csv").write_text("x,y,z,qw,qx,qy,qz\n" + ",".join(repr(float(v)) for v in (*a.position, *a.orientation)) + "\n")
    r = run("rollout", workdir / "single.bundle", "premotion_thing_type_0", "--starts", workdir / "starts.csv", "--out", workdir / "one.csv")
    assert r.exit_code == 0, r.output
    rows = list(csv.reader(open(workdir / "one.csv")))
    assert len(rows) == 2


def test_rollout_unknown_skill(workdir):
    r = run("rollout", workdir / "single.bundle", "nope", "--out", workdir / "n.csv")
    assert r.exit_code != 0 and "UnknownSkill" in r.output


def test_eval_zero_trials_is_an_empty_table(workdir):
    suite = {"tasks": [{"name": "PanBanana", "scenario": json.loads((workdir / "start.json").read_text()),
                        "goal_example": {"scenario": json.loads((workdir / "example.json").read_text()), "pairs": [["banana", "pan"]]}}]}
    (workdir / "suite.json").write_text(json.dumps(suite))
    r = run("eval", workdir / "single.bundle", workdir / "suite.json", "--trials", 0, "--csv", workdir / "e.csv")
    assert r.exit_code == 0
    assert (workdir / "e.csv").read_text().strip() == "task,trials,success,replans,resamples,plan_ms"


def test_eval_is_reproducible_without_timing(workdir):
    args = ("eval", workdir / "single.bundle", workdir / "suite.json", "--trials", 1, "--no-timing")
    a, b = run(*args), run(*args)
    assert a.exit_code == 0 and a.output == b.output
    lines = a.output.strip().splitlines()
    assert lines[1].split()[:3] == ["PanBanana", "1", "1.000"]
    assert lines[-1].startswith("average")


def test_metrics_table_shape():
    rows = [(f"task{i}", 10, 0.9, 1.0, 0.5, 3.0) for i in range(12)]
    text_csv, table = metrics_table(rows)
    assert len(text_csv.strip().splitlines()) == 14
    lines = table.splitlines()
    assert len(lines) == 14 and lines[-1].startswith("average")
    assert len({len(line) for line in lines}) == 1


def test_bad_config_file(tmp_path):
    p = tmp_path / "c.json"
    p.write_text("{not json")
    r = run("--config", p, "simulate-demos", "--suite", "single", "--out", tmp_path / "d.jsonl")
    assert r.exit_code == 2
