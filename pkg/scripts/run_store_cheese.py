"""Learn from the kitchen corpus, then run the cheese-storing task with and
without disturbances and print one line per run.

    python3 scripts/run_store_cheese.py [--seed 123]
"""

import argparse
import time
from pathlib import Path

from coskill.config import Config
from coskill.evaluation import resolve_goal
from coskill.executor import execute
from coskill.pipeline import learn
from coskill.scenarios import kitchen_corpus, store_cheese_task
from coskill.simulator import Scenario, build_world, generate_play

ROOT = Path(__file__).resolve().parents[1]

DISTURBANCES = {
    "none": [],
    "drop": [{"event": "detach", "drop": True, "on": {"op": "motion_thing", "after_s": 0.1}}],
    "push": [{"event": "perturb_attractor", "on": {"op": "motion_thing"}, "offset": [0, 0.08, 0]}],
    "jam": [{"event": "jam", "id": "door", "on": {"op": "premotion_door"}}],
}


def main() -> None:
    ap = argparse.ArgumentParser()
    ap.add_argument("--seed", type=int, default=123)
    ap.add_argument("--config", default=str(ROOT / "configs" / "kitchen.json"))
    args = ap.parse_args()

    cfg = Config.load(args.config)
    t = time.perf_counter()
    play = [generate_play(s, cfg.sim) for s in kitchen_corpus(0)]
    bundle, summary = learn([d for d, _ in play], cfg, [a for _, a in play])
    print(f"learned in {time.perf_counter() - t:.1f} s")
    print("\n".join(summary.lines()))

    for tag, dist in DISTURBANCES.items():
        task = store_cheese_task(args.seed, dist)
        sc = Scenario.from_dict(task["scenario"])
        rep = execute(resolve_goal(bundle, task), build_world(sc, bundle.config.sim), bundle, seed=0, disturbances=sc.disturbances)
        print(f"{tag:5s} {rep.outcome:8s} replans={rep.replans:2d} resamples={rep.resamples} sim_t={rep.sim_time:.1f}s")
        if rep.plans:
            print("      " + " -> ".join(rep.plans[0]))


if __name__ == "__main__":
    main()
