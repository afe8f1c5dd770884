"""Learn from the tabletop play corpus and evaluate the twelve tabletop tasks.

    python3 scripts/eval_suite.py [--trials 10] [--out results/]
"""

import argparse
import json
from pathlib import Path

from coskill.config import Config
from coskill.evaluation import evaluate_suite, metrics_table
from coskill.pipeline import learn
from coskill.scenarios import tabletop_corpus, tabletop_task_suite
from coskill.simulator import generate_play


def main() -> None:
    ap = argparse.ArgumentParser()
    ap.add_argument("--trials", type=int, default=10)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", default="results")
    args = ap.parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    cfg = Config()
    play = [generate_play(s, cfg.sim) for s in tabletop_corpus(args.seed)]
    bundle, _ = learn([d for d, _ in play], cfg, [a for _, a in play])
    bundle.save(out / "tabletop.bundle")

    suite = tabletop_task_suite(args.seed)
    (out / "tabletop_suite.json").write_text(json.dumps(suite, indent=1))
    text_csv, table = metrics_table(evaluate_suite(bundle, suite, args.trials, args.seed))
    (out / "tabletop_eval.csv").write_text(text_csv)
    print(table)


if __name__ == "__main__":
    main()
