"""Regenerate the checked-in configs and the tabletop ground-truth operators.

    python3 scripts/make_fixtures.py
"""

import subprocess
import sys
from pathlib import Path

from coskill.config import Config

ROOT = Path(__file__).resolve().parents[1]


def main() -> None:
    Config().save(ROOT / "configs" / "default.json")
    kitchen = Config()
    kitchen.predicates.k_clusters = "auto"  # door open/closed share a type pair
    kitchen.save(ROOT / "configs" / "kitchen.json")
    subprocess.run(
        [sys.executable, str(ROOT / "scripts" / "derive_ground_truth.py"), str(ROOT / "tests" / "fixtures" / "tabletop_operators.json")],
        check=True,
    )


if __name__ == "__main__":
    main()
