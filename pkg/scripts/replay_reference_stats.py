#!/usr/bin/env python3
"""Replay the bundled reference score and rank tables through the statistics layer.

This exercises the exactly-reproducible part of the pipeline without training
anything: ranking the aggregate-score table, then the Friedman statistic, the
Iman-Davenport correction and the F-test decision from the rank table.
"""

import sys
from pathlib import Path

ROOT = Path(__file__).resolve().parent.parent
sys.path.insert(0, str(ROOT / "src"))

from horizonbench.cli import cmd_stats

FIXTURES = ROOT / "tests" / "fixtures"


def main() -> int:
    print("=== ranking derived from the reference aggregate scores ===")
    code = cmd_stats(str(FIXTURES / "reference_scores.csv"), alpha=0.05)
    print()
    print("=== reference rank table replayed through the test ===")
    return code or cmd_stats(None, alpha=0.05,
                             rank_fixture=str(FIXTURES / "reference_ranks.csv"))


if __name__ == "__main__":
    sys.exit(main())
