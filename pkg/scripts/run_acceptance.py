"""Run the acceptance criteria and print one line per criterion.

    python scripts/run_acceptance.py [--seed N] [--jobs K] [--only 1 4 9]
"""

import argparse
import sys

from survivorlab.acceptance import DEFAULT_SEED, run_all


def main() -> int:
    p = argparse.ArgumentParser()
    p.add_argument("--seed", type=int, default=DEFAULT_SEED)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--only", type=int, nargs="+")
    args = p.parse_args()
    results = run_all(args.seed, args.jobs, echo=print, only=args.only)
    print(f"{sum(r.passed for r in results)}/{len(results)} passed")
    return 0 if all(r.passed for r in results) else 1


if __name__ == "__main__":
    sys.exit(main())
