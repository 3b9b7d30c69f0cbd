"""How fast the two array-limit conditions shrink as the array size grows."""

import argparse

import numpy as np

from survivorlab.arrays import corollary5_condition_values
from survivorlab.model import AttributeDistribution, AttributeFunction, ObservationWindow


def main() -> None:
    p = argparse.ArgumentParser()
    p.add_argument("--a", type=float, default=0.3)
    p.add_argument("--sizes", type=int, nargs="+", default=[100, 300, 1000, 3000, 10000])
    p.add_argument("--seed", type=int, default=0)
    args = p.parse_args()
    dist = AttributeDistribution.uniform()
    a = AttributeFunction.constant(args.a)
    B = ObservationWindow.of(0.0, 0.5)
    rng = np.random.default_rng(args.seed)
    print(f"{'n':>6} {'val22':>10} {'val23':>10} {'method':>12}")
    for n in args.sizes:
        cv = corollary5_condition_values(n, dist, a, B, rng=rng)
        print(f"{n:>6} {cv.val22:>10.5f} {cv.val23:>10.5f} {cv.method:>12}")


if __name__ == "__main__":
    main()
