"""Residuals of the Poisson-stationarity functional for a ranked and an
unranked constant kernel over a grid of deletion probabilities."""

import argparse

from survivorlab.model import AttributeDistribution, ranked_kernel, unranked_kernel
from survivorlab.theory import default_test_functions, stationarity_sweep


def main() -> None:
    p = argparse.ArgumentParser()
    p.add_argument("--a", type=float, nargs="+", default=[0.1, 0.3, 0.5, 0.9])
    args = p.parse_args()
    dist = AttributeDistribution.uniform()
    fns = default_test_functions(dist)
    print(f"{'kernel':<10} {'a':>5} {'max residual':>14}")
    for a in args.a:
        for label, k in (("ranked", ranked_kernel(a)), ("unranked", unranked_kernel(a))):
            worst = max(r.residual for r in stationarity_sweep(k, dist, fns))
            print(f"{label:<10} {a:>5.2f} {worst:>14.3e}")


if __name__ == "__main__":
    main()
