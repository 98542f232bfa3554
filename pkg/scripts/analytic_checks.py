"""Objective tables for the four hand-built return matrices and the exact
minimal coverage sets of the curated policy universes.  Runs in seconds."""

from fractions import Fraction

import numpy as np

from mcsforge.diversity import brdiv_objective, lipo_objective
from mcsforge.envs import MATRIX_PAYOFF, WEIGHTED_REACH_PAYOFF, EnvSpec
from mcsforge.mcs_oracle import coverage_report, policy_universe

MATRICES = {
    "matrix game, identity population": MATRIX_PAYOFF,
    "matrix game, two-action population": np.array([[10, 0, 0], [0, 6, 6], [0, 6, 6]]),
    "weighted reaching, four corners": WEIGHTED_REACH_PAYOFF,
    "weighted reaching, two corners": np.array([[10, 10, 0, 0], [10, 10, 0, 0], [0, 0, 10, 10], [0, 0, 10, 10]]),
}


def main():
    alphas = [Fraction(1, 10), Fraction(1, 2), Fraction(1), Fraction(5)]
    print("population".ljust(38), "method", *(f"a={a}".rjust(8) for a in alphas))
    for name, R in MATRICES.items():
        exact = [[Fraction(int(x)) for x in row] for row in R]
        for method, f in (("brdiv", brdiv_objective), ("lipo", lipo_objective)):
            print(name.ljust(38), method.ljust(6), *(str(f(exact, a)).rjust(8) for a in alphas))
    print()
    for env in ("RepeatedMatrix", "CoopReach", "WeightedCoopReach"):
        print(coverage_report(policy_universe(EnvSpec(env, grid_dim=None))).to_text())


if __name__ == "__main__":
    main()
