"""Teammate generation on the repeated matrix game with L-BRDiv and the two
fixed-alpha baselines.  Writes one run directory per (method, seed) plus a
summary table of dominant actions, final multipliers and measured slacks.

    python scripts/matrix_discovery.py --out runs/discovery [--seeds 0,1,2,3]
"""

import argparse
import csv
from pathlib import Path

from mcsforge import cli
from mcsforge.config import apply_overrides, load_config
from mcsforge.diversity import constraint_slacks, lagrange_from_csv
from mcsforge.marl import Population, dominant_actions, matrix_game_returns

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default="runs/discovery")
    ap.add_argument("--seeds", default="0,1,2,3")
    ap.add_argument("--steps", type=int)
    args = ap.parse_args()
    seeds = [int(s) for s in args.seeds.split(",")]
    rows = []
    for method in ("lbrdiv", "brdiv", "lipo"):
        cfg = load_config(CONFIGS / f"desk_matrix_{method}.json")
        if args.steps:
            cfg = apply_overrides(cfg, {"generation.total_steps": args.steps})
        for seed in seeds:
            run = Path(cli.generate_one(cfg, seed, args.out))
            pop, _ = Population.from_bytes((run / "population.npz").read_bytes())
            horizon = cfg.env.spec().make().horizon
            R = matrix_game_returns(pop, horizon)
            s1, s2 = constraint_slacks(R, cfg.generation.tau)
            A = lagrange_from_csv((run / "multipliers.csv").read_text())
            rows.append({"method": method, "seed": seed,
                         "teammate_actions": " ".join(map(str, dominant_actions(pop.teammates, horizon))),
                         "max_multiplier": float(max(A.alpha1.max(), A.alpha2.max())),
                         "min_slack": float(min(s1.min(), s2.min())), "run": str(run)})
            print(rows[-1])
    out = Path(args.out) / "summary.csv"
    with open(out, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        w.writerows(rows)
    print("wrote", out)


if __name__ == "__main__":
    main()
