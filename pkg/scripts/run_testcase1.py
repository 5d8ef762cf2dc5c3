"""Test Case I replica: black start of 500 kW on the 250-node, D=19 graph.

    python scripts/run_testcase1.py [--seeds 5] [--tau-bar 0 1 2]

Prints, per delay bound and seed, the epochs and rounds to termination, the
terminal sum against the command, and the first epoch with an early dispatch.
Wall-clock figures assume the scenario's rounds-per-second setting.
"""

import argparse
from dataclasses import replace

import numpy as np

from derapportion.cli import resolve_scenario_path
from derapportion.simnet import load_scenario, run_scenario


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=int, default=5)
    ap.add_argument("--tau-bar", type=int, nargs="+", default=[1])
    ap.add_argument("--rho", type=float, default=None)
    args = ap.parse_args()

    base = load_scenario(resolve_scenario_path("testcase1"))
    if args.rho is not None:
        base = replace(base, rho=args.rho)
    print(f"N={base.n} D={base.diameter_bound()} rho={base.rho} "
          f"rounds/s={base.rounds_per_second}")
    print(f"{'tau':>3} {'seed':>4} {'epochs':>6} {'rounds':>6} {'time[s]':>8} {'sum pi*':>9} "
          f"{'|err|':>7} {'bound':>6} {'early@':>6} {'early sum@4':>11}")
    for tau in args.tau_bar:
        epochs = []
        for seed in range(args.seeds):
            sc = replace(base, tau_bar=tau, seed=seed)
            rec = run_scenario(sc, keep_rows=False).commands[0]
            bound = sc.rho * sum(c.headroom for c in rec.caps)
            early4 = rec.early.get(4)
            epochs.append(rec.epochs)
            print(f"{tau:>3} {seed:>4} {rec.epochs:>6} {rec.rounds:>6} "
                  f"{rec.rounds / sc.rounds_per_second:>8.2f} {rec.dispatch.total:>9.3f} "
                  f"{abs(rec.dispatch.total - 500.0):>7.3f} {bound:>6.2f} "
                  f"{rec.first_early_theta or '-':>6} "
                  f"{'-' if early4 is None else f'{early4.total:.2f}':>11}")
        print(f"    tau_bar={tau}: epochs min {min(epochs)} max {max(epochs)} "
              f"median {np.median(epochs):g}")


if __name__ == "__main__":
    main()
