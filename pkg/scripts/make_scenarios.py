"""Regenerate the bundled test-case scenario files.

    python scripts/make_scenarios.py [--out src/derapportion/scenarios]

Both scenarios share one 250-node communication graph with exact diameter 19:
a meshed core with radial branches, built from a fixed seed.
"""

import argparse
from pathlib import Path

import numpy as np

from derapportion.apportion import CommandInstant, DerKind, Mode
from derapportion.simnet import CapacityProfile, Irradiance, Scenario, save_scenario
from derapportion.topology import exact_diameter, feeder_graph

N = 250
DIAMETER = 19
GRAPH_SEED = 2024
CIRCULATING = (0, 1)


def build_graph():
    g = feeder_graph(N, DIAMETER, np.random.default_rng(GRAPH_SEED), core_size=150, core_degree=4)
    assert exact_diameter(g) == DIAMETER
    return g


def testcase1(graph) -> Scenario:
    """Black start of 500 kW over PV units at a fixed 800 W/m^2 plus a few small batteries."""
    rng = np.random.default_rng(1)
    caps = []
    for i in range(N):
        if i % 10 == 9:
            caps.append(CapacityProfile(DerKind.ESS, -5.0, 5.0))
        else:
            caps.append(CapacityProfile(DerKind.RES, 0.0, None, round(float(rng.uniform(3.0, 8.0)), 3)))
    # fleet was already supplying 225 kW before the new command
    ratings = np.array([c.rating or 0.0 for c in caps])
    initial = list(np.round(225.0 * ratings / ratings.sum(), 6))
    return Scenario(
        graph=graph, capacities=caps,
        schedule=[CommandInstant(27.0, Mode.BLACK, 500.0, CIRCULATING)],
        rho=0.01, tau_bar=1, rounds_per_second=20.0, seed=0,
        irradiance=Irradiance((0.0,), (800.0,)), initial_output=initial,
        name="testcase1",
    )


def tc2_irradiance() -> Irradiance:
    times, values = [], []
    rng = np.random.default_rng(7)
    for t in range(0, 1320, 30):
        if t <= 180:
            g = 885.0
        elif t < 800:
            # cloud passage: dips to ~430 W/m^2 and recovers slowly
            depth = np.sin(np.pi * (t - 180) / 620.0)
            g = 560.0 - 130.0 * depth
        else:
            g = 885.0
        times.append(float(t))
        values.append(round(g + float(rng.uniform(-4.0, 4.0)), 2))
    return Irradiance(tuple(times), tuple(values))


def testcase2(graph) -> Scenario:
    """Brown-start tracking of 3620 / 2800 / 3810 kW with RES priority and a 1200 kW battery fleet."""
    rng = np.random.default_rng(2)
    n_ess = 40
    ess = set(int(i) for i in rng.choice(np.arange(2, N), size=n_ess, replace=False))
    pv = [i for i in range(N) if i not in ess]
    raw = rng.uniform(5.0, 30.0, size=len(pv))
    raw *= 4100.0 / raw.sum()
    caps = [None] * N
    for i, r in zip(pv, raw):
        caps[i] = CapacityProfile(DerKind.RES, 0.0, None, round(float(r), 4))
    for i in ess:
        caps[i] = CapacityProfile(DerKind.ESS, -30.0, 30.0)
    irr = tc2_irradiance()
    schedule = [CommandInstant(0.0, Mode.BLACK, 3620.0, CIRCULATING)]
    for t in irr.times[1:]:
        delta = {900.0: -820.0, 1080.0: 1010.0}.get(t, 0.0)
        schedule.append(CommandInstant(t, Mode.BROWN, delta, CIRCULATING))
    return Scenario(
        graph=graph, capacities=caps, schedule=schedule,
        rho=0.01, tau_bar=1, rounds_per_second=20.0, seed=0,
        res_priority=True, irradiance=irr, name="testcase2",
    )


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default=Path(__file__).resolve().parents[1] / "src/derapportion/scenarios")
    args = ap.parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    g = build_graph()
    save_scenario(testcase1(g), out / "testcase1.json")
    save_scenario(testcase2(g), out / "testcase2.json")
    print(f"wrote {out / 'testcase1.json'} and {out / 'testcase2.json'}")


if __name__ == "__main__":
    main()
