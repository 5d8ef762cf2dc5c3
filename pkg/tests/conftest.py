"""Shared fixtures: small random instances and the acceptance report hook."""

import numpy as np
import pytest

from derapportion.apportion import CommandInstant, DerKind, Mode
from derapportion.simnet import CapacityProfile, Scenario
from derapportion.topology import random_strongly_connected

ACCEPTANCE_LINES: list[str] = []


def random_caps(n, rng, allow_negative=True):
    caps = []
    for _ in range(n):
        lo = float(rng.uniform(-5.0, 3.0)) if allow_negative else float(rng.uniform(0.0, 3.0))
        hi = lo + float(rng.uniform(0.5, 12.0))
        caps.append(CapacityProfile(DerKind.ESS if lo < 0 else DerKind.RES, lo, hi))
    return caps


def random_scenario(rng, n=None, tau_bar=None, rho=1e-3, demand="feasible", extra=()):
    """A one- or multi-command instance on a random strongly connected digraph.

    ``demand`` is ``feasible``, ``over`` or ``under``; ``extra`` is a sequence
    of brown-start deltas appended after the black start.
    """
    n = int(rng.integers(3, 9)) if n is None else n
    tau_bar = int(rng.integers(0, 4)) if tau_bar is None else tau_bar
    g = random_strongly_connected(n, rng)
    caps = random_caps(n, rng)
    lo = sum(c.pi_min for c in caps)
    hi = sum(c.pi_max for c in caps)
    if demand == "feasible":
        rd = float(rng.uniform(lo, hi))
    elif demand == "over":
        rd = hi + float(rng.uniform(1.0, 50.0))
    else:
        rd = lo - float(rng.uniform(1.0, 50.0))
    l = int(rng.integers(1, n + 1))
    nodes = tuple(int(i) for i in rng.choice(n, size=l, replace=False))
    sched = [CommandInstant(0.0, Mode.BLACK, rd, nodes)]
    for m, delta in enumerate(extra, start=1):
        sched.append(CommandInstant(float(m), Mode.BROWN, float(delta), nodes))
    return Scenario(graph=g, capacities=caps, schedule=sched, rho=rho, tau_bar=tau_bar,
                    seed=int(rng.integers(0, 2**31)), epoch_cap=400, rounds_per_second=1000.0)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
