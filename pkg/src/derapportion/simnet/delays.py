"""Seeded per-edge message delays.

The delay of the message sent on edge ``e`` at round ``k`` is a pure function of
``(seed, instant, k, channel, e)``: every engine, whatever order it visits the
nodes in, sees the same delays.
"""

from __future__ import annotations

import numpy as np

MASS = 0
EXTREMUM = 1

UNIFORM = "uniform"
FIXED = "fixed"
DELAY_MODELS = (UNIFORM, FIXED)


def draw_delays(seed: int, instant: int, send_round: int, channel: int, n_edges: int,
                tau_bar: int, model: str = UNIFORM) -> np.ndarray:
    if tau_bar == 0 or n_edges == 0:
        return np.zeros(n_edges, dtype=np.int64)
    if model == UNIFORM:
        rng = np.random.default_rng([seed, instant, send_round, channel])
    elif model == FIXED:
        rng = np.random.default_rng([seed, channel])
    else:
        raise ValueError(f"unknown delay model {model!r}")
    return rng.integers(0, tau_bar + 1, size=n_edges)
