"""Simple DER plant models: irradiance-limited PV capacity and ramp-limited tracking."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np


@dataclass(frozen=True)
class PlantState:
    commanded: float
    output: float
    ramp_limit: float  # kW per round


def irradiance_to_capacity(g: float, rating: float, g_stc: float = 1000.0) -> float:
    if g < 0:
        raise ValueError(f"negative irradiance {g}")
    if not g_stc > 0:
        raise ValueError("g_stc must be positive")
    return rating * min(g / g_stc, 1.0)


def plant_track(plant: PlantState, reference: float) -> PlantState:
    if not plant.ramp_limit > 0:
        raise ValueError("ramp_limit must be positive")
    gap = reference - plant.output
    if abs(gap) <= plant.ramp_limit:
        out = reference
    else:
        out = plant.output + np.copysign(plant.ramp_limit, gap)
    return replace(plant, commanded=reference, output=float(out))


def track_all(output: np.ndarray, reference: np.ndarray, ramp: np.ndarray) -> np.ndarray:
    """Vectorized :func:`plant_track` over a fleet."""
    gap = reference - output
    return np.where(np.abs(gap) <= ramp, reference, output + np.copysign(ramp, gap))
