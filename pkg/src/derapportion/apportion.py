"""Command and capacity handling around the consensus protocol.

Turns an aggregator command plus per-DER limits into initial masses, and
maps consensus ratios back to per-DER power references.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from enum import Enum
from typing import Sequence

import numpy as np

log = logging.getLogger(__name__)

EPS_CAP = 1e-6  # kW; minimum headroom so every initial denominator is positive
RES_EPS_FRACTION = 1e-3


class DerKind(str, Enum):
    RES = "RES"
    ESS = "ESS"


class Mode(str, Enum):
    BLACK = "black"
    BROWN = "brown"


class Feasibility(str, Enum):
    FEASIBLE = "feasible"
    OVER_DEMAND = "over_demand"
    UNDER_DEMAND = "under_demand"


class CapacityError(ValueError):
    pass


@dataclass(frozen=True)
class DerCapacity:
    pi_min: float
    pi_max: float
    kind: DerKind = DerKind.RES

    @property
    def headroom(self) -> float:
        return self.pi_max - self.pi_min


@dataclass(frozen=True)
class CommandInstant:
    t_m: float
    mode: Mode
    magnitude: float
    circulating_nodes: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "mode", Mode(self.mode))
        nodes = tuple(int(i) for i in self.circulating_nodes)
        if not nodes:
            raise ValueError("a command needs at least one circulating node")
        if len(set(nodes)) != len(nodes):
            raise ValueError("circulating nodes must be distinct")
        object.__setattr__(self, "circulating_nodes", nodes)

    @property
    def l(self) -> int:
        return len(self.circulating_nodes)


@dataclass
class DispatchVector:
    pi_star: np.ndarray
    residual: float
    feasibility: Feasibility
    theta: int | None = None
    clamp_count: int = 0
    command: float | None = None

    @property
    def total(self) -> float:
        return float(np.sum(self.pi_star))


def normalize_capacity(cap: DerCapacity, eps_cap: float = EPS_CAP) -> DerCapacity:
    """Reject inverted limits and inflate zero headroom to ``eps_cap``."""
    if not (np.isfinite(cap.pi_min) and np.isfinite(cap.pi_max)):
        raise CapacityError(f"non-finite capacity {cap}")
    if cap.pi_max < cap.pi_min:
        raise CapacityError(f"pi_max {cap.pi_max} below pi_min {cap.pi_min}")
    if cap.pi_max - cap.pi_min < eps_cap:
        return replace(cap, pi_max=cap.pi_min + eps_cap)
    return cap


def _arrays(caps: Sequence[DerCapacity]) -> tuple[np.ndarray, np.ndarray]:
    lo = np.array([c.pi_min for c in caps], dtype=float)
    hi = np.array([c.pi_max for c in caps], dtype=float)
    return lo, hi


def _check_caps(caps: Sequence[DerCapacity]):
    for i, c in enumerate(caps):
        if not c.pi_max - c.pi_min > 0:
            raise CapacityError(f"node {i}: headroom must be positive (normalize first)")


def _check_cmd(cmd: CommandInstant, n: int):
    if cmd.l < 1:
        raise ValueError("l must be at least 1")
    bad = [i for i in cmd.circulating_nodes if not 0 <= i < n]
    if bad:
        raise ValueError(f"circulating nodes {bad} not in graph")


def init_black(cmd: CommandInstant, caps: Sequence[DerCapacity]) -> tuple[np.ndarray, np.ndarray]:
    if cmd.mode is not Mode.BLACK:
        raise ValueError("init_black needs an absolute (black-start) command")
    _check_cmd(cmd, len(caps))
    _check_caps(caps)
    lo, hi = _arrays(caps)
    r0 = -lo
    share = cmd.magnitude / cmd.l
    for i in cmd.circulating_nodes:
        r0[i] = share - lo[i]
    return r0, hi - lo


def init_brown(cmd: CommandInstant, caps: Sequence[DerCapacity],
               prev: DispatchVector | None) -> tuple[np.ndarray, np.ndarray]:
    """Re-initialize from the previous allocation plus the commanded change."""
    if cmd.mode is not Mode.BROWN:
        raise ValueError("init_brown needs a delta (brown-start) command")
    if prev is None:
        raise ValueError("brown start needs the previous converged dispatch")
    _check_cmd(cmd, len(caps))
    _check_caps(caps)
    lo, hi = _arrays(caps)
    prev_pi = np.asarray(prev.pi_star, dtype=float)
    if prev_pi.shape != lo.shape:
        raise ValueError("previous dispatch does not match the node count")
    r0 = -lo + prev_pi
    share = cmd.magnitude / cmd.l
    for i in cmd.circulating_nodes:
        r0[i] = share - lo[i] + prev_pi[i]
    return r0, hi - lo


def default_eps_res(cap: DerCapacity, eps_cap: float = EPS_CAP) -> float:
    return max(RES_EPS_FRACTION * cap.pi_max, eps_cap)


def apply_res_priority(cap: DerCapacity, eps_res: float) -> DerCapacity:
    """Shrink a renewable unit's range to the top ``eps_res`` so it is dispatched first."""
    if cap.kind is not DerKind.RES:
        raise ValueError("RES prioritization does not apply to storage")
    if not eps_res > 0:
        raise ValueError("eps_res must be positive")
    return replace(cap, pi_min=cap.pi_max - eps_res)


def prioritize(caps: Sequence[DerCapacity], eps_res: float | None = None) -> list[DerCapacity]:
    """Apply RES prioritization to every RES entry; storage passes through."""
    out = []
    for c in caps:
        if c.kind is DerKind.RES:
            out.append(apply_res_priority(c, eps_res if eps_res is not None else default_eps_res(c)))
        else:
            out.append(c)
    return out


def dispatch_from_ratio(ratio: float, cap: DerCapacity) -> float:
    if ratio <= 0.0:
        if ratio < 0.0:
            log.debug("ratio %r clamped to 0", ratio)
        return cap.pi_min
    if ratio >= 1.0:
        if ratio > 1.0:
            log.debug("ratio %r clamped to 1", ratio)
        return cap.pi_max
    return cap.pi_min + ratio * (cap.pi_max - cap.pi_min)


def dispatch_all(ratios, caps: Sequence[DerCapacity]) -> tuple[np.ndarray, int]:
    """Per-node dispatch and the number of ratios that needed clamping."""
    ratios = np.asarray(ratios, dtype=float)
    pi = np.array([dispatch_from_ratio(float(q), c) for q, c in zip(ratios, caps)])
    clamps = int(np.count_nonzero((ratios < 0.0) | (ratios > 1.0)))
    return pi, clamps


def early_dispatch(snapshot_ratios, caps: Sequence[DerCapacity], theta: int,
                   theta_min: int = 3) -> DispatchVector | None:
    if theta <= theta_min:
        return None
    pi, clamps = dispatch_all(snapshot_ratios, caps)
    return DispatchVector(pi, float("nan"), Feasibility.FEASIBLE, theta=theta, clamp_count=clamps)


def check_feasibility(cmd_abs: float, caps: Sequence[DerCapacity]) -> Feasibility:
    lo, hi = _arrays(caps)
    if cmd_abs > hi.sum():
        return Feasibility.OVER_DEMAND
    if cmd_abs < lo.sum():
        return Feasibility.UNDER_DEMAND
    return Feasibility.FEASIBLE


def clamp_infeasible(kind: Feasibility, caps: Sequence[DerCapacity], cmd_abs: float) -> DispatchVector:
    """Saturate every unit at the limit on the side the command overshoots."""
    lo, hi = _arrays(caps)
    if kind is Feasibility.OVER_DEMAND:
        pi = hi
    elif kind is Feasibility.UNDER_DEMAND:
        pi = lo
    else:
        raise ValueError("clamp_infeasible is only for infeasible commands")
    return DispatchVector(pi.copy(), float(cmd_abs - pi.sum()), kind, command=cmd_abs)
