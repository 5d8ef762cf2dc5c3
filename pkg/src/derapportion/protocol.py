"""Per-node finite-time ratio consensus with staged max/min tracking.

Each node carries a numerator/denominator mass pair ``(r, s)`` whose ratio
converges to ``sum(r0) / sum(s0)``, plus trackers ``z`` (max) and ``w`` (min)
that flood the network once per epoch. When the flooded spread ``z - w`` falls
below ``rho`` every node stops at the same epoch boundary.

Round clock
-----------
``k`` counts rounds from the start of a command instant. Epoch ``theta`` spans
rounds ``((theta-1)T, theta T]`` with ``T = D(1 + tau_bar) + tau_bar``. Inside an
epoch, stage ``gamma`` ends at local round ``gamma (tau_bar + 1)``; stages
restart from 1 when the trackers are reset, so every epoch contains exactly
``D`` complete stages followed by ``tau_bar`` settling rounds.

At a reset the trackers take the node's own extreme ratio over its last
``tau_bar + 1`` rounds, so after ``D`` stages they hold the network-wide window
extrema ``M(k)`` / ``m(k)``. These are the quantities that contract
monotonically across epochs when messages are delayed.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Mapping, Sequence

import numpy as np


class ProtocolViolation(RuntimeError):
    """A node was driven outside the contract of the round clock."""


class EpochCapExceeded(RuntimeError):
    def __init__(self, epochs: int, gap: float):
        super().__init__(f"no termination after {epochs} epochs (extrema gap {gap:.6g})")
        self.epochs = epochs
        self.gap = gap


@dataclass(frozen=True)
class NodeState:
    node_id: int
    r: float
    s: float
    z: float
    w: float
    k: int = 0
    gamma: int = 1
    theta: int = 1
    converged: bool = False
    r_star: float | None = None
    s_star: float | None = None
    recent_ratios: tuple[float, ...] = ()
    window: int = 1
    early_ratio: float | None = None
    early_theta: int | None = None

    @property
    def ratio(self) -> float:
        return self.r / self.s


@dataclass(frozen=True)
class MassMessage:
    src: int
    dst: int
    sigma_r: float
    sigma_s: float
    send_round: int
    deliver_round: int
    edge: int


@dataclass(frozen=True)
class ExtremumMessage:
    src: int
    dst: int
    z: float
    w: float
    stage_index: tuple[int, int]  # (theta, gamma) of the sender when emitted
    send_round: int
    deliver_round: int


def initial_state(node_id: int, r0: float, s0: float, tau_bar: int) -> NodeState:
    if not s0 > 0:
        raise ProtocolViolation(f"node {node_id}: initial denominator must be positive, got {s0}")
    q = r0 / s0
    return NodeState(node_id, float(r0), float(s0), q, q, recent_ratios=(q,), window=tau_bar + 1)


def local_round(state: NodeState, T: int) -> int:
    return state.k - (state.theta - 1) * T


def is_stage_boundary(state: NodeState, tau_bar: int, T: int) -> bool:
    return local_round(state, T) == state.gamma * (tau_bar + 1)


def is_epoch_boundary(state: NodeState, T: int) -> bool:
    return state.k == state.theta * T


def ratio_update(state: NodeState, delivered: Sequence[MassMessage], self_weight: float) -> NodeState:
    """Advance the mass pair one round using every message due next round.

    Deliveries are summed in (send round, edge) order so that any engine
    reproduces the same floating-point result.
    """
    if state.converged:
        raise ProtocolViolation(f"node {state.node_id} is converged")
    nxt = state.k + 1
    acc_r = 0.0
    acc_s = 0.0
    for m in sorted(delivered, key=lambda m: (m.send_round, m.edge)):
        if m.dst != state.node_id:
            raise ProtocolViolation(f"message for node {m.dst} delivered to node {state.node_id}")
        if m.deliver_round != nxt:
            raise ProtocolViolation(
                f"node {state.node_id}: message due at round {m.deliver_round} consumed at {nxt}")
        acc_r += m.sigma_r
        acc_s += m.sigma_s
    r = self_weight * state.r + acc_r
    s = self_weight * state.s + acc_s
    recent = (state.recent_ratios + (r / s,))[-state.window:]
    return replace(state, r=r, s=s, k=nxt, recent_ratios=recent)


def emit_masses(state: NodeState, out_weight: float, out_neighbors: Sequence[int],
                edges: Sequence[int], delay_draw: Mapping[int, int] | Sequence[int]) -> list[MassMessage]:
    """One message per out-neighbor carrying ``out_weight * (r, s)``.

    ``edges[n]`` is the global index of the edge to ``out_neighbors[n]`` and
    ``delay_draw`` is indexed by that global edge index.
    """
    if state.converged:
        raise ProtocolViolation(f"node {state.node_id} is converged")
    sr = out_weight * state.r
    ss = out_weight * state.s
    return [
        MassMessage(state.node_id, j, sr, ss, state.k, state.k + 1 + int(delay_draw[e]), e)
        for j, e in zip(out_neighbors, edges)
    ]


def emit_extrema(state: NodeState, out_neighbors: Sequence[int], edges: Sequence[int],
                 delay_draw: Mapping[int, int] | Sequence[int]) -> list[ExtremumMessage]:
    tag = (state.theta, state.gamma)
    return [
        ExtremumMessage(state.node_id, j, state.z, state.w, tag, state.k,
                        state.k + 1 + int(delay_draw[e]))
        for j, e in zip(out_neighbors, edges)
    ]


def extremum_stage_update(state: NodeState, stage_msgs: Sequence[ExtremumMessage],
                          tau_bar: int, T: int) -> NodeState:
    if not is_stage_boundary(state, tau_bar, T):
        raise ProtocolViolation(
            f"node {state.node_id}: stage update at round {state.k} is off a stage boundary")
    z, w = state.z, state.w
    tag = (state.theta, state.gamma)
    for m in stage_msgs:
        if m.stage_index != tag:
            raise ProtocolViolation(f"node {state.node_id}: stage {m.stage_index} message in stage {tag}")
        z = max(z, m.z)
        w = min(w, m.w)
    return replace(state, z=z, w=w, gamma=state.gamma + 1)


def epoch_check(state: NodeState, rho: float, T: int) -> NodeState:
    """Terminate when the flooded spread is below ``rho``, otherwise reset trackers.

    On reset the node records its current ratio as the early-dispatch snapshot
    for the new epoch index.
    """
    if not is_epoch_boundary(state, T):
        raise ProtocolViolation(f"node {state.node_id}: epoch check at round {state.k} off boundary")
    if state.z - state.w < rho:
        return replace(state, converged=True, r_star=state.r, s_star=state.s)
    theta = state.theta + 1
    return replace(
        state,
        z=max(state.recent_ratios),
        w=min(state.recent_ratios),
        theta=theta,
        gamma=1,
        early_ratio=state.r / state.s,
        early_theta=theta,
    )


@dataclass
class EpochEvent:
    """What a node reports at an epoch boundary: the checked trackers and the outcome."""

    node_id: int
    theta: int
    z: float
    w: float
    converged: bool
    snapshot: float | None


class NodeProcess:
    """One node's executor: owns its state and the extremum inbox of the current stage."""

    def __init__(self, state: NodeState, self_weight: float, out_neighbors: Sequence[int],
                 out_edges: Sequence[int], tau_bar: int, T: int, rho: float):
        self.state = state
        self.self_weight = self_weight
        self.out_neighbors = tuple(out_neighbors)
        self.out_edges = tuple(out_edges)
        self.tau_bar = tau_bar
        self.T = T
        self.rho = rho
        self.stage_inbox: list[ExtremumMessage] = []

    def step(self, mass_in: Sequence[MassMessage], ext_in: Sequence[ExtremumMessage],
             mass_delays, ext_delays):
        """Process round ``k -> k+1``; returns ``(emissions, epoch_event | None)``."""
        st = ratio_update(self.state, mass_in, self.self_weight)
        tag = (st.theta, st.gamma)
        # late arrivals from an earlier stage carry nothing new and are dropped
        self.stage_inbox.extend(m for m in ext_in if m.stage_index == tag)
        if is_stage_boundary(st, self.tau_bar, self.T):
            st = extremum_stage_update(st, self.stage_inbox, self.tau_bar, self.T)
            self.stage_inbox = []
        event = None
        if is_epoch_boundary(st, self.T):
            z, w, theta = st.z, st.w, st.theta
            st = epoch_check(st, self.rho, self.T)
            self.stage_inbox = []
            event = EpochEvent(st.node_id, theta, z, w, st.converged,
                               None if st.converged else st.early_ratio)
        self.state = st
        if st.converged:
            return ([], []), event
        return (
            emit_masses(st, self.self_weight, self.out_neighbors, self.out_edges, mass_delays),
            emit_extrema(st, self.out_neighbors, self.out_edges, ext_delays),
        ), event


# --- centralized oracles (tests and audits only) ---------------------------

def oracle_consensus_ratio(r0, s0) -> float:
    total_s = float(np.sum(s0))
    if not total_s > 0:
        raise ValueError("sum of initial denominators must be positive")
    return float(np.sum(r0)) / total_s


def oracle_window_extrema(r_hist, s_hist, k: int, tau_bar: int) -> tuple[float, float]:
    """Max and min of ``r_j / s_j`` over all nodes and rounds ``k - tau_bar .. k``.

    Histories are indexed by round from the start of the command instant;
    rounds before 0 do not exist and are not part of the window.
    """
    r_hist = np.asarray(r_hist, dtype=float)
    s_hist = np.asarray(s_hist, dtype=float)
    if k < 0 or k >= len(r_hist) or len(s_hist) != len(r_hist):
        raise ValueError(f"history does not cover round {k}")
    lo = max(0, k - tau_bar)
    s = s_hist[lo:k + 1]
    if np.any(s == 0):
        raise ValueError("zero denominator in window")
    q = r_hist[lo:k + 1] / s
    return float(q.max()), float(q.min())
