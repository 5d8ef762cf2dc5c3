"""Round engines that run the protocol for one command instant.

Three interchangeable engines produce bit-identical rounds:

``reference``
    one :class:`~derapportion.protocol.NodeProcess` per node, visited in id
    order, exchanging explicit message objects;
``parallel``
    the same node processes stepped concurrently on a thread pool, with a
    barrier between rounds;
``vector``
    all nodes at once on numpy arrays (the fast path for large graphs).
"""

from __future__ import annotations

from collections import defaultdict, deque
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from ..protocol import (
    EpochCapExceeded,
    NodeProcess,
    ProtocolViolation,
    emit_extrema,
    emit_masses,
    initial_state,
)
from ..topology import Graph, WeightAssignment, epoch_length
from .delays import EXTREMUM, MASS, UNIFORM, draw_delays


@dataclass
class EpochOutcome:
    """Network-wide result of one epoch boundary."""

    k: int
    theta: int  # epoch that just ended
    z: np.ndarray
    w: np.ndarray
    converged: bool
    snapshot: np.ndarray | None  # r/s at the boundary, absent on termination

    @property
    def next_theta(self) -> int:
        return self.theta + 1


@dataclass
class RoundState:
    k: int
    r: np.ndarray
    s: np.ndarray
    z: np.ndarray
    w: np.ndarray
    theta: int
    converged: bool
    inflight_r: float
    inflight_s: float
    inflight_count: int
    epoch: EpochOutcome | None = None


class InstantEngine:
    """Shared setup; subclasses implement :meth:`_advance` and :meth:`current`."""

    name = "base"

    def __init__(self, graph: Graph, weights: WeightAssignment, r0, s0, *, tau_bar: int,
                 D: int, rho: float, seed: int = 0, instant: int = 0,
                 delay_model: str = UNIFORM, epoch_cap: int = 200):
        self.graph = graph
        self.weights = weights
        self.n = graph.node_count
        self.tau_bar = tau_bar
        self.D = D
        self.T = epoch_length(D, tau_bar)
        self.rho = rho
        self.seed = seed
        self.instant = instant
        self.delay_model = delay_model
        self.epoch_cap = epoch_cap
        self.r0 = np.asarray(r0, dtype=float).copy()
        self.s0 = np.asarray(s0, dtype=float).copy()
        if self.r0.shape != (self.n,) or self.s0.shape != (self.n,):
            raise ValueError("initial masses must have one entry per node")
        if np.any(~(self.s0 > 0)):
            raise ProtocolViolation("every initial denominator must be positive")
        self.k = 0
        self.done = False

    def _delays(self, send_round: int, channel: int) -> np.ndarray:
        return draw_delays(self.seed, self.instant, send_round, channel, len(self.graph.edges),
                           self.tau_bar, self.delay_model)

    def step(self) -> RoundState:
        if self.done:
            raise ProtocolViolation("instant already terminated")
        st = self._advance()
        ep = st.epoch
        if ep is not None:
            if ep.converged:
                self.done = True
            elif ep.theta >= self.epoch_cap:
                raise EpochCapExceeded(ep.theta, float(np.max(ep.z) - np.min(ep.w)))
        return st

    def run(self):
        states = [self.current()]
        while not self.done:
            states.append(self.step())
        return states

    def current(self) -> RoundState:
        raise NotImplementedError

    def _advance(self) -> RoundState:
        raise NotImplementedError

    def terminal_ratios(self) -> np.ndarray:
        raise NotImplementedError


# --- message-object engines -------------------------------------------------

class ReferenceEngine(InstantEngine):
    name = "reference"

    def __init__(self, *args, **kwargs):
        super().__init__(*args, **kwargs)
        g = self.graph
        eidx = g.edge_index
        self.nodes = [
            NodeProcess(
                initial_state(i, self.r0[i], self.s0[i], self.tau_bar),
                self.weights.self_weight(i),
                g.out_neighbors[i],
                [eidx[(i, j)] for j in g.out_neighbors[i]],
                self.tau_bar, self.T, self.rho,
            )
            for i in range(self.n)
        ]
        # deliver_round -> dst -> messages
        self.mass_box: dict[int, dict[int, list]] = defaultdict(lambda: defaultdict(list))
        self.ext_box: dict[int, dict[int, list]] = defaultdict(lambda: defaultdict(list))
        md, ed = self._delays(0, MASS), self._delays(0, EXTREMUM)
        emissions = [
            (emit_masses(p.state, p.self_weight, p.out_neighbors, p.out_edges, md),
             emit_extrema(p.state, p.out_neighbors, p.out_edges, ed))
            for p in self.nodes
        ]
        self._route(emissions)

    def _route(self, emissions):
        for masses, extrema in emissions:
            for m in masses:
                self.mass_box[m.deliver_round][m.dst].append(m)
            for m in extrema:
                self.ext_box[m.deliver_round][m.dst].append(m)

    def _step_nodes(self, nxt, md, ed):
        mass = self.mass_box.pop(nxt, {})
        ext = self.ext_box.pop(nxt, {})
        return [p.step(mass.get(p.state.node_id, ()), ext.get(p.state.node_id, ()), md, ed)
                for p in self.nodes]

    def _advance(self) -> RoundState:
        nxt = self.k + 1
        md, ed = self._delays(nxt, MASS), self._delays(nxt, EXTREMUM)
        results = self._step_nodes(nxt, md, ed)
        self.k = nxt
        self._route([em for em, _ in results])
        events = [ev for _, ev in results]
        epoch = None
        if any(ev is not None for ev in events):
            if any(ev is None for ev in events):
                raise ProtocolViolation(f"round {nxt}: only some nodes reached an epoch boundary")
            conv = {ev.converged for ev in events}
            if len(conv) != 1:
                raise ProtocolViolation(f"round {nxt}: nodes disagree on termination")
            converged = conv.pop()
            epoch = EpochOutcome(
                nxt, events[0].theta,
                np.array([ev.z for ev in events]), np.array([ev.w for ev in events]),
                converged,
                None if converged else np.array([ev.snapshot for ev in events]),
            )
        st = self.current()
        st.epoch = epoch
        return st

    def current(self) -> RoundState:
        sts = [p.state for p in self.nodes]
        ir = is_ = 0.0
        count = 0
        for box in self.mass_box.values():
            for msgs in box.values():
                for m in msgs:
                    if m.send_round >= self.k:
                        continue
                    ir += m.sigma_r
                    is_ += m.sigma_s
                    count += 1
        return RoundState(
            self.k,
            np.array([x.r for x in sts]), np.array([x.s for x in sts]),
            np.array([x.z for x in sts]), np.array([x.w for x in sts]),
            sts[0].theta, sts[0].converged, ir, is_, count,
        )

    def terminal_ratios(self) -> np.ndarray:
        return np.array([p.state.r_star / p.state.s_star for p in self.nodes])


class ParallelEngine(ReferenceEngine):
    """Node processes stepped concurrently; routing stays on the calling thread."""

    name = "parallel"

    def __init__(self, *args, workers: int = 4, **kwargs):
        super().__init__(*args, **kwargs)
        self.pool = ThreadPoolExecutor(max_workers=workers)

    def _step_nodes(self, nxt, md, ed):
        mass = self.mass_box.pop(nxt, {})
        ext = self.ext_box.pop(nxt, {})

        def one(p):
            i = p.state.node_id
            return p.step(mass.get(i, ()), ext.get(i, ()), md, ed)

        # map() returns in submission order and waits for every node: the round barrier
        return list(self.pool.map(one, self.nodes))

    def step(self) -> RoundState:
        try:
            st = super().step()
        except BaseException:
            self.pool.shutdown(wait=False)
            raise
        if self.done:
            self.pool.shutdown()
        return st


# --- array engine -------------------------------------------------------------

class VectorEngine(InstantEngine):
    name = "vector"

    def __init__(self, *args, **kwargs):
        super().__init__(*args, **kwargs)
        g = self.graph
        edges = np.array(g.edges, dtype=np.int64).reshape(-1, 2)
        self.src = edges[:, 0]
        self.dst = edges[:, 1]
        self.pw = np.array(self.weights.out_weight, dtype=float)
        self.r = self.r0.copy()
        self.s = self.s0.copy()
        q = self.r / self.s
        self.z = q.copy()
        self.w = q.copy()
        self.recent = deque([q], maxlen=self.tau_bar + 1)
        self.theta = 1
        self.gamma = 1
        self.converged = False
        self.r_star = None
        self.s_star = None
        self.pending: dict[int, list[np.ndarray]] = {}
        self.pending_count: dict[int, int] = {}
        self.pending_ext: dict[int, list] = {}
        self._reset_stage()
        self._inflight = (0.0, 0.0, 0)
        self._emit(0)

    def _reset_stage(self):
        self.acc_z = np.full(self.n, -np.inf)
        self.acc_w = np.full(self.n, np.inf)

    def _emit(self, k: int):
        if not len(self.src):
            return
        sr = self.pw[self.src] * self.r[self.src]
        ss = self.pw[self.src] * self.s[self.src]
        d = self._delays(k, MASS)
        for dv in np.unique(d):
            sel = d == dv
            buf = self.pending.get(k + 1 + int(dv))
            if buf is None:
                buf = self.pending[k + 1 + int(dv)] = [np.zeros(self.n), np.zeros(self.n)]
            self.pending_count[k + 1 + int(dv)] = (
                self.pending_count.get(k + 1 + int(dv), 0) + int(sel.sum()))
            np.add.at(buf[0], self.dst[sel], sr[sel])
            np.add.at(buf[1], self.dst[sel], ss[sel])
        tag = (self.theta, self.gamma)
        zs = self.z[self.src]
        ws = self.w[self.src]
        d = self._delays(k, EXTREMUM)
        for dv in np.unique(d):
            sel = d == dv
            self.pending_ext.setdefault(k + 1 + int(dv), []).append(
                (tag, self.dst[sel], zs[sel], ws[sel]))

    def _advance(self) -> RoundState:
        nxt = self.k + 1
        T, tb = self.T, self.tau_bar
        buf = self.pending.pop(nxt, None)
        self.pending_count.pop(nxt, None)
        if buf is None:
            buf = [np.zeros(self.n), np.zeros(self.n)]
        self.r = self.pw * self.r + buf[0]
        self.s = self.pw * self.s + buf[1]
        self.recent.append(self.r / self.s)
        self.k = nxt

        tag = (self.theta, self.gamma)
        for mtag, dst, zv, wv in self.pending_ext.pop(nxt, ()):
            if mtag == tag:
                np.maximum.at(self.acc_z, dst, zv)
                np.minimum.at(self.acc_w, dst, wv)
        local = nxt - (self.theta - 1) * T
        if local == self.gamma * (tb + 1):
            self.z = np.maximum(self.z, self.acc_z)
            self.w = np.minimum(self.w, self.acc_w)
            self.gamma += 1
            self._reset_stage()

        epoch = None
        if nxt == self.theta * T:
            z, w = self.z.copy(), self.w.copy()
            stop = (z - w) < self.rho
            if stop.any() and not stop.all():
                raise ProtocolViolation(f"round {nxt}: nodes disagree on termination")
            theta = self.theta
            self._reset_stage()
            if stop.all():
                self.converged = True
                self.r_star, self.s_star = self.r.copy(), self.s.copy()
                epoch = EpochOutcome(nxt, theta, z, w, True, None)
            else:
                window = np.stack(self.recent)
                self.z = window.max(axis=0)
                self.w = window.min(axis=0)
                self.theta += 1
                self.gamma = 1
                epoch = EpochOutcome(nxt, theta, z, w, False, self.r / self.s)
        self._inflight = self._pending_totals()
        if not self.converged:
            self._emit(nxt)
        st = self.current()
        st.epoch = epoch
        return st

    def _pending_totals(self):
        ir = is_ = 0.0
        for k in sorted(self.pending):
            buf = self.pending[k]
            ir += float(np.sum(buf[0]))
            is_ += float(np.sum(buf[1]))
        return ir, is_, sum(self.pending_count.values())

    def current(self) -> RoundState:
        """State after round ``k``; in-flight totals exclude what was sent this round,
        since that mass is still counted in the senders' ``r`` and ``s``."""
        ir, is_, count = self._inflight
        return RoundState(self.k, self.r.copy(), self.s.copy(), self.z.copy(), self.w.copy(),
                          self.theta, self.converged, ir, is_, count)

    def terminal_ratios(self) -> np.ndarray:
        return self.r_star / self.s_star


ENGINES = {
    "reference": ReferenceEngine,
    "parallel": ParallelEngine,
    "vector": VectorEngine,
}


def make_engine(name: str, *args, **kwargs) -> InstantEngine:
    try:
        cls = ENGINES[name]
    except KeyError:
        raise ValueError(f"unknown engine {name!r}; choose from {sorted(ENGINES)}") from None
    return cls(*args, **kwargs)
