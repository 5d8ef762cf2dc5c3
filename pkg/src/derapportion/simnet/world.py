"""The simulated DER network: command schedule, protocol rounds, plants and audits."""

from __future__ import annotations

import logging
from collections import deque

import numpy as np

from ..apportion import (
    CommandInstant,
    DispatchVector,
    Feasibility,
    Mode,
    check_feasibility,
    clamp_infeasible,
    dispatch_all,
    early_dispatch,
    init_black,
    init_brown,
)
from ..protocol import EpochCapExceeded, oracle_window_extrema
from ..topology import synthesize_weights
from .engines import RoundState, make_engine
from .scenario import Scenario
from .trace import CheckRecord, CommandRecord, RoundRow, SimTrace

log = logging.getLogger(__name__)


class SimulationError(RuntimeError):
    pass


class CommandFailed(SimulationError):
    def __init__(self, index: int, cause: Exception):
        super().__init__(f"command {index} failed: {cause}")
        self.index = index
        self.cause = cause


class _Active:
    """Book-keeping for the command instant currently being apportioned."""

    def __init__(self, engine, record: CommandRecord, tau_bar: int):
        self.engine = engine
        self.record = record
        self.window = deque(maxlen=tau_bar + 1)
        self.expected: tuple[float, float] | None = None
        self.early: np.ndarray | None = None
        self.sum_r0 = float(np.sum(record.r0))
        self.sum_s0 = float(np.sum(record.s0))
        self.scale_r = float(np.sum(np.abs(record.r0))) or 1.0
        self.scale_s = float(np.sum(np.abs(record.s0)))


class World:
    def __init__(self, scenario: Scenario, engine: str | None = None, keep_rows: bool = True,
                 row_sink=None, audit: bool = True):
        errs = scenario.validate()
        if errs:
            raise SimulationError("invalid scenario: " + "; ".join(errs))
        self.scenario = scenario
        self.engine_name = engine or scenario.engine
        self.graph = scenario.graph
        self.weights = synthesize_weights(self.graph)
        self.D = scenario.diameter_bound()
        self.tau_bar = int(scenario.tau_bar)
        self.audit_enabled = audit
        self.round = 0
        self.started = False
        self.prev: DispatchVector | None = None
        self.command_abs: float | None = None
        self.active: _Active | None = None
        self.trace = SimTrace(scenario.rounds_per_second, rows=[] if keep_rows else None,
                              row_sink=row_sink)
        n = scenario.n
        t0 = scenario.schedule[0].t_m
        raw = [p.at(t0, scenario.irradiance, scenario.g_stc) for p in scenario.capacities]
        span = np.array([max(abs(c.pi_max), abs(c.pi_min), 1e-6) for c in raw])
        self.ramp = scenario.ramp_per_second * span / scenario.rounds_per_second
        init = scenario.initial_output or [0.0] * n
        self.plant_out = np.array(init, dtype=float)
        self.plant_ref = self.plant_out.copy()

    # --- plants -------------------------------------------------------------

    def _advance_plants(self):
        gap = self.plant_ref - self.plant_out
        self.plant_out = np.where(np.abs(gap) <= self.ramp, self.plant_ref,
                                  self.plant_out + np.copysign(self.ramp, gap))
        self.trace.output_total.append(float(self.plant_out.sum()))
        self.trace.reference_total.append(float(self.plant_ref.sum()))

    def idle_round(self):
        self.round += 1
        self._advance_plants()

    # --- command instants ---------------------------------------------------

    def begin(self, index: int, cmd: CommandInstant):
        sc = self.scenario
        start = int(round(cmd.t_m * sc.rounds_per_second))
        if self.started:
            start = max(start, self.round + 1)
            if start > int(round(cmd.t_m * sc.rounds_per_second)):
                log.info("command %d starts late at round %d (previous instant still running)",
                         index, start)
        while self.round < start:
            self.idle_round()
        self.started = True

        caps = sc.capacities_at(cmd.t_m)
        mode = cmd.mode
        if mode is Mode.BLACK:
            command_abs = cmd.magnitude
            r0, s0 = init_black(cmd, caps)
        else:
            if self.prev is None:
                raise SimulationError(f"command {index}: brown start without a previous dispatch")
            command_abs = self.command_abs + cmd.magnitude
            if self.prev.feasibility is Feasibility.FEASIBLE:
                r0, s0 = init_brown(cmd, caps, self.prev)
            else:
                # a clamped allocation does not sum to the old command, so the
                # delta would not telescope; restart from the absolute value
                mode = Mode.BLACK
                r0, s0 = init_black(CommandInstant(cmd.t_m, Mode.BLACK, command_abs,
                                                   cmd.circulating_nodes), caps)
        record = CommandRecord(index, cmd, mode, command_abs, self.round, caps, r0, s0)
        engine = make_engine(
            self.engine_name, self.graph, self.weights, r0, s0,
            tau_bar=self.tau_bar, D=self.D, rho=sc.rho, seed=sc.seed, instant=index,
            delay_model=sc.delay_model, epoch_cap=sc.epoch_cap,
        )
        self.trace.commands.append(record)
        self.active = _Active(engine, record, self.tau_bar)
        st = engine.current()
        self._observe(st)

    def _observe(self, st: RoundState):
        self._audit_round(st)
        self._record_row(st)

    def _record_row(self, st: RoundState):
        act = self.active
        rec = act.record
        self.trace.append(RoundRow(rec.start_round + st.k, st.r, st.s, st.z, st.w, st.theta,
                                   st.converged, act.early))
        self.trace.inflight.append((rec.start_round + st.k, st.inflight_count,
                                    st.inflight_r, st.inflight_s))

    def _audit_round(self, st: RoundState):
        act = self.active
        act.window.append((st.r, st.s))
        if not self.audit_enabled:
            return
        au = self.trace.audit
        au.rounds_checked += 1
        tot_r = float(np.sum(st.r)) + st.inflight_r
        tot_s = float(np.sum(st.s)) + st.inflight_s
        au.conservation_rel_r = max(au.conservation_rel_r, abs(tot_r - act.sum_r0) / act.scale_r)
        au.conservation_rel_s = max(au.conservation_rel_s, abs(tot_s - act.sum_s0) / act.scale_s)
        if np.any(~(st.s > 0)):
            au.positivity_violations += 1
        if st.k == 0:
            act.expected = self._window_extrema(act)

    def _window_extrema(self, act: _Active) -> tuple[float, float]:
        r_hist = np.stack([r for r, _ in act.window])
        s_hist = np.stack([s for _, s in act.window])
        return oracle_window_extrema(r_hist, s_hist, len(r_hist) - 1, self.tau_bar)

    def _on_epoch(self, st: RoundState):
        act = self.active
        rec = act.record
        ep = st.epoch
        check = CheckRecord(ep.theta, ep.k, float(ep.z.max()), float(ep.w.min()), ep.converged,
                            z_nodes=ep.z, w_nodes=ep.w)
        if self.audit_enabled:
            au = self.trace.audit
            M, m = act.expected
            check.expected_z, check.expected_w = M, m
            au.extremum_checks += 1
            au.extremum_mismatches += int(np.count_nonzero(ep.z != M) + np.count_nonzero(ep.w != m))
            if rec.checks:
                au.monotonicity_checks += 1
                last = rec.checks[-1]
                if not (check.z < last.z and check.w > last.w):
                    au.monotonicity_violations += 1
        rec.checks.append(check)
        rec.epochs = ep.theta
        if ep.converged:
            return
        if self.audit_enabled:
            act.expected = self._window_extrema(act)
            q = ep.snapshot
            au.sandwich_violations += int(np.count_nonzero((q < ep.w) | (q > ep.z)))
        ed = early_dispatch(ep.snapshot, rec.caps, ep.next_theta, self.scenario.theta_min)
        if ed is not None:
            ed.command = rec.command_abs
            rec.early[ed.theta] = ed
            act.early = ed.pi_star
            self.plant_ref = ed.pi_star.copy()
            if self.audit_enabled:
                lo_pi, _ = dispatch_all(ep.w, rec.caps)
                hi_pi, _ = dispatch_all(ep.z, rec.caps)
                total = ed.total
                if not (lo_pi.sum() <= total <= hi_pi.sum()):
                    self.trace.audit.bracket_violations += 1

    def _finish(self):
        act = self.active
        rec = act.record
        ratios = act.engine.terminal_ratios()
        rec.terminal_ratios = ratios
        rec.rounds = act.engine.k
        feas = check_feasibility(rec.command_abs, rec.caps)
        if feas is Feasibility.FEASIBLE:
            pi, clamps = dispatch_all(ratios, rec.caps)
            d = DispatchVector(pi, float(rec.command_abs - pi.sum()), feas, rec.epochs, clamps,
                               rec.command_abs)
        else:
            d = clamp_infeasible(feas, rec.caps, rec.command_abs)
            d.theta = rec.epochs
            _, d.clamp_count = dispatch_all(ratios, rec.caps)
        self.trace.audit.clamp_events += d.clamp_count
        rec.dispatch = d
        self.prev = d
        self.command_abs = rec.command_abs
        self.plant_ref = d.pi_star.copy()
        self.active = None

    def step_protocol(self) -> RoundState:
        act = self.active
        try:
            st = act.engine.step()
        except EpochCapExceeded as exc:
            raise CommandFailed(act.record.index, exc) from exc
        self.round = act.record.start_round + st.k
        self._audit_round(st)
        if st.epoch is not None:
            self._on_epoch(st)
        self._record_row(st)
        self._advance_plants()
        if st.converged:
            self._finish()
        return st


def run_round(world: World) -> World:
    """Advance one round: a protocol round if a command is in progress, else plants only."""
    if world.active is not None:
        world.step_protocol()
    else:
        world.idle_round()
    return world


def run_command_instant(world: World, cmd: CommandInstant, index: int | None = None):
    """Apportion one command to termination; returns ``(dispatch, epochs_used)``."""
    if world.active is not None:
        raise SimulationError("previous command has not terminated")
    index = len(world.trace.commands) if index is None else index
    world.begin(index, cmd)
    while world.active is not None:
        run_round(world)
    rec = world.trace.commands[-1]
    return rec.dispatch, rec.epochs


def run_scenario(scenario: Scenario, engine: str | None = None, keep_rows: bool = True,
                 row_sink=None, audit: bool = True) -> SimTrace:
    world = World(scenario, engine=engine, keep_rows=keep_rows, row_sink=row_sink, audit=audit)
    for m, cmd in enumerate(scenario.schedule):
        run_command_instant(world, cmd, m)
    return world.trace
