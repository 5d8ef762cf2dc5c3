import json
import math

import numpy as np
import pytest
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st

from derapportion.apportion import CommandInstant, DerKind, DispatchVector, Feasibility, Mode, init_brown
from derapportion.protocol import EpochCapExceeded, oracle_consensus_ratio
from derapportion.simnet import (
    CSV_HEADER,
    CapacityProfile,
    CommandFailed,
    Irradiance,
    PlantState,
    Scenario,
    ScenarioError,
    World,
    irradiance_to_capacity,
    make_engine,
    plant_track,
    run_command_instant,
    run_round,
    run_scenario,
    scenario_from_json,
    track_all,
)
from derapportion.simnet.delays import EXTREMUM, MASS, draw_delays
from derapportion.topology import Graph, complete_graph, epoch_length, synthesize_weights

from conftest import random_scenario


def single_node(rd=3.0, lo=0.0, hi=10.0, tau_bar=0):
    return Scenario(Graph(1, ()), [CapacityProfile(DerKind.RES, lo, hi)],
                    [CommandInstant(0.0, Mode.BLACK, rd, (0,))], rho=1e-6, tau_bar=tau_bar)


def two_node(rho=1e-3, tau_bar=0):
    caps = [CapacityProfile(DerKind.RES, 0.0, 10.0), CapacityProfile(DerKind.RES, 0.0, 30.0)]
    return Scenario(complete_graph(2), caps, [CommandInstant(0.0, Mode.BLACK, 20.0, (0,))],
                    rho=rho, tau_bar=tau_bar)


# --- plant / irradiance --------------------------------------------------------------

@pytest.mark.parametrize("g,rating,expected", [(0.0, 5.0, 0.0), (1000.0, 5.0, 5.0),
                                                (800.0, 5.0, 4.0), (1200.0, 5.0, 5.0)])
def test_irradiance_to_capacity(g, rating, expected):
    assert irradiance_to_capacity(g, rating, 1000.0) == pytest.approx(expected, abs=1e-12)


def test_irradiance_rejects_negative():
    with pytest.raises(ValueError):
        irradiance_to_capacity(-1.0, 5.0)


def test_plant_track_examples():
    p = PlantState(0.0, 2.0, 3.0)
    assert plant_track(p, 2.0).output == 2.0
    assert plant_track(PlantState(0.0, 0.0, 3.0), 10.0).output == 3.0
    p = PlantState(0.0, 0.0, 3.0)
    for _ in range(math.ceil(10 / 3)):
        p = plant_track(p, 10.0)
    assert p.output == 10.0


@given(st.floats(-100, 100), st.floats(-100, 100), st.floats(0.01, 10))
def test_plant_ramp_limited(out, ref, ramp):
    p = plant_track(PlantState(out, out, ramp), ref)
    assert abs(p.output - out) <= ramp + 1e-12
    assert track_all(np.array([out]), np.array([ref]), np.array([ramp]))[0] == p.output


# --- delays -----------------------------------------------------------------------

@given(st.integers(0, 2**31), st.integers(0, 50), st.integers(0, 500), st.integers(0, 6))
def test_delays_bounded_and_reproducible(seed, instant, k, tau):
    d = draw_delays(seed, instant, k, MASS, 20, tau)
    assert d.min() >= 0 and d.max() <= tau
    assert np.array_equal(d, draw_delays(seed, instant, k, MASS, 20, tau))


def test_fixed_delay_model_is_time_invariant():
    a = draw_delays(3, 0, 1, EXTREMUM, 30, 3, "fixed")
    b = draw_delays(3, 5, 99, EXTREMUM, 30, 3, "fixed")
    assert np.array_equal(a, b)


# --- command instants ------------------------------------------------------------

def test_single_node_converges_at_first_epoch():
    world = World(single_node(rd=3.0))
    d, epochs = run_command_instant(world, world.scenario.schedule[0])
    assert epochs == 1
    assert world.trace.commands[0].rounds == epoch_length(1, 0) == 1
    assert d.pi_star[0] == pytest.approx(3.0, abs=1e-12)


def test_two_node_instance_near_oracle_split():
    trace = run_scenario(two_node())
    rec = trace.commands[0]
    assert rec.oracle_ratio == 0.5
    bound = 1e-3 * np.array([10.0, 30.0])
    assert np.all(np.abs(rec.dispatch.pi_star - [5.0, 15.0]) <= bound)
    assert trace.audit.ok


def test_zero_delta_from_exact_consensus_is_one_epoch():
    sc = random_scenario(np.random.default_rng(8), n=6, tau_bar=2)
    caps = sc.capacities_at(0.0)
    lo = np.array([c.pi_min for c in caps])
    hi = np.array([c.pi_max for c in caps])
    prev = DispatchVector(lo + 0.3 * (hi - lo), 0.0, Feasibility.FEASIBLE)
    cmd = CommandInstant(1.0, Mode.BROWN, 0.0, sc.schedule[0].circulating_nodes)
    r0, s0 = init_brown(cmd, caps, prev)
    eng = make_engine("vector", sc.graph, synthesize_weights(sc.graph), r0, s0, tau_bar=2,
                      D=sc.diameter_bound(), rho=sc.rho, seed=1)
    states = eng.run()
    assert states[-1].epoch.theta == 1 and states[-1].converged


def test_brown_start_uses_previous_dispatch():
    rng = np.random.default_rng(21)
    sc = random_scenario(rng, n=5, tau_bar=1, extra=(1.5,))
    trace = run_scenario(sc)
    a, b = trace.commands
    assert b.mode_used is Mode.BROWN
    assert b.command_abs == a.command_abs + 1.5
    # brown numerator carries the previous allocation
    lo = np.array([c.pi_min for c in b.caps])
    expect = -lo + a.dispatch.pi_star
    for i in b.command.circulating_nodes:
        expect[i] += 1.5 / b.command.l
    assert np.allclose(b.r0, expect, rtol=0, atol=1e-12)


def test_brown_after_infeasible_restarts_black():
    rng = np.random.default_rng(2)
    sc = random_scenario(rng, n=4, tau_bar=0, demand="over", extra=(-1e4,))
    trace = run_scenario(sc)
    a, b = trace.commands
    assert a.dispatch.feasibility is Feasibility.OVER_DEMAND
    assert b.mode_used is Mode.BLACK
    assert b.dispatch.feasibility is Feasibility.UNDER_DEMAND


def test_epoch_cap_reports_gap():
    sc = two_node(rho=1e-300, tau_bar=1)
    sc.epoch_cap = 3
    with pytest.raises(CommandFailed) as info:
        run_scenario(sc)
    assert isinstance(info.value.cause, EpochCapExceeded)
    assert info.value.cause.gap >= 0


def test_run_round_idles_plants_without_command():
    world = World(two_node())
    run_round(world)
    assert world.round == 1 and world.active is None


def test_all_nodes_stop_together():
    trace = run_scenario(random_scenario(np.random.default_rng(5), n=8, tau_bar=3))
    last = trace.rows[-1]
    assert last.converged
    assert all(not row.converged for row in trace.rows[:-1])


def test_early_dispatch_recorded_after_theta_min():
    sc = random_scenario(np.random.default_rng(11), n=8, tau_bar=2, rho=1e-9)
    rec = run_scenario(sc).commands[0]
    assert rec.epochs > 4
    assert min(rec.early) == 4
    for th, ed in rec.early.items():
        assert ed.theta == th


# --- invariants as properties ------------------------------------------------------

instances = st.builds(
    lambda seed, tau: random_scenario(np.random.default_rng(seed), tau_bar=tau, rho=1e-4,
                                      extra=(0.7,)),
    st.integers(0, 2**31), st.integers(0, 3),
)


@settings(max_examples=25, deadline=None, suppress_health_check=[HealthCheck.too_slow])
@given(instances)
def test_audited_invariants_hold(sc):
    trace = run_scenario(sc)
    a = trace.audit
    assert a.ok, a.to_json()
    assert a.conservation_rel_r <= 1e-9 and a.conservation_rel_s <= 1e-9
    assert a.extremum_mismatches == 0 and a.monotonicity_violations == 0


@settings(max_examples=25, deadline=None, suppress_health_check=[HealthCheck.too_slow])
@given(instances)
def test_conservation_from_recorded_totals(sc):
    trace = run_scenario(sc)
    rows = {row.round: row for row in trace.rows}
    for rec in trace.commands:
        target_r, target_s = rec.r0.sum(), rec.s0.sum()
        scale_r = max(np.abs(rec.r0).sum(), 1.0)
        for rnd, count, fr, fs in trace.inflight:
            if rec.start_round <= rnd <= rec.start_round + rec.rounds:
                row = rows[rnd]
                assert abs(row.r.sum() + fr - target_r) <= 1e-9 * scale_r
                assert abs(row.s.sum() + fs - target_s) <= 1e-9 * rec.s0.sum()
                assert np.all(row.s > 0)


@settings(max_examples=25, deadline=None, suppress_health_check=[HealthCheck.too_slow])
@given(instances)
def test_terminal_ratios_within_rho(sc):
    for rec in run_scenario(sc).commands:
        q = oracle_consensus_ratio(rec.r0, rec.s0)
        assert np.all(np.abs(rec.terminal_ratios - q) < sc.rho)
        z = [c.z for c in rec.checks]
        w = [c.w for c in rec.checks]
        assert all(b < a for a, b in zip(z, z[1:]))
        assert all(b > a for a, b in zip(w, w[1:]))


# --- determinism -------------------------------------------------------------------

def test_same_seed_same_bytes_different_seed_differs():
    sc = random_scenario(np.random.default_rng(3), n=7, tau_bar=3, extra=(2.0,))
    a = run_scenario(sc).csv_text()
    assert a.startswith(CSV_HEADER)
    assert a == run_scenario(sc).csv_text()
    sc.seed += 1
    assert a != run_scenario(sc).csv_text()


@pytest.mark.parametrize("seed", range(3))
def test_engines_byte_identical(seed):
    sc = random_scenario(np.random.default_rng(100 + seed), n=8, tau_bar=seed + 1, extra=(1.0, -2.0))
    texts = {name: run_scenario(sc, engine=name).csv_text()
             for name in ("reference", "parallel", "vector")}
    assert texts["reference"] == texts["parallel"] == texts["vector"]


def test_csv_format():
    text = run_scenario(single_node()).csv_text()
    lines = text.split("\n")
    assert lines[0] == CSV_HEADER.strip()
    assert "\r" not in text and text.endswith("\n")
    assert all(len(line.split(",")) == 9 for line in lines[1:-1])


# --- scenario files ---------------------------------------------------------------

def test_scenario_json_round_trip():
    sc = random_scenario(np.random.default_rng(1), n=4, extra=(1.0,))
    sc.irradiance = Irradiance((0.0, 10.0), (800.0, 500.0))
    again = scenario_from_json(json.loads(json.dumps(sc.to_json())))
    assert again.to_json() == sc.to_json()
    assert again.digest() == sc.digest()


def test_capacity_profile_shapes():
    irr = Irradiance((0.0, 60.0), (800.0, 400.0))
    pv = CapacityProfile.from_json({"kind": "RES", "rating": 5.0})
    assert pv.at(0.0, irr, 1000.0).pi_max == pytest.approx(4.0)
    assert pv.at(61.0, irr, 1000.0).pi_max == pytest.approx(2.0)
    series = CapacityProfile.from_json({"kind": "ESS", "times": [0, 10], "pi_min": [-1, -2],
                                        "pi_max": [1, 2]})
    assert series.at(9.9, None, 1000.0).pi_max == 1.0
    assert series.at(10.0, None, 1000.0).pi_min == -2.0
    with pytest.raises(ScenarioError):
        CapacityProfile.from_json({"kind": "ESS"})


def test_scenario_validation_messages():
    sc = two_node()
    sc.rho = 0.0
    sc.schedule = [CommandInstant(5.0, Mode.BROWN, 1.0, (0,)), CommandInstant(1.0, Mode.BLACK, 1.0, (9,))]
    errs = sc.validate()
    assert any(e.startswith("rho") for e in errs)
    assert any("first command" in e for e in errs)
    assert any("increasing" in e for e in errs)
    assert any("circulating nodes [9]" in e for e in errs)
    bad = Scenario(Graph(2, ((0, 1),)), sc.capacities, sc.schedule)
    assert any("strongly connected" in e for e in bad.validate())


def test_capacities_frozen_per_instant_and_resampled():
    irr = Irradiance((0.0, 5.0), (1000.0, 500.0))
    caps = [CapacityProfile(DerKind.RES, 0.0, None, 10.0), CapacityProfile(DerKind.ESS, -2.0, 2.0)]
    sched = [CommandInstant(0.0, Mode.BLACK, 4.0, (0,)), CommandInstant(5.0, Mode.BROWN, 0.0, (1,))]
    sc = Scenario(complete_graph(2), caps, sched, rho=1e-4, tau_bar=0, irradiance=irr)
    trace = run_scenario(sc)
    assert trace.commands[0].caps[0].pi_max == 10.0
    assert trace.commands[1].caps[0].pi_max == 5.0
