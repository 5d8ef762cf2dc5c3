"""Scenario bundle: graph, capacity profiles, command schedule and run settings.

Scenario files are JSON. ``graph``, ``capacities`` and ``schedule`` may be given
inline or as ``graph_file`` / ``capacities_file`` / ``schedule_file`` paths
relative to the scenario file.

Capacity entries (kW) take one of three shapes::

    {"kind": "ESS", "pi_min": -30, "pi_max": 30}                  # constant
    {"kind": "RES", "rating": 5.0, "pi_min": 0}                   # irradiance driven
    {"kind": "ESS", "times": [0, 600], "pi_min": [..], "pi_max": [..]}   # step series

Irradiance-driven entries read the scenario-wide ``irradiance`` profile
(``{"times": [...], "values": [...]}`` in seconds and W/m^2, step-hold) or a
constant ``irradiance`` number.
"""

from __future__ import annotations

import bisect
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

from ..apportion import (
    EPS_CAP,
    CommandInstant,
    DerCapacity,
    DerKind,
    Mode,
    default_eps_res,
    apply_res_priority,
    normalize_capacity,
)
from ..topology import Graph, exact_diameter, graph_from_dict, graph_to_dict, validate_strong_connectivity
from .delays import DELAY_MODELS, UNIFORM
from .plant import irradiance_to_capacity


class ScenarioError(ValueError):
    pass


def _step_hold(times: Sequence[float], values: Sequence[float], t: float) -> float:
    i = bisect.bisect_right(times, t) - 1
    return values[max(i, 0)]


@dataclass(frozen=True)
class Irradiance:
    times: tuple[float, ...]
    values: tuple[float, ...]

    def at(self, t: float) -> float:
        return _step_hold(self.times, self.values, t)

    @classmethod
    def from_json(cls, d) -> "Irradiance":
        if isinstance(d, (int, float)):
            return cls((0.0,), (float(d),))
        return cls(tuple(float(x) for x in d["times"]), tuple(float(x) for x in d["values"]))

    def to_json(self):
        if len(self.times) == 1:
            return self.values[0]
        return {"times": list(self.times), "values": list(self.values)}


@dataclass(frozen=True)
class CapacityProfile:
    kind: DerKind
    pi_min: float | tuple[float, ...] = 0.0
    pi_max: float | tuple[float, ...] | None = None
    rating: float | None = None
    times: tuple[float, ...] | None = None

    def at(self, t: float, irradiance: Irradiance | None, g_stc: float) -> DerCapacity:
        if self.times is not None:
            return DerCapacity(_step_hold(self.times, self.pi_min, t),
                               _step_hold(self.times, self.pi_max, t), self.kind)
        if self.rating is not None:
            if irradiance is None:
                raise ScenarioError("rating-based capacity needs an irradiance profile")
            hi = irradiance_to_capacity(irradiance.at(t), self.rating, g_stc)
            return DerCapacity(float(self.pi_min), hi, self.kind)
        return DerCapacity(float(self.pi_min), float(self.pi_max), self.kind)

    @classmethod
    def from_json(cls, d: dict) -> "CapacityProfile":
        kind = DerKind(d.get("kind", "RES"))
        if "times" in d:
            times = tuple(float(x) for x in d["times"])
            lo = tuple(float(x) for x in d["pi_min"])
            hi = tuple(float(x) for x in d["pi_max"])
            if not (len(times) == len(lo) == len(hi)) or not times:
                raise ScenarioError("capacity series lengths differ")
            if any(b <= a for a, b in zip(times, times[1:])):
                raise ScenarioError("capacity series times must increase")
            return cls(kind, lo, hi, None, times)
        if "rating" in d:
            return cls(kind, float(d.get("pi_min", 0.0)), None, float(d["rating"]))
        if "pi_max" not in d:
            raise ScenarioError(f"capacity entry needs pi_max, rating or a series: {d}")
        return cls(kind, float(d.get("pi_min", 0.0)), float(d["pi_max"]))

    def to_json(self) -> dict:
        d = {"kind": self.kind.value}
        if self.times is not None:
            d.update(times=list(self.times), pi_min=list(self.pi_min), pi_max=list(self.pi_max))
        elif self.rating is not None:
            d.update(rating=self.rating, pi_min=self.pi_min)
        else:
            d.update(pi_min=self.pi_min, pi_max=self.pi_max)
        return d


def command_from_json(d: dict) -> CommandInstant:
    try:
        return CommandInstant(float(d["t"]), Mode(d["mode"]), float(d["magnitude"]),
                              tuple(d["circulating_nodes"]))
    except KeyError as exc:
        raise ScenarioError(f"command is missing field {exc.args[0]!r}") from None


def command_to_json(c: CommandInstant) -> dict:
    return {"t": c.t_m, "mode": c.mode.value, "magnitude": c.magnitude,
            "circulating_nodes": list(c.circulating_nodes)}


@dataclass
class Scenario:
    graph: Graph
    capacities: list[CapacityProfile]
    schedule: list[CommandInstant]
    rho: float = 0.01
    tau_bar: int = 1
    rounds_per_second: float = 20.0
    seed: int = 0
    theta_min: int = 3
    epoch_cap: int = 200
    res_priority: bool = False
    eps_res: float | None = None  # absolute kW; None -> 1e-3 * pi_max per unit
    eps_cap: float = EPS_CAP
    delay_model: str = UNIFORM
    irradiance: Irradiance | None = None
    g_stc: float = 1000.0
    ramp_per_second: float = 0.1  # fraction of each unit's span per second
    initial_output: list[float] | None = None
    engine: str = "vector"
    name: str = ""
    overrides: dict = field(default_factory=dict)

    @property
    def n(self) -> int:
        return self.graph.node_count

    def diameter_bound(self) -> int:
        return self.graph.effective_diameter_bound()

    def capacities_at(self, t: float) -> list[DerCapacity]:
        """Capacities in force at time ``t`` after prioritization and normalization."""
        caps = []
        for p in self.capacities:
            c = p.at(t, self.irradiance, self.g_stc)
            if self.res_priority and c.kind is DerKind.RES:
                eps = self.eps_res if self.eps_res is not None else default_eps_res(c, self.eps_cap)
                c = apply_res_priority(c, eps)
            caps.append(normalize_capacity(c, self.eps_cap))
        return caps

    def eps_res_for(self, cap_raw: DerCapacity) -> float:
        return self.eps_res if self.eps_res is not None else default_eps_res(cap_raw, self.eps_cap)

    def validate(self) -> list[str]:
        """All problems found, as human-readable messages (empty when valid)."""
        errs = []
        if not validate_strong_connectivity(self.graph):
            errs.append("graph: not strongly connected (some node cannot reach another)")
        elif self.graph.diameter_bound is not None:
            d = exact_diameter(self.graph)
            if self.graph.diameter_bound < d:
                errs.append(f"graph: diameter_bound {self.graph.diameter_bound} below exact diameter {d}")
        if not self.rho > 0:
            errs.append(f"rho: must be positive, got {self.rho}")
        if isinstance(self.tau_bar, bool) or int(self.tau_bar) != self.tau_bar or self.tau_bar < 0:
            errs.append(f"tau_bar: must be a non-negative integer, got {self.tau_bar}")
        if not self.rounds_per_second > 0:
            errs.append("rounds_per_second: must be positive")
        if self.epoch_cap < 1:
            errs.append("epoch_cap: must be at least 1")
        if self.delay_model not in DELAY_MODELS:
            errs.append(f"delay_model: unknown {self.delay_model!r}")
        if self.eps_res is not None and not self.eps_res > 0:
            errs.append("eps_res: must be positive")
        if len(self.capacities) != self.n:
            errs.append(f"capacities: {len(self.capacities)} entries for {self.n} nodes")
        if self.initial_output is not None and len(self.initial_output) != self.n:
            errs.append("initial_output: length does not match node count")
        if not self.schedule:
            errs.append("schedule: empty")
        else:
            if self.schedule[0].mode is not Mode.BLACK:
                errs.append("schedule: first command must be an absolute (black-start) command")
            times = [c.t_m for c in self.schedule]
            if any(b <= a for a, b in zip(times, times[1:])):
                errs.append("schedule: times must be strictly increasing")
            for m, c in enumerate(self.schedule):
                bad = [i for i in c.circulating_nodes if not 0 <= i < self.n]
                if bad:
                    errs.append(f"schedule[{m}]: circulating nodes {bad} not in graph")
            if len(self.capacities) == self.n:
                for m, c in enumerate(self.schedule):
                    for i, p in enumerate(self.capacities):
                        try:
                            cap = p.at(c.t_m, self.irradiance, self.g_stc)
                            normalize_capacity(cap, self.eps_cap)
                        except (ValueError, ScenarioError) as exc:
                            errs.append(f"capacities[{i}] at t={c.t_m}: {exc}")
        return errs

    def to_json(self) -> dict:
        d = {
            "name": self.name,
            "graph": graph_to_dict(self.graph),
            "capacities": [p.to_json() for p in self.capacities],
            "schedule": [command_to_json(c) for c in self.schedule],
            "rho": self.rho,
            "tau_bar": self.tau_bar,
            "rounds_per_second": self.rounds_per_second,
            "seed": self.seed,
            "theta_min": self.theta_min,
            "epoch_cap": self.epoch_cap,
            "res_priority": self.res_priority,
            "eps_res": self.eps_res,
            "eps_cap": self.eps_cap,
            "delay_model": self.delay_model,
            "g_stc": self.g_stc,
            "ramp_per_second": self.ramp_per_second,
            "engine": self.engine,
        }
        if self.irradiance is not None:
            d["irradiance"] = self.irradiance.to_json()
        if self.initial_output is not None:
            d["initial_output"] = list(self.initial_output)
        return d

    def digest(self) -> str:
        blob = json.dumps(self.to_json(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()


_SCALARS = {
    "rho": float, "tau_bar": int, "rounds_per_second": float, "seed": int, "theta_min": int,
    "epoch_cap": int, "res_priority": bool, "eps_cap": float, "delay_model": str,
    "g_stc": float, "ramp_per_second": float, "engine": str, "name": str,
}


def _load_part(d: dict, key: str, base: Path):
    if key in d:
        return d[key]
    fkey = key + "_file"
    if fkey in d:
        return json.loads((base / d[fkey]).read_text(encoding="utf-8"))
    raise ScenarioError(f"scenario needs {key!r} or {fkey!r}")


def scenario_from_json(d: dict, base: Path | str = ".") -> Scenario:
    base = Path(base)
    g = _load_part(d, "graph", base)
    caps = _load_part(d, "capacities", base)
    sched = _load_part(d, "schedule", base)
    if isinstance(caps, dict):
        caps = caps["capacities"]
    if isinstance(sched, dict):
        sched = sched["schedule"]
    kwargs = {}
    for k, conv in _SCALARS.items():
        if k in d:
            v = d[k]
            if conv is int and (isinstance(v, bool) or not isinstance(v, int)):
                if not (isinstance(v, float) and v.is_integer()):
                    raise ScenarioError(f"{k}: expected an integer, got {v!r}")
            kwargs[k] = conv(v)
    if d.get("eps_res") is not None:
        kwargs["eps_res"] = float(d["eps_res"])
    if "irradiance" in d:
        kwargs["irradiance"] = Irradiance.from_json(d["irradiance"])
    if "initial_output" in d:
        kwargs["initial_output"] = [float(x) for x in d["initial_output"]]
    try:
        return Scenario(
            graph=graph_from_dict(g),
            capacities=[CapacityProfile.from_json(c) for c in caps],
            schedule=[command_from_json(c) for c in sched],
            **kwargs,
        )
    except ValueError as exc:
        if isinstance(exc, ScenarioError):
            raise
        raise ScenarioError(str(exc)) from exc


def load_scenario(path) -> Scenario:
    path = Path(path)
    return scenario_from_json(json.loads(path.read_text(encoding="utf-8")), path.parent)


def save_scenario(sc: Scenario, path) -> None:
    Path(path).write_text(json.dumps(sc.to_json()) + "\n", encoding="utf-8", newline="\n")
