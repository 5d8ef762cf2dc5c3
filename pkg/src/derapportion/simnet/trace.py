"""Simulation records and their CSV / JSON serializations."""

from __future__ import annotations

import io
import json
from dataclasses import dataclass, field
from typing import Callable, TextIO

import numpy as np

from ..apportion import CommandInstant, DerCapacity, DispatchVector, Mode

CSV_HEADER = "round,node,r,s,z,w,theta,converged,pi_star_early\n"


@dataclass
class RoundRow:
    round: int
    r: np.ndarray
    s: np.ndarray
    z: np.ndarray
    w: np.ndarray
    theta: int
    converged: bool
    early: np.ndarray | None


def format_rows(row: RoundRow) -> str:
    conv = "1" if row.converged else "0"
    early = row.early
    out = []
    for i in range(len(row.r)):
        e = "" if early is None else repr(float(early[i]))
        out.append(f"{row.round},{i},{float(row.r[i])!r},{float(row.s[i])!r},"
                   f"{float(row.z[i])!r},{float(row.w[i])!r},{row.theta},{conv},{e}\n")
    return "".join(out)


class CsvSink:
    """Streams trace rows to a text file as they are produced."""

    def __init__(self, fh: TextIO):
        self.fh = fh
        fh.write(CSV_HEADER)

    def __call__(self, row: RoundRow):
        self.fh.write(format_rows(row))


@dataclass
class CheckRecord:
    theta: int
    k: int
    z: float  # trackers agree network-wide at a check; one value suffices
    w: float
    converged: bool
    expected_z: float | None = None
    expected_w: float | None = None
    z_nodes: np.ndarray | None = None
    w_nodes: np.ndarray | None = None


@dataclass
class CommandRecord:
    index: int
    command: CommandInstant
    mode_used: Mode
    command_abs: float
    start_round: int
    caps: list[DerCapacity]
    r0: np.ndarray
    s0: np.ndarray
    rounds: int = 0
    epochs: int = 0
    dispatch: DispatchVector | None = None
    terminal_ratios: np.ndarray | None = None
    checks: list[CheckRecord] = field(default_factory=list)
    early: dict[int, DispatchVector] = field(default_factory=dict)

    @property
    def oracle_ratio(self) -> float:
        return float(np.sum(self.r0)) / float(np.sum(self.s0))

    @property
    def headroom(self) -> float:
        return float(np.sum(self.s0))

    @property
    def first_early_theta(self) -> int | None:
        return min(self.early) if self.early else None


@dataclass
class Audit:
    rounds_checked: int = 0
    conservation_rel_r: float = 0.0
    conservation_rel_s: float = 0.0
    extremum_checks: int = 0
    extremum_mismatches: int = 0
    monotonicity_checks: int = 0
    monotonicity_violations: int = 0
    sandwich_violations: int = 0
    bracket_violations: int = 0
    positivity_violations: int = 0
    clamp_events: int = 0

    conservation_tol: float = 1e-9

    @property
    def ok(self) -> bool:
        return (self.conservation_rel_r <= self.conservation_tol
                and self.conservation_rel_s <= self.conservation_tol
                and self.extremum_mismatches == 0
                and self.monotonicity_violations == 0
                and self.sandwich_violations == 0
                and self.bracket_violations == 0
                and self.positivity_violations == 0)

    def to_json(self) -> dict:
        return {
            "ok": self.ok,
            "rounds_checked": self.rounds_checked,
            "conservation_rel_r": self.conservation_rel_r,
            "conservation_rel_s": self.conservation_rel_s,
            "conservation_tol": self.conservation_tol,
            "extremum_checks": self.extremum_checks,
            "extremum_mismatches": self.extremum_mismatches,
            "monotonicity_checks": self.monotonicity_checks,
            "monotonicity_violations": self.monotonicity_violations,
            "sandwich_violations": self.sandwich_violations,
            "bracket_violations": self.bracket_violations,
            "positivity_violations": self.positivity_violations,
            "clamp_events": self.clamp_events,
        }


@dataclass
class SimTrace:
    rounds_per_second: float
    commands: list[CommandRecord] = field(default_factory=list)
    rows: list[RoundRow] | None = None
    row_sink: Callable[[RoundRow], None] | None = None
    audit: Audit = field(default_factory=Audit)
    output_total: list[float] = field(default_factory=list)
    reference_total: list[float] = field(default_factory=list)
    inflight: list[tuple[int, int, float, float]] = field(default_factory=list)

    def append(self, row: RoundRow):
        if self.rows is not None:
            self.rows.append(row)
        if self.row_sink is not None:
            self.row_sink(row)

    def csv_text(self) -> str:
        if self.rows is None:
            raise ValueError("trace was recorded without rows")
        buf = io.StringIO(newline="")
        sink = CsvSink(buf)
        for row in self.rows:
            sink(row)
        return buf.getvalue()

    def summary(self) -> list[dict]:
        out = []
        rps = self.rounds_per_second
        for c in self.commands:
            d = c.dispatch
            first = c.first_early_theta
            first_round = None
            if first is not None:
                first_round = next(ch.k for ch in c.checks if ch.theta + 1 == first)
            out.append({
                "index": c.index,
                "t": c.command.t_m,
                "mode": c.command.mode.value,
                "mode_used": c.mode_used.value,
                "magnitude": c.command.magnitude,
                "command_abs": c.command_abs,
                "start_round": c.start_round,
                "rounds": c.rounds,
                "epochs": c.epochs,
                "seconds": c.rounds / rps,
                "sum_pi_star": d.total if d else None,
                "residual": d.residual if d else None,
                "feasibility": d.feasibility.value if d else None,
                "clamp_count": d.clamp_count if d else None,
                "oracle_ratio": c.oracle_ratio,
                "early_dispatch_from_theta": first,
                "early_dispatch_seconds": None if first_round is None else first_round / rps,
            })
        return out


def write_summary(path_or_fh, report: dict):
    text = json.dumps(report, indent=2, sort_keys=True) + "\n"
    if hasattr(path_or_fh, "write"):
        path_or_fh.write(text)
    else:
        with open(path_or_fh, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
