"""Alternating optimisation: P3 then P4 until the allocation stops moving.

With fixed (f, h, rho, T) the P4 block keeps every rate at its floor, so the
uplink times chosen by the first P3 call never change afterwards. The
optional refinement phase lifts that lock: it prices each device's uplink
time with the P3 time multipliers, solves the priced (p, B) problem in
closed form, and line-searches towards it on the full objective (each trial
re-solves P3). Fixed points of the refinement satisfy the joint KKT system.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Optional

import numpy as np

from .baselines import average_allocation
from .errors import AllocationError, InfeasibleRho, ScenarioInfeasible
from .model import Allocation, ConsumptionReport, Scenario, consumption
from .p3 import solve_p3
from .p4 import NewtonConfig, snr_floors, solve_p4, solve_priced_pb


@dataclass(frozen=True)
class OptimizerConfig:
    max_outer: int = 20
    eps_outer: float = 1e-4
    newton: NewtonConfig = field(default_factory=NewtonConfig)
    initial_point_policy: str = "average"
    refine: bool = True
    refine_max_iter: int = 200
    refine_tol: float = 1e-6

    def __post_init__(self):
        if self.max_outer < 1:
            raise ValueError("max_outer must be >= 1")
        if not self.eps_outer > 0:
            raise ValueError("eps_outer must be > 0")
        if self.initial_point_policy not in ("average", "multi-start"):
            raise ValueError(f"unknown initial_point_policy {self.initial_point_policy!r}")

    @classmethod
    def from_dict(cls, doc: Optional[Mapping]) -> "OptimizerConfig":
        doc = dict(doc or {})
        newton = NewtonConfig(**doc.pop("newton", {}))
        return cls(newton=newton, **doc)


@dataclass
class TraceEntry:
    objective: float
    deadline: float
    e_up: float
    change: float
    newton_iters: int
    flags: tuple = ()


@dataclass
class SolveTrace:
    entries: list = field(default_factory=list)
    initial_objective: float = float("nan")
    converged: bool = False

    @property
    def iterations(self) -> int:
        return len(self.entries)

    @property
    def objectives(self) -> list:
        return [e.objective for e in self.entries]


def initial_feasible_point(scenario: Scenario) -> Allocation:
    """Average allocation with rho lifted where the PSNR floor binds."""
    try:
        return average_allocation(scenario)
    except InfeasibleRho as exc:
        raise ScenarioInfeasible(f"no feasible starting point: {exc}") from exc


def _normalised(scenario: Scenario, alloc: Allocation) -> np.ndarray:
    bw = np.full(scenario.n, scenario.system.total_bandwidth)
    return np.concatenate([
        alloc.power / scenario.p_max,
        alloc.bandwidth / bw,
        alloc.freq_device / scenario.f_max,
        alloc.freq_bs / scenario.h_max,
        alloc.rho / scenario.rho_max,
    ])


def solution_change(scenario: Scenario, a: Allocation, b: Allocation) -> float:
    """L-infinity distance of the bound-normalised allocation vectors."""
    return float(np.max(np.abs(_normalised(scenario, a) - _normalised(scenario, b))))


def _alternate(scenario, config, start):
    D = scenario.samples
    current = start
    best_alloc, best_rep = start, consumption(scenario, start)
    trace = SolveTrace(initial_objective=best_rep.objective)
    for k in range(config.max_outer):
        s3 = solve_p3(scenario, current.power, current.bandwidth)
        t_cmp = scenario.c1 * D / s3.freq_device
        t_bs = scenario.c2 * D / s3.freq_bs
        s4 = solve_p4(scenario, s3.rho, t_cmp, t_bs, s3.deadline, config.newton,
                      warm_start=(current.power, current.bandwidth))
        nxt = Allocation(s4.power, s4.bandwidth, s3.freq_device, s3.freq_bs, s3.rho, s3.deadline)
        rep = consumption(scenario, nxt)
        change = solution_change(scenario, current, nxt)
        trace.entries.append(TraceEntry(rep.objective, rep.t_max, float(np.sum(rep.e_up)),
                                        change, s4.iterations, s4.flags))
        if rep.objective < best_rep.objective:
            best_alloc, best_rep = nxt, rep
        current = nxt
        if change <= config.eps_outer:
            trace.converged = True
            break
    return best_alloc, best_rep, trace


def _p3_point(scenario, power, bandwidth):
    s3 = solve_p3(scenario, power, bandwidth)
    alloc = Allocation(power, bandwidth, s3.freq_device, s3.freq_bs, s3.rho, s3.deadline)
    return alloc, consumption(scenario, alloc), s3


def refine(scenario: Scenario, start: Allocation, config: OptimizerConfig, trace: SolveTrace):
    """Priced descent on (p, B) with P3 re-solved at every trial point."""
    if scenario.system.weight_energy <= 0:
        return start, consumption(scenario, start)
    alloc, rep, s3 = _p3_point(scenario, start.power, start.bandwidth)
    last_step = 0.5
    zeta = None
    for _ in range(config.refine_max_iter):
        if np.any(~(s3.beta > 0)):
            break
        try:
            target = solve_priced_pb(scenario, s3.rho, s3.beta, snr_floors(scenario, s3.rho), zeta)
            zeta = target.zeta
        except AllocationError:
            break
        step = min(1.0, 2.0 * last_step)
        accepted = None
        while step >= 1e-8:
            p = alloc.power + step * (target.power - alloc.power)
            b = alloc.bandwidth + step * (target.bandwidth - alloc.bandwidth)
            try:
                cand = _p3_point(scenario, p, b)
            except AllocationError:
                cand = None
            if cand is not None and cand[1].objective < rep.objective:
                accepted = cand
                break
            step *= 0.5
        if accepted is None:
            break
        gain = (rep.objective - accepted[1].objective) / rep.objective
        change = solution_change(scenario, alloc, accepted[0])
        alloc, rep, s3 = accepted
        last_step = step
        trace.entries.append(TraceEntry(rep.objective, rep.t_max, float(np.sum(rep.e_up)),
                                        change, 0, ("refine", f"step={step:.3g}")))
        if gain <= config.refine_tol:
            break
    return alloc, rep


def solve(scenario: Scenario, config: OptimizerConfig = OptimizerConfig()
          ) -> tuple[Allocation, ConsumptionReport, SolveTrace]:
    """Alternate the two block solvers from the initial point; return the best iterate.

    With ``config.refine`` the alternation is followed by the priced descent
    and one more alternation pass from its result.
    """
    start = initial_feasible_point(scenario)
    alloc, rep, trace = _alternate(scenario, config, start)
    if not config.refine:
        return alloc, rep, trace
    r_alloc, r_rep = refine(scenario, alloc, config, trace)
    if r_rep.objective < rep.objective:
        alloc, rep = r_alloc, r_rep
        try:
            a2, rep2, t2 = _alternate(scenario, config, r_alloc)
        except AllocationError:
            return alloc, rep, trace
        trace.entries.extend(t2.entries)
        trace.converged = t2.converged
        if rep2.objective < rep.objective:
            alloc, rep = a2, rep2
    return alloc, rep, trace
