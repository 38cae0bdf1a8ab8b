"""The four comparison policies: random, average, (p, B) only, (f, h, rho) only."""

from __future__ import annotations

import enum

import numpy as np

from .errors import AllocationError, InfeasibleRho, ScenarioInfeasible
from .model import Allocation, Scenario, snr, psnr_inverse_rho
from .p3 import solve_p3
from .p4 import NewtonConfig, solve_p4

MAX_REDRAWS = 100


class BaselineKind(enum.Enum):
    RANDOM = "random"
    AVERAGE = "average"
    PB_ONLY = "pb-only"
    FHRHO_ONLY = "fhrho-only"

    @classmethod
    def parse(cls, name: str) -> "BaselineKind":
        for kind in cls:
            if kind.value == name or kind.name.lower() == name.lower():
                return kind
        raise ValueError(f"unknown baseline {name!r}; choose from {[k.value for k in cls]}")


def _lift_rho(scenario: Scenario, power, bandwidth, rho) -> np.ndarray:
    """Raise rho to the PSNR-feasible minimum where the floor binds."""
    s = snr(power, bandwidth, scenario.gain, scenario.system.noise_psd)
    rho_bar = psnr_inverse_rho(scenario.psnr_model, scenario.psnr_min, s)
    bad = np.nonzero(rho_bar > scenario.rho_max)[0]
    if bad.size:
        i = int(bad[0])
        raise InfeasibleRho(i, float(rho_bar[i]), float(scenario.rho_max[i]))
    return np.maximum(rho, rho_bar)


def average_allocation(scenario: Scenario) -> Allocation:
    n = scenario.n
    power = scenario.p_max / 2
    bandwidth = np.full(n, scenario.system.total_bandwidth / n)
    rho = (scenario.rho_min + scenario.rho_max) / 2
    rho = _lift_rho(scenario, power, bandwidth, rho)
    return Allocation(power, bandwidth, scenario.f_max / 2, scenario.h_max / 2, rho)


def _truncated_normal(rng, lo, hi, size):
    """Rejection sampling from N((lo+hi)/2, ((hi-lo)/10)^2) restricted to (lo, hi]."""
    lo = np.broadcast_to(np.asarray(lo, float), size)
    hi = np.broadcast_to(np.asarray(hi, float), size)
    mid, sigma = (lo + hi) / 2, (hi - lo) / 10
    out = np.empty(size)
    # a degenerate range (lo == hi) holds the single value hi
    point = hi <= lo
    out[point] = hi[point]
    todo = np.nonzero(~point)[0]
    while todo.size:
        x = rng.normal(mid[todo], sigma[todo])
        ok = (x > lo[todo]) & (x <= hi[todo])
        out[todo[ok]] = x[ok]
        todo = todo[~ok]
    return out


def random_allocation(scenario: Scenario, seed: int) -> Allocation:
    """Truncated-normal draws around the range midpoints, sigma = range / 10."""
    n = scenario.n
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(int(seed))))
    total = scenario.system.total_bandwidth
    last = None
    for _ in range(MAX_REDRAWS):
        power = _truncated_normal(rng, 0.0, scenario.p_max, n)
        freq_device = _truncated_normal(rng, 0.0, scenario.f_max, n)
        freq_bs = _truncated_normal(rng, 0.0, scenario.h_max, n)
        rho = _truncated_normal(rng, scenario.rho_min, scenario.rho_max, n)
        bandwidth = rng.uniform(total / (1.25 * n), total / (0.8 * n), n)
        bandwidth *= total / np.sum(bandwidth)
        try:
            rho = _lift_rho(scenario, power, bandwidth, rho)
        except InfeasibleRho as exc:
            last = exc
            continue
        return Allocation(power, bandwidth, freq_device, freq_bs, rho)
    raise ScenarioInfeasible(f"no PSNR-feasible random draw in {MAX_REDRAWS} attempts: {last}")


def _newton(config) -> NewtonConfig:
    if config is None:
        return NewtonConfig()
    return getattr(config, "newton", config)


def optimize_pb_only(scenario: Scenario, config=None) -> Allocation:
    """Pin (f, h, rho) at the average values and optimise (p, B) for their deadline."""
    avg = average_allocation(scenario)
    D = scenario.samples
    t_cmp = scenario.c1 * D / avg.freq_device
    t_bs = scenario.c2 * D / avg.freq_bs
    rate = avg.bandwidth * np.log1p(snr(avg.power, avg.bandwidth, scenario.gain, scenario.system.noise_psd)) / np.log(2)
    deadline = float(np.max(t_cmp + avg.rho * scenario.payload_bits / rate + t_bs))
    sol = solve_p4(scenario, avg.rho, t_cmp, t_bs, deadline, _newton(config),
                   warm_start=(avg.power, avg.bandwidth))
    return Allocation(sol.power, sol.bandwidth, avg.freq_device, avg.freq_bs, avg.rho, deadline)


def optimize_fhrho_only(scenario: Scenario, config=None) -> Allocation:
    """Pin (p, B) at the average values and run one P3 solve."""
    avg = average_allocation(scenario)
    sol = solve_p3(scenario, avg.power, avg.bandwidth)
    return Allocation(avg.power, avg.bandwidth, sol.freq_device, sol.freq_bs, sol.rho, sol.deadline)


def run_baseline(kind: BaselineKind, scenario: Scenario, seed: int = 0, config=None) -> Allocation:
    kind = BaselineKind.parse(kind) if isinstance(kind, str) else kind
    if kind is BaselineKind.RANDOM:
        return random_allocation(scenario, seed)
    if kind is BaselineKind.AVERAGE:
        return average_allocation(scenario)
    if kind is BaselineKind.PB_ONLY:
        return optimize_pb_only(scenario, config)
    if kind is BaselineKind.FHRHO_ONLY:
        return optimize_fhrho_only(scenario, config)
    raise AllocationError(f"unhandled baseline {kind}")
