"""Domain types and closed-form time/energy/PSNR formulas.

Everything is in linear SI units (W, Hz, s, J, bits). Functions accept
scalars or numpy arrays and broadcast.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields, replace
from typing import Optional, Sequence

import numpy as np

from .errors import DomainError, InfeasibleTransmission

LN2 = math.log(2.0)


@dataclass(frozen=True)
class SystemParams:
    total_bandwidth: float
    noise_psd: float
    kappa: float
    weight_time: float
    weight_energy: float
    device_count: int

    def __post_init__(self):
        if self.total_bandwidth <= 0 or self.noise_psd <= 0 or self.kappa <= 0:
            raise DomainError("total_bandwidth, noise_psd and kappa must be positive")
        if self.device_count < 1:
            raise DomainError("device_count must be >= 1")
        w1, w2 = float(self.weight_time), float(self.weight_energy)
        if w1 < 0 or w2 < 0 or w1 + w2 <= 0:
            raise DomainError("weights must be non-negative and not both zero")
        total = w1 + w2
        object.__setattr__(self, "weight_time", w1 / total)
        object.__setattr__(self, "weight_energy", w2 / total)


@dataclass(frozen=True)
class DeviceProfile:
    gain: float
    cycles_device: float
    cycles_bs: float
    samples: float
    sample_bits: float
    p_max: float
    f_max: float
    h_max: float
    rho_min: float
    rho_max: float
    psnr_min: float

    def __post_init__(self):
        for f in fields(self):
            if not getattr(self, f.name) > 0:
                raise DomainError(f"DeviceProfile.{f.name} must be > 0")
        if self.rho_min > self.rho_max:
            raise DomainError("rho_min > rho_max")
        if self.gain > 1:
            raise DomainError("gain must be <= 1")


@dataclass(frozen=True)
class PsnrModel:
    """Concave PSNR surface ``a * ln(c_rho * rho + c_s * snr + b)`` in dB."""

    a: float
    b: float
    c_rho: float
    c_s: float

    def __post_init__(self):
        if not (self.a > 0 and self.b > 1 and self.c_rho > 0 and self.c_s > 0):
            raise DomainError("PsnrModel needs a > 0, b > 1, c_rho > 0, c_s > 0")

    @classmethod
    def fitted(cls) -> "PsnrModel":
        """CIFAR-10 deep-JSCC fit: 18.67 ln(3.35 x + 5.11), x = 1.52 rho + 0.03 S."""
        return cls(a=18.67, b=5.11, c_rho=3.35 * 1.52, c_s=3.35 * 0.03)


@dataclass(frozen=True)
class Scenario:
    """A full problem instance.

    Per-device fields are also exposed as float arrays (``gain``, ``c1``, ...)
    so solvers can work vectorised.
    """

    system: SystemParams
    devices: tuple
    psnr_model: PsnrModel
    positions: Optional[np.ndarray] = None

    def __post_init__(self):
        devs = tuple(self.devices)
        object.__setattr__(self, "devices", devs)
        if len(devs) != self.system.device_count:
            raise DomainError("len(devices) != system.device_count")

        def col(name):
            arr = np.array([getattr(d, name) for d in devs], dtype=float)
            arr.setflags(write=False)
            return arr

        for attr, name in [
            ("gain", "gain"),
            ("c1", "cycles_device"),
            ("c2", "cycles_bs"),
            ("samples", "samples"),
            ("sample_bits", "sample_bits"),
            ("p_max", "p_max"),
            ("f_max", "f_max"),
            ("h_max", "h_max"),
            ("rho_min", "rho_min"),
            ("rho_max", "rho_max"),
            ("psnr_min", "psnr_min"),
        ]:
            object.__setattr__(self, attr, col(name))

    @property
    def n(self) -> int:
        return self.system.device_count

    @property
    def payload_bits(self) -> np.ndarray:
        """Uncompressed bits per round, ``d_n * D_n``."""
        return self.sample_bits * self.samples

    def with_devices(self, devices: Sequence[DeviceProfile]) -> "Scenario":
        system = replace(self.system, device_count=len(devices))
        return Scenario(system, tuple(devices), self.psnr_model, None)


@dataclass(frozen=True)
class Allocation:
    power: np.ndarray
    bandwidth: np.ndarray
    freq_device: np.ndarray
    freq_bs: np.ndarray
    rho: np.ndarray
    deadline: Optional[float] = None

    def __post_init__(self):
        n = None
        for name in ("power", "bandwidth", "freq_device", "freq_bs", "rho"):
            arr = np.array(getattr(self, name), dtype=float).reshape(-1)
            object.__setattr__(self, name, arr)
            if n is None:
                n = arr.size
            elif arr.size != n:
                raise DomainError("allocation vectors must share one length")
            if np.any(~(arr > 0)):
                raise DomainError(f"Allocation.{name} must be strictly positive")

    def as_vector(self) -> np.ndarray:
        return np.concatenate(
            [self.power, self.bandwidth, self.freq_device, self.freq_bs, self.rho]
        )


@dataclass(frozen=True)
class ConsumptionReport:
    t_cmp: np.ndarray
    t_up: np.ndarray
    t_bs: np.ndarray
    e_cmp: np.ndarray
    e_up: np.ndarray
    e_bs: np.ndarray
    t_max: float
    e_total: float
    objective: float
    weight_time: float = field(default=0.5, repr=False)
    weight_energy: float = field(default=0.5, repr=False)

    @property
    def t_total(self) -> np.ndarray:
        return self.t_cmp + self.t_up + self.t_bs

    @property
    def bottleneck(self) -> int:
        return int(np.argmax(self.t_total))

    @property
    def e_device(self) -> float:
        return float(np.sum(self.e_cmp + self.e_up))

    @property
    def e_bs_total(self) -> float:
        return float(np.sum(self.e_bs))


def _require_positive(**kwargs):
    for name, value in kwargs.items():
        if np.any(~(np.asarray(value) > 0)):
            raise DomainError(f"{name} must be > 0")


def snr(power, bandwidth, gain, noise_psd):
    """Received SNR ``p g / (N0 B)``."""
    _require_positive(power=power, bandwidth=bandwidth, gain=gain, noise_psd=noise_psd)
    return np.asarray(power) * np.asarray(gain) / (noise_psd * np.asarray(bandwidth))


def uplink_rate(power, bandwidth, gain, noise_psd):
    """Shannon rate ``B log2(1 + p g / (N0 B))`` in bits/s."""
    s = snr(power, bandwidth, gain, noise_psd)
    return np.asarray(bandwidth) * np.log1p(s) / LN2


def _rate_unchecked(power, bandwidth, gain, noise_psd):
    return bandwidth * np.log1p(power * gain / (noise_psd * bandwidth)) / LN2


def psnr(model: PsnrModel, rho, s):
    rho = np.asarray(rho, dtype=float)
    s = np.asarray(s, dtype=float)
    if np.any(rho < 0) or np.any(s < 0):
        raise DomainError("psnr needs rho >= 0 and s >= 0")
    arg = model.c_rho * rho + model.c_s * s + model.b
    if np.any(arg <= 0):
        raise DomainError("psnr: argument of ln must be positive")
    return model.a * np.log(arg)


def psnr_inverse_rho(model: PsnrModel, psnr_target, s):
    """Compression rate at which ``psnr`` hits the target; may be negative."""
    return (np.exp(np.asarray(psnr_target) / model.a) - model.b - model.c_s * np.asarray(s)) / model.c_rho


def psnr_inverse_snr(model: PsnrModel, psnr_target, rho):
    """Smallest SNR reaching the target at ``rho``, clamped at zero."""
    raw = (np.exp(np.asarray(psnr_target) / model.a) - model.b - model.c_rho * np.asarray(rho)) / model.c_s
    return np.maximum(raw, 0.0)


def consumption(scenario: Scenario, alloc: Allocation) -> ConsumptionReport:
    """Per-device and aggregate time/energy for one training round."""
    sys_ = scenario.system
    if alloc.power.size != scenario.n:
        raise DomainError("allocation length does not match the scenario")
    rate = _rate_unchecked(alloc.power, alloc.bandwidth, scenario.gain, sys_.noise_psd)
    if np.any(~(rate > 0)):
        raise InfeasibleTransmission("zero uplink rate")
    D = scenario.samples
    t_cmp = scenario.c1 * D / alloc.freq_device
    t_up = alloc.rho * scenario.payload_bits / rate
    t_bs = scenario.c2 * D / alloc.freq_bs
    e_cmp = sys_.kappa * scenario.c1 * D * alloc.freq_device**2
    e_up = alloc.power * t_up
    e_bs = sys_.kappa * scenario.c2 * D * alloc.freq_bs**2
    t_max = float(np.max(t_cmp + t_up + t_bs))
    e_total = float(np.sum(e_cmp + e_up + e_bs))
    objective = sys_.weight_time * t_max + sys_.weight_energy * e_total
    return ConsumptionReport(
        t_cmp, t_up, t_bs, e_cmp, e_up, e_bs, t_max, e_total, objective,
        sys_.weight_time, sys_.weight_energy,
    )


def achieved_psnr(scenario: Scenario, alloc: Allocation) -> np.ndarray:
    s = snr(alloc.power, alloc.bandwidth, scenario.gain, scenario.system.noise_psd)
    return psnr(scenario.psnr_model, alloc.rho, s)


def check_feasible(scenario: Scenario, alloc: Allocation, rtol: float = 1e-8) -> list[str]:
    """Return a list of violated constraints (empty when feasible)."""
    problems = []
    sys_ = scenario.system
    if np.sum(alloc.bandwidth) > sys_.total_bandwidth * (1 + rtol):
        problems.append("sum of bandwidth exceeds total")
    for name, val, hi in [
        ("power", alloc.power, scenario.p_max),
        ("freq_device", alloc.freq_device, scenario.f_max),
        ("freq_bs", alloc.freq_bs, scenario.h_max),
        ("rho", alloc.rho, scenario.rho_max),
    ]:
        bad = np.nonzero(val > hi * (1 + rtol))[0]
        if bad.size:
            problems.append(f"{name} above bound for devices {bad.tolist()}")
    bad = np.nonzero(alloc.rho < scenario.rho_min * (1 - rtol))[0]
    if bad.size:
        problems.append(f"rho below rho_min for devices {bad.tolist()}")
    q = achieved_psnr(scenario, alloc)
    bad = np.nonzero(q < scenario.psnr_min - rtol * np.abs(scenario.psnr_min))[0]
    if bad.size:
        problems.append(f"PSNR floor violated for devices {bad.tolist()}")
    return problems
