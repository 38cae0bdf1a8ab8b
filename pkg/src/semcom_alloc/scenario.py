"""Seeded scenario generation: placement, path loss, shadowing, device draws.

RNG contract (version 1): every device ``n`` draws from its own
``numpy.random.Philox`` stream seeded by ``SeedSequence(seed).spawn(N)[n]``.
Child streams depend only on ``(seed, n)``, so device ``n`` is the same
device whatever ``N`` is. Draw order per device: radius (rejection until
``>= min_distance_m``), angle, shadowing, ``c_1n``, ``c_2n``.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import Any, Mapping

import jsonschema
import numpy as np

from .errors import DomainError
from .model import DeviceProfile, PsnrModel, Scenario, SystemParams

RNG_VERSION = 1


def dbm_to_watt(x):
    return 10.0 ** ((np.asarray(x, dtype=float) - 30.0) / 10.0)


def db_to_linear(x):
    return 10.0 ** (np.asarray(x, dtype=float) / 10.0)


def path_loss_db(distance_m, a_db: float = 128.1, b_db: float = 37.6):
    """Urban macro path loss with distance in km."""
    return a_db + b_db * np.log10(np.asarray(distance_m, dtype=float) / 1000.0)


def _default_psnr_model() -> dict:
    m = PsnrModel.fitted()
    return {"a": m.a, "b": m.b, "c_rho": m.c_rho, "c_s": m.c_s}


@dataclass(frozen=True)
class ScenarioConfig:
    device_count: int = 50
    cell_radius_m: float = 250.0
    min_distance_m: float = 10.0
    path_loss_a_db: float = 128.1
    path_loss_b_db: float = 37.6
    shadow_sigma_db: float = 8.0
    noise_psd_dbm_per_hz: float = -174.0
    total_bandwidth_hz: float = 20e6
    kappa: float = 1e-28
    samples: float = 32.0
    sample_bits: float = 1e6
    cycles_device_range: tuple = (1e6, 3e6)
    cycles_bs_range: tuple = (3e6, 5e6)
    p_max_dbm: float = 20.0
    f_max_hz: float = 1e9
    h_max_hz: float = 5e9
    rho_min: float = 0.1
    rho_max: float = 0.3
    psnr_min_db: float = 25.0
    weight_time: float = 0.5
    weight_energy: float = 0.5
    psnr_model: Mapping[str, float] = field(default_factory=_default_psnr_model)
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "cycles_device_range", tuple(map(float, self.cycles_device_range)))
        object.__setattr__(self, "cycles_bs_range", tuple(map(float, self.cycles_bs_range)))
        object.__setattr__(self, "psnr_model", dict(self.psnr_model))
        if not self.cell_radius_m > self.min_distance_m > 0:
            raise DomainError("need cell_radius_m > min_distance_m > 0")
        for name in ("cycles_device_range", "cycles_bs_range"):
            lo, hi = getattr(self, name)
            if not 0 < lo <= hi:
                raise DomainError(f"{name} must be a positive, non-empty range")
        if self.device_count < 1:
            raise DomainError("device_count must be >= 1")
        if not 0 < self.rho_min <= self.rho_max:
            raise DomainError("need 0 < rho_min <= rho_max")
        if self.shadow_sigma_db < 0:
            raise DomainError("shadow_sigma_db must be >= 0")
        PsnrModel(**self.psnr_model)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["cycles_device_range"] = list(self.cycles_device_range)
        d["cycles_bs_range"] = list(self.cycles_bs_range)
        return d


SWEEP_PARAMETERS = {
    "total_bandwidth": "total_bandwidth_hz",
    "p_max": "p_max_dbm",
    "f_max": "f_max_hz",
    "weight_time": "weight_time",
    "device_count": "device_count",
    "psnr_min": "psnr_min_db",
}


def override(config: ScenarioConfig, parameter: str, value) -> ScenarioConfig:
    """Return ``config`` with one sweepable parameter replaced.

    ``p_max`` is in dBm, ``psnr_min`` in dB, the rest in SI units.
    Setting ``weight_time`` also sets ``weight_energy = 1 - weight_time``.
    """
    if parameter not in SWEEP_PARAMETERS:
        raise ValueError(f"unknown sweep parameter {parameter!r}; choose from {sorted(SWEEP_PARAMETERS)}")
    key = SWEEP_PARAMETERS[parameter]
    if parameter == "weight_time":
        return replace(config, weight_time=float(value), weight_energy=1.0 - float(value))
    if parameter == "device_count":
        return replace(config, device_count=int(value))
    return replace(config, **{key: float(value)})


def config_schema() -> dict:
    text = resources.files("semcom_alloc").joinpath("config.schema.json").read_text()
    return json.loads(text)


def load_config(path) -> tuple[ScenarioConfig, dict]:
    """Read a JSON config; returns the scenario config and the raw optimizer section."""
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except OSError as exc:
        raise OSError(f"cannot read config {path}: {exc}") from exc
    return parse_config(doc)


def parse_config(doc: Mapping[str, Any]) -> tuple[ScenarioConfig, dict]:
    jsonschema.validate(doc, config_schema())
    doc = dict(doc)
    optimizer = doc.pop("optimizer", {})
    return ScenarioConfig(**doc), optimizer


def _draw_radius(rng: np.random.Generator, radius: float, min_distance: float) -> float:
    while True:
        r = radius * math.sqrt(rng.random())
        if r >= min_distance:
            return r


def sample_scenario(config: ScenarioConfig, seed: int | None = None) -> Scenario:
    """Draw a reproducible scenario; ``seed`` overrides ``config.seed``."""
    seed = config.seed if seed is None else seed
    n = config.device_count
    children = np.random.SeedSequence(int(seed)).spawn(n)
    noise_psd = float(dbm_to_watt(config.noise_psd_dbm_per_hz))
    p_max = float(dbm_to_watt(config.p_max_dbm))
    devices = []
    positions = np.empty((n, 2))
    for i, child in enumerate(children):
        rng = np.random.Generator(np.random.Philox(child))
        r = _draw_radius(rng, config.cell_radius_m, config.min_distance_m)
        theta = rng.uniform(0.0, 2.0 * math.pi)
        shadow = rng.normal(0.0, config.shadow_sigma_db) if config.shadow_sigma_db > 0 else 0.0
        c1 = rng.uniform(*config.cycles_device_range)
        c2 = rng.uniform(*config.cycles_bs_range)
        positions[i] = (r * math.cos(theta), r * math.sin(theta))
        pl = path_loss_db(r, config.path_loss_a_db, config.path_loss_b_db) + shadow
        gain = min(10.0 ** (-pl / 10.0), 1.0)
        devices.append(
            DeviceProfile(
                gain=gain,
                cycles_device=c1,
                cycles_bs=c2,
                samples=config.samples,
                sample_bits=config.sample_bits,
                p_max=p_max,
                f_max=config.f_max_hz,
                h_max=config.h_max_hz,
                rho_min=config.rho_min,
                rho_max=config.rho_max,
                psnr_min=config.psnr_min_db,
            )
        )
    system = SystemParams(
        total_bandwidth=config.total_bandwidth_hz,
        noise_psd=noise_psd,
        kappa=config.kappa,
        weight_time=config.weight_time,
        weight_energy=config.weight_energy,
        device_count=n,
    )
    positions.setflags(write=False)
    return Scenario(system, tuple(devices), PsnrModel(**config.psnr_model), positions)
