import numpy as np
import pytest

from semcom_alloc import (
    DeviceProfile,
    PsnrModel,
    Scenario,
    ScenarioConfig,
    SystemParams,
    sample_scenario,
)


def make_device(**overrides) -> DeviceProfile:
    base = dict(gain=2.8e-11, cycles_device=2e6, cycles_bs=4e6, samples=32.0, sample_bits=1e6,
                p_max=0.1, f_max=1e9, h_max=5e9, rho_min=0.1, rho_max=0.3, psnr_min=25.0)
    base.update(overrides)
    return DeviceProfile(**base)


def make_scenario(devices, total_bandwidth=20e6, noise_psd=3.981e-21, kappa=1e-28,
                  weight_time=0.5, weight_energy=0.5, model=None) -> Scenario:
    devices = tuple(devices)
    system = SystemParams(total_bandwidth, noise_psd, kappa, weight_time, weight_energy, len(devices))
    return Scenario(system, devices, model or PsnrModel.fitted())


@pytest.fixture(scope="session")
def default_scenarios():
    """A handful of Table-II-style N = 50 scenarios."""
    return [sample_scenario(ScenarioConfig(), seed) for seed in range(3)]


@pytest.fixture(scope="session")
def small_scenarios():
    return [sample_scenario(ScenarioConfig(device_count=3), seed) for seed in range(5)]


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# --------------------------------------------------------------- acceptance

_ACCEPTANCE = {}


@pytest.fixture
def acceptance(request):
    """Record one pass/fail line per criterion; shown live and in the summary."""
    capman = request.config.pluginmanager.getplugin("capturemanager")

    def record(number: int, ok: bool, detail: str) -> bool:
        line = f"ACCEPTANCE {number}: {'PASS' if ok else 'FAIL'}  {detail}"
        _ACCEPTANCE[number] = line
        with capman.global_and_fixture_disabled():
            print("\n" + line, flush=True)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for number in sorted(_ACCEPTANCE):
            terminalreporter.write_line(_ACCEPTANCE[number])
