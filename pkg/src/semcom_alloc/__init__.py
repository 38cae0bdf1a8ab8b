"""Joint power, bandwidth, CPU frequency and compression-rate allocation
for uplink semantic communication."""

from .errors import (
    AllocationError,
    BracketingError,
    DeadlineExhausted,
    DeadlineInfeasible,
    DegenerateWeights,
    DomainError,
    GridInfeasible,
    InfeasibleRho,
    InfeasibleTransmission,
    RateFloorUnreachable,
    ScenarioInfeasible,
)
from .model import (
    Allocation,
    ConsumptionReport,
    DeviceProfile,
    PsnrModel,
    Scenario,
    SystemParams,
    achieved_psnr,
    check_feasible,
    consumption,
    psnr,
    psnr_inverse_rho,
    psnr_inverse_snr,
    snr,
    uplink_rate,
)
from .optimizer import OptimizerConfig, solve
from .scenario import ScenarioConfig, load_config, sample_scenario

__version__ = "0.1.0"

__all__ = [
    "AllocationError", "BracketingError", "DeadlineExhausted", "DeadlineInfeasible", "DegenerateWeights",
    "DomainError", "GridInfeasible", "InfeasibleRho", "InfeasibleTransmission", "RateFloorUnreachable",
    "ScenarioInfeasible", "Allocation", "ConsumptionReport", "DeviceProfile", "PsnrModel", "Scenario",
    "SystemParams", "achieved_psnr", "check_feasible", "consumption", "psnr", "psnr_inverse_rho",
    "psnr_inverse_snr", "snr", "uplink_rate", "OptimizerConfig", "solve", "ScenarioConfig", "load_config",
    "sample_scenario", "__version__",
]
