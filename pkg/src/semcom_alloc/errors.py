"""Exception hierarchy for the allocation solvers."""


class AllocationError(Exception):
    """Base class for every solver-raised error."""


class DomainError(AllocationError, ValueError):
    """An argument lies outside the domain of a formula."""


class InfeasibleTransmission(AllocationError):
    """A device has a zero uplink rate."""


class InfeasibleRho(AllocationError):
    """The PSNR floor needs a compression rate above ``rho_max``."""

    def __init__(self, device: int, rho_bar: float, rho_max: float):
        self.device = device
        self.rho_bar = rho_bar
        self.rho_max = rho_max
        super().__init__(
            f"device {device}: PSNR floor needs rho={rho_bar:.6g} > rho_max={rho_max:.6g}"
        )


class DegenerateWeights(AllocationError):
    """A weight is zero where a formula divides by it."""


class DeadlineInfeasible(AllocationError):
    """The deadline is at or below a device's minimum achievable time."""


class DeadlineExhausted(AllocationError):
    """No time is left for the uplink once computation is subtracted."""


class RateFloorUnreachable(AllocationError):
    """A rate floor cannot be met even with the whole band at full power."""

    def __init__(self, devices, message: str = ""):
        self.devices = list(devices)
        super().__init__(message or f"rate floor unreachable for devices {self.devices}")


class BracketingError(AllocationError):
    """A monotone root bracket could not be established."""

    def __init__(self, message: str, trace=None):
        self.trace = list(trace or [])
        super().__init__(message)


class ScenarioInfeasible(AllocationError):
    """No feasible starting point exists for the scenario."""


class GridInfeasible(AllocationError):
    """The oracle grid holds no feasible point."""
