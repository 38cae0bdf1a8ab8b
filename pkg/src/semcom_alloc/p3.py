"""Compression rate, CPU frequencies and common deadline for fixed (p, B).

The frequency/deadline block is convex. Its KKT system gives
``f = min(fbar(beta), f_max)`` and ``h = min(fbar(beta), h_max)`` with
``fbar(beta) = (beta / (2 w2 kappa))**(1/3)``; each device's time then equals
the deadline, which fixes ``beta_n(T)``, and the deadline solves
``sum_n beta_n(T) = w1`` (bracketed root search).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq

from .errors import DeadlineInfeasible, DegenerateWeights, InfeasibleRho
from .model import (
    DeviceProfile,
    PsnrModel,
    Scenario,
    _rate_unchecked,
    psnr_inverse_rho,
    snr,
)

MAX_BISECTION = 200


@dataclass(frozen=True)
class P3Solution:
    rho: np.ndarray
    freq_device: np.ndarray
    freq_bs: np.ndarray
    deadline: float
    beta: np.ndarray
    alpha: np.ndarray
    tau: np.ndarray
    t_up: np.ndarray
    bisection_iters: int = 0


def min_feasible_rho(model: PsnrModel, device: DeviceProfile, power: float, bandwidth: float,
                     noise_psd: float, index: int = 0) -> float:
    """Smallest compression rate meeting the device's PSNR floor."""
    s = snr(power, bandwidth, device.gain, noise_psd)
    rho_bar = float(psnr_inverse_rho(model, device.psnr_min, s))
    if rho_bar > device.rho_max:
        raise InfeasibleRho(index, rho_bar, device.rho_max)
    return max(rho_bar, device.rho_min)


def min_feasible_rho_all(scenario: Scenario, power, bandwidth) -> np.ndarray:
    s = snr(power, bandwidth, scenario.gain, scenario.system.noise_psd)
    rho_bar = psnr_inverse_rho(scenario.psnr_model, scenario.psnr_min, s)
    bad = np.nonzero(rho_bar > scenario.rho_max)[0]
    if bad.size:
        i = int(bad[0])
        raise InfeasibleRho(i, float(rho_bar[i]), float(scenario.rho_max[i]))
    return np.maximum(rho_bar, scenario.rho_min)


def candidate_frequency(beta, weight_energy: float, kappa: float):
    """Unclamped stationary frequency ``(beta / (2 w2 kappa))**(1/3)``."""
    if weight_energy <= 0:
        raise DegenerateWeights("weight_energy = 0: stationary frequency is unbounded")
    return np.cbrt(np.asarray(beta, dtype=float) / (2.0 * weight_energy * kappa))


def _beta_curve(c1d, c2d, f_max, h_max, t_up, deadline, w2, kappa):
    """Vectorised beta_n(T); +inf where T is at or below the device floor.

    Piecewise closed form. With x the common stationary frequency, the time is
    ``t_up + c1d/min(x, f_max) + c2d/min(x, h_max)``: below the smaller bound
    both terms move with x, between the bounds only the unclamped one does.
    """
    slack = deadline - t_up
    m_lo = np.minimum(f_max, h_max)
    m_hi = np.maximum(f_max, h_max)
    with np.errstate(divide="ignore", invalid="ignore"):
        x_both = (c1d + c2d) / slack
        f_is_low = f_max <= h_max
        c_clamped = np.where(f_is_low, c1d, c2d)
        c_free = np.where(f_is_low, c2d, c1d)
        rem = slack - c_clamped / m_lo
        x_one = c_free / rem
    x = np.where((slack > 0) & (x_both <= m_lo), x_both,
                 np.where((rem > 0) & (x_one <= m_hi) & (x_one >= m_lo), x_one, np.inf))
    return 2.0 * w2 * kappa * x**3


def beta_of_deadline(device: DeviceProfile, t_up: float, deadline: float,
                     weight_energy: float, kappa: float) -> float:
    """Multiplier that makes the device finish exactly at ``deadline``."""
    if weight_energy <= 0:
        raise DegenerateWeights("weight_energy = 0")
    floor = t_up + device.cycles_device * device.samples / device.f_max \
        + device.cycles_bs * device.samples / device.h_max
    if deadline <= floor:
        raise DeadlineInfeasible(f"deadline {deadline:.9g} s <= device floor {floor:.9g} s")
    beta = _beta_curve(
        np.array([device.cycles_device * device.samples]),
        np.array([device.cycles_bs * device.samples]),
        np.array([device.f_max]), np.array([device.h_max]),
        np.array([t_up]), deadline, weight_energy, kappa,
    )
    return float(beta[0])


def _device_time(c1d, c2d, f, h, t_up):
    return t_up + c1d / f + c2d / h


def solve_p3(scenario: Scenario, power, bandwidth) -> P3Solution:
    """Optimal (rho, f, h, T) for fixed power and bandwidth."""
    sys_ = scenario.system
    w1, w2, kappa = sys_.weight_time, sys_.weight_energy, sys_.kappa
    if w1 <= 0:
        raise DegenerateWeights("weight_time = 0: the deadline is unbounded")
    power = np.asarray(power, dtype=float)
    bandwidth = np.asarray(bandwidth, dtype=float)

    rho = min_feasible_rho_all(scenario, power, bandwidth)
    rate = _rate_unchecked(power, bandwidth, scenario.gain, sys_.noise_psd)
    t_up = rho * scenario.payload_bits / rate
    D = scenario.samples
    c1d, c2d = scenario.c1 * D, scenario.c2 * D
    f_max, h_max = scenario.f_max, scenario.h_max
    floor = _device_time(c1d, c2d, f_max, h_max, t_up)
    t_lo = float(np.max(floor))
    zeros = np.zeros_like(power)

    if w2 <= 0:
        # energy has no weight: run flat out, the slowest devices carry w1
        ties = floor >= t_lo * (1 - 1e-12)
        beta = np.where(ties, w1 / np.count_nonzero(ties), 0.0)
        alpha = beta * c1d / f_max**2
        tau = beta * c2d / h_max**2
        return P3Solution(rho, f_max.copy(), h_max.copy(), t_lo, beta, alpha, tau, t_up)

    def betas(T):
        return _beta_curve(c1d, c2d, f_max, h_max, t_up, T, w2, kappa)

    m_hi = np.maximum(f_max, h_max)
    at_floor = floor >= t_lo * (1 - 1e-14)
    beta_floor = np.where(at_floor, 2.0 * w2 * kappa * m_hi**3, betas(t_lo))
    iters = 0
    if np.sum(beta_floor) <= w1:
        # the bottleneck device is saturated at both bounds and absorbs the rest
        deadline = t_lo
        beta = beta_floor.copy()
        rest = w1 - np.sum(beta_floor[~at_floor])
        beta[at_floor] = rest / np.count_nonzero(at_floor)
    else:
        width = max(t_lo, 1e-12)
        hi = t_lo + width
        while np.sum(betas(hi)) >= w1:
            width *= 2.0
            hi = t_lo + width
            iters += 1
            if iters > MAX_BISECTION:
                raise DeadlineInfeasible("could not bracket the deadline")
        counter = [0]

        def excess(T):
            counter[0] += 1
            # beta is +inf at the floor; brentq only needs the sign there
            return min(float(np.sum(betas(T))), 1e300) - w1

        deadline = brentq(excess, t_lo, hi, xtol=1e-15 * t_lo, rtol=4 * np.finfo(float).eps,
                          maxiter=MAX_BISECTION)
        iters += counter[0]
        beta = betas(deadline)

    fbar = candidate_frequency(beta, w2, kappa)
    f = np.minimum(fbar, f_max)
    h = np.minimum(fbar, h_max)
    f_clamped = fbar >= f_max
    h_clamped = fbar >= h_max
    alpha = np.where(f_clamped, np.maximum(beta * c1d / f**2 - 2 * w2 * kappa * c1d * f, 0.0), zeros)
    tau = np.where(h_clamped, np.maximum(beta * c2d / h**2 - 2 * w2 * kappa * c2d * h, 0.0), zeros)
    return P3Solution(rho, f, h, float(deadline), beta, alpha, tau, t_up, iters)
