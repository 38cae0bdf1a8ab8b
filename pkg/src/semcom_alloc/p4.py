"""Power and bandwidth for fixed (rho, f, h, T): sum-of-ratios uplink energy.

The epigraph form is solved by the parametric route: for auxiliaries
(gamma, delta) the problem

    min  sum_n gamma_n * (p_n rho_n d_n D_n - delta_n r_n(p_n, B_n))
    s.t. p_n <= p_max, sum B_n <= B_total, r_n >= r_min, S_n >= S_min

is convex and solved through its KKT system (``solve_p7_inner``); the
auxiliaries are driven to the root of ``phi`` by a damped Newton method
(``solve_p4``).

Per device, with a = gamma*rho*d*D and w = gamma*delta, minimising over p
for fixed B leaves a convex function of B whose slope is piecewise closed
form. Along increasing B the regimes are: rate floor binding (R), a flat
stretch at SNR ``max(Sbar, S_min)`` (F), and full power (P). Inverting the
slope in R and P uses the Lambert W function.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.optimize import brentq
from scipy.special import lambertw

from .errors import (
    BracketingError,
    DeadlineExhausted,
    InfeasibleTransmission,
    RateFloorUnreachable,
)
from .model import LN2, DeviceProfile, PsnrModel, Scenario, _rate_unchecked, psnr_inverse_snr

ZETA_XTOL = 1e-13
SIDE_STEP = 1e-9
# rounding allowance when the floors consume the whole band
REACH_RTOL = 1e-10
# log-price tolerance of the priced step; below SIDE_STEP so the end blend applies
PRICE_XTOL = 1e-11


@dataclass(frozen=True)
class AuxiliaryState:
    gamma: np.ndarray
    delta: np.ndarray


@dataclass(frozen=True)
class NewtonConfig:
    xi: float = 0.5
    eps: float = 0.1
    max_iter: int = 50
    phi_tol: float = 1e-9
    line_search_mode: str = "fixed-inner-point"
    max_backtrack: int = 60

    def __post_init__(self):
        if not (0 < self.xi < 1 and 0 < self.eps < 1):
            raise ValueError("need 0 < xi < 1 and 0 < eps < 1")
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")
        if self.line_search_mode not in ("fixed-inner-point", "resolve-per-trial"):
            raise ValueError(f"unknown line_search_mode {self.line_search_mode!r}")


@dataclass(frozen=True)
class P7Result:
    power: np.ndarray
    bandwidth: np.ndarray
    zeta: float
    eta: np.ndarray
    nu: np.ndarray
    iota: np.ndarray


@dataclass(frozen=True)
class P4Solution:
    power: np.ndarray
    bandwidth: np.ndarray
    aux: AuxiliaryState
    zeta: float
    eta: np.ndarray
    nu: np.ndarray
    iota: np.ndarray
    phi_norm: float
    iterations: int
    converged: bool
    e_up: float
    flags: tuple = ()
    phi_trace: tuple = field(default=(), repr=False)
    rate_floor: Optional[np.ndarray] = field(default=None, repr=False)
    snr_floor: Optional[np.ndarray] = field(default=None, repr=False)


# ---------------------------------------------------------------- floors


def rate_floor(device: DeviceProfile, rho: float, t_cmp: float, t_bs: float, deadline: float) -> float:
    """Smallest rate that lets the device finish by ``deadline``."""
    slack = deadline - t_cmp - t_bs
    if slack <= 0:
        raise DeadlineExhausted(f"no uplink time left: slack {slack:.6g} s")
    return rho * device.sample_bits * device.samples / slack


def rate_floors(scenario: Scenario, rho, t_cmp, t_bs, deadline: float) -> np.ndarray:
    slack = deadline - np.asarray(t_cmp) - np.asarray(t_bs)
    if np.any(slack <= 0):
        raise DeadlineExhausted(f"no uplink time left for devices {np.nonzero(slack <= 0)[0].tolist()}")
    return np.asarray(rho) * scenario.payload_bits / slack


def snr_floor(model: PsnrModel, device: DeviceProfile, rho: float) -> float:
    return float(psnr_inverse_snr(model, device.psnr_min, rho))


def snr_floors(scenario: Scenario, rho) -> np.ndarray:
    return psnr_inverse_snr(scenario.psnr_model, scenario.psnr_min, rho)


# ------------------------------------------------------ scalar helpers


def _psi(x):
    """1 + (x ln2 - 1) 2**x, the (negated, scaled) slope of the rate-floor power."""
    y = np.asarray(x, dtype=float) * LN2
    with np.errstate(over="ignore", invalid="ignore"):
        direct = (y - 1.0) * np.expm1(y) + y
    small = np.abs(y) < 1e-2
    if not np.any(small):
        return direct
    ys = np.where(small, y, 0.0)
    series = ys**2 * (1 / 2 + ys * (1 / 3 + ys * (1 / 8 + ys * (1 / 30 + ys * (1 / 144 + ys * (1 / 840))))))
    return np.where(small, series, direct)


def _psi_prime(x):
    x = np.asarray(x, dtype=float)
    return x * LN2**2 * np.exp2(x)


def _q(s):
    """[ln(1+S) - S/(1+S)] / ln2; increasing, q(0) = 0."""
    s = np.asarray(s, dtype=float)
    direct = np.log1p(s) - s / (1.0 + s)
    small = s < 1e-2
    if not np.any(small):
        return direct / LN2
    ss = np.where(small, s, 0.0)
    series = ss**2 * (1 / 2 - ss * (2 / 3 - ss * (3 / 4 - ss * (4 / 5 - ss * (5 / 6 - ss * (6 / 7))))))
    return np.where(small, series, direct) / LN2


def _q_prime(s):
    s = np.asarray(s, dtype=float)
    return s / ((1.0 + s) ** 2 * LN2)


def _psi_inverse(c):
    """x >= 0 with psi(x) = c, for c >= 0."""
    c = np.asarray(c, dtype=float)
    arg = np.maximum((c - 1.0) / math.e, -1.0 / math.e)
    y = 1.0 + lambertw(arg, 0).real
    x = np.maximum(y, 0.0) / LN2
    # polish near the branch point where lambertw loses digits
    for _ in range(3):
        d = _psi_prime(x)
        with np.errstate(divide="ignore", invalid="ignore"):
            step = np.where(d > 0, (_psi(x) - c) / d, 0.0)
        x = np.where(np.isfinite(step), np.maximum(x - step, 0.5 * x), x)
    return x


def _q_inverse(c):
    """S >= 0 with q(S) = c, for c >= 0."""
    c = np.asarray(c, dtype=float) * LN2
    arg = np.minimum(-np.exp(-(1.0 + c)), -1e-300)
    t = -lambertw(np.maximum(arg, -1.0 / math.e), 0).real
    with np.errstate(divide="ignore"):
        s = np.where(t > 0, 1.0 / t - 1.0, np.inf)
    s = np.maximum(s, 0.0)
    target = c / LN2
    for _ in range(3):
        d = _q_prime(s)
        with np.errstate(divide="ignore", invalid="ignore"):
            step = np.where(d > 0, (_q(s) - target) / d, 0.0)
        s = np.where(np.isfinite(step) & np.isfinite(s), np.maximum(s - step, 0.5 * s), s)
    return s


def _min_bandwidth_at_full_power(k, r_min):
    """Smallest B with B log2(1 + k/B) >= r_min, ``k = p_max g / N0``; inf if unreachable."""
    c = r_min * LN2 / k
    out = np.full_like(c, np.inf)
    ok = c < 1.0
    if np.any(ok):
        cc = c[ok]
        u = -lambertw(-cc * np.exp(-cc), -1).real / cc
        b = k[ok] / np.maximum(u - 1.0, 1e-300)
        kk, rr = k[ok], r_min[ok]
        for _ in range(4):
            s = kk / b
            f = b * np.log1p(s) / LN2 - rr
            b = b - f / _q(s)
        out[ok] = b
    return out


# --------------------------------------------------------- P7 structure


class _DeviceCurves:
    """Per-device breakpoints and slopes of the partially minimised P7 objective."""

    def __init__(self, gain, noise_psd, p_max, r_min, s_min, a, w, b_lo):
        self.g, self.n0, self.p_max = gain, noise_psd, p_max
        self.r_min, self.s_min, self.a, self.w = r_min, s_min, a, w
        self.k = p_max * gain / noise_psd
        self.b_lo = b_lo
        self.s_bar = w * gain / (a * noise_psd * LN2) - 1.0
        self.s_reg = np.maximum(np.maximum(self.s_bar, s_min), 0.0)
        with np.errstate(divide="ignore"):
            b1 = np.where(self.s_reg > 0, r_min * LN2 / np.log1p(self.s_reg), np.inf)
            bp = np.where(self.s_reg > 0, self.k / self.s_reg, np.inf)
            self.b_hi = np.where(s_min > 0, self.k / s_min, np.inf)
        s_at_lo = self.k / b_lo
        r_empty = s_at_lo <= self.s_reg
        self.b1 = np.where(r_empty, b_lo, np.maximum(b1, b_lo))
        self.bp = np.where(r_empty, b_lo, np.maximum(bp, self.b1))
        self.bp = np.minimum(self.bp, self.b_hi)
        self.b1 = np.minimum(self.b1, self.bp)
        self.has_r = self.b1 > b_lo
        self.has_f = self.bp > self.b1
        self.has_p = self.b_hi > self.bp
        self.flat_slope = a * noise_psd * self.s_reg / gain - w * np.log1p(self.s_reg) / LN2

    def slope_r(self, b):
        with np.errstate(divide="ignore", invalid="ignore"):
            x = np.where(np.isfinite(b), self.r_min / b, 0.0)
        return -self.a * self.n0 * _psi(x) / self.g

    def slope_p(self, b):
        with np.errstate(divide="ignore", invalid="ignore"):
            s = np.where(np.isfinite(b), self.k / b, 0.0)
        return -self.w * _q(s)

    def slope_right_of_lo(self):
        return np.where(self.has_r, self.slope_r(self.b_lo),
                        np.where(self.has_f, self.flat_slope,
                                 np.where(self.has_p, self.slope_p(self.b_lo), -np.inf)))

    def bandwidth(self, zeta: float):
        """Smallest minimiser of (objective + zeta B) per device."""
        c = -zeta
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            x = _psi_inverse(zeta * self.g / (self.a * self.n0))
            b_r = np.where(x > 0, self.r_min / x, np.inf)
            b_r = np.clip(b_r, self.b_lo, self.b1)
            s_p = _q_inverse(zeta / self.w)
            b_p = np.where(s_p > 0, self.k / s_p, np.inf)
            b_p = np.clip(b_p, self.bp, self.b_hi)
        in_r = self.has_r & (self.slope_r(self.b1) >= c)
        in_f = self.has_f & (self.flat_slope >= c)
        at_bp = self.has_p & (self.slope_p(self.bp) >= c)
        return np.where(in_r, b_r,
                        np.where(in_f, self.b1,
                                 np.where(at_bp, self.bp,
                                          np.where(self.has_p, b_p, self.bp))))

    def power(self, b):
        base = np.maximum(self.s_reg, 0.0) * self.n0 * b / self.g
        p_rate = np.expm1(self.r_min * LN2 / b) * self.n0 * b / self.g
        p_snr = self.s_min * self.n0 * b / self.g
        return np.minimum(np.maximum(np.maximum(base, p_rate), p_snr), self.p_max)


def _allocate_total(bandwidth_of, zeta_max: float, total: float):
    """Find zeta >= 0 with sum(bandwidth_of(zeta)) = total; returns (zeta, B).

    ``bandwidth_of`` is non-increasing in zeta and may jump; at a jump the
    devices on the jump share the remainder.
    """
    b0 = bandwidth_of(0.0)
    if np.all(np.isfinite(b0)) and np.sum(b0) <= total:
        return 0.0, b0

    def excess(log_z):
        return np.sum(bandwidth_of(math.exp(log_z))) - total

    if not math.isfinite(zeta_max):
        raise BracketingError(f"bandwidth multiplier bound is not finite: {zeta_max}")
    hi = math.log(zeta_max)
    f_hi = excess(hi)
    if 0 < f_hi <= REACH_RTOL * total:
        # the floors use the whole band: the feasible set is a single point
        b = bandwidth_of(zeta_max)
        return zeta_max, b * (total / np.sum(b))
    if f_hi > 0:
        raise BracketingError("bandwidth still exceeds the total at the largest multiplier",
                              trace=[(zeta_max, f_hi)])
    lo = hi
    trace = []
    while True:
        lo -= math.log(1e3)
        f_lo = excess(lo)
        trace.append((math.exp(lo), f_lo))
        if f_lo > 0:
            break
        if lo < hi - 1500:
            raise BracketingError("could not bracket the bandwidth multiplier", trace=trace)
    if f_hi == 0:
        z = zeta_max
    else:
        z = math.exp(brentq(excess, lo, hi, xtol=ZETA_XTOL, rtol=4 * np.finfo(float).eps, maxiter=500))
    b_small = bandwidth_of(z * (1 + SIDE_STEP))
    b_large = bandwidth_of(z * (1 - SIDE_STEP))
    s_small, s_large = np.sum(b_small), np.sum(b_large)
    if not np.isfinite(s_large) or s_large <= s_small:
        return z, b_small
    lam = min(max((total - s_small) / (s_large - s_small), 0.0), 1.0)
    return z, b_small + lam * (b_large - b_small)


def _active_sets(scenario: Scenario, p, b, r_min, s_min, tol=1e-9):
    rate = _rate_unchecked(p, b, scenario.gain, scenario.system.noise_psd)
    s = p * scenario.gain / (scenario.system.noise_psd * b)
    rate_on = rate <= r_min * (1 + tol)
    snr_on = (s_min > 0) & (s <= s_min * (1 + tol))
    p_on = p >= scenario.p_max * (1 - tol)
    return rate_on, snr_on, p_on, s


def multipliers_p7(scenario: Scenario, rho, p, b, r_min, s_min, aux: AuxiliaryState, zeta: float):
    n0 = scenario.system.noise_psd
    g = scenario.gain
    a = aux.gamma * rho * scenario.payload_bits
    w = aux.gamma * aux.delta
    rate_on, snr_on, p_on, s = _active_sets(scenario, p, b, r_min, s_min)
    big_g = g / (n0 * (1.0 + s) * LN2)
    q = _q(s)
    eta = np.zeros_like(p)
    nu = np.zeros_like(p)
    iota = np.zeros_like(p)
    for i in range(p.size):
        cols = []
        mat = []
        if rate_on[i]:
            cols.append(0)
            mat.append((-big_g[i], -q[i]))
        if snr_on[i]:
            cols.append(1)
            mat.append((-g[i], n0 * s_min[i]))
        if p_on[i]:
            cols.append(2)
            mat.append((1.0, 0.0))
        if not cols:
            continue
        A = np.array(mat).T
        rhs = np.array([-a[i] + w[i] * big_g[i], w[i] * q[i] - zeta])
        scale = np.maximum(np.abs(A).max(axis=1), np.abs(rhs))
        scale[scale == 0] = 1.0
        sol, *_ = np.linalg.lstsq(A / scale[:, None], rhs / scale, rcond=None)
        sol = np.maximum(sol, 0.0)
        for c, v in zip(cols, sol):
            (eta, nu, iota)[c][i] = v
    return eta, nu, iota


# ------------------------------------------------------------ public API


def init_auxiliary(scenario: Scenario, power, bandwidth, rho) -> AuxiliaryState:
    rate = _rate_unchecked(np.asarray(power, float), np.asarray(bandwidth, float),
                           scenario.gain, scenario.system.noise_psd)
    if np.any(~(rate > 0)):
        raise InfeasibleTransmission("zero uplink rate at the starting point")
    delta = np.asarray(power) * np.asarray(rho) * scenario.payload_bits / rate
    gamma = scenario.system.weight_energy / rate
    return AuxiliaryState(gamma=gamma, delta=delta)


def phi_residual(scenario: Scenario, power, bandwidth, rho, aux: AuxiliaryState) -> np.ndarray:
    """Stacked residual [phi_1; phi_2]; zero exactly at the parametric fixed point."""
    rate = _rate_unchecked(np.asarray(power, float), np.asarray(bandwidth, float),
                           scenario.gain, scenario.system.noise_psd)
    phi1 = -np.asarray(power) * np.asarray(rho) * scenario.payload_bits + aux.delta * rate
    phi2 = -scenario.system.weight_energy + aux.gamma * rate
    return np.concatenate([phi1, phi2])


def phi_scaled_norm(scenario: Scenario, power, rho, phi) -> float:
    """Euclidean norm with each entry divided by max(1, |dominant term|)."""
    n = scenario.n
    s1 = np.maximum(1.0, np.asarray(power) * np.asarray(rho) * scenario.payload_bits)
    s2 = max(1.0, scenario.system.weight_energy)
    return float(np.linalg.norm(np.concatenate([phi[:n] / s1, phi[n:] / s2])))


def _b_lo(scenario: Scenario, r_min):
    k = scenario.p_max * scenario.gain / scenario.system.noise_psd
    return _min_bandwidth_at_full_power(k, np.asarray(r_min, float))


def _check_reachable(scenario: Scenario, b_lo, s_min):
    total = scenario.system.total_bandwidth
    k = scenario.p_max * scenario.gain / scenario.system.noise_psd
    with np.errstate(divide="ignore"):
        b_hi = np.where(s_min > 0, k / s_min, np.inf)
    slack = 1 + REACH_RTOL
    bad = np.nonzero(~np.isfinite(b_lo) | (b_lo > total * slack) | (b_lo > b_hi * slack))[0]
    if bad.size:
        raise RateFloorUnreachable(bad.tolist())
    if np.sum(b_lo) > total * slack:
        raise RateFloorUnreachable(list(range(scenario.n)),
                                   "rate floors need more than the total bandwidth at full power")


def solve_p7_inner(scenario: Scenario, rho, rate_floors_, snr_floors_, aux: AuxiliaryState,
                   b_lo=None, multipliers: bool = True) -> P7Result:
    """KKT solution of the parametric convex problem for fixed (gamma, delta).

    With ``multipliers=False`` the per-device multipliers are left as NaN.
    """
    rho = np.asarray(rho, float)
    r_min = np.asarray(rate_floors_, float)
    s_min = np.asarray(snr_floors_, float)
    if b_lo is None:
        b_lo = _b_lo(scenario, r_min)
        _check_reachable(scenario, b_lo, s_min)
    a = aux.gamma * rho * scenario.payload_bits
    w = aux.gamma * aux.delta
    curves = _DeviceCurves(scenario.gain, scenario.system.noise_psd, scenario.p_max,
                           r_min, s_min, a, w, b_lo)
    # devices pinned at b_lo = b_hi have no slope to the right and never move
    prices = -curves.slope_right_of_lo()
    prices = prices[np.isfinite(prices)]
    zeta_max = max(float(np.max(prices)) if prices.size else 0.0, 1e-300) * (1 + 1e-9)
    zeta, b = _allocate_total(curves.bandwidth, zeta_max, scenario.system.total_bandwidth)
    p = curves.power(b)
    if multipliers:
        eta, nu, iota = multipliers_p7(scenario, rho, p, b, r_min, s_min, aux, zeta)
    else:
        eta = nu = iota = np.full_like(p, np.nan)
    return P7Result(power=p, bandwidth=b, zeta=zeta, eta=eta, nu=nu, iota=iota)


def uplink_energy(scenario: Scenario, power, bandwidth, rho) -> np.ndarray:
    rate = _rate_unchecked(power, bandwidth, scenario.gain, scenario.system.noise_psd)
    return power * rho * scenario.payload_bits / rate


def solve_p4_direct(scenario: Scenario, rho, rate_floors_, snr_floors_, b_lo=None):
    """Global P4 optimum via the reduced form.

    Uplink energy rises with p at fixed B and falls with B at fixed p, so each
    device runs at the least power meeting both floors; what remains is a
    separable convex water-filling over B. Returns (power, bandwidth, zeta).
    """
    rho = np.asarray(rho, float)
    r_min = np.asarray(rate_floors_, float)
    s_min = np.asarray(snr_floors_, float)
    if b_lo is None:
        b_lo = _b_lo(scenario, r_min)
        _check_reachable(scenario, b_lo, s_min)
    n0 = scenario.system.noise_psd
    g = scenario.gain
    w2 = scenario.system.weight_energy
    with np.errstate(divide="ignore"):
        b_c = np.where(s_min > 0, r_min * LN2 / np.log1p(s_min), np.inf)
    b_c = np.maximum(b_c, b_lo)
    scale = w2 * rho * scenario.payload_bits * n0 / (g * r_min)

    def bandwidth_of(zeta):
        x = _psi_inverse(zeta / scale)
        with np.errstate(divide="ignore"):
            b = np.where(x > 0, r_min / x, np.inf)
        return np.clip(b, b_lo, b_c)

    zeta_max = float(np.max(scale * _psi(r_min / b_lo))) * (1 + 1e-9)
    zeta, b = _allocate_total(bandwidth_of, zeta_max, scenario.system.total_bandwidth)
    p_rate = np.expm1(r_min * LN2 / b) * n0 * b / g
    p = np.minimum(np.maximum(p_rate, s_min * n0 * b / g), scenario.p_max)
    return p, b, zeta


def _feasible(scenario, p, b, r_min, s_min, rtol=1e-8) -> bool:
    rate = _rate_unchecked(p, b, scenario.gain, scenario.system.noise_psd)
    s = p * scenario.gain / (scenario.system.noise_psd * b)
    return bool(
        np.sum(b) <= scenario.system.total_bandwidth * (1 + 1e-9)
        and np.all(p <= scenario.p_max * (1 + rtol))
        and np.all(rate >= r_min * (1 - rtol))
        and np.all(s >= s_min * (1 - rtol))
    )


def solve_p4(scenario: Scenario, rho, t_cmp, t_bs, deadline: float,
             config: NewtonConfig = NewtonConfig(), warm_start=None) -> P4Solution:
    """Parametric modified-Newton solve of the power/bandwidth block.

    ``warm_start`` is a feasible ``(power, bandwidth)`` pair. The returned
    point never has more uplink energy than the warm start.
    """
    rho = np.asarray(rho, float)
    r_min = rate_floors(scenario, rho, t_cmp, t_bs, deadline)
    s_min = snr_floors(scenario, rho)
    b_lo = _b_lo(scenario, r_min)
    _check_reachable(scenario, b_lo, s_min)
    flags = []

    if warm_start is None:
        p0, b0, _ = solve_p4_direct(scenario, rho, r_min, s_min, b_lo)
    else:
        p0 = np.asarray(warm_start[0], float).copy()
        b0 = np.asarray(warm_start[1], float).copy()
    e0 = float(np.sum(uplink_energy(scenario, p0, b0, rho)))
    warm_ok = _feasible(scenario, p0, b0, r_min, s_min)

    w2 = scenario.system.weight_energy
    if w2 <= 0:
        aux = init_auxiliary(scenario, p0, b0, rho)
        return P4Solution(p0, b0, aux, 0.0, np.zeros_like(p0), np.zeros_like(p0), np.zeros_like(p0),
                          0.0, 0, True, e0, ("zero-energy-weight",), (), r_min, s_min)

    aux = init_auxiliary(scenario, p0, b0, rho)
    trace = []
    converged = False
    inner = solve_p7_inner(scenario, rho, r_min, s_min, aux, b_lo, multipliers=False)
    iterations = 0
    norm = math.inf
    for it in range(config.max_iter):
        iterations = it + 1
        phi = phi_residual(scenario, inner.power, inner.bandwidth, rho, aux)
        norm = phi_scaled_norm(scenario, inner.power, rho, phi)
        trace.append(norm)
        if norm <= config.phi_tol:
            converged = True
            break
        rate = _rate_unchecked(inner.power, inner.bandwidth, scenario.gain, scenario.system.noise_psd)
        n = scenario.n
        sigma_delta = -phi[:n] / rate
        sigma_gamma = -phi[n:] / rate
        step = 1.0
        accepted = None
        for _ in range(config.max_backtrack + 1):
            trial = AuxiliaryState(gamma=aux.gamma + step * sigma_gamma,
                                   delta=aux.delta + step * sigma_delta)
            if config.line_search_mode == "fixed-inner-point":
                t_inner = inner
            else:
                t_inner = solve_p7_inner(scenario, rho, r_min, s_min, trial, b_lo, multipliers=False)
            t_phi = phi_residual(scenario, t_inner.power, t_inner.bandwidth, rho, trial)
            t_norm = phi_scaled_norm(scenario, t_inner.power, rho, t_phi)
            if t_norm <= (1 - config.eps * step) * norm:
                accepted = (trial, t_inner)
                break
            step *= config.xi
        if accepted is None:
            flags.append("line-search-exhausted")
            trial = AuxiliaryState(gamma=aux.gamma + step * sigma_gamma,
                                   delta=aux.delta + step * sigma_delta)
            accepted = (trial, None)
        aux = accepted[0]
        if config.line_search_mode == "resolve-per-trial" and accepted[1] is not None:
            inner = accepted[1]
        else:
            inner = solve_p7_inner(scenario, rho, r_min, s_min, aux, b_lo, multipliers=False)

    p, b = inner.power, inner.bandwidth
    e_new = float(np.sum(uplink_energy(scenario, p, b, rho)))
    if not converged:
        flags.append("not-converged")

    # cross-check against the reduced form; keep whichever is better
    pd, bd, zd = solve_p4_direct(scenario, rho, r_min, s_min, b_lo)
    e_direct = float(np.sum(uplink_energy(scenario, pd, bd, rho)))
    new_ok = _feasible(scenario, p, b, r_min, s_min)
    if not new_ok or e_new > e_direct * (1 + 1e-7):
        flags.append("fallback")
        p, b, e_new = pd, bd, e_direct
        aux = init_auxiliary(scenario, p, b, rho)
        inner = P7Result(p, b, zd, *multipliers_p7(scenario, rho, p, b, r_min, s_min, aux, zd))
    if warm_ok and e_new > e0 * (1 + 1e-9):
        flags.append("kept-warm-start")
        p, b, e_new = p0, b0, e0
        aux = init_auxiliary(scenario, p, b, rho)
    if "fallback" not in flags:
        inner = P7Result(p, b, inner.zeta, *multipliers_p7(scenario, rho, p, b, r_min, s_min, aux, inner.zeta))
    return P4Solution(
        power=p, bandwidth=b, aux=aux, zeta=inner.zeta, eta=inner.eta, nu=inner.nu, iota=inner.iota,
        phi_norm=norm, iterations=iterations, converged=converged, e_up=e_new, flags=tuple(flags),
        phi_trace=tuple(trace), rate_floor=r_min, snr_floor=s_min,
    )


# ------------------------------------------------- time-priced (p, B) step


def _m(s):
    """(1+S) ln(1+S) - S."""
    s = np.asarray(s, dtype=float)
    direct = (1.0 + s) * np.log1p(s) - s
    small = s < 1e-2
    if not np.any(small):
        return direct
    ss = np.where(small, s, 0.0)
    series = ss**2 * (1 / 2 - ss * (1 / 6 - ss * (1 / 12 - ss * (1 / 20 - ss * (1 / 30 - ss / 42)))))
    return np.where(small, series, direct)


def _newton_log(fun, target, s0, iters=40):
    """Solve fun(S) = target for increasing log-log ``fun``; returns S.

    ``fun`` returns (log value, d log value / d log S).
    """
    u = np.log(s0)
    for _ in range(iters):
        val, slope = fun(np.exp(u))
        step = np.clip((val - target) / np.maximum(slope, 1e-3), -5.0, 5.0)
        u = np.clip(u - step, -60.0, 60.0)
        if np.all(np.abs(step) < 1e-12):
            break
    return np.exp(u)


def _log_zeta_interior(s):
    lg = np.log1p(s)
    m = _m(s)
    val = math.log(LN2) + 2 * np.log(m) - np.log(lg)
    slope = s * (2 * lg / m - 1.0 / ((1 + s) * lg))
    return val, slope


def _log_zeta_full_power(s):
    q = _q(s)
    ell = np.log1p(s) / LN2
    val = np.log(q) + 2 * np.log(s) - 2 * np.log(ell)
    slope = s * (_q_prime(s) / q + 2 / s - 2 / ((1 + s) * LN2 * ell))
    return val, slope


@dataclass(frozen=True)
class PricedSolution:
    power: np.ndarray
    bandwidth: np.ndarray
    zeta: float


def solve_priced_pb(scenario: Scenario, rho, time_price, snr_floors_,
                    zeta_guess: Optional[float] = None) -> PricedSolution:
    """Minimise ``sum_n (w2 p_n + beta_n) t_up,n`` over (p, B) with the bandwidth budget.

    ``t_up,n = rho_n d_n D_n / r_n``. This is the (p, B) part of the joint
    Lagrangian when the per-device time multipliers ``beta`` are taken from a
    P3 solve. Per device and for a bandwidth price ``zeta`` the minimiser is
    one of three closed-form candidates: interior, SNR floor active, or full
    power; each reduces to a monotone scalar equation. ``zeta`` is then fixed
    by the bandwidth budget.
    """
    sys_ = scenario.system
    w2 = sys_.weight_energy
    beta = np.asarray(time_price, float)
    if w2 <= 0 or np.any(~(beta > 0)):
        raise ValueError("priced step needs weight_energy > 0 and positive time prices")
    n0, g = sys_.noise_psd, scenario.gain
    L = np.asarray(rho, float) * scenario.payload_bits
    s_min = np.asarray(snr_floors_, float)
    k = scenario.p_max * g / n0
    c_int = L * n0**2 * w2**2 / (beta * g**2)
    c_pow = (w2 * scenario.p_max + beta) * L / k**2
    ell_min = np.log1p(s_min) / LN2
    state = {"s_int": np.ones_like(L), "s_pow": np.ones_like(L)}

    def cost(s, b):
        p = s * n0 * b / g
        return (w2 * p + beta) * L / (b * np.log1p(s) / LN2)

    def per_device(zeta):
        s_i = _newton_log(_log_zeta_interior, np.log(zeta / c_int), state["s_int"])
        b_i = beta * g / (n0 * w2 * _m(s_i))
        ok_i = (s_i >= s_min) & (s_i * b_i <= k * (1 + 1e-12))
        s_p = _newton_log(_log_zeta_full_power, np.log(zeta / c_pow), state["s_pow"])
        state["s_int"], state["s_pow"] = s_i, s_p
        s_p = np.maximum(s_p, s_min)
        b_p = k / s_p
        with np.errstate(divide="ignore", invalid="ignore"):
            b_e = np.sqrt(beta * L / (zeta * ell_min))
        b_e = np.minimum(b_e, np.where(s_min > 0, k / np.where(s_min > 0, s_min, 1.0), np.inf))
        s_e = np.where(s_min > 0, s_min, 1.0)
        with np.errstate(invalid="ignore", divide="ignore"):
            j = np.stack([
                np.where(ok_i, cost(s_i, b_i) + zeta * b_i, np.inf),
                cost(s_p, b_p) + zeta * b_p,
                np.where(s_min > 0, cost(s_e, b_e) + zeta * b_e, np.inf),
            ])
        pick = np.argmin(j, axis=0)
        s = np.choose(pick, [s_i, s_p, s_e])
        b = np.choose(pick, [b_i, b_p, b_e])
        return s, b

    def excess(log_z):
        return float(np.sum(per_device(math.exp(log_z))[1]) - sys_.total_bandwidth)

    if zeta_guess is None or not zeta_guess > 0:
        # price guess from the even split at full power
        b0 = np.full_like(L, sys_.total_bandwidth / scenario.n)
        s0 = np.maximum(k / b0, s_min)
        zeta_guess = float(np.median((w2 * s0 * n0 * b0 / g + beta) * L * _q(s0)
                                     / (b0 * np.log1p(s0) / LN2) ** 2))
    mid = math.log(max(zeta_guess, 1e-300))
    f_mid = excess(mid)
    width = 0.05
    if f_mid > 0:
        lo, f_lo = mid, f_mid
        hi, f_hi = mid + width, excess(mid + width)
        for _ in range(200):
            if f_hi < 0:
                break
            lo, f_lo = hi, f_hi
            width *= 4.0
            hi = hi + width
            f_hi = excess(hi)
    else:
        hi, f_hi = mid, f_mid
        lo, f_lo = mid - width, excess(mid - width)
        for _ in range(200):
            if f_lo > 0:
                break
            hi, f_hi = lo, f_lo
            width *= 4.0
            lo = lo - width
            f_lo = excess(lo)
    if not (f_lo > 0 > f_hi):
        raise BracketingError("could not bracket the bandwidth price", trace=[(lo, f_lo), (hi, f_hi)])
    log_z = brentq(excess, lo, hi, xtol=PRICE_XTOL, rtol=4 * np.finfo(float).eps, maxiter=500)
    z = math.exp(log_z)
    s_a, b_a = per_device(z * (1 + SIDE_STEP))
    s_b, b_b = per_device(z * (1 - SIDE_STEP))
    lam = (sys_.total_bandwidth - np.sum(b_a)) / max(np.sum(b_b) - np.sum(b_a), 1e-300)
    lam = min(max(lam, 0.0), 1.0)
    b = b_a + lam * (b_b - b_a)
    s = s_a + lam * (s_b - s_a)
    b *= sys_.total_bandwidth / np.sum(b)
    p = np.minimum(s * n0 * b / g, scenario.p_max)
    return PricedSolution(power=p, bandwidth=b, zeta=z)
