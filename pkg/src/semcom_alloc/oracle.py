"""Solver-independent checks: brute-force grid search, KKT residuals, rate concavity.

Nothing here calls the block solvers. Only the core formulas (rate, PSNR,
consumption) are shared.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Mapping, Optional

import mpmath
import numpy as np
from scipy.optimize import nnls

from .errors import DomainError, GridInfeasible
from .model import LN2, Allocation, Scenario, consumption

# ------------------------------------------------------------ grid search


@dataclass
class GridResult:
    allocation: Allocation
    objective: float
    evaluated: int


def default_grids(scenario: Scenario, points: int) -> dict:
    """Per-device grids: log-spaced p, f, h over three/two/two decades, linear rho."""
    out = {}
    for name, hi, decades in [("power", scenario.p_max, 3), ("freq_device", scenario.f_max, 2),
                              ("freq_bs", scenario.h_max, 2)]:
        out[name] = [np.logspace(math.log10(v) - decades, math.log10(v), points) for v in hi]
    out["rho"] = [np.linspace(lo, hi, points) for lo, hi in zip(scenario.rho_min, scenario.rho_max)]
    return out


def simplex_splits(n: int, points: int) -> np.ndarray:
    """All (k_1..k_n) with k_i >= 1 and sum = points, as fractions."""
    rows = [c for c in itertools.product(range(1, points), repeat=n - 1) if sum(c) < points]
    if n == 1:
        return np.ones((1, 1))
    arr = np.array([list(c) + [points - sum(c)] for c in rows], dtype=float)
    return arr / points


def _pareto(t, e):
    """Indices of the time/energy staircase: sorted by t, energy strictly falling."""
    order = np.lexsort((e, t))
    t, e = t[order], e[order]
    run_min = np.minimum.accumulate(e)
    keep = np.ones(e.size, bool)
    keep[1:] = e[1:] < run_min[:-1]
    return order[keep]


def grid_search(scenario: Scenario, grid_points: int = 20, grids: Optional[Mapping] = None,
                splits: Optional[np.ndarray] = None) -> GridResult:
    """Exhaustive search over a Cartesian (p, f, h, rho) grid and a bandwidth simplex.

    For each device and bandwidth share the whole grid is scored, infeasible
    points dropped, and the remaining (time, energy) pairs reduced to their
    Pareto staircase. Devices are then combined exactly: the objective
    ``w1 * tau + w2 * sum_n min{E_n : T_n <= tau}`` is minimised over every
    candidate ``tau``.
    """
    n = scenario.n
    if n > 3:
        raise DomainError("grid_search is limited to N <= 3")
    if grid_points < 10 and grids is None:
        raise DomainError("grid_points must be >= 10")
    g = dict(default_grids(scenario, grid_points))
    if grids:
        for k, v in grids.items():
            g[k] = [np.asarray(v, float)] * n if np.ndim(v) == 1 else [np.asarray(x, float) for x in v]
    if splits is None:
        splits = simplex_splits(n, grid_points)
    splits = np.atleast_2d(np.asarray(splits, float))
    sys_ = scenario.system
    w1, w2 = sys_.weight_time, sys_.weight_energy
    D = scenario.samples
    cache = {}
    evaluated = 0

    def staircase(dev, share):
        nonlocal evaluated
        key = (dev, share)
        if key in cache:
            return cache[key]
        b = share * sys_.total_bandwidth
        P, F, H, R = np.meshgrid(g["power"][dev], g["freq_device"][dev], g["freq_bs"][dev],
                                 g["rho"][dev], indexing="ij")
        P, F, H, R = P.ravel(), F.ravel(), H.ravel(), R.ravel()
        evaluated += P.size
        s = P * scenario.gain[dev] / (sys_.noise_psd * b)
        rate = b * np.log1p(s) / LN2
        q = scenario.psnr_model.a * np.log(scenario.psnr_model.c_rho * R + scenario.psnr_model.c_s * s
                                           + scenario.psnr_model.b)
        ok = ((q >= scenario.psnr_min[dev]) & (P <= scenario.p_max[dev]) & (F <= scenario.f_max[dev])
              & (H <= scenario.h_max[dev]) & (R >= scenario.rho_min[dev]) & (R <= scenario.rho_max[dev]))
        t_up = R * scenario.payload_bits[dev] / rate
        T = scenario.c1[dev] * D[dev] / F + t_up + scenario.c2[dev] * D[dev] / H
        E = sys_.kappa * D[dev] * (scenario.c1[dev] * F**2 + scenario.c2[dev] * H**2) + P * t_up
        idx = np.nonzero(ok)[0]
        keep = idx[_pareto(T[idx], E[idx])] if idx.size else idx
        out = (T[keep], E[keep], np.stack([P[keep], F[keep], H[keep], R[keep]], axis=1))
        cache[key] = out
        return out

    best = (math.inf, None)
    for row in splits:
        stairs = [staircase(d, float(row[d])) for d in range(n)]
        if any(st[0].size == 0 for st in stairs):
            continue
        taus = np.unique(np.concatenate([st[0] for st in stairs]))
        taus = taus[taus >= max(st[0][0] for st in stairs)]
        total = w1 * taus
        picks = []
        for T, E, _ in stairs:
            # staircase energies fall with T, so the last admissible point is the cheapest
            j = np.searchsorted(T, taus, side="right") - 1
            total = total + w2 * E[j]
            picks.append(j)
        k = int(np.argmin(total))
        if total[k] < best[0]:
            best = (float(total[k]), (row, [st[2][p[k]] for st, p in zip(stairs, picks)]))
    if best[1] is None:
        raise GridInfeasible("no feasible grid point")
    row, pts = best[1]
    pts = np.array(pts)
    alloc = Allocation(pts[:, 0], row * sys_.total_bandwidth, pts[:, 1], pts[:, 2], pts[:, 3])
    return GridResult(alloc, consumption(scenario, alloc).objective, evaluated)


# ---------------------------------------------------------- KKT residuals


@dataclass
class ResidualReport:
    values: dict = field(default_factory=dict)

    def add(self, name: str, value) -> None:
        v = float(np.max(np.abs(np.asarray(value, float)))) if np.size(value) else 0.0
        self.values[name] = max(self.values.get(name, 0.0), v)

    def max(self) -> float:
        return max(self.values.values()) if self.values else 0.0

    def passes(self, tol: float) -> bool:
        return all(v <= tol for v in self.values.values())


def _rel(res, *terms):
    scale = np.maximum.reduce([np.abs(np.asarray(t, float)) for t in terms])
    scale = np.where(scale > 0, scale, 1.0)
    return np.abs(res) / scale


def kkt_residuals_p3(scenario: Scenario, power, bandwidth, sol) -> ResidualReport:
    """Residuals of the frequency/deadline KKT system at ``sol``.

    ``sol`` needs ``rho, freq_device, freq_bs, deadline, beta, alpha, tau``.
    Each residual is divided by the largest term of its own equation.
    """
    sys_ = scenario.system
    w1, w2, kappa = sys_.weight_time, sys_.weight_energy, sys_.kappa
    p, b = np.asarray(power, float), np.asarray(bandwidth, float)
    f, h, rho = np.asarray(sol.freq_device), np.asarray(sol.freq_bs), np.asarray(sol.rho)
    beta, alpha, tau = np.asarray(sol.beta), np.asarray(sol.alpha), np.asarray(sol.tau)
    T = sol.deadline
    D = scenario.samples
    c1d, c2d = scenario.c1 * D, scenario.c2 * D
    s = p * scenario.gain / (sys_.noise_psd * b)
    rate = b * np.log1p(s) / LN2
    t_up = rho * scenario.payload_bits / rate
    times = c1d / f + t_up + c2d / h
    rep = ResidualReport()
    # d/df: 2 w2 kappa c1 D f - beta c1 D / f^2 + alpha = 0, same for h
    grad_f = 2 * w2 * kappa * c1d * f
    grad_h = 2 * w2 * kappa * c2d * h
    rep.add("stationarity_f", _rel(grad_f - beta * c1d / f**2 + alpha, grad_f, beta * c1d / f**2, alpha))
    rep.add("stationarity_h", _rel(grad_h - beta * c2d / h**2 + tau, grad_h, beta * c2d / h**2, tau))
    rep.add("stationarity_T", abs(w1 - np.sum(beta)) / max(w1, 1e-300))
    rep.add("slackness_f", _rel(alpha * (scenario.f_max - f), alpha * scenario.f_max))
    rep.add("slackness_h", _rel(tau * (scenario.h_max - h), tau * scenario.h_max))
    rep.add("slackness_time", _rel(beta * (T - times), beta * T))
    rep.add("primal_f", np.maximum(f - scenario.f_max, 0) / scenario.f_max)
    rep.add("primal_h", np.maximum(h - scenario.h_max, 0) / scenario.h_max)
    rep.add("primal_time", np.maximum(times - T, 0) / T)
    rep.add("primal_rho", np.maximum(np.maximum(scenario.rho_min - rho, rho - scenario.rho_max), 0) / scenario.rho_max)
    m = scenario.psnr_model
    q = m.a * np.log(m.c_rho * rho + m.c_s * s + m.b)
    rep.add("primal_psnr", np.maximum(scenario.psnr_min - q, 0) / np.abs(scenario.psnr_min))
    rep.add("dual", np.concatenate([np.minimum(beta, 0), np.minimum(alpha, 0), np.minimum(tau, 0)]) / w1)
    # objective rises with rho, so rho must sit at the smaller of its two lower bounds
    rho_floor = np.maximum((np.exp(scenario.psnr_min / m.a) - m.b - m.c_s * s) / m.c_rho, scenario.rho_min)
    rep.add("rho_minimal", (rho - rho_floor) / scenario.rho_max)
    return rep


def _active(value, bound, tol):
    return np.abs(value - bound) <= tol * np.abs(bound)


def kkt_residuals_p7(scenario: Scenario, rho, power, bandwidth, gamma, delta, rate_floor, snr_floor,
                     active_tol: float = 1e-7) -> ResidualReport:
    """Residuals of the parametric power/bandwidth KKT system.

    Multipliers are not taken from the solver: the stationarity equations of
    all devices are solved jointly for (zeta, eta, nu, iota) >= 0 by
    non-negative least squares, with multipliers of inactive constraints
    fixed at zero. The report holds the remaining scaled residuals plus the
    fixed-point consistency of the auxiliaries.
    """
    sys_ = scenario.system
    n0, g = sys_.noise_psd, scenario.gain
    p, b = np.asarray(power, float), np.asarray(bandwidth, float)
    rho = np.asarray(rho, float)
    gamma, delta = np.asarray(gamma, float), np.asarray(delta, float)
    r_min, s_min = np.asarray(rate_floor, float), np.asarray(snr_floor, float)
    n = p.size
    s = p * g / (n0 * b)
    rate = b * np.log1p(s) / LN2
    a = gamma * rho * scenario.payload_bits
    w = gamma * delta
    G = g / (n0 * (1 + s) * LN2)
    q = (np.log1p(s) - s / (1 + s)) / LN2

    rate_on = _active(rate, r_min, active_tol)
    snr_on = (s_min > 0) & _active(s, s_min, active_tol)
    p_on = _active(p, scenario.p_max, active_tol)
    band_on = abs(np.sum(b) - sys_.total_bandwidth) <= active_tol * sys_.total_bandwidth

    # rows: d/dp_n then d/dB_n; columns: zeta, eta_n, nu_n, iota_n
    A = np.zeros((2 * n, 1 + 3 * n))
    rhs = np.zeros(2 * n)
    scale = np.zeros(2 * n)
    rhs[:n] = -(a - w * G)
    rhs[n:] = -(-w * q)
    scale[:n] = np.maximum(a, w * G)
    scale[n:] = np.maximum(w * q, a * n0 * s / g)
    if band_on:
        A[n:, 0] = 1.0
    idx = np.arange(n)
    A[idx, 1 + idx] = np.where(rate_on, -G, 0.0)
    A[n + idx, 1 + idx] = np.where(rate_on, -q, 0.0)
    A[idx, 1 + n + idx] = np.where(snr_on, -g, 0.0)
    A[n + idx, 1 + n + idx] = np.where(snr_on, n0 * s_min, 0.0)
    A[idx, 1 + 2 * n + idx] = np.where(p_on, 1.0, 0.0)
    col_scale = np.maximum(np.abs(A).max(axis=0), 1e-300)
    x, _ = nnls((A / col_scale) / scale[:, None], rhs / scale, maxiter=50 * A.shape[1])
    x = x / col_scale
    res = A @ x - rhs
    zeta, eta, nu, iota = x[0], x[1:1 + n], x[1 + n:1 + 2 * n], x[1 + 2 * n:]

    rep = ResidualReport()
    term_p = np.maximum.reduce([scale[:n], np.abs(eta * G), np.abs(nu * g), np.abs(iota)])
    term_b = np.maximum.reduce([scale[n:], np.full(n, zeta), np.abs(eta * q), np.abs(nu * n0 * s_min)])
    rep.add("stationarity_p", res[:n] / term_p)
    rep.add("stationarity_B", res[n:] / term_b)
    rep.add("primal_bandwidth", max(np.sum(b) - sys_.total_bandwidth, 0.0) / sys_.total_bandwidth)
    rep.add("primal_power", np.maximum(p - scenario.p_max, 0) / scenario.p_max)
    rep.add("primal_rate", np.maximum(r_min - rate, 0) / r_min)
    rep.add("primal_snr", np.where(s_min > 0, np.maximum(s_min - s, 0) / np.where(s_min > 0, s_min, 1), 0))
    rep.add("consistency_gamma", (gamma * rate - sys_.weight_energy) / sys_.weight_energy)
    pay = p * rho * scenario.payload_bits
    rep.add("consistency_delta", (delta * rate - pay) / pay)
    return rep, dict(zeta=zeta, eta=eta, nu=nu, iota=iota)


# -------------------------------------------------------------- concavity


def rate_hessian_form(p, b, x1, x2, gain, noise_psd):
    """Closed-form second directional derivative of the rate along (x1, x2)."""
    s = p * gain / (noise_psd * b)
    return -((x1 * b - x2 * p) ** 2) * gain**2 / (b**3 * noise_psd**2 * (1 + s) ** 2 * LN2)


def _rate_mp(p, b, gain, noise_psd):
    return b * mpmath.log(1 + p * gain / (noise_psd * b)) / mpmath.log(2)


@dataclass
class ConcavityReport:
    samples: int
    sign_failures: int
    closed_form_failures: int
    worst_sign: float
    worst_closed_form: float

    @property
    def passed(self) -> bool:
        return self.sign_failures == 0 and self.closed_form_failures == 0


def concavity_check(gain: float, noise_psd: float, samples: int = 10_000, seed: int = 0,
                    step: float = 1e-3) -> ConcavityReport:
    """Sample (p, B, direction) triples and test concavity of the rate.

    The float central difference of the rate along the direction must not
    exceed ``1e-9 * r``. The closed form is compared against an 80-digit
    central difference computed with mpmath; at small SNR the second
    derivative is ~S^2 smaller than r, so 40 digits leave too little headroom.
    """
    if samples < 1:
        raise DomainError("samples must be >= 1")
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))
    p = 10 ** rng.uniform(-4, 0, samples)
    b = 10 ** rng.uniform(4, 8, samples)
    ang = rng.uniform(0, 2 * math.pi, samples)
    # directions scaled to the point so the step is relative in each coordinate
    x1, x2 = np.cos(ang) * p, np.sin(ang) * b

    def r(pp, bb):
        return bb * np.log1p(pp * gain / (noise_psd * bb)) / LN2

    r0 = r(p, b)
    fd = (r(p + step * x1, b + step * x2) - 2 * r0 + r(p - step * x1, b - step * x2)) / step**2
    sign_excess = fd / np.abs(r0)
    sign_fail = int(np.count_nonzero(sign_excess > 1e-9))
    cf = rate_hessian_form(p, b, x1, x2, gain, noise_psd)

    worst = 0.0
    cf_fail = 0
    with mpmath.workdps(80):
        hmp = mpmath.mpf("1e-12")
        g_mp, n0_mp = mpmath.mpf(gain), mpmath.mpf(noise_psd)
        for i in range(samples):
            pi, bi = mpmath.mpf(p[i]), mpmath.mpf(b[i])
            u1, u2 = mpmath.mpf(x1[i]), mpmath.mpf(x2[i])
            d2 = (_rate_mp(pi + hmp * u1, bi + hmp * u2, g_mp, n0_mp) - 2 * _rate_mp(pi, bi, g_mp, n0_mp)
                  + _rate_mp(pi - hmp * u1, bi - hmp * u2, g_mp, n0_mp)) / hmp**2
            ref = float(d2)
            err = abs(cf[i] - ref) / max(abs(ref), 1e-300)
            worst = max(worst, err)
            if err > 1e-6:
                cf_fail += 1
    return ConcavityReport(samples, sign_fail, cf_fail, float(np.max(sign_excess)), worst)
