"""Acceptance suite: one recorded pass/fail line per criterion."""

import time

import numpy as np
import pytest

from semcom_alloc import PsnrModel, ScenarioConfig, psnr, psnr_inverse_rho, psnr_inverse_snr, sample_scenario
from semcom_alloc.baselines import average_allocation
from semcom_alloc.cli import main as cli_main
from semcom_alloc.harness import METHODS, PROPOSED, SweepSpec, render_plot, run_sweep, write_csv
from semcom_alloc.model import uplink_rate
from semcom_alloc.optimizer import solve
from semcom_alloc.oracle import concavity_check, grid_search, kkt_residuals_p3
from semcom_alloc.p3 import solve_p3
from semcom_alloc.p4 import NewtonConfig, solve_p4

SEEDS = 100
TREND_RTOL = 0.01
SWEEPS = {
    "total_bandwidth": ((1e6, 2e6, 5e6, 10e6, 15e6, 20e6), METHODS),
    "p_max": ((4.0, 8.0, 12.0, 16.0, 20.0), METHODS),
    "f_max": (tuple(np.round(np.linspace(0.1e9, 1e9, 10))), METHODS),
    "weight_time": ((0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9), (PROPOSED,)),
    "device_count": ((10, 20, 30, 40, 50), (PROPOSED,)),
    "psnr_min": ((30.6, 31.45, 32.3, 33.15, 34.0), (PROPOSED,)),
}


@pytest.fixture(scope="module")
def sweeps():
    cache = {}

    def get(parameter):
        if parameter not in cache:
            values, methods = SWEEPS[parameter]
            cache[parameter] = run_sweep(SweepSpec(parameter, values, SEEDS, methods), ScenarioConfig())
        return cache[parameter]

    return get


@pytest.fixture(scope="module")
def default_n50_scenarios():
    return [sample_scenario(ScenarioConfig(), seed) for seed in range(SEEDS)]


def _non_increasing(y):
    y = np.asarray(y)
    return bool(np.all(y[1:] <= y[:-1] * (1 + TREND_RTOL)))


def _non_decreasing(y):
    y = np.asarray(y)
    return bool(np.all(y[1:] >= y[:-1] * (1 - TREND_RTOL)))


def _means(result, metric, method=PROPOSED):
    return np.array([m for _, m, _, _ in result.mean(metric, method)])


def _fmt(y):
    return "[" + ", ".join(f"{v:.4g}" for v in y) + "]"


def test_1_p3_kkt_suite(default_n50_scenarios, acceptance):
    worst = {"kkt": 0.0, "time": 0.0, "beta": 0.0}
    slowest = 0.0
    for sc in default_n50_scenarios:
        a = average_allocation(sc)
        t0 = time.perf_counter()
        sol = solve_p3(sc, a.power, a.bandwidth)
        slowest = max(slowest, time.perf_counter() - t0)
        rep = kkt_residuals_p3(sc, a.power, a.bandwidth, sol)
        D = sc.samples
        times = sc.c1 * D / sol.freq_device + sol.t_up + sc.c2 * D / sol.freq_bs
        worst["kkt"] = max(worst["kkt"], rep.max())
        worst["time"] = max(worst["time"], float(np.max(np.abs(times - sol.deadline) / sol.deadline)))
        worst["beta"] = max(worst["beta"], abs(float(np.sum(sol.beta)) - sc.system.weight_time))
    ok = worst["kkt"] <= 1e-6 and worst["time"] <= 1e-6 and worst["beta"] <= 1e-9 and slowest <= 0.1
    assert acceptance(1, ok, f"max KKT {worst['kkt']:.1e}, max time gap {worst['time']:.1e}, "
                             f"|sum beta - w1| {worst['beta']:.1e}, slowest P3 {slowest * 1e3:.1f} ms")


def test_2_newton_suite(default_n50_scenarios, acceptance):
    good = 0
    worst_gamma = worst_delta = worst_feas = 0.0
    for sc in default_n50_scenarios:
        a = average_allocation(sc)
        s3 = solve_p3(sc, a.power, a.bandwidth)
        D = sc.samples
        sol = solve_p4(sc, s3.rho, sc.c1 * D / s3.freq_device, sc.c2 * D / s3.freq_bs, s3.deadline,
                       NewtonConfig(max_iter=50), warm_start=(a.power, a.bandwidth))
        good += bool(sol.converged and sol.phi_norm <= 1e-6 and sol.iterations <= 50
                     and "fallback" not in sol.flags)
        rate = uplink_rate(sol.power, sol.bandwidth, sc.gain, sc.system.noise_psd)
        w2 = sc.system.weight_energy
        pay = sol.power * s3.rho * sc.payload_bits
        worst_gamma = max(worst_gamma, float(np.max(np.abs(sol.aux.gamma * rate - w2) / w2)))
        worst_delta = max(worst_delta, float(np.max(np.abs(sol.aux.delta * rate - pay) / pay)))
        s = sol.power * sc.gain / (sc.system.noise_psd * sol.bandwidth)
        feas = [
            max(np.sum(sol.bandwidth) / sc.system.total_bandwidth - 1, 0),
            np.max(np.maximum(sol.power / sc.p_max - 1, 0)),
            np.max(np.maximum(1 - rate / sol.rate_floor, 0)),
            np.max(np.where(sol.snr_floor > 0, np.maximum(1 - s / np.where(sol.snr_floor > 0, sol.snr_floor, 1), 0), 0)),
        ]
        worst_feas = max(worst_feas, float(max(feas)))
    share = good / len(default_n50_scenarios)
    ok = share >= 0.95 and worst_gamma <= 1e-6 and worst_delta <= 1e-6 and worst_feas <= 1e-8
    assert acceptance(2, ok, f"converged {share:.0%}, consistency gamma {worst_gamma:.1e} delta {worst_delta:.1e}, "
                             f"feasibility {worst_feas:.1e}")


def test_3_oracle_equivalence(acceptance):
    t0 = time.perf_counter()
    gaps = []
    for seed in range(50):
        sc = sample_scenario(ScenarioConfig(device_count=2), seed)
        ours = solve(sc)[1].objective
        grid = grid_search(sc, 20).objective
        gaps.append((ours - grid) / grid)
    elapsed = time.perf_counter() - t0
    worst = max(gaps)
    ok = worst <= 0.02 and elapsed <= 600
    assert acceptance(3, ok, f"worst gap to grid {worst:+.2%} (mean {np.mean(gaps):+.2%}) over 50 instances "
                             f"in {elapsed:.0f} s")


def test_4_baseline_dominance(sweeps, acceptance):
    failures = []
    margins = []
    for parameter in ("total_bandwidth", "p_max", "f_max"):
        res = sweeps(parameter)
        ours = _means(res, "objective")
        for method in METHODS[1:]:
            theirs = _means(res, "objective", method)
            margins.append(float(np.min(theirs / ours)))
            bad = np.nonzero(ours > theirs)[0]
            failures += [f"{parameter}={res.mean('objective', method)[i][0]:g} vs {method}" for i in bad]
    errors = sum(r.converged.startswith("error") for p in ("total_bandwidth", "p_max", "f_max")
                 for r in sweeps(p).rows)
    ok = not failures and errors == 0
    detail = f"smallest baseline/proposed ratio {min(margins):.3f}, failed runs {errors}"
    if failures:
        detail += f", violations: {failures[:5]}"
    assert acceptance(4, ok, detail)


def test_5_trends(sweeps, acceptance):
    checks = {}
    bw = sweeps("total_bandwidth")
    checks["objective vs B_total"] = (_non_increasing(_means(bw, "objective")), _means(bw, "objective"))
    pm = sweeps("p_max")
    checks["T vs p_max"] = (_non_increasing(_means(pm, "t_total")), _means(pm, "t_total"))
    fm = sweeps("f_max")
    t_f = _means(fm, "t_total")
    plateau = bool(np.max(t_f[-3:]) <= np.min(t_f[-3:]) * (1 + TREND_RTOL))
    checks["T vs f_max (then flat)"] = (_non_increasing(t_f) and plateau, t_f)
    w = sweeps("weight_time")
    checks["T vs w1"] = (_non_increasing(_means(w, "t_total")), _means(w, "t_total"))
    checks["E vs w1"] = (_non_decreasing(_means(w, "e_total")), _means(w, "e_total"))
    n = sweeps("device_count")
    checks["T vs N"] = (_non_decreasing(_means(n, "t_total")), _means(n, "t_total"))
    checks["E vs N"] = (_non_decreasing(_means(n, "e_total")), _means(n, "e_total"))
    q = sweeps("psnr_min")
    checks["PSNR vs P_min"] = (_non_decreasing(_means(q, "psnr_mean")), _means(q, "psnr_mean"))
    checks["objective vs P_min"] = (_non_decreasing(_means(q, "objective")), _means(q, "objective"))
    checks["E vs P_min"] = (_non_decreasing(_means(q, "e_total")), _means(q, "e_total"))
    # how often the floor actually binds: achieved minimum PSNR within 1e-6 dB of the floor
    binding = np.mean([r.psnr_min - r.value <= 1e-6 for r in q.rows if np.isfinite(r.psnr_min)])
    bad = [k for k, (good, _) in checks.items() if not good]
    detail = "; ".join(f"{k} {_fmt(v)}" for k, (_, v) in checks.items())
    detail += f"; runs with a binding PSNR floor in the P_min sweep: {binding:.0%}"
    if bad:
        detail = "violated: " + ", ".join(bad) + " | " + detail
    assert acceptance(5, not bad, detail)


def test_6_rate_concavity(acceptance):
    reports = [concavity_check(g, 3.981e-21, samples=10_000, seed=s) for s, g in enumerate((2.84e-11, 1e-13))]
    sign = sum(r.sign_failures for r in reports)
    cf = sum(r.closed_form_failures for r in reports)
    ok = sign == 0 and cf == 0
    assert acceptance(6, ok, f"{sum(r.samples for r in reports)} samples, sign failures {sign}, closed-form failures "
                             f"{cf}, worst closed-form error {max(r.worst_closed_form for r in reports):.1e}")


def test_7_psnr_model(acceptance):
    m = PsnrModel.fitted()
    rho = np.linspace(0.0, 1.0, 100)
    snr = np.linspace(0.0, 100.0, 100)
    R, S = np.meshgrid(rho, snr, indexing="ij")
    Q = psnr(m, R, S)
    mono = bool(np.all(np.diff(Q, axis=0) >= 0) and np.all(np.diff(Q, axis=1) >= 0))
    second = max(float(np.max(np.diff(Q, 2, axis=0))), float(np.max(np.diff(Q, 2, axis=1))))

    def rel(x, ref):
        return np.where(ref != 0, np.abs(x - ref) / np.where(ref != 0, np.abs(ref), 1), np.abs(x - ref))

    err_rho = float(np.max(rel(psnr_inverse_rho(m, Q, S), R)))
    err_snr = float(np.max(rel(psnr_inverse_snr(m, Q, R), S)))
    ok = mono and second <= 1e-12 and err_rho <= 1e-12 and err_snr <= 1e-12
    assert acceptance(7, ok, f"monotone {mono}, max second difference {second:.1e}, round trip rho {err_rho:.1e} "
                             f"snr {err_snr:.1e} (rho in [0, 1], S in [0, 100])")


def test_8_complexity_scaling(acceptance):
    spec = SweepSpec("device_count", (25, 100), seeds=10, methods=(PROPOSED,))
    res = run_sweep(spec, ScenarioConfig(), workers=1)
    mean = {v: np.mean([t for (val, _, _), t in res.wall_times.items() if val == v]) for v in (25, 100)}
    ratio = mean[100] / mean[25]
    assert acceptance(8, ratio <= 6.0, f"mean solve {mean[25] * 1e3:.0f} ms at N=25, {mean[100] * 1e3:.0f} ms "
                                        f"at N=100, ratio {ratio:.2f}")


def test_9_determinism(tmp_path, acceptance):
    cfg = tmp_path / "cfg.json"
    cfg.write_text('{"device_count": 8}\n')
    outs = []
    for i in range(2):
        out = tmp_path / f"run{i}"
        assert cli_main(["sweep", "--config", str(cfg), "--param", "total_bandwidth", "--values", "2e6:10e6:3",
                         "--seeds", "3", "--out", str(out), "--plots"]) == 0
        outs.append(out)
    names = sorted(p.name for p in outs[0].iterdir())
    same_cli = all((outs[0] / n).read_bytes() == (outs[1] / n).read_bytes() for n in names)
    pooled = run_sweep(SweepSpec("total_bandwidth", (2e6, 6e6, 10e6), 3), ScenarioConfig(device_count=8), workers=3)
    pool_dir = tmp_path / "pool"
    pool_dir.mkdir()
    write_csv(pooled, pool_dir / "sweep_total_bandwidth.csv")
    for metric in ("objective", "t_total", "e_total", "psnr_mean"):
        render_plot(pooled, metric, pool_dir / f"sweep_total_bandwidth_{metric}.svg")
    same_pool = all((outs[0] / n).read_bytes() == (pool_dir / n).read_bytes() for n in names)
    ok = same_cli and same_pool and len(names) == 5
    assert acceptance(9, ok, f"{len(names)} files byte-identical across two CLI runs: {same_cli}; "
                             f"3-worker pool matches: {same_pool}")
