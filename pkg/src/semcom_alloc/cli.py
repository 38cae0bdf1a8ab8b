"""Command line entry point: solve, sweep, baselines, validate."""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

import jsonschema

from .baselines import BaselineKind, run_baseline
from .errors import AllocationError
from .harness import METHODS, PROPOSED, SweepSpec, parse_values, render_plot, run_sweep, write_csv
from .model import achieved_psnr, check_feasible, consumption
from .optimizer import OptimizerConfig, solve
from .scenario import SWEEP_PARAMETERS, ScenarioConfig, load_config, sample_scenario

PLOT_METRICS = ("objective", "t_total", "e_total", "psnr_mean")


def _load(path):
    if path is None:
        return ScenarioConfig(), OptimizerConfig()
    cfg, opt = load_config(path)
    return cfg, OptimizerConfig.from_dict(opt)


def _summary(scenario, alloc, trace=None) -> dict:
    rep = consumption(scenario, alloc)
    out = {
        "objective": rep.objective,
        "t_total": rep.t_max,
        "e_total": rep.e_total,
        "e_device": rep.e_device,
        "e_bs": rep.e_bs_total,
        "feasibility_problems": check_feasible(scenario, alloc),
        "allocation": {
            "power_w": alloc.power.tolist(),
            "bandwidth_hz": alloc.bandwidth.tolist(),
            "freq_device_hz": alloc.freq_device.tolist(),
            "freq_bs_hz": alloc.freq_bs.tolist(),
            "rho": alloc.rho.tolist(),
            "psnr_db": achieved_psnr(scenario, alloc).tolist(),
        },
    }
    if trace is not None:
        out["iterations"] = trace.iterations
        out["converged"] = trace.converged
        out["trace_objective"] = trace.objectives
    return out


def cmd_solve(args) -> int:
    cfg, opt = _load(args.config)
    scenario = sample_scenario(cfg, args.seed)
    alloc, rep, trace = solve(scenario, opt)
    summary = _summary(scenario, alloc, trace)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "solution.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    if args.json:
        print(json.dumps(summary, indent=2, sort_keys=True))
    else:
        print(f"objective  {rep.objective:.6g}")
        print(f"T          {rep.t_max:.6g} s")
        print(f"E          {rep.e_total:.6g} J  (device {rep.e_device:.6g}, BS {rep.e_bs_total:.6g})")
        print(f"iterations {trace.iterations}  converged {trace.converged}")
        print(f"{'n':>3} {'p[W]':>10} {'B[Hz]':>11} {'f[Hz]':>11} {'h[Hz]':>11} {'rho':>7} {'PSNR':>7}")
        q = achieved_psnr(scenario, alloc)
        for i in range(scenario.n):
            print(f"{i:>3} {alloc.power[i]:>10.4g} {alloc.bandwidth[i]:>11.4g} {alloc.freq_device[i]:>11.4g} "
                  f"{alloc.freq_bs[i]:>11.4g} {alloc.rho[i]:>7.4f} {q[i]:>7.3f}")
    return 0


def cmd_sweep(args) -> int:
    cfg, opt = _load(args.config)
    methods = tuple(m.strip() for m in args.methods.split(",") if m.strip())
    spec = SweepSpec(args.param, tuple(parse_values(args.values)), args.seeds, methods)
    result = run_sweep(spec, cfg, opt)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_csv(result, out / f"sweep_{args.param}.csv")
    if args.plots:
        for metric in PLOT_METRICS:
            render_plot(result, metric, out / f"sweep_{args.param}_{metric}.svg")
    print(f"{'value':>12} " + " ".join(f"{m:>12}" for m in spec.methods))
    means = {m: dict((v, mu) for v, mu, _, _ in result.mean("objective", m)) for m in spec.methods}
    for v in spec.values:
        cells = " ".join(f"{means[m].get(float(f'{v:.12g}'), float('nan')):>12.5g}" for m in spec.methods)
        print(f"{v:>12.6g} {cells}")
    errors = sum(1 for r in result.rows if r.converged.startswith("error"))
    if errors:
        print(f"{errors} run(s) failed; see the converged column", file=sys.stderr)
    return 0


def cmd_baselines(args) -> int:
    cfg, opt = _load(args.config)
    scenario = sample_scenario(cfg, args.seed)
    print(f"{'method':<12} {'objective':>12} {'T[s]':>10} {'E[J]':>10}")
    for method in METHODS:
        try:
            if method == PROPOSED:
                alloc = solve(scenario, opt)[0]
            else:
                alloc = run_baseline(BaselineKind.parse(method), scenario, args.seed, opt)
            rep = consumption(scenario, alloc)
            print(f"{method:<12} {rep.objective:>12.6g} {rep.t_max:>10.5g} {rep.e_total:>10.5g}")
        except AllocationError as exc:
            print(f"{method:<12} error: {exc}")
    return 0


def cmd_validate(args) -> int:
    from .oracle import grid_search, kkt_residuals_p3, kkt_residuals_p7
    from .p3 import solve_p3
    from .p4 import solve_p4

    cfg, opt = _load(args.config)
    if not 1 <= args.n <= 3:
        print("--n must be in 1..3", file=sys.stderr)
        return 2
    cfg = replace(cfg, device_count=args.n)
    failures = 0
    print(f"{'seed':>5} {'solver':>11} {'grid':>11} {'gap':>9} {'kkt_p3':>9} {'kkt_p7':>9}  status")
    for i in range(args.trials):
        seed = cfg.seed + i
        scenario = sample_scenario(cfg, seed)
        alloc, rep, _ = solve(scenario, opt)
        grid = grid_search(scenario, args.grid)
        gap = (rep.objective - grid.objective) / grid.objective
        s3 = solve_p3(scenario, alloc.power, alloc.bandwidth)
        r3 = kkt_residuals_p3(scenario, alloc.power, alloc.bandwidth, s3)
        D = scenario.samples
        t_cmp, t_bs = scenario.c1 * D / s3.freq_device, scenario.c2 * D / s3.freq_bs
        s4 = solve_p4(scenario, s3.rho, t_cmp, t_bs, s3.deadline, opt.newton,
                      warm_start=(alloc.power, alloc.bandwidth))
        r7, _ = kkt_residuals_p7(scenario, s3.rho, s4.power, s4.bandwidth, s4.aux.gamma, s4.aux.delta,
                                 s4.rate_floor, s4.snr_floor)
        ok = gap <= 0.02 and r3.max() <= 1e-6 and r7.max() <= 1e-6
        failures += not ok
        print(f"{seed:>5} {rep.objective:>11.5g} {grid.objective:>11.5g} {gap:>+9.2e} {r3.max():>9.1e} "
              f"{r7.max():>9.1e}  {'ok' if ok else 'FAIL'}")
    print(f"{args.trials - failures}/{args.trials} passed")
    return 1 if failures else 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="semcom-alloc", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("solve", help="solve one seeded scenario")
    p.add_argument("--config", help="JSON config (defaults used when omitted)")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", help="directory for solution.json")
    p.add_argument("--json", action="store_true", help="print the solution as JSON")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("sweep", help="seeded parameter sweep to CSV (and SVG)")
    p.add_argument("--config")
    p.add_argument("--param", required=True, choices=sorted(SWEEP_PARAMETERS))
    p.add_argument("--values", required=True, help="start:stop:count or a comma-separated list")
    p.add_argument("--seeds", type=int, default=100)
    p.add_argument("--methods", default=",".join(METHODS), help=f"comma-separated subset of {','.join(METHODS)}")
    p.add_argument("--out", required=True)
    p.add_argument("--plots", action="store_true")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("baselines", help="compare all five methods on one scenario")
    p.add_argument("--config")
    p.add_argument("--seed", type=int, required=True)
    p.set_defaults(func=cmd_baselines)

    p = sub.add_parser("validate", help="grid oracle and KKT checks on tiny scenarios")
    p.add_argument("--config")
    p.add_argument("--n", type=int, default=2)
    p.add_argument("--grid", type=int, default=20)
    p.add_argument("--trials", type=int, default=5)
    p.set_defaults(func=cmd_validate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (OSError, ValueError, jsonschema.ValidationError) as exc:
        msg = exc.message if isinstance(exc, jsonschema.ValidationError) else str(exc)
        print(f"error: {msg}", file=sys.stderr)
        return 2
    except AllocationError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
