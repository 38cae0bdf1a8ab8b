"""Seeded parameter sweeps with CSV tables and SVG line charts."""

from __future__ import annotations

import csv
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields
from html import escape
from pathlib import Path
from typing import Optional

import numpy as np

from .baselines import BaselineKind, run_baseline
from .errors import AllocationError
from .model import achieved_psnr, consumption
from .optimizer import OptimizerConfig, solve
from .scenario import SWEEP_PARAMETERS, ScenarioConfig, override, sample_scenario

PROPOSED = "proposed"
METHODS = (PROPOSED,) + tuple(k.value for k in BaselineKind)
CSV_COLUMNS = ("param", "value", "seed", "method", "objective", "t_total", "e_total", "e_device",
               "e_bs", "t_device", "t_bs", "iters", "converged", "psnr_mean", "psnr_min", "psnr_max")
METRICS = ("objective", "t_total", "e_total", "e_device", "e_bs", "t_device", "t_bs",
           "psnr_mean", "psnr_min", "psnr_max", "iters")
THREADS_ENV = "SEMCOM_ALLOC_THREADS"


def _r12(x: float) -> float:
    """Round to the 12 significant digits the CSV keeps, so rows survive a round trip."""
    return float(f"{x:.12g}")


@dataclass(frozen=True)
class SweepSpec:
    parameter: str
    values: tuple
    seeds: int = 100
    methods: tuple = METHODS

    def __post_init__(self):
        if self.parameter not in SWEEP_PARAMETERS:
            raise ValueError(f"unknown parameter {self.parameter!r}; choose from {sorted(SWEEP_PARAMETERS)}")
        vals = tuple(float(v) for v in self.values)
        if not vals:
            raise ValueError("values must be non-empty")
        d = np.diff(vals)
        if vals and not (np.all(d > 0) or np.all(d < 0)):
            raise ValueError("values must be strictly monotone")
        object.__setattr__(self, "values", vals)
        if self.seeds < 1:
            raise ValueError("seeds must be >= 1")
        methods = tuple(self.methods)
        for m in methods:
            if m not in METHODS:
                raise ValueError(f"unknown method {m!r}; choose from {list(METHODS)}")
        if not methods:
            raise ValueError("methods must be non-empty")
        object.__setattr__(self, "methods", methods)


@dataclass(frozen=True)
class Row:
    param: str
    value: float
    seed: int
    method: str
    objective: float
    t_total: float
    e_total: float
    e_device: float
    e_bs: float
    t_device: float
    t_bs: float
    iters: int
    converged: str
    psnr_mean: float
    psnr_min: float
    psnr_max: float

    def cells(self) -> list:
        out = []
        for f in fields(self):
            v = getattr(self, f.name)
            out.append(f"{v:.12g}" if isinstance(v, float) else str(v))
        return out


@dataclass
class SweepResult:
    parameter: str
    rows: list = field(default_factory=list)
    wall_times: dict = field(default_factory=dict)

    def mean(self, metric: str, method: str) -> list:
        """(value, mean, min, max) per swept value over finite entries."""
        if metric not in METRICS:
            raise ValueError(f"unknown metric {metric!r}; choose from {list(METRICS)}")
        out = []
        for v in sorted({r.value for r in self.rows}):
            xs = np.array([getattr(r, metric) for r in self.rows if r.method == method and r.value == v], float)
            xs = xs[np.isfinite(xs)]
            if xs.size:
                out.append((v, float(np.mean(xs)), float(np.min(xs)), float(np.max(xs))))
        return out

    @property
    def methods(self) -> list:
        seen = []
        for r in self.rows:
            if r.method not in seen:
                seen.append(r.method)
        return seen


def _error_row(param, value, seed, method, exc) -> Row:
    nan = float("nan")
    return Row(param, value, seed, method, nan, nan, nan, nan, nan, nan, nan, 0,
               f"error:{type(exc).__name__}", nan, nan, nan)


def _row(param, value, seed, method, scenario, alloc, iters, converged) -> Row:
    rep = consumption(scenario, alloc)
    k = rep.bottleneck
    q = achieved_psnr(scenario, alloc)
    return Row(
        param, _r12(value), seed, method,
        _r12(rep.objective), _r12(rep.t_max), _r12(rep.e_total), _r12(rep.e_device), _r12(rep.e_bs_total),
        _r12(float(rep.t_cmp[k] + rep.t_up[k])), _r12(float(rep.t_bs[k])),
        int(iters), "true" if converged else "false",
        _r12(float(np.mean(q))), _r12(float(np.min(q))), _r12(float(np.max(q))),
    )


def _run_cell(args):
    """All methods on one (value, seed) scenario; returns rows and wall times."""
    spec, base, optimizer, value = args[:4]
    seed = args[4]
    cfg = override(base, spec.parameter, value)
    rows, times = [], {}
    try:
        scenario = sample_scenario(cfg, seed)
    except AllocationError as exc:
        return [_error_row(spec.parameter, value, seed, m, exc) for m in spec.methods], times
    for method in spec.methods:
        start = time.perf_counter()
        try:
            if method == PROPOSED:
                alloc, _, trace = solve(scenario, optimizer)
                row = _row(spec.parameter, value, seed, method, scenario, alloc, trace.iterations, trace.converged)
            else:
                alloc = run_baseline(method, scenario, seed, optimizer)
                row = _row(spec.parameter, value, seed, method, scenario, alloc, 0, True)
        except (AllocationError, ValueError, FloatingPointError) as exc:
            row = _error_row(spec.parameter, value, seed, method, exc)
        times[(value, seed, method)] = time.perf_counter() - start
        rows.append(row)
    return rows, times


def worker_count(requested: Optional[int] = None) -> int:
    if requested is None:
        try:
            requested = len(os.sched_getaffinity(0))
        except AttributeError:
            requested = os.cpu_count() or 1
    n = requested
    cap = os.environ.get(THREADS_ENV)
    if cap:
        try:
            n = min(n, max(1, int(cap)))
        except ValueError:
            raise ValueError(f"{THREADS_ENV} must be an integer, got {cap!r}") from None
    return max(1, n)


def run_sweep(spec: SweepSpec, base_config: ScenarioConfig = ScenarioConfig(),
              optimizer: OptimizerConfig = OptimizerConfig(), workers: Optional[int] = None) -> SweepResult:
    """Run every method for every (value, seed); rows ordered by (value, seed, method).

    Seeds are ``base_config.seed + i`` for ``i < spec.seeds``. Failed runs
    become rows tagged ``error:<Kind>`` in the ``converged`` column.
    """
    tasks = [(spec, base_config, optimizer, v, base_config.seed + i)
             for v in spec.values for i in range(spec.seeds)]
    n = min(worker_count(workers), len(tasks))
    if n > 1:
        with ProcessPoolExecutor(max_workers=n) as pool:
            outputs = list(pool.map(_run_cell, tasks, chunksize=max(1, len(tasks) // (4 * n))))
    else:
        outputs = [_run_cell(t) for t in tasks]
    result = SweepResult(spec.parameter)
    order = {m: i for i, m in enumerate(spec.methods)}
    vindex = {_r12(v): i for i, v in enumerate(spec.values)}
    rows = [r for rs, _ in outputs for r in rs]
    rows.sort(key=lambda r: (vindex.get(r.value, 0), r.seed, order[r.method]))
    result.rows = rows
    for _, ts in outputs:
        result.wall_times.update(ts)
    return result


# ------------------------------------------------------------------ CSV


def write_csv(result: SweepResult, path) -> None:
    path = Path(path)
    try:
        with path.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(CSV_COLUMNS)
            for r in result.rows:
                w.writerow(r.cells())
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc


def read_csv(path) -> SweepResult:
    path = Path(path)
    try:
        with path.open(newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            if tuple(header) != CSV_COLUMNS:
                raise ValueError(f"{path}: unexpected header {header}")
            rows = []
            for cells in reader:
                d = dict(zip(header, cells))
                rows.append(Row(
                    d["param"], float(d["value"]), int(d["seed"]), d["method"],
                    *(float(d[c]) for c in CSV_COLUMNS[4:11]),
                    int(d["iters"]), d["converged"],
                    *(float(d[c]) for c in CSV_COLUMNS[13:]),
                ))
    except OSError as exc:
        raise OSError(f"cannot read {path}: {exc}") from exc
    param = rows[0].param if rows else ""
    return SweepResult(param, rows)


# ------------------------------------------------------------------ SVG

_PALETTE = {
    PROPOSED: "#d62728",
    "random": "#7f7f7f",
    "average": "#1f77b4",
    "pb-only": "#2ca02c",
    "fhrho-only": "#9467bd",
}
_W, _H = 640, 420
_ML, _MR, _MT, _MB = 72, 150, 36, 52


def _ticks(lo, hi, n=5):
    if hi == lo:
        return [lo]
    return [lo + (hi - lo) * i / (n - 1) for i in range(n)]


def render_plot(result: SweepResult, metric: str, path) -> None:
    """Write a self-contained SVG: seed-mean per method with a min-max band."""
    if metric not in METRICS:
        raise ValueError(f"unknown metric {metric!r}; choose from {list(METRICS)}")
    series = {m: result.mean(metric, m) for m in result.methods}
    xs = [p[0] for s in series.values() for p in s]
    ys = [v for s in series.values() for p in s for v in p[1:]]
    if not xs:
        xs, ys = [0.0], [0.0]
    x0, x1 = min(xs), max(xs)
    y0, y1 = min(ys), max(ys)
    if x1 == x0:
        x0, x1 = x0 - 0.5, x1 + 0.5
    if y1 == y0:
        pad = abs(y0) * 0.05 or 0.5
        y0, y1 = y0 - pad, y1 + pad
    pw, ph = _W - _ML - _MR, _H - _MT - _MB

    def sx(x):
        return _ML + (x - x0) / (x1 - x0) * pw

    def sy(y):
        return _MT + (1 - (y - y0) / (y1 - y0)) * ph

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_W}" height="{_H}" viewBox="0 0 {_W} {_H}">',
        '<rect width="100%" height="100%" fill="white"/>',
        f'<text x="{_ML + pw / 2:.2f}" y="20" text-anchor="middle" font-family="sans-serif" font-size="14">'
        f'{escape(metric)} vs {escape(result.parameter)}</text>',
        f'<rect x="{_ML}" y="{_MT}" width="{pw}" height="{ph}" fill="none" stroke="black"/>',
    ]
    for t in _ticks(x0, x1):
        out.append(f'<line x1="{sx(t):.2f}" y1="{_MT + ph}" x2="{sx(t):.2f}" y2="{_MT + ph + 5}" stroke="black"/>')
        out.append(f'<text x="{sx(t):.2f}" y="{_MT + ph + 18}" text-anchor="middle" font-family="sans-serif" '
                   f'font-size="11">{t:.4g}</text>')
    for t in _ticks(y0, y1):
        out.append(f'<line x1="{_ML - 5}" y1="{sy(t):.2f}" x2="{_ML}" y2="{sy(t):.2f}" stroke="black"/>')
        out.append(f'<text x="{_ML - 8}" y="{sy(t) + 4:.2f}" text-anchor="end" font-family="sans-serif" '
                   f'font-size="11">{t:.4g}</text>')
    out.append(f'<text x="{_ML + pw / 2:.2f}" y="{_H - 12}" text-anchor="middle" font-family="sans-serif" '
               f'font-size="12">{escape(result.parameter)}</text>')
    for i, (method, pts) in enumerate(series.items()):
        color = _PALETTE.get(method, "#000000")
        if len(pts) > 1:
            upper = " ".join(f"{sx(v):.2f},{sy(hi):.2f}" for v, _, _, hi in pts)
            lower = " ".join(f"{sx(v):.2f},{sy(lo):.2f}" for v, _, lo, _ in reversed(pts))
            out.append(f'<polygon points="{upper} {lower}" fill="{color}" fill-opacity="0.15" stroke="none"/>')
            line = " ".join(f"{sx(v):.2f},{sy(m):.2f}" for v, m, _, _ in pts)
            out.append(f'<polyline points="{line}" fill="none" stroke="{color}" stroke-width="2"/>')
        for v, m, _, _ in pts:
            out.append(f'<circle cx="{sx(v):.2f}" cy="{sy(m):.2f}" r="3" fill="{color}"/>')
        ly = _MT + 14 + 18 * i
        out.append(f'<line x1="{_W - _MR + 12}" y1="{ly}" x2="{_W - _MR + 36}" y2="{ly}" stroke="{color}" '
                   f'stroke-width="2"/>')
        out.append(f'<text x="{_W - _MR + 42}" y="{ly + 4}" font-family="sans-serif" font-size="11">'
                   f'{escape(method)}</text>')
    out.append("</svg>")
    path = Path(path)
    try:
        path.write_text("\n".join(out) + "\n")
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc


def parse_values(text: str) -> list:
    """``start:stop:count`` (inclusive, evenly spaced) or a comma-separated list."""
    text = text.strip()
    if ":" in text:
        parts = text.split(":")
        if len(parts) != 3:
            raise ValueError(f"bad range {text!r}; expected start:stop:count")
        start, stop, count = float(parts[0]), float(parts[1]), int(parts[2])
        if count < 1:
            raise ValueError("count must be >= 1")
        return [_r12(v) for v in np.linspace(start, stop, count)]
    return [float(v) for v in text.split(",") if v.strip()]
