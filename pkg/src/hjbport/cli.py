"""Command-line entry point.

Subcommands: alpha-table, solve, benchmark, portfolio, crosscheck.
Exit codes: 0 success, 2 configuration error, 3 numeric failure,
4 acceptance/tolerance failure.
"""

from __future__ import annotations

import argparse
import csv
import sys
import time
from pathlib import Path

import numpy as np

from . import backend_name
from .benchmark import (
    TravelingWaveCase,
    convergence_table,
    run_traveling_wave,
    write_convergence_csv,
)
from .config import ScenarioConfig
from .errors import ConfigError, SolverError
from .hjb_direct import crosscheck
from .pde import evolve
from .reconstruct import extract_weights, reconstruct_a, reconstruct_psi, reconstruct_v

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3
EXIT_ACCEPTANCE = 4

EOC_BAND = (1.80, 2.05)


def _fmt(x: float) -> str:
    return f"{x:.17g}"


def _write_manifest(path: Path, pairs) -> None:
    with open(path, "w") as fh:
        for key, value in pairs:
            fh.write(f"{key} = {value}\n")


def _write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def _load_config(args) -> ScenarioConfig:
    return ScenarioConfig.from_file(args.config, args.set or ())


def _solve_pipeline(cfg: ScenarioConfig, out_dir: Path, d_override=None):
    """table -> evolve -> reconstruct -> export; returns the bundle."""
    t_start = time.perf_counter()
    model = cfg.build_market()
    table = cfg.build_table(model)
    grid = cfg.build_grid()
    utility = cfg.terminal_utility()
    c_util = cfg.intertemporal_utility(d_override)
    bundle = evolve(
        grid,
        table,
        utility,
        c_util,
        cfg.boundary(),
        model=model,
        b_mode=cfg.b_mode,
        snapshot_taus=(0.0,) + tuple(cfg.snapshots),
        bounds=cfg.monitored_bounds(d_override),
    )
    reconstruct_a(bundle, grid, c_util)
    reconstruct_v(bundle, grid)
    reconstruct_psi(bundle, grid)
    extract_weights(bundle, table)

    out_dir.mkdir(parents=True, exist_ok=True)
    table.to_csv(out_dir / "alpha_table.csv")
    xs = grid.x_nodes()
    for tau, phi in zip(bundle.taus, bundle.phi_snapshots):
        _write_csv(
            out_dir / f"phi_tau_{tau:.6g}.csv",
            ["x", "phi"],
            ([_fmt(x), _fmt(p)] for x, p in zip(xs, phi)),
        )
    for name, field_arr in (("value", bundle.V_field), ("psi", bundle.psi_field)):
        rows = (
            [_fmt(xs[i]), _fmt(bundle.taus[c]), _fmt(field_arr[i, c])]
            for c in range(field_arr.shape[1])
            for i in range(field_arr.shape[0])
        )
        _write_csv(out_dir / f"{name}.csv", ["x", "tau", name if name != "value" else "V"], rows)
    n_assets = bundle.theta_field.shape[2]
    weight_rows = (
        [_fmt(xs[i]), _fmt(bundle.taus[c])] + [_fmt(w) for w in bundle.theta_field[i, c]]
        for c in range(bundle.theta_field.shape[1])
        for i in range(bundle.theta_field.shape[0])
    )
    _write_csv(
        out_dir / "weights.csv",
        ["x", "tau"] + [f"theta_{j + 1}" for j in range(n_assets)],
        weight_rows,
    )
    layer_taus = grid.k * np.arange(grid.m_steps + 1)
    _write_csv(
        out_dir / "ab_path.csv",
        ["tau", "a", "b"],
        ([_fmt(t), _fmt(a), _fmt(b)] for t, a, b in zip(layer_taus, bundle.a_path, bundle.b_path)),
    )
    manifest = cfg.manifest_pairs()
    if d_override is not None:
        manifest.append(("d_override", _fmt(d_override)))
    manifest += [
        ("clamp_count", str(bundle.clamp_count)),
        ("phi_min_seen", _fmt(bundle.phi_min_seen)),
        ("phi_max_seen", _fmt(bundle.phi_max_seen)),
        ("bounds_violations", str(bundle.bounds_violations)),
        ("backend", backend_name()),
        ("wall_time_s", f"{time.perf_counter() - t_start:.3f}"),
    ]
    _write_manifest(out_dir / "manifest.txt", manifest)
    return bundle


def cmd_alpha_table(args) -> int:
    cfg = _load_config(args)
    model = cfg.build_market()
    table = cfg.build_table(model)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    table.to_csv(out)
    breaks = table.breakpoint_nodes()
    print(f"alpha table: {len(table.phi_grid)} nodes on "
          f"[{table.phi_grid[0]:.6g}, {table.phi_grid[-1]:.6g}], h_phi={table.h_phi:.6g}")
    if len(breaks):
        locs = ", ".join(f"{table.phi_grid[i]:.4g}" for i in breaks)
        print(f"active-set changes at {len(breaks)} node(s): phi = {locs}")
    else:
        print("no active-set changes inside the tabulated range")
    print(f"written to {out}")
    return EXIT_OK


def cmd_solve(args) -> int:
    cfg = _load_config(args)
    bundle = _solve_pipeline(cfg, Path(args.out_dir))
    final = bundle.phi_snapshots[-1]
    print(f"solve complete: {bundle.grid.m_steps} layers, backend={bundle.backend}, "
          f"clamps={bundle.clamp_count}")
    print(f"final phi range: [{final.min():.6g}, {final.max():.6g}]")
    return EXIT_OK


def cmd_benchmark(args) -> int:
    hs = [float(v) for v in args.hs.split(",") if v.strip()]
    if not hs:
        raise ConfigError("empty h ladder")
    case = TravelingWaveCase(speed_v=args.speed, horizon_T=args.T)
    rows = convergence_table(
        hs, case=case, x_left=args.x_left, x_right=args.x_right, jobs=args.jobs
    )
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_convergence_csv(rows, out_dir / "convergence.csv")
    for h, e2, o2, einf, oinf in rows:
        o2s = "--" if np.isnan(o2) else f"{o2:.4f}"
        oinfs = "--" if np.isnan(oinf) else f"{oinf:.4f}"
        print(f"h={h:<8g} errL2={e2:.4e} eocL2={o2s:<8} errLinf={einf:.4e} eocLinf={oinfs}")

    profile = run_traveling_wave(
        min(hs), case=case, x_left=args.x_left, x_right=args.x_right,
        snapshot_taus=tuple(args.T * j / 10 for j in range(11)),
    )
    xs = profile.bundle.grid.x_nodes()
    err_rows = []
    for tau, phi in zip(profile.bundle.taus, profile.bundle.phi_snapshots):
        exact = case.phi_exact(xs, tau)
        err_rows += [[_fmt(x), _fmt(tau), _fmt(e)] for x, e in zip(xs, phi - exact)]
    _write_csv(out_dir / f"error_profile_h{min(hs):g}.csv", ["x", "tau", "error"], err_rows)

    if len(rows) == 1:
        print("single-h ladder: no convergence orders to check")
        return EXIT_OK
    eocs = [v for row in rows[1:] for v in (row[2], row[4])]
    if any(not (EOC_BAND[0] <= v <= EOC_BAND[1]) for v in eocs):
        print(f"convergence orders outside the acceptance band {EOC_BAND}")
        return EXIT_ACCEPTANCE
    return EXIT_OK


def cmd_portfolio(args) -> int:
    cfg = _load_config(args)
    out_root = Path(args.out_dir)
    summary = []
    for d in cfg.d_values:
        bundle = _solve_pipeline(cfg, out_root / f"d_{d:g}", d_override=d)
        final = bundle.phi_snapshots[-1]
        monotone = bool(np.all(np.diff(final) >= -1e-8))
        summary.append(
            (d, float(final.max() - final.min()), monotone, bundle.bounds_violations)
        )
        print(f"d={d:g}: final phi range {final.max() - final.min():.6g}, "
              f"monotone={monotone}, bounds_violations={bundle.bounds_violations}")
    _write_csv(
        out_root / "summary.csv",
        ["d", "phi_range_final", "monotone_in_x", "bounds_violations"],
        ([_fmt(d), _fmt(rng), str(mono).lower(), str(viol)] for d, rng, mono, viol in summary),
    )
    return EXIT_OK


def cmd_crosscheck(args) -> int:
    cfg = _load_config(args)
    model = cfg.build_market()
    table = cfg.build_table(model)
    grid = cfg.build_grid()
    result = crosscheck(
        grid,
        model,
        table,
        cfg.terminal_utility(),
        cfg.intertemporal_utility(),
        cfg.boundary(),
        theta_source=cfg.theta_source,
        b_mode=cfg.b_mode,
    )
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    xs = grid.x_nodes()
    _write_csv(
        out_dir / "crosscheck.csv",
        ["x", "V_riccati", "V_policy_iteration"],
        ([_fmt(x), _fmt(vr), _fmt(vd)]
         for x, vr, vd in zip(xs, result.v_riccati, result.v_direct)),
    )
    _write_csv(
        out_dir / "v_direct.csv",
        ["x", "V"],
        ([_fmt(x), _fmt(v)] for x, v in zip(xs, result.v_direct)),
    )
    print(f"central-half relative difference: V {result.rel_v_central:.3e}, "
          f"derived phi {result.rel_phi_central:.3e} (tolerance {cfg.cross_tol:g} on V)")
    if result.rel_v_central > cfg.cross_tol:
        return EXIT_ACCEPTANCE
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hjbport",
        description="Optimal dynamic portfolios via the transformed Bellman equation",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_config_args(p):
        p.add_argument("--config", default=None, help="flat key=value configuration file")
        p.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="override a configuration key (repeatable)")

    p = sub.add_parser("alpha-table", help="tabulate the diffusion function")
    add_config_args(p)
    p.add_argument("--out", default="alpha_table.csv")
    p.set_defaults(fn=cmd_alpha_table)

    p = sub.add_parser("solve", help="full pipeline: table, evolve, reconstruct, export")
    add_config_args(p)
    p.add_argument("--out-dir", default="run_out")
    p.set_defaults(fn=cmd_solve)

    p = sub.add_parser("benchmark", help="traveling-wave accuracy ladder")
    p.add_argument("--hs", default="0.05,0.025,0.0125")
    p.add_argument("--speed", type=float, default=5.0)
    p.add_argument("--T", type=float, default=1.0)
    p.add_argument("--x-left", type=float, default=-20.0)
    p.add_argument("--x-right", type=float, default=20.0)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out-dir", default="benchmark_out")
    p.set_defaults(fn=cmd_benchmark)

    p = sub.add_parser("portfolio", help="intertemporal-utility sweep over d values")
    add_config_args(p)
    p.add_argument("--out-dir", default="portfolio_out")
    p.set_defaults(fn=cmd_portfolio)

    p = sub.add_parser("crosscheck", help="compare against the direct policy-iteration solve")
    add_config_args(p)
    p.add_argument("--out-dir", default="crosscheck_out")
    p.set_defaults(fn=cmd_crosscheck)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except FileNotFoundError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SolverError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
