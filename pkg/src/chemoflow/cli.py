"""Command-line surface: run | converge | energy | validate | mesh-info.

Exit codes: 0 success, 1 configuration or validation failure, 2 usage error,
3 solver failure, 4 I/O failure.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from .assembly import build_operators
from .config import ConfigError, apply_overrides, build_initial_state, config_from_dict, load_config
from .energy import (
    build_ledger,
    check_cell_solve_bound,
    check_oxygen_solve_bound,
    check_step_inequality,
    export_ledger,
    kinetic_identity_residual,
    time_translate_decay,
    uniform_bound_scan,
)
from .fields_io import FieldsIOError, export_fields, snapshot_name
from .geometry import build_disc_mesh, build_trace_map, save_mesh
from .model import validate_params
from .step_solver import SolverOptions
from .timestepping import StepFailure, TimeGrid, interpolant_step_gap, load_trajectory, run as run_time_loop

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_SOLVER = 3
EXIT_IO = 4


def _load(args) -> "RunConfig":
    cfg = load_config(args.config)
    if getattr(args, "set", None):
        raw = apply_overrides(cfg.raw, args.set)
        raw.pop("_base_dir", None)
        cfg = config_from_dict(raw, base_dir=Path(args.config).parent)
    return cfg


def _setup(cfg):
    mesh = build_disc_mesh(
        cfg.mesh["radius"], cfg.mesh["target_h"], first_ring=int(cfg.mesh["first_ring"])
    )
    trace = build_trace_map(mesh)
    ops = build_operators(mesh, trace)
    return mesh, ops


def _solver_options(cfg) -> SolverOptions:
    s = cfg.solver
    return SolverOptions(
        inner_tol=s["inner_tol"],
        outer_tol=s["outer_tol"],
        linear_tol=s["linear_tol"],
        max_inner=s["max_inner"],
        max_outer=s["max_outer"],
        damping=s["damping"],
    )


def _out_dir(cfg, override, subdir=None) -> Path:
    base = Path(override) if override else Path(cfg.output["directory"])
    if subdir:
        base = base / subdir
    base.mkdir(parents=True, exist_ok=True)
    return base


def _run_one(cfg, ops, grid, out_dir: Path, write_outputs=True):
    state0 = build_initial_state(cfg, ops)
    stride = cfg.output["snapshot_stride"]
    diag_rows = ["step,level,iteration,residual"]

    def on_step(m, state, diags):
        for d in diags:
            diag_rows.extend(d.csv_rows(m))
        if write_outputs and stride > 0 and m % stride == 0:
            export_fields(state, out_dir / snapshot_name(m))

    checkpoint_dir = out_dir / "checkpoints" if (write_outputs and cfg.output["checkpoints"]) else None
    traj = run_time_loop(
        ops,
        cfg.params,
        grid,
        state0,
        options=_solver_options(cfg),
        retry_depth=cfg.solver["retry_depth"],
        checkpoint_dir=checkpoint_dir,
        step_callback=on_step,
    )
    if write_outputs and stride > 0:
        export_fields(traj.states[0], out_dir / snapshot_name(0))
    if write_outputs:
        (out_dir / "diagnostics.csv").write_text("\n".join(diag_rows) + "\n")
    return traj


def cmd_run(args) -> int:
    cfg = _load(args)
    mesh, ops = _setup(cfg)
    grid = TimeGrid(T=cfg.time["T"], N=cfg.time["N"])
    out_dir = _out_dir(cfg, args.output)
    (out_dir / "config_used.json").write_text(cfg.to_json())
    save_mesh(mesh, out_dir / "mesh.txt")
    traj = _run_one(cfg, ops, grid, out_dir)
    ledger = build_ledger(traj, ops, cfg.params)
    export_ledger(ledger, out_dir / "ledger.csv")
    converged_steps = sum(
        1 for ds in traj.diagnostics[1:] if ds and all(d.converged for d in ds)
    )
    print(f"run complete: {grid.N} steps (all converged: {converged_steps == grid.N})")
    print(f"outputs in {out_dir}")
    return EXIT_OK


def cmd_converge(args) -> int:
    cfg = _load(args)
    if args.levels < 3:
        print(f"converge needs at least 3 refinement levels, got {args.levels}", file=sys.stderr)
        return EXIT_CONFIG
    mesh, ops = _setup(cfg)
    out_dir = _out_dir(cfg, args.output)
    base_n = cfg.time["N"]
    T = cfg.time["T"]
    levels = [base_n * 2**j for j in range(args.levels)]

    trajectories = []
    ledgers = []
    for N in levels:
        traj = _run_one(cfg, ops, TimeGrid(T=T, N=N), out_dir, write_outputs=False)
        trajectories.append(traj)
        led = build_ledger(traj, ops, cfg.params)
        ledgers.append(led)
        export_ledger(led, out_dir / f"ledger_N{N}.csv")

    lines = []
    report = uniform_bound_scan(ledgers, cfg.params)
    lines.extend(report.lines())

    lines.append("")
    lines.append("interpolant-vs-step gap (exact L2-in-time):")
    ks = np.array([T / N for N in levels])
    gaps = {f: [] for f in ("c", "n", "u")}
    for traj in trajectories:
        g = interpolant_step_gap(traj, ops)
        for f in gaps:
            gaps[f].append(g[f])
    for f, vals in gaps.items():
        vals = np.asarray(vals)
        slope = float(np.polyfit(np.log(ks), np.log(vals), 1)[0]) if np.all(vals > 0) else float("nan")
        lines.append(f"  {f}: gaps {' '.join(f'{v:.6g}' for v in vals)}  slope {slope:.4f}")

    lines.append("")
    lines.append("self-convergence at final time (consecutive level differences):")
    diffs = []
    for a, b in zip(trajectories[:-1], trajectories[1:]):
        sa, sb = a.states[-1], b.states[-1]
        d = np.sqrt(
            ops.scalar_norm_sq(sa.c - sb.c)
            + ops.scalar_norm_sq(sa.n - sb.n)
            + ops.velocity_norm_sq(sa.u - sb.u)
        )
        diffs.append(d)
        lines.append(f"  N={a.grid.N} vs N={b.grid.N}: {d:.6g}")
    for d1, d2 in zip(diffs[:-1], diffs[1:]):
        lines.append(f"  ratio {d1 / d2:.4f}")

    text = "\n".join(lines) + "\n"
    (out_dir / "convergence_report.txt").write_text(text)
    print(text, end="")
    return EXIT_OK if report.uniform else EXIT_SOLVER


def cmd_energy(args) -> int:
    cfg = _load(args)
    mesh, ops = _setup(cfg)
    grid = TimeGrid(T=cfg.time["T"], N=cfg.time["N"])
    traj = load_trajectory(args.checkpoints, ops, grid, cfg.params)
    out_dir = _out_dir(cfg, args.output)
    ledger = build_ledger(traj, ops, cfg.params)
    export_ledger(ledger, out_dir / "ledger.csv")

    params = cfg.params
    delta = 0.5 * params.beta / params.g1
    worst = {"combined": np.inf, "oxygen": np.inf, "cell": np.inf}
    kin = 0.0
    for m in range(1, ledger.N + 1):
        worst["combined"] = min(worst["combined"], check_step_inequality(ledger, m, params, delta).slack)
        worst["oxygen"] = min(worst["oxygen"], check_oxygen_solve_bound(ledger, m, params).slack)
        worst["cell"] = min(worst["cell"], check_cell_solve_bound(ledger, m, params).slack)
        kin = max(kin, kinetic_identity_residual(ledger, m, params))
    lines = [
        f"energy analysis of {args.checkpoints} (N={ledger.N}, k={ledger.k:g})",
        f"  worst combined-step slack: {worst['combined']:.6g}",
        f"  worst oxygen-solve slack:  {worst['oxygen']:.6g}",
        f"  worst cell-solve slack:    {worst['cell']:.6g}",
        f"  max kinetic identity residual: {kin:.3e}",
        f"  cell mass drift: {np.max(np.abs(ledger.mass_n - ledger.mass_n[0])):.3e}",
        f"  min cell density over run: {ledger.min_n.min():.6g}",
    ]
    shifts = [grid.T / 4, grid.T / 8, grid.T / 16, grid.T / 32]
    decay = time_translate_decay(traj, ops, shifts)
    lines.extend(decay.lines())
    text = "\n".join(lines) + "\n"
    (out_dir / "energy_report.txt").write_text(text)
    print(text, end="")
    return EXIT_OK


def cmd_validate(args) -> int:
    try:
        cfg = _load(args)
    except ConfigError as exc:
        for key, msg in exc.problems:
            print(f"ERROR   {key}: {msg}")
        return EXIT_CONFIG
    report = validate_params(cfg.params)
    for line in report.lines():
        print(line)
    if not report.ok:
        return EXIT_CONFIG
    print("configuration valid")
    return EXIT_OK


def cmd_mesh_info(args) -> int:
    cfg = _load(args)
    mesh, ops = _setup(cfg)
    print(f"vertices:        {mesh.n_vertices}")
    print(f"triangles:       {mesh.n_triangles}")
    print(f"boundary nodes:  {mesh.n_boundary}")
    print(f"h_max:           {mesh.h_max:.6g}")
    print(f"area:            {mesh.area:.6g}")
    print(f"perimeter:       {mesh.perimeter:.6g}")
    print(f"inradius:        {mesh.inradius:.6g}")
    print(f"velocity dofs:   {ops.vspace.n_velocity}")
    print(f"pressure dofs:   {mesh.n_vertices}")
    print(f"mesh hash:       {mesh.data_hash()}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="chemoflow",
        description="Finite-element solver for chemotaxis-fluid dynamics with a "
        "dynamic oxygen boundary condition",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", required=True, help="path to the JSON run configuration")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override a config key (dotted path), repeatable")

    p_run = sub.add_parser("run", help="execute one trajectory, write ledger and snapshots")
    common(p_run)
    p_run.add_argument("--output", default=None, help="output directory (defaults to config)")
    p_run.set_defaults(fn=cmd_run)

    p_conv = sub.add_parser("converge", help="time-refinement ladder with bound and gap reports")
    common(p_conv)
    p_conv.add_argument("--levels", type=int, default=4, help="number of refinement levels (>= 3)")
    p_conv.add_argument("--output", default=None)
    p_conv.set_defaults(fn=cmd_converge)

    p_en = sub.add_parser("energy", help="re-analyze stored checkpoints")
    common(p_en)
    p_en.add_argument("--checkpoints", required=True, help="directory of step checkpoints")
    p_en.add_argument("--output", default=None)
    p_en.set_defaults(fn=cmd_energy)

    p_val = sub.add_parser("validate", help="validate a configuration and print all findings")
    common(p_val)
    p_val.set_defaults(fn=cmd_validate)

    p_mi = sub.add_parser("mesh-info", help="print mesh statistics")
    common(p_mi)
    p_mi.set_defaults(fn=cmd_mesh_info)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as exc:
        for key, msg in exc.problems:
            print(f"ERROR   {key}: {msg}", file=sys.stderr)
        return EXIT_CONFIG
    except StepFailure as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except FieldsIOError as exc:
        print(f"I/O failure: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
