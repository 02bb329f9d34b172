#!/usr/bin/env python3
"""Record fixed-point behaviour across step sizes.

Existence of the per-step solution is only covered for small enough steps;
this scan records where the plain Picard iteration actually stops converging
for the benchmark data, printing one line per step size and writing
out/step_regime.csv.
"""

import sys
from pathlib import Path

import numpy as np

from chemoflow.assembly import build_operators
from chemoflow.config import build_initial_state, load_config
from chemoflow.geometry import build_disc_mesh, build_trace_map
from chemoflow.step_solver import StepInputs, picard_inner

REPO = Path(__file__).resolve().parents[1]


def scan(config_path, ks, max_iter=200):
    cfg = load_config(config_path)
    mesh = build_disc_mesh(
        cfg.mesh["radius"], cfg.mesh["target_h"], first_ring=int(cfg.mesh["first_ring"])
    )
    ops = build_operators(mesh, build_trace_map(mesh))
    state0 = build_initial_state(cfg, ops)
    rows = ["k,converged,inner_iterations,last_update"]
    for k in ks:
        inputs = StepInputs(
            c_prev=state0.c,
            c_trace_prev=ops.trace.restrict(state0.c),
            n_prev=state0.n,
            u_prev=state0.u,
            dt=k,
        )
        _, _, diag = picard_inner(
            inputs, state0.u, cfg.params, ops, tol=cfg.solver["inner_tol"], max_iter=max_iter
        )
        last = diag.residual_history[-1]
        print(
            f"k={k:10.4g}  converged={str(diag.converged):5s}  "
            f"inner={diag.inner_iterations:4d}  last update={last:.3e}"
        )
        rows.append(f"{k:.17g},{diag.converged},{diag.inner_iterations},{last:.17g}")
    out = Path("out")
    out.mkdir(exist_ok=True)
    (out / "step_regime.csv").write_text("\n".join(rows) + "\n")


if __name__ == "__main__":
    config = sys.argv[1] if len(sys.argv) > 1 else str(REPO / "configs" / "benchmark.json")
    scan(config, ks=np.geomspace(1e-3, 30.0, 12))
