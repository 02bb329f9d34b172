import hashlib
import json
from pathlib import Path

import numpy as np
import pytest

from chemoflow.cli import main
from chemoflow.config import (
    ConfigError,
    apply_overrides,
    build_initial_state,
    config_from_dict,
    load_config,
)
from chemoflow.fields_io import export_fields, load_fields, snapshot_name
from chemoflow.timestepping import State

REPO = Path(__file__).resolve().parents[1]
BENCHMARK_CONFIG = REPO / "configs" / "benchmark.json"
STEADY_CONFIG = REPO / "configs" / "steady.json"


def write_config(tmp_path, payload):
    path = tmp_path / "config.json"
    path.write_text(json.dumps(payload))
    return path


def test_minimal_config_defaults(tmp_path):
    cfg = load_config(write_config(tmp_path, {}))
    assert cfg.time["N"] == 16
    assert cfg.params.alpha == 1.0
    assert cfg.initial["c"]["preset"] == "constant"


def test_config_semantic_error_names_key(tmp_path):
    path = write_config(tmp_path, {"params": {"b": 0.0}})
    with pytest.raises(ConfigError) as exc:
        load_config(path)
    assert any("params.b" in f"{k}: {m}" for k, m in exc.value.problems)


def test_config_zero_steps_rejected(tmp_path):
    path = write_config(tmp_path, {"time": {"N": 0}})
    with pytest.raises(ConfigError) as exc:
        load_config(path)
    assert any(k == "N" for k, _ in exc.value.problems)


def test_config_collects_all_errors(tmp_path):
    path = write_config(
        tmp_path,
        {"time": {"N": 0}, "params": {"b": 0.0, "alpha": -1}, "solver": {"damping": 2.0}},
    )
    with pytest.raises(ConfigError) as exc:
        load_config(path)
    assert len(exc.value.problems) >= 4


def test_config_parse_error_has_position(tmp_path):
    path = tmp_path / "broken.json"
    path.write_text('{"mesh": }')
    with pytest.raises(ConfigError) as exc:
        load_config(path)
    assert "line 1" in exc.value.problems[0][1]


def test_config_unknown_key_rejected(tmp_path):
    path = write_config(tmp_path, {"tyme": {"N": 4}})
    with pytest.raises(ConfigError) as exc:
        load_config(path)
    assert any(k == "tyme" for k, _ in exc.value.problems)


def test_config_missing_file_reference(tmp_path):
    path = write_config(tmp_path, {"initial": {"c": {"preset": "file", "path": "nope.txt"}}})
    with pytest.raises(ConfigError) as exc:
        load_config(path)
    assert any("does not exist" in m for _, m in exc.value.problems)


def test_overrides_apply_and_validate(tmp_path):
    cfg = load_config(write_config(tmp_path, {}))
    raw = apply_overrides(cfg.raw, ["time.N=8", "params.alpha=0.25"])
    raw.pop("_base_dir")
    cfg2 = config_from_dict(raw)
    assert cfg2.time["N"] == 8 and cfg2.params.alpha == 0.25
    with pytest.raises(ConfigError):
        apply_overrides(cfg.raw, ["no-equals-sign"])


def test_fields_roundtrip_bit_exact(coarse_ops, tmp_path):
    rng = np.random.default_rng(0)
    state = State(
        c=rng.standard_normal(coarse_ops.mesh.n_vertices),
        n=rng.standard_normal(coarse_ops.mesh.n_vertices),
        u=rng.standard_normal(coarse_ops.vspace.n_velocity),
        p=rng.standard_normal(coarse_ops.mesh.n_vertices),
        t=0.7301,
    )
    path = tmp_path / "state.txt"
    export_fields(state, path)
    back = load_fields(path)
    assert back.t == state.t
    for name in ("c", "n", "u", "p"):
        assert np.array_equal(getattr(back, name), getattr(state, name))


def test_initial_state_from_file_preset(coarse_ops, tmp_path):
    nv = coarse_ops.mesh.n_vertices
    vals = np.linspace(0, 1, nv)
    np.savetxt(tmp_path / "c0.txt", vals, fmt="%.17g")
    cfg = load_config(
        write_config(tmp_path, {"initial": {"c": {"preset": "file", "path": "c0.txt"}}})
    )
    # mesh of the config (default target_h 0.1) differs from coarse_ops; build matching config
    cfg = load_config(
        write_config(
            tmp_path,
            {
                "mesh": {"radius": 1.0, "target_h": 0.35},
                "initial": {"c": {"preset": "file", "path": "c0.txt"}},
            },
        )
    )
    state = build_initial_state(cfg, coarse_ops)
    assert np.array_equal(state.c, vals)


def test_cli_validate_benchmark_exit_zero(capsys):
    code = main(["validate", "--config", str(BENCHMARK_CONFIG)])
    out = capsys.readouterr().out
    assert code == 0
    assert "WARNING" not in out


def test_cli_validate_bad_config(tmp_path, capsys):
    path = write_config(tmp_path, {"params": {"b": 0.0}})
    code = main(["validate", "--config", str(path)])
    assert code == 1
    assert "params.b" in capsys.readouterr().out


def test_cli_mesh_info(capsys):
    code = main(["mesh-info", "--config", str(STEADY_CONFIG)])
    assert code == 0
    out = capsys.readouterr().out
    assert "vertices" in out and "h_max" in out


def test_cli_run_steady_and_energy(tmp_path, capsys):
    out_dir = tmp_path / "steady"
    code = main(
        [
            "run",
            "--config",
            str(STEADY_CONFIG),
            "--output",
            str(out_dir),
            "--set",
            "time.N=4",
            "--set",
            "mesh.target_h=0.35",
            "--set",
            "output.checkpoints=true",
            "--set",
            "output.snapshot_stride=2",
        ]
    )
    assert code == 0
    ledger_lines = (out_dir / "ledger.csv").read_text().strip().split("\n")
    assert len(ledger_lines) == 4 + 2  # header + N+1 rows
    # steady run: zero increments column-wise
    import csv

    rows = list(csv.DictReader(ledger_lines))
    assert all(float(r["dc_sq"]) < 1e-24 for r in rows[1:])
    # snapshots at m = 0, 2, 4
    assert sorted(p.name for p in out_dir.glob("fields_*.txt")) == [
        snapshot_name(0),
        snapshot_name(2),
        snapshot_name(4),
    ]
    # re-analyze the checkpoints
    code = main(
        [
            "energy",
            "--config",
            str(STEADY_CONFIG),
            "--checkpoints",
            str(out_dir / "checkpoints"),
            "--output",
            str(tmp_path / "energy"),
            "--set",
            "time.N=4",
            "--set",
            "mesh.target_h=0.35",
        ]
    )
    assert code == 0
    assert (tmp_path / "energy" / "energy_report.txt").exists()


def test_cli_converge_smoke(tmp_path, capsys):
    code = main(
        [
            "converge",
            "--config",
            str(BENCHMARK_CONFIG),
            "--levels",
            "3",
            "--output",
            str(tmp_path / "conv"),
            "--set",
            "mesh.target_h=0.35",
            "--set",
            "time.N=16",
        ]
    )
    assert code == 0
    report = (tmp_path / "conv" / "convergence_report.txt").read_text()
    assert "uniform-in-k bound scan" in report
    assert "self-convergence" in report
    assert (tmp_path / "conv" / "ledger_N64.csv").exists()


def test_cli_converge_level_check(tmp_path, capsys):
    code = main(
        [
            "converge",
            "--config",
            str(STEADY_CONFIG),
            "--levels",
            "1",
            "--output",
            str(tmp_path / "x"),
        ]
    )
    assert code == 1
    assert "3 refinement levels" in capsys.readouterr().err


def dir_digest(path: Path) -> str:
    h = hashlib.sha256()
    for p in sorted(path.rglob("*")):
        if p.is_file():
            h.update(p.relative_to(path).as_posix().encode())
            h.update(p.read_bytes())
    return h.hexdigest()


def test_cli_run_hash_stable(tmp_path):
    args = lambda out: [
        "run",
        "--config",
        str(STEADY_CONFIG),
        "--output",
        str(out),
        "--set",
        "time.N=2",
        "--set",
        "mesh.target_h=0.35",
    ]
    assert main(args(tmp_path / "a")) == 0
    assert main(args(tmp_path / "b")) == 0
    assert dir_digest(tmp_path / "a") == dir_digest(tmp_path / "b")
