"""Byte-for-byte stability of every documented on-disk format."""

from pathlib import Path

import numpy as np

from chemoflow.config import config_from_dict
from chemoflow.energy import CSV_COLUMNS
from chemoflow.fields_io import export_fields
from chemoflow.geometry import build_disc_mesh, save_mesh
from chemoflow.timestepping import State, TimeGrid, write_checkpoint

GOLDEN = Path(__file__).parent / "golden"


def tiny_state(mesh):
    nv = mesh.n_vertices
    return State(
        c=np.linspace(0.0, 1.0, nv),
        n=np.linspace(1.0, 2.0, nv),
        u=np.linspace(-1.0, 1.0, 4 * nv),
        p=np.zeros(nv),
        t=0.25,
    )


def test_config_defaults_golden():
    assert config_from_dict({}).to_json() == (GOLDEN / "config_defaults.json").read_text()


def test_mesh_format_golden(tmp_path):
    mesh = build_disc_mesh(1.0, 0.6)
    save_mesh(mesh, tmp_path / "mesh.txt")
    assert (tmp_path / "mesh.txt").read_bytes() == (GOLDEN / "mesh_tiny.txt").read_bytes()


def test_ledger_header_golden():
    assert ",".join(CSV_COLUMNS) + "\n" == (GOLDEN / "ledger_header.csv").read_text()


def test_checkpoint_format_golden(tmp_path):
    mesh = build_disc_mesh(1.0, 0.6)
    write_checkpoint(
        tmp_path / "c.ckpt", mesh.data_hash(), TimeGrid(T=1.0, N=4), 1, tiny_state(mesh)
    )
    assert (tmp_path / "c.ckpt").read_bytes() == (GOLDEN / "checkpoint_tiny.ckpt").read_bytes()


def test_fields_format_golden(tmp_path):
    mesh = build_disc_mesh(1.0, 0.6)
    export_fields(tiny_state(mesh), tmp_path / "f.txt")
    assert (tmp_path / "f.txt").read_bytes() == (GOLDEN / "fields_tiny.txt").read_bytes()
