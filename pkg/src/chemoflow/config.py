"""Run configuration: JSON schema, defaults, and whole-file validation.

A run is described by one JSON file.  Loading never stops at the first
problem: every schema or semantic error is collected with its key path so the
command line can print all findings at once.  Command-line ``--set`` overrides
are applied to the raw dictionary before validation.
"""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .model import ModelParams, ResponseSpec, validate_params


class ConfigError(Exception):
    """Carries every validation problem found in a configuration."""

    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("\n".join(f"{key}: {msg}" for key, msg in self.problems))


DEFAULTS = {
    "mesh": {"radius": 1.0, "target_h": 0.1, "first_ring": 6},
    "time": {"T": 1.0, "N": 16},
    "params": {
        "alpha": 1.0,
        "beta": 1.0,
        "xi": 1.0,
        "b": 1.0,
        "grad_sigma": [0.0, -1.0],
        "f": {"family": "saturating", "f0": 0.1, "f1": 1.0},
        "g": {"family": "saturating", "g1": 0.5},
    },
    "initial": {
        "c": {"preset": "constant", "value": 1.0},
        "n": {"preset": "zero"},
        "u": {"preset": "zero"},
    },
    "solver": {
        "inner_tol": 1e-11,
        "outer_tol": 1e-10,
        "linear_tol": 1e-10,
        "max_inner": 60,
        "max_outer": 60,
        "damping": 1.0,
        "retry_depth": 3,
    },
    "mollifier_eps": 0.0,
    "output": {"directory": "out", "snapshot_stride": 0, "checkpoints": True},
    "seed": 0,
}

SCALAR_PRESETS = ("constant", "zero", "gaussian", "file")
VELOCITY_PRESETS = ("zero", "stokes", "swirl", "file")


@dataclass(frozen=True)
class RunConfig:
    """Validated configuration; ``raw`` is the fully defaulted dictionary."""

    raw: dict
    params: ModelParams

    @property
    def mesh(self) -> dict:
        return self.raw["mesh"]

    @property
    def time(self) -> dict:
        return self.raw["time"]

    @property
    def initial(self) -> dict:
        return self.raw["initial"]

    @property
    def solver(self) -> dict:
        return self.raw["solver"]

    @property
    def output(self) -> dict:
        return self.raw["output"]

    @property
    def mollifier_eps(self) -> float:
        return self.raw["mollifier_eps"]

    @property
    def seed(self) -> int:
        return self.raw["seed"]

    def to_json(self) -> str:
        public = {k: v for k, v in self.raw.items() if not k.startswith("_")}
        return json.dumps(public, sort_keys=True, indent=2) + "\n"


def _merge_defaults(raw: dict, defaults: dict, prefix: str, problems: list) -> dict:
    out = {}
    for key, default in defaults.items():
        path = f"{prefix}{key}"
        if key not in raw:
            out[key] = copy.deepcopy(default)
        elif isinstance(default, dict) and not _is_leaf_dict(path):
            if not isinstance(raw[key], dict):
                problems.append((path, f"expected an object, got {type(raw[key]).__name__}"))
                out[key] = copy.deepcopy(default)
            else:
                out[key] = _merge_defaults(raw[key], default, path + ".", problems)
        else:
            out[key] = copy.deepcopy(raw[key])
    for key in raw:
        if key not in defaults:
            problems.append((f"{prefix}{key}", "unknown key"))
    return out


def _is_leaf_dict(path: str) -> bool:
    # preset/response sub-objects have free-form keys per family
    return path in ("params.f", "params.g", "initial.c", "initial.n", "initial.u")


def _require_number(d, key, problems, positive=False, minimum=None, integer=False):
    val = d.get(key)
    if isinstance(val, bool) or not isinstance(val, (int, float)):
        problems.append((key, f"expected a number, got {val!r}"))
        return None
    if integer and int(val) != val:
        problems.append((key, f"expected an integer, got {val!r}"))
        return None
    if positive and not val > 0:
        problems.append((key, f"must be positive, got {val}"))
        return None
    if minimum is not None and val < minimum:
        problems.append((key, f"must be >= {minimum}, got {val}"))
        return None
    return val


def _validate_field_spec(spec, path, presets, problems, base_dir):
    if not isinstance(spec, dict) or "preset" not in spec:
        problems.append((path, "expected an object with a 'preset' key"))
        return
    preset = spec["preset"]
    if preset not in presets:
        problems.append((f"{path}.preset", f"unknown preset {preset!r}; choose from {presets}"))
        return
    if preset == "file":
        p = spec.get("path")
        if not isinstance(p, str):
            problems.append((f"{path}.path", "file preset needs a 'path' string"))
        elif not (base_dir / p).exists():
            problems.append((f"{path}.path", f"referenced file does not exist: {p}"))


def load_config(path) -> RunConfig:
    """Parse and validate a JSON config file; raise ConfigError with all
    problems (parse position for syntax errors, key paths for semantic ones)."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError([(str(path), f"cannot read: {exc}")]) from exc
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError([(str(path), f"parse error at line {exc.lineno}, column {exc.colno}: {exc.msg}")]) from exc
    if not isinstance(raw, dict):
        raise ConfigError([(str(path), "top level must be a JSON object")])
    return config_from_dict(raw, base_dir=path.parent)


def config_from_dict(raw: dict, base_dir=Path(".")) -> RunConfig:
    problems: list = []
    merged = _merge_defaults(raw, DEFAULTS, "", problems)

    mesh = merged["mesh"]
    radius = _require_number(mesh, "radius", problems, positive=True)
    target_h = _require_number(mesh, "target_h", problems, positive=True)
    if radius and target_h and not target_h < radius:
        problems.append(("mesh.target_h", f"must be smaller than the radius {radius}"))
    _require_number(mesh, "first_ring", problems, integer=True, minimum=3)

    time = merged["time"]
    _require_number(time, "T", problems, positive=True)
    n_steps = _require_number(time, "N", problems, integer=True, minimum=1)
    if n_steps is not None:
        time["N"] = int(n_steps)

    solver = merged["solver"]
    for key in ("inner_tol", "outer_tol", "linear_tol"):
        _require_number(solver, key, problems, positive=True)
    for key in ("max_inner", "max_outer"):
        v = _require_number(solver, key, problems, integer=True, minimum=1)
        if v is not None:
            solver[key] = int(v)
    damping = _require_number(solver, "damping", problems, positive=True)
    if damping is not None and damping > 1:
        problems.append(("solver.damping", f"must lie in (0, 1], got {damping}"))
    rd = _require_number(solver, "retry_depth", problems, integer=True, minimum=0)
    if rd is not None:
        solver["retry_depth"] = int(rd)

    eps = merged["mollifier_eps"]
    if isinstance(eps, bool) or not isinstance(eps, (int, float)) or eps < 0:
        problems.append(("mollifier_eps", f"must be a nonnegative number, got {eps!r}"))

    out = merged["output"]
    stride = _require_number(out, "snapshot_stride", problems, integer=True, minimum=0)
    if stride is not None:
        out["snapshot_stride"] = int(stride)
    if not isinstance(out.get("directory"), str):
        problems.append(("output.directory", "must be a string"))
    if not isinstance(out.get("checkpoints"), bool):
        problems.append(("output.checkpoints", "must be true or false"))

    seed = _require_number(merged, "seed", problems, integer=True)
    if seed is not None:
        merged["seed"] = int(seed)

    params = None
    try:
        params = _params_from_dict(merged["params"], problems)
    except (TypeError, ValueError) as exc:
        problems.append(("params", str(exc)))
    if params is not None:
        report = validate_params(params)
        for finding in report.errors:
            problems.append((f"params ({finding.code})", finding.message))

    for name in ("c", "n"):
        _validate_field_spec(merged["initial"][name], f"initial.{name}", SCALAR_PRESETS, problems, base_dir)
    _validate_field_spec(merged["initial"]["u"], "initial.u", VELOCITY_PRESETS, problems, base_dir)

    if problems:
        raise ConfigError(problems)
    merged["_base_dir"] = str(base_dir)
    return RunConfig(raw=merged, params=params)


def _params_from_dict(d: dict, problems: list) -> ModelParams:
    fd = d.get("f", {})
    gd = d.get("g", {})
    if not isinstance(fd, dict) or not isinstance(gd, dict):
        problems.append(("params.f/g", "response specs must be objects"))
        fd, gd = {}, {}
    f_extra = {k: v for k, v in fd.items() if k not in ("family", "f0", "f1")}
    g_extra = {k: v for k, v in gd.items() if k not in ("family", "g1")}
    gs = d.get("grad_sigma", [0.0, -1.0])
    if not (isinstance(gs, (list, tuple)) and len(gs) == 2):
        problems.append(("params.grad_sigma", f"expected a 2-vector, got {gs!r}"))
        gs = (0.0, 0.0)
    return ModelParams(
        alpha=d.get("alpha", 1.0),
        beta=d.get("beta", 1.0),
        xi=d.get("xi", 1.0),
        b=d.get("b", 1.0),
        grad_sigma=tuple(float(v) for v in gs),
        f0=fd.get("f0", 0.1),
        f1=fd.get("f1", 1.0),
        g1=gd.get("g1", 0.5),
        f_spec=ResponseSpec(fd.get("family", "saturating"), f_extra),
        g_spec=ResponseSpec(gd.get("family", "saturating"), g_extra),
    )


def apply_overrides(raw: dict, assignments) -> dict:
    """Apply dotted-path ``key=value`` overrides; values parse as JSON when
    possible and fall back to strings."""
    out = copy.deepcopy(raw)
    for assignment in assignments:
        if "=" not in assignment:
            raise ConfigError([(assignment, "override must look like key.path=value")])
        key, _, value = assignment.partition("=")
        try:
            parsed = json.loads(value)
        except json.JSONDecodeError:
            parsed = value
        node = out
        parts = key.split(".")
        for part in parts[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ConfigError([(key, "override path crosses a non-object value")])
        node[parts[-1]] = parsed
    return out


def build_scalar_field(spec: dict, mesh, base_dir=Path(".")) -> np.ndarray:
    x, y = mesh.vertices.T
    preset = spec["preset"]
    if preset == "zero":
        return np.zeros(mesh.n_vertices)
    if preset == "constant":
        return np.full(mesh.n_vertices, float(spec.get("value", 0.0)))
    if preset == "gaussian":
        amp = float(spec.get("amplitude", 1.0))
        cx, cy = spec.get("center", [0.0, 0.0])
        w2 = float(spec.get("width_sq", 0.25))
        return amp * np.exp(-(((x - cx) ** 2 + (y - cy) ** 2) / w2))
    if preset == "file":
        vals = np.loadtxt(Path(base_dir) / spec["path"])
        if vals.shape != (mesh.n_vertices,):
            raise ConfigError([("initial", f"field file has {vals.shape} values, mesh needs {mesh.n_vertices}")])
        return vals
    raise ConfigError([("initial", f"unknown scalar preset {preset!r}")])


def build_velocity_field(spec: dict, ops, params, n0: np.ndarray, base_dir=Path(".")) -> np.ndarray:
    preset = spec["preset"]
    if preset == "zero":
        return np.zeros(ops.vspace.n_velocity)
    if preset == "stokes":
        from .fluid import steady_stokes_velocity

        return steady_stokes_velocity(ops, params, n0)
    if preset == "swirl":
        amp = float(spec.get("amplitude", 1.0))
        r0 = float(spec.get("radius", 0.5))

        # curl of the stream bump amp*(r0^2 - r^2)^2 restricted to r < r0
        def vel(x, y):
            s = np.clip(r0**2 - (x**2 + y**2), 0.0, None)
            return -4.0 * amp * s * y, 4.0 * amp * s * x

        return ops.vspace.interpolate(vel)
    if preset == "file":
        vals = np.loadtxt(Path(base_dir) / spec["path"])
        if vals.shape != (ops.vspace.n_velocity,):
            raise ConfigError([("initial.u", f"velocity file has {vals.shape} values, need {ops.vspace.n_velocity}")])
        return vals
    raise ConfigError([("initial.u", f"unknown velocity preset {preset!r}")])


def build_initial_state(cfg: RunConfig, ops):
    """Evaluate the configured initial fields on the mesh."""
    from .timestepping import initial_state

    base = Path(cfg.raw.get("_base_dir", "."))
    c0 = build_scalar_field(cfg.initial["c"], ops.mesh, base)
    n0 = build_scalar_field(cfg.initial["n"], ops.mesh, base)
    u0 = build_velocity_field(cfg.initial["u"], ops, cfg.params, n0, base)
    return initial_state(ops, c0, n0, u0)
