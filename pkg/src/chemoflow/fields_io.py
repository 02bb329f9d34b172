"""Plain-text persistence of field states.

Format (one record per line, floats as %.17g so round trips are bit-exact):

    fields v1
    t <time>
    c <count>      followed by <count> value lines
    n <count>      ...
    u <count>      ...
    p <count>      ...
"""

from __future__ import annotations

import numpy as np

from .timestepping import State


class FieldsIOError(Exception):
    pass


def export_fields(state: State, path) -> None:
    try:
        with open(path, "w") as f:
            f.write("fields v1\n")
            f.write(f"t {state.t:.17g}\n")
            for name in ("c", "n", "u", "p"):
                arr = getattr(state, name)
                f.write(f"{name} {arr.shape[0]}\n")
                for v in arr:
                    f.write(f"{v:.17g}\n")
    except OSError as exc:
        raise FieldsIOError(f"cannot write fields to {path}: {exc}") from exc


def load_fields(path) -> State:
    try:
        with open(path) as f:
            tokens = f.read().split()
    except OSError as exc:
        raise FieldsIOError(f"cannot read fields from {path}: {exc}") from exc
    if tokens[:2] != ["fields", "v1"]:
        raise FieldsIOError(f"{path}: not a fields file")
    pos = 2
    if tokens[pos] != "t":
        raise FieldsIOError(f"{path}: missing time stamp")
    t = float(tokens[pos + 1])
    pos += 2
    arrays = {}
    for name in ("c", "n", "u", "p"):
        if tokens[pos] != name:
            raise FieldsIOError(f"{path}: expected section '{name}'")
        count = int(tokens[pos + 1])
        pos += 2
        arrays[name] = np.array(tokens[pos : pos + count], dtype=np.float64)
        pos += count
    return State(c=arrays["c"], n=arrays["n"], u=arrays["u"], p=arrays["p"], t=t)


def snapshot_name(m: int) -> str:
    return f"fields_{m:06d}.txt"
