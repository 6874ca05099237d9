"""Nodal field files and stored trajectories."""
from __future__ import annotations

from pathlib import Path

import numpy as np

from .physics import GAS_CONSTANT, pressure

FIELD_KINDS = ("concentration", "pressure")


def write_field(path, nodes, values, kind: str = "concentration") -> None:
    """Text format: a ``#`` header, then ``index x y value`` per node."""
    nodes = np.asarray(nodes, dtype=float)
    values = np.asarray(values, dtype=float)
    if len(nodes) != len(values):
        raise ValueError("one value per node is required")
    with open(path, "w") as fh:
        fh.write(f"# node x y {kind}\n")
        for i, ((x, y), v) in enumerate(zip(nodes, values)):
            fh.write(f"{i} {float(x)!r} {float(y)!r} {float(v)!r}\n")


def read_field(path):
    """Return ``(nodes, values, kind)`` from a field file."""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"field file not found: {path}")
    with open(path) as fh:
        header = fh.readline().split()
        kind = header[-1] if len(header) >= 5 and header[0] == "#" else "concentration"
        data = np.loadtxt(fh, ndmin=2)
    if data.shape[1] != 4 or not np.array_equal(data[:, 0], np.arange(len(data))):
        raise ValueError(f"{path}: malformed field file")
    return data[:, 1:3], data[:, 3], kind


def convert(values, kind: str, R: float = GAS_CONSTANT, T: float = 413.0):
    if kind not in FIELD_KINDS:
        raise ValueError(f"unknown field format {kind!r}; expected one of {', '.join(FIELD_KINDS)}")
    return pressure(values, R, T) if kind == "pressure" else np.asarray(values, dtype=float)


def save_trajectory(path, nodes, times, states, dims=None) -> None:
    arrays = {"nodes": np.asarray(nodes), "times": np.asarray(times, dtype=float),
              "states": np.asarray(states, dtype=float)}
    if dims is not None:
        arrays["dims"] = np.asarray(dims, dtype=np.int64)
    np.savez_compressed(path, **arrays)


def load_trajectory(path):
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"trajectory file not found: {path}")
    with np.load(path) as z:
        if "states" not in z or "times" not in z:
            raise ValueError(f"{path}: not a trajectory file")
        return {k: z[k].copy() for k in z.files}
