"""Weighted norms and relative errors of coarse solutions against the fine reference."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .assembly import assemble_mass, assemble_stiffness
from .mesh import FineMesh


class MetricsError(ValueError):
    pass


def weighted_l2(v, mesh: FineMesh, model, c_weight=None, M=None) -> float:
    """``sqrt(v^T M v)`` with the storage-weighted DFM mass matrix."""
    v = np.asarray(v, dtype=float)
    if M is None:
        M = assemble_mass(mesh, model, c_weight)
    return float(np.sqrt(max(v @ (M @ v), 0.0)))


def weighted_h1(v, mesh: FineMesh, model, c_weight=None, A=None) -> float:
    """``sqrt(v^T A v)`` with the DFM stiffness matrix."""
    v = np.asarray(v, dtype=float)
    if A is None:
        A = assemble_stiffness(mesh, model, c_weight)
    return float(np.sqrt(max(v @ (A @ v), 0.0)))


@dataclass
class ErrorRow:
    step: int
    time_s: float
    dim: int
    l2_pct: float
    h1_pct: float


def relative_errors(c_ms, c_h, mesh: FineMesh, model, c_weight=None, M=None, A=None) -> tuple[float, float]:
    """Relative L2_a and H1_a errors in percent. The weights default to ``c_h``."""
    c_ms = np.asarray(c_ms, dtype=float)
    c_h = np.asarray(c_h, dtype=float)
    if c_ms.shape != c_h.shape:
        raise MetricsError("fields live on different grids")
    w = c_h if c_weight is None else c_weight
    if M is None:
        M = assemble_mass(mesh, model, w)
    if A is None:
        A = assemble_stiffness(mesh, model, w)
    e = c_ms - c_h
    ref_l2, ref_h1 = weighted_l2(c_h, mesh, model, M=M), weighted_h1(c_h, mesh, model, A=A)
    if ref_l2 == 0 or ref_h1 == 0:
        raise MetricsError("reference has zero norm; relative error undefined")
    return 100 * weighted_l2(e, mesh, model, M=M) / ref_l2, 100 * weighted_h1(e, mesh, model, A=A) / ref_h1


class ErrorEvaluator:
    """Evaluates relative errors against a reference trajectory.

    Weight matrices are assembled at the reference state of each step, and only
    once for coefficient models that do not depend on the state.
    """

    def __init__(self, mesh: FineMesh, model, reference):
        self.mesh = mesh
        self.model = model
        self.reference = reference
        self._const = None

    def weights(self, c_h):
        if self.model.is_constant:
            if self._const is None:
                self._const = (assemble_mass(self.mesh, self.model), assemble_stiffness(self.mesh, self.model))
            return self._const
        return assemble_mass(self.mesh, self.model, c_h), assemble_stiffness(self.mesh, self.model, c_h)

    def __call__(self, step: int, c_ms) -> tuple[float, float]:
        c_h = np.asarray(self.reference[step])
        M, A = self.weights(c_h)
        return relative_errors(c_ms, c_h, self.mesh, self.model, M=M, A=A)


@dataclass
class ErrorReport:
    rows: list = field(default_factory=list)
    metadata: dict = field(default_factory=dict)

    def add(self, step: int, time_s: float, dim: int, l2: float, h1: float) -> None:
        if l2 < 0 or h1 < 0:
            raise MetricsError("errors must be non-negative")
        self.rows.append(ErrorRow(int(step), float(time_s), int(dim), float(l2), float(h1)))

    @property
    def final(self) -> ErrorRow:
        return self.rows[-1]

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["step", "time_s", "dim", "L2a_pct", "H1a_pct"])
            for r in self.rows:
                w.writerow([r.step, repr(r.time_s), r.dim, f"{r.l2_pct:.10g}", f"{r.h1_pct:.10g}"])

    @classmethod
    def read_csv(cls, path) -> "ErrorReport":
        rep = cls()
        with open(path, newline="") as fh:
            for row in csv.DictReader(fh):
                rep.add(int(row["step"]), float(row["time_s"]), int(row["dim"]),
                        float(row["L2a_pct"]), float(row["H1a_pct"]))
        return rep
