"""Reference fine-scale solver: implicit Euler with coefficients lagged one step."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np
import scipy.sparse.linalg as spla

from .assembly import apply_dirichlet, assemble_mass, assemble_stiffness, assemble_system
from .mesh import FineMesh

log = logging.getLogger(__name__)

DAY = 86400.0
YEAR = 365.0 * DAY

DIRECT_SOLVE_LIMIT = 200_000
CG_RTOL = 1e-10


class SolverError(RuntimeError):
    pass


@dataclass(frozen=True)
class TimeGrid:
    tau: float
    t_max: float

    def __post_init__(self):
        if self.tau <= 0 or self.t_max < 0:
            raise ValueError("need tau > 0 and t_max >= 0")

    @property
    def n_steps(self) -> int:
        return math.ceil(self.t_max / self.tau - 1e-9)

    def time(self, n: int) -> float:
        return n * self.tau


@dataclass
class DirichletBC:
    """Prescribed values on the nodes flagged by ``mask``; zero flux elsewhere."""

    mask: np.ndarray
    values: np.ndarray

    @classmethod
    def none(cls, n: int) -> "DirichletBC":
        return cls(np.zeros(n, dtype=bool), np.zeros(n))

    @classmethod
    def from_markers(cls, mesh: FineMesh, prescribed: dict) -> "DirichletBC":
        mask = np.zeros(mesh.n_nodes, dtype=bool)
        values = np.zeros(mesh.n_nodes)
        for marker, value in prescribed.items():
            sel = mesh.markers == marker
            mask |= sel
            values[sel] = value
        return cls(mask, values)

    def lift(self) -> np.ndarray:
        """Boundary data extended by zero into the domain."""
        return np.where(self.mask, self.values, 0.0)


@dataclass
class FineState:
    t: float
    c: np.ndarray


class LinearSolver:
    """Factor once, solve many; sparse LU at desk scale, CG above it."""

    def __init__(self, Q):
        self.Q = Q.tocsc()
        self.n = Q.shape[0]
        self.tol = None if self.n <= DIRECT_SOLVE_LIMIT else CG_RTOL
        self._lu = spla.splu(self.Q) if self.tol is None else None

    def solve(self, b):
        if self._lu is not None:
            x = self._lu.solve(b)
            # one refinement sweep keeps conserved sums accurate for stiff, high-contrast systems
            x += self._lu.solve(b - self.Q @ x)
        else:
            x, info = spla.cg(self.Q, b, rtol=self.tol, maxiter=10 * self.n)
            if info != 0:
                res = np.linalg.norm(self.Q @ x - b) / max(np.linalg.norm(b), 1e-300)
                raise SolverError(f"CG did not converge (relative residual {res:.3e})")
        if not np.all(np.isfinite(x)):
            raise SolverError("linear solve produced non-finite values")
        return x


def _operators(mesh, model, c, tau):
    M = assemble_mass(mesh, model, c)
    A = assemble_stiffness(mesh, model, c)
    return M, A, assemble_system(M, A, tau)


def step(state: FineState, mesh: FineMesh, model, bc: DirichletBC, tau: float,
         source: Callable[[float], np.ndarray] | None = None) -> FineState:
    """One implicit Euler step ``(M + tau A) c_new = M c`` with M, A frozen at ``state.c``.

    ``source(t)`` returns a load vector (integrals of f against the hat
    functions) evaluated at the new time level.
    """
    M, _, Q = _operators(mesh, model, state.c, tau)
    return _advance(state, M, Q, bc, tau, source)


def _advance(state, M, Q, bc, tau, source, solver=None):
    t_new = state.t + tau
    rhs = M @ state.c
    if source is not None:
        rhs = rhs + tau * source(t_new)
    Qd, rhs = apply_dirichlet(Q, rhs, bc.mask, bc.values)
    if solver is None:
        solver = LinearSolver(Qd)
    return FineState(t_new, solver.solve(rhs))


def run(c0, mesh: FineMesh, model, bc: DirichletBC, grid: TimeGrid,
        observers: Sequence[Callable] = (), source=None) -> list[FineState]:
    """March ``grid.n_steps`` steps from ``c0``.

    Observers are called as ``obs(n, t, c)`` for every state including the
    initial one; ``c`` must not be modified.
    """
    state = FineState(0.0, np.array(c0, dtype=float))
    traj = [state]
    _notify(observers, 0, state)
    cached = None
    for n in range(1, grid.n_steps + 1):
        if model.is_constant:
            if cached is None:
                M, _, Q = _operators(mesh, model, None, grid.tau)
                Qd, _ = apply_dirichlet(Q, np.zeros(mesh.n_nodes), bc.mask, bc.values)
                cached = (M, Q, LinearSolver(Qd))
            M, Q, solver = cached
            state = _advance(state, M, Q, bc, grid.tau, source, solver)
        else:
            state = step(state, mesh, model, bc, grid.tau, source)
        traj.append(state)
        _notify(observers, n, state)
    return traj


def _notify(observers: Iterable[Callable], n, state):
    view = state.c.view()
    view.flags.writeable = False
    for obs in observers:
        obs(n, state.t, view)
