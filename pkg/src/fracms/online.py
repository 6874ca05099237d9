"""Residual-driven online enrichment of the coarse space.

At scheduled steps the fine residual of the coarse step is localized to each
coarse neighborhood, its Riesz representative in the ``M + tau A`` inner
product becomes a new basis function, and the step is solved again.
"""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse.linalg as spla

from .coarse_solver import CoarseSolver, CoarseState
from .mesh import Neighborhood

log = logging.getLogger(__name__)


@dataclass(eq=False)
class ResidualFunctional:
    """Load vector of the local residual on the free dofs of a neighborhood."""

    neighborhood: int
    dofs: np.ndarray
    values: np.ndarray
    step: int = -1

    def __call__(self, v) -> float:
        return float(self.values @ np.asarray(v)[self.dofs])


@dataclass(eq=False)
class OnlineBasis:
    neighborhood: int
    dofs: np.ndarray
    values: np.ndarray
    eta: float

    def to_fine(self, n: int) -> np.ndarray:
        out = np.zeros(n)
        out[self.dofs] = self.values
        return out


@dataclass(frozen=True)
class EnrichmentPolicy:
    """When and how to add online basis functions.

    ``schedule`` is ``"every_k"`` (steps divisible by ``k``) or
    ``"warmup_then_every"`` (the first ``warmup`` steps, then every ``k``).
    ``theta=None`` enriches every neighborhood; otherwise the θ-rule picks the
    neighborhoods carrying that fraction of the squared indicators.
    """

    schedule: str = "warmup_then_every"
    k: int = 30
    warmup: int = 0
    theta: float | None = None
    replace_previous: bool = True
    iterations: int = 1

    def __post_init__(self):
        if self.schedule not in ("every_k", "warmup_then_every"):
            raise ValueError(f"unknown schedule {self.schedule!r}")
        if self.k < 1 or self.warmup < 0 or self.iterations < 0:
            raise ValueError("need k >= 1, warmup >= 0 and iterations >= 0")
        if self.theta is not None and not 0 < self.theta < 1:
            raise ValueError("theta must lie in (0, 1)")

    def is_update(self, n: int) -> bool:
        """Whether step ``n`` (1-based) is an enrichment step."""
        if self.schedule == "warmup_then_every" and n <= self.warmup:
            return True
        return n % self.k == 0


def free_dofs(nbhd: Neighborhood, dirichlet_mask) -> np.ndarray:
    """Nodes of the neighborhood that carry online functions: everything except
    the interface with the rest of the domain and prescribed nodes."""
    dofs = np.setdiff1d(nbhd.nodes, nbhd.interface_nodes, assume_unique=True)
    return dofs[~dirichlet_mask[dofs]]


def global_residual(c_prev, c_new, M, Q, tau: float, load=None) -> np.ndarray:
    """``tau F + M c_prev - (M + tau A) c_new`` on the fine grid."""
    g = M @ c_prev - Q @ c_new
    if load is not None:
        g = g + tau * load
    return g


def local_residual(g, nbhd: Neighborhood, dirichlet_mask, step: int = -1) -> ResidualFunctional:
    dofs = free_dofs(nbhd, dirichlet_mask)
    return ResidualFunctional(nbhd.center, dofs, np.asarray(g)[dofs].copy(), step)


def solve_online_basis(residual: ResidualFunctional, Q, factor=None) -> OnlineBasis:
    """Riesz representative of ``residual`` in the ``Q`` inner product on its dofs.

    ``factor`` is an optional callable solving with ``Q[dofs, dofs]``.
    """
    r = residual.values
    if not r.size or not np.any(r):
        return OnlineBasis(residual.neighborhood, residual.dofs, np.zeros_like(r), 0.0)
    if factor is None:
        factor = local_factor(Q, residual.dofs)
    phi = factor(r)
    Qii = Q[residual.dofs][:, residual.dofs]
    eta2 = float(phi @ (Qii @ phi))
    return OnlineBasis(residual.neighborhood, residual.dofs, phi, float(np.sqrt(max(eta2, 0.0))))


def local_factor(Q, dofs):
    Qii = Q[dofs][:, dofs].tocsc()
    return spla.splu(Qii).solve


def select_adaptive(indicators, theta: float) -> np.ndarray:
    """Smallest set of neighborhoods whose squared indicators reach ``theta`` of the total.

    Ties in the descending sort are broken by neighborhood index.
    """
    if not 0 < theta < 1:
        raise ValueError("theta must lie in (0, 1)")
    eta2 = np.asarray(indicators, dtype=float) ** 2
    total = eta2.sum()
    if total <= 0:
        return np.zeros(0, dtype=np.int64)
    order = np.lexsort((np.arange(len(eta2)), -eta2))
    csum = np.cumsum(eta2[order])
    # guard against the last partial sum rounding just below theta * total
    k = int(np.searchsorted(csum, theta * total * (1 - 1e-14))) + 1
    return np.sort(order[:min(k, len(order))])


def enrich(solver: CoarseSolver, bases, replace_previous: bool = False) -> None:
    """Append online rows to the solver's space; offline rows are never touched."""
    n = solver.mesh.n_nodes
    rows = [b.to_fine(n) if isinstance(b, OnlineBasis) else np.asarray(b, dtype=float) for b in bases]
    rows = [r for r in rows if np.any(r)]
    if replace_previous:
        solver.set_online(rows)
    else:
        solver.add_online(rows)


@dataclass
class IndicatorRow:
    step: int
    iteration: int
    neighborhood: int
    eta: float
    selected: bool
    dim: int


@dataclass
class EnrichmentRecord:
    step: int
    iteration: int
    dim_before: int
    dim_after: int
    n_added: int
    eta2_before: float
    eta2_after: float


@dataclass
class OnlineResult:
    states: list
    dims: list
    indicators: list = field(default_factory=list)
    enrichments: list = field(default_factory=list)

    @property
    def final(self) -> CoarseState:
        return self.states[-1]

    def write_indicator_log(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["step", "iteration", "neighborhood", "eta", "selected", "dim"])
            for r in self.indicators:
                w.writerow([r.step, r.iteration, r.neighborhood, repr(float(r.eta)), int(r.selected), r.dim])


class _Indicators:
    """Residual indicators for every neighborhood, caching local factorizations
    while the fine operator stays the same."""

    def __init__(self, solver: CoarseSolver, neighborhoods):
        self.solver = solver
        self.nbhds = list(neighborhoods)
        self.mask = solver.bc.mask
        self.dofs = [free_dofs(nb, self.mask) for nb in self.nbhds]
        self._Q = None
        self._factors = None

    def factors(self, Q):
        if Q is not self._Q:
            self._Q = Q
            self._factors = [local_factor(Q, d) if d.size else None for d in self.dofs]
        return self._factors

    def compute(self, prev: CoarseState, new: CoarseState, M, Q, step: int):
        s = self.solver
        load = s.source(new.t) if s.source is not None else None
        g = global_residual(prev.c, new.c, M, Q, s.tau, load)
        g[self.mask] = 0.0
        facs = self.factors(Q)
        out = []
        for nb, f in zip(self.nbhds, facs):
            res = local_residual(g, nb, self.mask, step)
            out.append(solve_online_basis(res, Q, f))
        return out


def run_online(solver: CoarseSolver, policy: EnrichmentPolicy, neighborhoods, c0, n_steps: int,
               observers=()) -> OnlineResult:
    """Coarse time stepping with scheduled online enrichment.

    At an update step the previous online functions are dropped first (when the
    policy says so) and the step is re-solved; each of the ``iterations``
    sweeps then computes indicators, adds the selected online functions and
    solves the step again.
    """
    ind = _Indicators(solver, neighborhoods)
    state = solver.initial_state(c0)
    result = OnlineResult([state], [solver.dim])
    for obs in observers:
        obs(0, state)
    for n in range(1, n_steps + 1):
        prev = state
        if policy.is_update(n) and policy.replace_previous and solver.n_online:
            solver.clear_online()
        state = solver.step(prev)
        if policy.is_update(n):
            bases = None
            for it in range(1, policy.iterations + 1):
                if bases is None:
                    _, _, M, Q = solver.last
                    bases = ind.compute(prev, state, M, Q, n)
                etas = np.array([b.eta for b in bases])
                sel = np.arange(len(bases)) if policy.theta is None else select_adaptive(etas, policy.theta)
                chosen = np.zeros(len(bases), dtype=bool)
                chosen[sel] = True
                chosen &= etas > 0
                dim0 = solver.dim
                for b, e, c in zip(bases, etas, chosen):
                    result.indicators.append(IndicatorRow(n, it, b.neighborhood, float(e), bool(c), dim0))
                if not chosen.any():
                    break
                enrich(solver, [b for b, c in zip(bases, chosen) if c])
                state = solver.step(prev)
                _, _, M, Q = solver.last
                after = ind.compute(prev, state, M, Q, n)
                eta2_after = float(sum(b.eta ** 2 for b in after))
                bases = after
                result.enrichments.append(EnrichmentRecord(
                    n, it, dim0, solver.dim, solver.dim - dim0, float((etas ** 2).sum()), eta2_after))
                log.info("step %d iteration %d: dim %d -> %d, sum eta^2 %.3e -> %.3e",
                         n, it, dim0, solver.dim, (etas ** 2).sum(), eta2_after)
        result.states.append(state)
        result.dims.append(solver.dim)
        for obs in observers:
            obs(n, state)
    return result
