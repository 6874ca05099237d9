"""Time stepping in the reduced space spanned by the rows of a coarse-to-fine operator."""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp

from .assembly import assemble_mass, assemble_stiffness, assemble_system
from .fine_solver import DirichletBC
from .mesh import FineMesh
from .offline import OfflineSpace

log = logging.getLogger(__name__)


class CoarseSolveError(RuntimeError):
    pass


@dataclass
class CoarseState:
    """Coarse coefficients and their fine-grid reconstruction.

    ``coeffs`` is ``None`` for the initial state, which is given on the fine grid.
    """

    t: float
    coeffs: np.ndarray | None
    c: np.ndarray

    @property
    def dim(self) -> int:
        return 0 if self.coeffs is None else len(self.coeffs)


def project(fine, R):
    """Dense symmetric ``R Q R^T`` for a square fine matrix ``Q``."""
    if fine.shape[0] != R.shape[1] or fine.shape[1] != R.shape[1]:
        raise ValueError(f"dimension mismatch: operator {R.shape} vs matrix {fine.shape}")
    K = R @ (fine @ R.T)
    K = K.toarray() if sp.issparse(K) else np.asarray(K)
    return 0.5 * (K + K.T)


def reconstruct(coeffs, R, lift=None):
    c = R.T @ np.asarray(coeffs, dtype=float)
    return c if lift is None else c + lift


def spd_solve(K, b):
    """Solve with Cholesky after Jacobi scaling; fall back to a truncated eigen-solve
    when the space is numerically rank deficient."""
    d = np.sqrt(np.abs(np.diag(K)))
    d[d == 0] = 1.0
    Ks = K / d[:, None] / d[None, :]
    bs = b / d
    try:
        y = la.cho_solve(la.cho_factor(Ks), bs)
    except la.LinAlgError:
        lam, V = la.eigh(Ks)
        if lam[-1] <= 0:
            raise CoarseSolveError("coarse system is not positive definite")
        keep = lam > 1e-12 * lam[-1]
        log.warning("coarse system rank deficient: condition estimate %.2e, dropped %d directions",
                    lam[-1] / max(lam[keep][0], 1e-300), int((~keep).sum()))
        y = V[:, keep] @ ((V[:, keep].T @ bs) / lam[keep])
    return y / d


def coarse_step(state: CoarseState, R, mesh: FineMesh, model, bc: DirichletBC, tau: float, source=None) -> CoarseState:
    """Galerkin step in ``span(R)`` with coefficients frozen at the reconstructed state.

    Boundary values enter through the lift (boundary data extended by zero);
    the coarse unknowns describe the homogeneous remainder.
    """
    M = assemble_mass(mesh, model, state.c)
    A = assemble_stiffness(mesh, model, state.c)
    Q = assemble_system(M, A, tau)
    return _galerkin(state, _free_rows(R, bc), M, Q, bc, tau, source)


def _free_rows(R, bc):
    if not bc.mask.any():
        return R.tocsr()
    return (R @ sp.diags((~bc.mask).astype(float))).tocsr()


def _load(state, M, Q, bc, tau, source):
    t_new = state.t + tau
    b = M @ state.c - Q @ bc.lift()
    if source is not None:
        b = b + tau * source(t_new)
    return t_new, b


def _galerkin(state, R, M, Q, bc, tau, source, factor=None):
    t_new, b = _load(state, M, Q, bc, tau, source)
    x = spd_solve(project(Q, R), R @ b) if factor is None else factor(R @ b)
    return CoarseState(t_new, x, reconstruct(x, R, bc.lift()))


class CoarseSolver:
    """Stateful wrapper that caches operators and manages online rows.

    For coefficient models independent of the state, fine and coarse matrices
    are assembled and factored once per space.
    """

    def __init__(self, mesh: FineMesh, model, bc: DirichletBC, tau: float, space: OfflineSpace | sp.spmatrix,
                 source=None):
        self.mesh = mesh
        self.model = model
        self.bc = bc
        self.tau = tau
        self.source = source
        R0 = space.R0 if isinstance(space, OfflineSpace) else sp.csr_matrix(space)
        self.offline = _free_rows(R0, bc)
        self.online = sp.csr_matrix((0, mesh.n_nodes))
        self._R = None
        self._fine = None
        self._factor = None
        self.last = None

    @property
    def R(self) -> sp.csr_matrix:
        if self._R is None:
            self._R = sp.vstack([self.offline, self.online]).tocsr() if self.online.shape[0] else self.offline
        return self._R

    @property
    def dim(self) -> int:
        return self.R.shape[0]

    @property
    def n_online(self) -> int:
        return self.online.shape[0]

    def _invalidate(self):
        self._R = None
        self._factor = None

    def set_online(self, rows) -> None:
        """Replace all online rows; ``rows`` is a sequence of fine vectors or a sparse matrix."""
        if sp.issparse(rows):
            block = rows.tocsr()
        elif len(rows):
            block = sp.csr_matrix(np.vstack(rows))
        else:
            block = sp.csr_matrix((0, self.mesh.n_nodes))
        self.online = _free_rows(block, self.bc)
        self._invalidate()

    def add_online(self, rows) -> None:
        if not len(rows):
            return
        block = rows.tocsr() if sp.issparse(rows) else sp.csr_matrix(np.vstack(rows))
        self.online = sp.vstack([self.online, _free_rows(block, self.bc)]).tocsr()
        self._invalidate()

    def clear_online(self) -> None:
        self.set_online([])

    def operators(self, c):
        """Fine ``(M, A, Q)`` frozen at ``c``."""
        if self.model.is_constant and self._fine is not None:
            return self._fine
        M = assemble_mass(self.mesh, self.model, c)
        A = assemble_stiffness(self.mesh, self.model, c)
        ops = (M, A, assemble_system(M, A, self.tau))
        if self.model.is_constant:
            self._fine = ops
        return ops

    def initial_state(self, c0) -> CoarseState:
        return CoarseState(0.0, None, np.array(c0, dtype=float))

    def step(self, state: CoarseState) -> CoarseState:
        M, A, Q = self.operators(state.c)
        R = self.R
        factor = None
        if self.model.is_constant:
            if self._factor is None:
                self._factor = _cached_factor(project(Q, R))
            factor = self._factor
        new = _galerkin(state, R, M, Q, self.bc, self.tau, self.source, factor)
        self.last = (state, new, M, Q)
        return new

    def run(self, c0, n_steps: int, observers=()):
        state = self.initial_state(c0)
        for obs in observers:
            obs(0, state)
        for n in range(1, n_steps + 1):
            state = self.step(state)
            for obs in observers:
                obs(n, state)
        return state


def _cached_factor(K):
    d = np.sqrt(np.abs(np.diag(K)))
    d[d == 0] = 1.0
    Ks = K / d[:, None] / d[None, :]
    try:
        cf = la.cho_factor(Ks)
    except la.LinAlgError:
        return lambda b: spd_solve(K, b)
    return lambda b: la.cho_solve(cf, b / d) / d
