"""Offline multiscale space: local snapshots, spectral reduction, partition of
unity and the global coarse-to-fine operator ``R0``.
"""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .assembly import FrozenCoefficients
from .mesh import (
    CoarseGrid,
    FineMesh,
    Neighborhood,
    OversampledNeighborhood,
    Region,
    build_neighborhoods,
    cell_region,
    oversample,
)

log = logging.getLogger(__name__)

RANK_TOL = 1e-10


@dataclass(eq=False)
class SnapshotSpace:
    region: Neighborhood
    vectors: np.ndarray
    kind: str = "full"
    layers: int = 0
    seed: int | None = None

    @property
    def neighborhood(self) -> int:
        return self.region.center

    @property
    def nodes(self) -> np.ndarray:
        return self.region.nodes

    @property
    def count(self) -> int:
        return self.vectors.shape[1]


@dataclass(eq=False)
class LocalSpectralResult:
    region: Neighborhood
    eigenvalues: np.ndarray
    coords: np.ndarray
    functions: np.ndarray
    rank: int
    m_off: int

    @property
    def selected(self) -> np.ndarray:
        """The first ``m_off`` offline functions on the neighborhood nodes."""
        return self.functions[:, : self.m_off]


@dataclass(eq=False)
class PartitionOfUnity:
    chi: sp.csr_matrix

    def __getitem__(self, i) -> np.ndarray:
        return self.chi[i].toarray().ravel()

    def __len__(self):
        return self.chi.shape[0]


@dataclass(eq=False)
class OfflineSpace:
    R0: sp.csr_matrix
    owner: np.ndarray
    m_off: np.ndarray
    eigenvalues: list = field(default_factory=list)

    @property
    def n_coarse(self) -> int:
        return len(self.m_off)

    @property
    def dim(self) -> int:
        return self.R0.shape[0]

    def save(self, path) -> None:
        coo = self.R0.tocoo()
        np.savez(
            path,
            header=np.array([self.n_coarse, self.dim, self.R0.shape[1]], dtype=np.int64),
            m_off=self.m_off.astype(np.int64),
            owner=self.owner.astype(np.int64),
            row=coo.row.astype(np.int64),
            col=coo.col.astype(np.int64),
            data=coo.data,
        )

    @classmethod
    def load(cls, path) -> "OfflineSpace":
        with np.load(path) as z:
            n, nc, nf = (int(v) for v in z["header"])
            R0 = sp.csr_matrix((z["data"], (z["row"], z["col"])), shape=(nc, nf))
            space = cls(R0, z["owner"].copy(), z["m_off"].copy())
        if space.n_coarse != n:
            raise ValueError(f"corrupt offline space file {Path(path)}")
        return space


def _harmonic_extension(coeffs: FrozenCoefficients, region: Region, data: np.ndarray) -> np.ndarray:
    """Discrete DFM-harmonic functions on ``region`` with boundary values ``data``."""
    A = coeffs.stiffness(region)
    b = region.local_index(region.boundary_nodes)
    inner = np.setdiff1d(np.arange(len(region.nodes)), b, assume_unique=True)
    X = np.zeros((len(region.nodes), data.shape[1]))
    X[b] = data
    if inner.size:
        A = A.tocsr()
        A_ii = A[inner][:, inner].tocsc()
        rhs = -(A[inner][:, b] @ data)
        X[inner] = spla.splu(A_ii).solve(np.asarray(rhs))
    return X


def _restrict(nbhd, X):
    if isinstance(nbhd, OversampledNeighborhood):
        return nbhd.base, X[nbhd.base_index]
    return nbhd, X


def snapshot_full(nbhd, mesh: FineMesh, model, c_ref=None, coeffs: FrozenCoefficients | None = None) -> SnapshotSpace:
    """One harmonic extension per boundary node, with unit data at that node.

    ``nbhd`` may be oversampled, in which case the extensions are computed on
    the extended region and restricted to the base neighborhood.
    """
    coeffs = coeffs or FrozenCoefficients(mesh, model, c_ref)
    nb = len(nbhd.boundary_nodes)
    X = _harmonic_extension(coeffs, nbhd, np.eye(nb))
    base, X = _restrict(nbhd, X)
    return SnapshotSpace(base, X, "full", getattr(nbhd, "layers", 0))


def snapshot_randomized(nbhd_plus, mesh: FineMesh, model, c_ref=None, M_i: int = 24, seed: int = 0,
                        boundary_data=None, coeffs: FrozenCoefficients | None = None,
                        include_constant: bool = True) -> SnapshotSpace:
    """``M_i`` harmonic extensions with i.i.d. standard normal boundary values.

    The generator is seeded with ``(seed, center node)``, so every neighborhood
    draws the same noise regardless of processing order. With
    ``include_constant`` the first boundary vector is all ones, which puts the
    constant function exactly into the snapshot space. Without it a few dozen
    noise vectors reproduce constants only to 10-60%, and the multiscale space
    then misses the partition of unity itself.
    """
    if M_i < 1:
        raise ValueError("M_i must be at least 1")
    coeffs = coeffs or FrozenCoefficients(mesh, model, c_ref)
    nb = len(nbhd_plus.boundary_nodes)
    if boundary_data is None:
        rng = np.random.default_rng([seed, nbhd_plus.center])
        boundary_data = rng.standard_normal((nb, M_i))
        if include_constant:
            boundary_data[:, 0] = 1.0
    else:
        boundary_data = np.asarray(boundary_data, dtype=float)
        M_i = boundary_data.shape[1]
    n_inner = len(nbhd_plus.nodes) - nb
    if M_i > n_inner:
        warnings.warn(f"M_i={M_i} exceeds the {n_inner} interior dofs; snapshot space is rank deficient")
    X = _harmonic_extension(coeffs, nbhd_plus, boundary_data)
    base, X = _restrict(nbhd_plus, X)
    return SnapshotSpace(base, X, "randomized", getattr(nbhd_plus, "layers", 0), seed)


def reduced_generalized_eigh(A, S, rank_tol: float = RANK_TOL):
    """Solve ``A x = lam S x`` on the numerically nonsingular part of ``S``.

    Directions whose ``S``-norm falls below ``rank_tol`` times the largest are
    dropped. Returns ascending eigenvalues and ``S``-orthonormal eigenvectors.
    Both matrices are Jacobi scaled first, which matters for snapshots whose
    weights differ by many orders of magnitude across matrix and fractures.
    """
    A = 0.5 * (A + A.T)
    S = 0.5 * (S + S.T)
    s = np.sqrt(np.abs(np.diag(S)))
    s[s == 0] = 1.0
    A = A / s[:, None] / s[None, :]
    S = S / s[:, None] / s[None, :]
    d, V = la.eigh(S)
    keep = d > rank_tol * d.max()
    T = V[:, keep] / np.sqrt(d[keep])
    lam, Y = la.eigh(T.T @ A @ T)
    return lam, (T @ Y) / s[:, None]


def local_spectral(snapshots: SnapshotSpace, mesh: FineMesh, model, c_ref=None, M_off: int = 4,
                   coeffs: FrozenCoefficients | None = None, variant: str = "standard",
                   tau: float | None = None, chi=None) -> LocalSpectralResult:
    """Spectral reduction of a snapshot space.

    ``variant="standard"`` pairs the local stiffness with the b-weighted mass.
    ``variant="tau"`` pairs ``M + tau A`` with the mass weighted by
    ``tau b |grad chi|^2`` (needs ``tau`` and the partition function ``chi``).
    """
    coeffs = coeffs or FrozenCoefficients(mesh, model, c_ref)
    region = snapshots.region
    R = snapshots.vectors
    if variant == "standard":
        A = coeffs.stiffness(region)
        S = coeffs.mass(region, weight="b")
    elif variant == "tau":
        if tau is None or chi is None:
            raise ValueError("the tau variant needs tau and chi")
        A = coeffs.mass(region) + tau * coeffs.stiffness(region)
        S = tau * coeffs.gradient_weighted_mass(chi, region)
    else:
        raise ValueError(f"unknown eigenproblem variant {variant!r}")
    A_off = R.T @ (A @ R)
    S_off = R.T @ (S @ R)
    lam, Psi = reduced_generalized_eigh(A_off, S_off)
    rank = len(lam)
    if M_off > rank:
        log.warning("neighborhood %d: M_off=%d exceeds snapshot rank %d", region.center, M_off, rank)
    return LocalSpectralResult(region, lam, Psi, R @ Psi, rank, min(M_off, rank))


def partition_of_unity(grid: CoarseGrid, mesh: FineMesh, model, c_ref=None,
                       coeffs: FrozenCoefficients | None = None) -> PartitionOfUnity:
    """Cell-wise DFM-harmonic extension of the bilinear hat boundary data."""
    coeffs = coeffs or FrozenCoefficients(mesh, model, c_ref)
    rows, cols, vals = [], [], []
    for k in range(grid.cell_count):
        region = cell_region(grid, mesh, k)
        x0, y0, x1, y1 = grid.cell_box(k)
        pts = mesh.nodes[region.boundary_nodes]
        corners = grid.cells[k]
        data = np.empty((len(pts), 4))
        for j, v in enumerate(corners):
            xc, yc = grid.vertices[v]
            hx = np.clip(1.0 - np.abs(pts[:, 0] - xc) / (x1 - x0), 0.0, 1.0)
            hy = np.clip(1.0 - np.abs(pts[:, 1] - yc) / (y1 - y0), 0.0, 1.0)
            data[:, j] = hx * hy
        X = _harmonic_extension(coeffs, region, data)
        for j, v in enumerate(corners):
            rows.append(np.full(len(region.nodes), v))
            cols.append(region.nodes)
            vals.append(X[:, j])
    rows, cols, vals = np.concatenate(rows), np.concatenate(cols), np.concatenate(vals)
    # nodes shared by neighbouring cells carry identical boundary data; keep one copy
    keys = rows * mesh.n_nodes + cols
    _, first = np.unique(keys, return_index=True)
    chi = sp.csr_matrix((vals[first], (rows[first], cols[first])), shape=(grid.node_count, mesh.n_nodes))
    chi.eliminate_zeros()
    return PartitionOfUnity(chi)


def build_offline_space(grid: CoarseGrid, mesh: FineMesh, spectral_results, pou: PartitionOfUnity) -> OfflineSpace:
    """Stack ``chi_i * psi_k`` for every neighborhood into the rows of ``R0``."""
    rows, cols, vals, owner, m_off, eigs = [], [], [], [], [], []
    r = 0
    for res in sorted(spectral_results, key=lambda s: s.region.center):
        i = res.region.center
        nodes = res.region.nodes
        chi_i = pou.chi[i].toarray().ravel()[nodes]
        for k in range(res.m_off):
            v = chi_i * res.functions[:, k]
            nz = v != 0
            rows.append(np.full(int(nz.sum()), r))
            cols.append(nodes[nz])
            vals.append(v[nz])
            owner.append(i)
            r += 1
        m_off.append(res.m_off)
        eigs.append(res.eigenvalues)
    if len(m_off) != grid.node_count:
        raise ValueError("one spectral result per coarse node is required")
    R0 = sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(r, mesh.n_nodes)
    )
    return OfflineSpace(R0, np.array(owner, dtype=np.int64), np.array(m_off, dtype=np.int64), eigs)


@dataclass(eq=False)
class OfflineBuild:
    space: OfflineSpace
    neighborhoods: list
    pou: PartitionOfUnity
    spectral: list
    snapshot_counts: np.ndarray
    full_counts: np.ndarray

    @property
    def snapshot_ratio(self) -> float:
        """Snapshots used relative to the full boundary-node count of the generation regions."""
        return float(self.snapshot_counts.sum() / self.full_counts.sum())


def construct_offline_space(mesh: FineMesh, grid: CoarseGrid, model, c_ref=None, M_off=4,
                            snapshots: str = "full", M_i: int = 24, layers: int = 0, seed: int = 0,
                            variant: str = "standard", tau: float | None = None,
                            include_constant: bool = True) -> OfflineBuild:
    """Run the whole offline stage with coefficients frozen at ``c_ref``.

    ``M_off`` is an int or a per-coarse-node sequence.
    """
    coeffs = FrozenCoefficients(mesh, model, c_ref)
    nbhds = build_neighborhoods(grid, mesh)
    pou = partition_of_unity(grid, mesh, model, c_ref, coeffs=coeffs)
    m_off = np.broadcast_to(np.asarray(M_off, dtype=np.int64), (len(nbhds),))
    results, used, full = [], [], []
    for nb, m in zip(nbhds, m_off):
        region = oversample(nb, layers, mesh) if layers else nb
        if snapshots == "full":
            snap = snapshot_full(region, mesh, model, coeffs=coeffs)
        elif snapshots == "randomized":
            snap = snapshot_randomized(region, mesh, model, M_i=M_i, seed=seed, coeffs=coeffs,
                                       include_constant=include_constant)
        else:
            raise ValueError(f"unknown snapshot kind {snapshots!r}")
        chi = pou[nb.center] if variant == "tau" else None
        results.append(local_spectral(snap, mesh, model, M_off=int(m), coeffs=coeffs, variant=variant, tau=tau, chi=chi))
        used.append(snap.count)
        full.append(len(region.boundary_nodes))
    space = build_offline_space(grid, mesh, results, pou)
    return OfflineBuild(space, nbhds, pou, results, np.array(used), np.array(full))
