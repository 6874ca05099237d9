"""P1 mass and stiffness assembly for the discrete fracture model.

Every matrix is the sum of a 2D part over triangles and an aperture-scaled 1D
part over fracture edges. Coefficients are evaluated once per element at the
barycenter, with the state interpolated linearly.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from . import kernels
from .mesh import FineMesh, Region
from .physics import eval_fracture_coeffs, eval_matrix_coeffs

_P1_MASS = (np.ones((3, 3)) + np.eye(3)) / 12.0
_EDGE_MASS = np.array([[2.0, 1.0], [1.0, 2.0]]) / 6.0
_EDGE_STIFF = np.array([[1.0, -1.0], [-1.0, 1.0]])


@dataclass(eq=False)
class Geometry:
    areas: np.ndarray
    grads: np.ndarray
    tri_stiff: np.ndarray
    tri_mass: np.ndarray
    edge_len: np.ndarray
    edge_stiff: np.ndarray
    edge_mass: np.ndarray
    indptr: np.ndarray
    indices: np.ndarray
    tri_slots: np.ndarray
    edge_slots: np.ndarray

    @property
    def nnz(self) -> int:
        return len(self.indices)


def geometry(mesh: FineMesh) -> Geometry:
    """Element geometry and the global sparsity pattern, cached on the mesh."""
    geo = mesh.__dict__.get("_geometry")
    if geo is not None:
        return geo
    P = mesh.nodes[mesh.triangles]
    e1 = P[:, 1] - P[:, 0]
    e2 = P[:, 2] - P[:, 0]
    det = e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0]
    areas = 0.5 * det
    # gradients of the barycentric coordinates: rotate opposite edges
    opp = np.stack([P[:, 2] - P[:, 1], P[:, 0] - P[:, 2], P[:, 1] - P[:, 0]], axis=1)
    grads = np.stack([-opp[..., 1], opp[..., 0]], axis=-1) / det[:, None, None]
    tri_stiff = areas[:, None, None] * np.einsum("tik,tjk->tij", grads, grads)
    tri_mass = areas[:, None, None] * _P1_MASS

    F = mesh.fracture_edges
    d = mesh.apertures
    L = np.linalg.norm(mesh.nodes[F[:, 1]] - mesh.nodes[F[:, 0]], axis=1) if len(F) else np.zeros(0)
    edge_stiff = (d / np.where(L > 0, L, 1.0))[:, None, None] * _EDGE_STIFF
    edge_mass = (d * L)[:, None, None] * _EDGE_MASS

    n = mesh.n_nodes
    T = mesh.triangles
    rows = np.concatenate([np.repeat(T, 3, axis=1).ravel(), np.repeat(F, 2, axis=1).ravel()])
    cols = np.concatenate([np.tile(T, (1, 3)).ravel(), np.tile(F, (1, 2)).ravel()])
    keys = rows * n + cols
    uniq = np.unique(keys)
    tri_slots = np.searchsorted(uniq, keys[: 9 * len(T)]).reshape(-1, 9)
    edge_slots = np.searchsorted(uniq, keys[9 * len(T):]).reshape(-1, 4)
    counts = np.bincount(uniq // n, minlength=n)
    indptr = np.concatenate([[0], np.cumsum(counts)])

    geo = Geometry(
        areas, grads,
        np.ascontiguousarray(tri_stiff.reshape(-1, 9)),
        np.ascontiguousarray(tri_mass.reshape(-1, 9)),
        L,
        np.ascontiguousarray(edge_stiff.reshape(-1, 4)),
        np.ascontiguousarray(edge_mass.reshape(-1, 4)),
        indptr.astype(np.int64), (uniq % n).astype(np.int64),
        np.ascontiguousarray(tri_slots, dtype=np.int64),
        np.ascontiguousarray(edge_slots, dtype=np.int64),
    )
    mesh.__dict__["_geometry"] = geo
    return geo


def element_states(mesh: FineMesh, c):
    """Linear interpolation of nodal ``c`` to triangle barycenters and edge midpoints."""
    c = np.ascontiguousarray(c, dtype=float)
    if c.shape != (mesh.n_nodes,):
        raise ValueError(f"state has shape {c.shape}, expected ({mesh.n_nodes},)")
    c_tri = kernels.element_average(mesh.triangles, c)
    c_edge = kernels.element_average(mesh.fracture_edges, c) if mesh.n_fractures else np.zeros(0)
    return c_tri, c_edge


def element_coefficients(mesh: FineMesh, model, c=None):
    """Per-element ``(a_m, b_m)`` on triangles and ``(a_f, b_f)`` on fracture edges."""
    if model.is_constant:
        t, f = mesh.n_triangles, mesh.n_fractures
        return (
            (np.full(t, model.a_m), np.full(t, model.b_m)),
            (np.full(f, model.a_f), np.full(f, model.b_f)),
        )
    if c is None:
        raise ValueError("a state is required for nonlinear coefficients")
    c_tri, c_edge = element_states(mesh, c)
    return eval_matrix_coeffs(model, c_tri, mesh.material), eval_fracture_coeffs(model, c_edge)


def assemble_elements(mesh: FineMesh, kind: str, tri_coef, edge_coef, region: Region | None = None) -> sp.csr_matrix:
    """Assemble ``sum_e coef_e * local_e`` for ``kind`` in {"mass", "stiffness"}.

    Without a region the result is the global ``N_f x N_f`` matrix. With a
    region it is the matrix of that region's triangles and fracture segments,
    indexed by ``region.nodes``.
    """
    geo = geometry(mesh)
    if kind == "mass":
        tl, el = geo.tri_mass, geo.edge_mass
    elif kind == "stiffness":
        tl, el = geo.tri_stiff, geo.edge_stiff
    else:
        raise ValueError(f"unknown matrix kind {kind!r}")
    tri_coef = np.ascontiguousarray(np.broadcast_to(tri_coef, (mesh.n_triangles,)), dtype=float)
    edge_coef = np.ascontiguousarray(np.broadcast_to(edge_coef, (mesh.n_fractures,)), dtype=float)

    if region is None:
        n = mesh.n_nodes
        data = kernels.scatter_add(geo.tri_slots, tri_coef, tl, geo.nnz)
        if mesh.n_fractures:
            data += kernels.scatter_add(geo.edge_slots, edge_coef, el, geo.nnz)
        out = sp.csr_matrix((data, geo.indices, geo.indptr), shape=(n, n))
        out.has_sorted_indices = True
        return out

    nodes = region.nodes
    if nodes.size and (nodes[0] < 0 or nodes[-1] >= mesh.n_nodes):
        raise IndexError("region nodes outside the mesh")
    tris, segs = region.triangles, region.fracture_segments
    lt = np.searchsorted(nodes, mesh.triangles[tris])
    le = np.searchsorted(nodes, mesh.fracture_edges[segs])
    rows = np.concatenate([np.repeat(lt, 3, axis=1).ravel(), np.repeat(le, 2, axis=1).ravel()])
    cols = np.concatenate([np.tile(lt, (1, 3)).ravel(), np.tile(le, (1, 2)).ravel()])
    vals = np.concatenate([(tri_coef[tris, None] * tl[tris]).ravel(), (edge_coef[segs, None] * el[segs]).ravel()])
    m = len(nodes)
    return sp.coo_matrix((vals, (rows, cols)), shape=(m, m)).tocsr()


def assemble_mass(mesh: FineMesh, model, c=None, region: Region | None = None, weight: str = "a") -> sp.csr_matrix:
    """DFM mass matrix weighted by the storage coefficients (``weight="a"``)
    or by the transport coefficients (``weight="b"``)."""
    (a_m, b_m), (a_f, b_f) = element_coefficients(mesh, model, c)
    if weight == "a":
        return assemble_elements(mesh, "mass", a_m, a_f, region)
    if weight == "b":
        return assemble_elements(mesh, "mass", b_m, b_f, region)
    raise ValueError("weight must be 'a' or 'b'")


def assemble_stiffness(mesh: FineMesh, model, c=None, region: Region | None = None) -> sp.csr_matrix:
    (_, b_m), (_, b_f) = element_coefficients(mesh, model, c)
    return assemble_elements(mesh, "stiffness", b_m, b_f, region)


def assemble_system(M, A, tau: float):
    """``Q = M + tau A``."""
    if M.shape != A.shape:
        raise ValueError(f"dimension mismatch: {M.shape} vs {A.shape}")
    if tau < 0:
        raise ValueError("time step must be non-negative")
    return (M + tau * A).tocsr()


def apply_dirichlet(system, rhs, mask, values):
    """Symmetric elimination of the nodes flagged in ``mask``.

    Constrained rows and columns are replaced by the identity and the load of
    the prescribed values is moved to the right-hand side.
    """
    mask = np.asarray(mask, dtype=bool)
    n = system.shape[0]
    rhs = np.asarray(rhs, dtype=float)
    values = np.broadcast_to(np.asarray(values, dtype=float), mask.shape) if np.ndim(values) == 0 else np.asarray(values, dtype=float)
    if mask.shape != (n,) or values.shape != (n,) or rhs.shape != (n,):
        raise ValueError("mask, values and rhs must have one entry per row")
    if not mask.any():
        return system, rhs.copy()
    lifted = np.where(mask, values, 0.0)
    out_rhs = rhs - system @ lifted
    out_rhs[mask] = lifted[mask]
    keep = sp.diags((~mask).astype(float))
    out = (keep @ system @ keep + sp.diags(mask.astype(float))).tocsr()
    return out, out_rhs


class FrozenCoefficients:
    """Element coefficients evaluated once at a state, reused for many regions."""

    def __init__(self, mesh: FineMesh, model, c=None):
        self.mesh = mesh
        self.model = model
        (self.a_m, self.b_m), (self.a_f, self.b_f) = element_coefficients(mesh, model, c)

    def mass(self, region: Region | None = None, weight: str = "a"):
        if weight == "a":
            return assemble_elements(self.mesh, "mass", self.a_m, self.a_f, region)
        if weight == "b":
            return assemble_elements(self.mesh, "mass", self.b_m, self.b_f, region)
        raise ValueError("weight must be 'a' or 'b'")

    def stiffness(self, region: Region | None = None):
        return assemble_elements(self.mesh, "stiffness", self.b_m, self.b_f, region)

    def gradient_weighted_mass(self, chi, region: Region | None = None):
        """Mass matrix weighted by ``b |grad chi|^2`` (tangential derivative on fractures)."""
        geo = geometry(self.mesh)
        chi = np.asarray(chi, dtype=float)
        g = np.einsum("tik,ti->tk", geo.grads, chi[self.mesh.triangles])
        w_tri = self.b_m * (g ** 2).sum(axis=1)
        F = self.mesh.fracture_edges
        if len(F):
            ds = (chi[F[:, 1]] - chi[F[:, 0]]) / geo.edge_len
            w_edge = self.b_f * ds ** 2
        else:
            w_edge = np.zeros(0)
        return assemble_elements(self.mesh, "mass", w_tri, w_edge, region)
