"""Fine triangular meshes with embedded fracture edges, rectangular coarse grids
and coarse neighborhoods.

A fine node carries one degree of freedom shared by the matrix triangles and any
fracture edge passing through it. Fractures are chains of mesh edges with an
aperture attached per edge.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Sequence

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import dijkstra

INTERIOR, LEFT, RIGHT, BOTTOM, TOP = 0, 1, 2, 3, 4


class MeshError(ValueError):
    """Raised when a mesh or a mesh/coarse-grid pair is inconsistent."""


@dataclass(eq=False)
class FineMesh:
    nodes: np.ndarray
    triangles: np.ndarray
    fracture_edges: np.ndarray
    fracture_ids: np.ndarray
    apertures: np.ndarray
    markers: np.ndarray
    material: np.ndarray | None = None

    def __post_init__(self):
        self.nodes = np.ascontiguousarray(self.nodes, dtype=float).reshape(-1, 2)
        self.triangles = np.ascontiguousarray(self.triangles, dtype=np.int64).reshape(-1, 3)
        self.fracture_edges = np.ascontiguousarray(self.fracture_edges, dtype=np.int64).reshape(-1, 2)
        self.fracture_ids = np.ascontiguousarray(self.fracture_ids, dtype=np.int64).ravel()
        self.apertures = np.ascontiguousarray(self.apertures, dtype=float).ravel()
        self.markers = np.ascontiguousarray(self.markers, dtype=np.int64).ravel()
        if self.material is None:
            self.material = np.zeros(len(self.triangles), dtype=np.int64)
        else:
            self.material = np.ascontiguousarray(self.material, dtype=np.int64).ravel()
        self._validate()

    def _validate(self):
        n = len(self.nodes)
        if len(self.markers) != n:
            raise MeshError("one boundary marker per node is required")
        if len(self.material) != len(self.triangles):
            raise MeshError("one material tag per triangle is required")
        nf = len(self.fracture_edges)
        if not (len(self.fracture_ids) == nf == len(self.apertures)):
            raise MeshError("fracture edge, id and aperture arrays differ in length")
        for name, idx in (("triangle", self.triangles), ("fracture", self.fracture_edges)):
            if idx.size and (idx.min() < 0 or idx.max() >= n):
                raise MeshError(f"{name} node index out of range")
        if nf and np.any(self.apertures <= 0):
            raise MeshError("fracture apertures must be positive")

        area2 = _signed_area2(self.nodes, self.triangles)
        scale = max(np.ptp(self.nodes[:, 0]), np.ptp(self.nodes[:, 1]), 1e-300) ** 2
        if np.any(np.abs(area2) <= 1e-14 * scale):
            raise MeshError("degenerate triangle")
        flip = area2 < 0
        if flip.any():
            self.triangles[flip] = self.triangles[flip][:, [0, 2, 1]]

        if nf:
            keys = _edge_keys(np.sort(self.fracture_edges, axis=1), n)
            pos = np.searchsorted(self.edge_keys, keys)
            pos = np.minimum(pos, len(self.edge_keys) - 1)
            if np.any(self.edge_keys[pos] != keys):
                raise MeshError("fracture edge is not an edge of the triangulation")

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    @property
    def n_fractures(self) -> int:
        return len(self.fracture_edges)

    @property
    def bounds(self) -> tuple[float, float, float, float]:
        lo = self.nodes.min(axis=0)
        hi = self.nodes.max(axis=0)
        return float(lo[0]), float(lo[1]), float(hi[0]), float(hi[1])

    @cached_property
    def _edge_table(self):
        local = np.array([[1, 2], [2, 0], [0, 1]])
        pairs = np.sort(self.triangles[:, local].reshape(-1, 2), axis=1)
        keys = _edge_keys(pairs, self.n_nodes)
        uniq, first, inverse, counts = np.unique(
            keys, return_index=True, return_inverse=True, return_counts=True
        )
        edges = pairs[first]
        owner = first // 3
        return uniq, edges, inverse.reshape(-1, 3), counts, owner

    @property
    def edge_keys(self) -> np.ndarray:
        return self._edge_table[0]

    @property
    def edges(self) -> np.ndarray:
        """Unique undirected edges, sorted node pairs."""
        return self._edge_table[1]

    @property
    def triangle_edges(self) -> np.ndarray:
        """Edge index of each triangle side (side k is opposite local node k)."""
        return self._edge_table[2]

    @property
    def edge_triangle_count(self) -> np.ndarray:
        return self._edge_table[3]

    @cached_property
    def fracture_edge_index(self) -> np.ndarray:
        keys = _edge_keys(np.sort(self.fracture_edges, axis=1), self.n_nodes)
        return np.searchsorted(self.edge_keys, keys)

    @cached_property
    def fracture_owner(self) -> np.ndarray:
        """Lowest-index triangle containing each fracture edge.

        Region assembly attaches a fracture edge to the region holding its owner,
        which keeps assembly additive over triangle partitions.
        """
        return self._edge_table[4][self.fracture_edge_index]

    @cached_property
    def node_triangle_incidence(self) -> sp.csr_matrix:
        t = self.n_triangles
        rows = self.triangles.ravel()
        cols = np.repeat(np.arange(t), 3)
        return sp.csr_matrix((np.ones(3 * t), (rows, cols)), shape=(self.n_nodes, t))

    @cached_property
    def boundary_nodes(self) -> np.ndarray:
        """Nodes lying on edges that belong to a single triangle."""
        return np.unique(self.edges[self.edge_triangle_count == 1])

    def marker_mask(self, *markers: int) -> np.ndarray:
        return np.isin(self.markers, markers)


def _signed_area2(nodes, triangles):
    p0, p1, p2 = (nodes[triangles[:, k]] for k in range(3))
    return (p1[:, 0] - p0[:, 0]) * (p2[:, 1] - p0[:, 1]) - (p1[:, 1] - p0[:, 1]) * (p2[:, 0] - p0[:, 0])


def _edge_keys(pairs, n):
    return pairs[:, 0].astype(np.int64) * n + pairs[:, 1]


@dataclass(eq=False)
class CoarseGrid:
    lx: float
    ly: float
    nx: int
    ny: int
    _assignments: dict = field(default_factory=dict, repr=False)

    @property
    def hx(self) -> float:
        return self.lx / self.nx

    @property
    def hy(self) -> float:
        return self.ly / self.ny

    @property
    def node_count(self) -> int:
        return (self.nx + 1) * (self.ny + 1)

    @property
    def cell_count(self) -> int:
        return self.nx * self.ny

    @cached_property
    def vertices(self) -> np.ndarray:
        xs = np.linspace(0.0, self.lx, self.nx + 1)
        ys = np.linspace(0.0, self.ly, self.ny + 1)
        X, Y = np.meshgrid(xs, ys)
        return np.column_stack([X.ravel(), Y.ravel()])

    @cached_property
    def cells(self) -> np.ndarray:
        """Corner vertices of every cell: lower-left, lower-right, upper-right, upper-left."""
        ix, iy = np.meshgrid(np.arange(self.nx), np.arange(self.ny))
        ix, iy = ix.ravel(), iy.ravel()
        w = self.nx + 1
        ll = iy * w + ix
        return np.column_stack([ll, ll + 1, ll + w + 1, ll + w])

    def cell_box(self, k: int) -> tuple[float, float, float, float]:
        ix, iy = k % self.nx, k // self.nx
        return ix * self.hx, iy * self.hy, (ix + 1) * self.hx, (iy + 1) * self.hy

    def cells_of_node(self, i: int) -> list[int]:
        if not 0 <= i < self.node_count:
            raise IndexError(f"coarse node {i} out of range")
        w = self.nx + 1
        jx, jy = i % w, i // w
        out = []
        for iy in (jy - 1, jy):
            for ix in (jx - 1, jx):
                if 0 <= ix < self.nx and 0 <= iy < self.ny:
                    out.append(iy * self.nx + ix)
        return out

    def locate(self, points) -> np.ndarray:
        """Cell index of each point; cell intervals are closed on the lower/left side."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        ix = np.clip(np.floor(pts[:, 0] / self.hx).astype(np.int64), 0, self.nx - 1)
        iy = np.clip(np.floor(pts[:, 1] / self.hy).astype(np.int64), 0, self.ny - 1)
        return iy * self.nx + ix

    def triangle_cells(self, mesh: FineMesh) -> np.ndarray:
        """Coarse cell of every fine triangle; raises MeshError if the mesh does not resolve the cells."""
        cached = self._assignments.get(id(mesh))
        if cached is not None and cached[0] is mesh:
            return cached[1]
        x0, y0, x1, y1 = mesh.bounds
        tol = 1e-9 * max(self.lx, self.ly)
        if abs(x0) > tol or abs(y0) > tol or abs(x1 - self.lx) > tol or abs(y1 - self.ly) > tol:
            raise MeshError("fine mesh does not cover the coarse grid domain")
        centers = mesh.nodes[mesh.triangles].mean(axis=1)
        cell = self.locate(centers)
        ix, iy = cell % self.nx, cell // self.nx
        pts = mesh.nodes[mesh.triangles]
        lo_x, hi_x = (ix * self.hx)[:, None] - tol, ((ix + 1) * self.hx)[:, None] + tol
        lo_y, hi_y = (iy * self.hy)[:, None] - tol, ((iy + 1) * self.hy)[:, None] + tol
        inside = (pts[..., 0] >= lo_x) & (pts[..., 0] <= hi_x) & (pts[..., 1] >= lo_y) & (pts[..., 1] <= hi_y)
        if not inside.all():
            raise MeshError("fine triangles straddle coarse cell boundaries")
        if np.bincount(cell, minlength=self.cell_count).min() == 0:
            raise MeshError("coarse cell without fine triangles")
        self._assignments[id(mesh)] = (mesh, cell)
        return cell


def build_coarse_grid(domain_size: Sequence[float], nx: int, ny: int) -> CoarseGrid:
    lx, ly = (float(v) for v in domain_size)
    if nx < 1 or ny < 1:
        raise ValueError("coarse cell counts must be at least 1")
    if lx <= 0 or ly <= 0:
        raise ValueError("domain size must be positive")
    return CoarseGrid(lx, ly, int(nx), int(ny))


@dataclass(eq=False)
class Region:
    """A set of fine triangles together with derived node and boundary sets.

    ``boundary_nodes`` are the nodes on edges used by exactly one region triangle.
    ``interface_nodes`` is the subset lying on such edges that are interior to the
    whole mesh, i.e. where the region meets the rest of the domain.
    """

    triangles: np.ndarray
    nodes: np.ndarray
    fracture_segments: np.ndarray
    boundary_nodes: np.ndarray
    interface_nodes: np.ndarray

    @property
    def interior_nodes(self) -> np.ndarray:
        return np.setdiff1d(self.nodes, self.boundary_nodes, assume_unique=True)

    def local_index(self, global_nodes) -> np.ndarray:
        return np.searchsorted(self.nodes, global_nodes)


def region_from_triangles(mesh: FineMesh, triangles) -> Region:
    tris = np.unique(np.asarray(triangles, dtype=np.int64))
    nodes = np.unique(mesh.triangles[tris])
    tri_edges = mesh.triangle_edges[tris].ravel()
    counts = np.bincount(tri_edges, minlength=len(mesh.edges))
    bnd = counts == 1
    iface = bnd & (mesh.edge_triangle_count == 2)
    in_region = np.zeros(mesh.n_triangles, dtype=bool)
    in_region[tris] = True
    segs = np.flatnonzero(in_region[mesh.fracture_owner]) if mesh.n_fractures else np.zeros(0, np.int64)
    return Region(
        triangles=tris,
        nodes=nodes,
        fracture_segments=segs,
        boundary_nodes=np.unique(mesh.edges[bnd]),
        interface_nodes=np.unique(mesh.edges[iface]),
    )


@dataclass(eq=False)
class Neighborhood(Region):
    center: int = -1
    cells: tuple = ()


@dataclass(eq=False)
class OversampledNeighborhood(Region):
    base: Neighborhood | None = None
    layers: int = 0
    base_index: np.ndarray | None = None

    @property
    def center(self) -> int:
        return self.base.center


def cell_region(grid: CoarseGrid, mesh: FineMesh, k: int) -> Region:
    cell_of = grid.triangle_cells(mesh)
    return region_from_triangles(mesh, np.flatnonzero(cell_of == k))


def build_neighborhood(grid: CoarseGrid, mesh: FineMesh, i: int) -> Neighborhood:
    cells = grid.cells_of_node(i)
    cell_of = grid.triangle_cells(mesh)
    r = region_from_triangles(mesh, np.flatnonzero(np.isin(cell_of, cells)))
    return Neighborhood(
        r.triangles, r.nodes, r.fracture_segments, r.boundary_nodes, r.interface_nodes,
        center=int(i), cells=tuple(cells),
    )


def build_neighborhoods(grid: CoarseGrid, mesh: FineMesh) -> list[Neighborhood]:
    return [build_neighborhood(grid, mesh, i) for i in range(grid.node_count)]


def oversample(nbhd: Neighborhood, m: int, mesh: FineMesh) -> OversampledNeighborhood:
    """Extend a neighborhood by ``m`` layers of fine triangles."""
    if m < 0:
        raise ValueError("oversampling width must be non-negative")
    tris = nbhd.triangles
    inc = mesh.node_triangle_incidence
    for _ in range(m):
        node_mask = np.zeros(mesh.n_nodes)
        node_mask[np.unique(mesh.triangles[tris])] = 1.0
        touched = inc.T @ node_mask
        tris = np.flatnonzero(touched > 0)
    r = region_from_triangles(mesh, tris) if m else nbhd
    base_index = np.searchsorted(r.nodes, nbhd.nodes)
    return OversampledNeighborhood(
        r.triangles, r.nodes, r.fracture_segments, r.boundary_nodes, r.interface_nodes,
        base=nbhd, layers=int(m), base_index=base_index,
    )


@dataclass(frozen=True)
class FracturePolyline:
    points: tuple
    aperture: float = 1e-2

    def segments(self):
        pts = np.asarray(self.points, dtype=float)
        return list(zip(pts[:-1], pts[1:]))


def _structured_triangulation(lx, ly, ncx, ncy):
    xs = np.linspace(0.0, lx, ncx + 1)
    ys = np.linspace(0.0, ly, ncy + 1)
    X, Y = np.meshgrid(xs, ys)
    nodes = np.column_stack([X.ravel(), Y.ravel()])
    w = ncx + 1
    ix, iy = np.meshgrid(np.arange(ncx), np.arange(ncy))
    ix, iy = ix.ravel(), iy.ravel()
    a = iy * w + ix
    b, c, d = a + 1, a + w + 1, a + w
    even = (ix + iy) % 2 == 0
    # alternate diagonals so both diagonal directions exist in the edge graph
    t1 = np.where(even[:, None], np.column_stack([a, b, c]), np.column_stack([a, b, d]))
    t2 = np.where(even[:, None], np.column_stack([a, c, d]), np.column_stack([b, c, d]))
    tris = np.empty((2 * len(a), 3), dtype=np.int64)
    tris[0::2] = t1
    tris[1::2] = t2
    gi = np.tile(np.arange(w), ncy + 1)
    gj = np.repeat(np.arange(ncy + 1), w)
    return nodes, tris, gi, gj


def _point_segment_distance(pts, p, q):
    d = q - p
    L2 = float(d @ d)
    t = np.clip(((pts - p) @ d) / L2, 0.0, 1.0) if L2 > 0 else np.zeros(len(pts))
    proj = p + t[:, None] * d
    return np.linalg.norm(pts - proj, axis=1), proj


def _line_intersection(p1, q1, p2, q2):
    d1, d2 = q1 - p1, q2 - p2
    den = d1[0] * d2[1] - d1[1] * d2[0]
    if abs(den) < 1e-12 * np.linalg.norm(d1) * np.linalg.norm(d2):
        return None
    r = p2 - p1
    t = (r[0] * d2[1] - r[1] * d2[0]) / den
    return p1 + t * d1


def generate_test_mesh(
    domain_size: Sequence[float],
    fracture_polylines: Sequence[FracturePolyline] = (),
    target_h: float = 1.0,
    lock_every: int | None = None,
    snap: bool = True,
) -> FineMesh:
    """Structured triangulation of ``[0, Lx] x [0, Ly]`` with fractures on mesh edges.

    Each fracture segment is traced as a shortest edge path that hugs the
    segment; nodes on the path are then moved toward the fracture line.  Grid
    lines with index divisible by ``lock_every`` (and the domain boundary) keep
    their coordinate so that coarse-cell boundaries stay resolved.
    """
    lx, ly = (float(v) for v in domain_size)
    if lx <= 0 or ly <= 0 or target_h <= 0:
        raise ValueError("domain size and target_h must be positive")
    ncx = max(1, int(round(lx / target_h)))
    ncy = max(1, int(round(ly / target_h)))
    nodes, tris, gi, gj = _structured_triangulation(lx, ly, ncx, ncy)
    h = min(lx / ncx, ly / ncy)

    markers = np.full(len(nodes), INTERIOR, dtype=np.int64)
    markers[gj == ncy] = TOP
    markers[gj == 0] = BOTTOM
    markers[gi == ncx] = RIGHT
    markers[gi == 0] = LEFT

    polylines = [p if isinstance(p, FracturePolyline) else FracturePolyline(*p) for p in fracture_polylines]
    tol = 1e-9 * max(lx, ly)
    for poly in polylines:
        pts = np.asarray(poly.points, dtype=float)
        if pts.ndim != 2 or len(pts) < 2:
            raise ValueError("a fracture polyline needs at least two points")
        if pts.min() < -tol or np.any(pts[:, 0] > lx + tol) or np.any(pts[:, 1] > ly + tol):
            raise ValueError("fracture polyline leaves the domain")

    base = FineMesh(nodes, tris, np.zeros((0, 2)), [], [], markers)
    if not polylines:
        return base

    edges = base.edges
    elen = np.linalg.norm(nodes[edges[:, 0]] - nodes[edges[:, 1]], axis=1)
    mids = nodes[edges].mean(axis=1)
    n = len(nodes)

    frac_edges, frac_ids, frac_ap = [], [], []
    targets: dict[int, list] = {}
    for fid, poly in enumerate(polylines):
        seen = set()
        for p, q in poly.segments():
            dmid, _ = _point_segment_distance(mids, p, q)
            d0, _ = _point_segment_distance(nodes[edges[:, 0]], p, q)
            d1, _ = _point_segment_distance(nodes[edges[:, 1]], p, q)
            w = elen * (1.0 + 25.0 * ((dmid + d0 + d1) / (3 * h)) ** 2)
            graph = sp.csr_matrix((np.r_[w, w], (np.r_[edges[:, 0], edges[:, 1]], np.r_[edges[:, 1], edges[:, 0]])), shape=(n, n))
            s = int(np.argmin(np.linalg.norm(nodes - p, axis=1)))
            e = int(np.argmin(np.linalg.norm(nodes - q, axis=1)))
            if s == e:
                continue
            _, pred = dijkstra(graph, indices=s, return_predecessors=True)
            path = [e]
            while path[-1] != s:
                path.append(int(pred[path[-1]]))
            for a, b in zip(path[:-1], path[1:]):
                key = (min(a, b), max(a, b))
                if key in seen:
                    continue
                seen.add(key)
                frac_edges.append(key)
                frac_ids.append(fid)
                frac_ap.append(poly.aperture)
            for v in path:
                targets.setdefault(v, []).append((fid, p, q))

    if snap:
        nodes = _snap_nodes(nodes, tris, targets, gi, gj, ncx, ncy, h, lock_every)

    return FineMesh(nodes, tris, np.array(frac_edges), frac_ids, frac_ap, markers)


def _snap_nodes(nodes, tris, targets, gi, gj, ncx, ncy, h, lock_every):
    disp = np.zeros_like(nodes)
    for v, segs in targets.items():
        x = nodes[v]
        target = None
        fids = {s[0] for s in segs}
        if len(fids) > 1:
            sa = next(s for s in segs if s[0] == min(fids))
            sb = next(s for s in segs if s[0] != sa[0])
            cand = _line_intersection(sa[1], sa[2], sb[1], sb[2])
            if cand is not None and np.linalg.norm(cand - x) < h:
                target = cand
        if target is None:
            best = None
            for _, p, q in segs:
                d, proj = _point_segment_distance(x[None, :], p, q)
                if best is None or d[0] < best[0]:
                    best = (d[0], proj[0])
            target = best[1]
        step = target - x
        norm = np.linalg.norm(step)
        if norm > 0.3 * h:
            step *= 0.3 * h / norm
        lock_x = gi[v] in (0, ncx) or (lock_every and gi[v] % lock_every == 0)
        lock_y = gj[v] in (0, ncy) or (lock_every and gj[v] % lock_every == 0)
        if lock_x:
            step[0] = 0.0
        if lock_y:
            step[1] = 0.0
        disp[v] = step

    area0 = _signed_area2(nodes, tris)
    for _ in range(12):
        moved = nodes + disp
        bad = _signed_area2(moved, tris) < 0.25 * area0
        if not bad.any():
            return moved
        disp[np.unique(tris[bad])] *= 0.5
    moved = nodes + disp
    bad = _signed_area2(moved, tris) < 0.25 * area0
    disp[np.unique(tris[bad])] = 0.0
    return nodes + disp


def write_mesh(path, mesh: FineMesh) -> None:
    """Write the line-oriented mesh format (0-based indices)."""
    with open(path, "w") as fh:
        fh.write(f"NODES {mesh.n_nodes}\n")
        for (x, y), m in zip(mesh.nodes, mesh.markers):
            fh.write(f"{float(x)!r} {float(y)!r} {int(m)}\n")
        fh.write(f"TRIANGLES {mesh.n_triangles}\n")
        for i, j, k in mesh.triangles:
            fh.write(f"{i} {j} {k}\n")
        fh.write(f"FRACTURES {mesh.n_fractures}\n")
        for (i, j), fid, d in zip(mesh.fracture_edges, mesh.fracture_ids, mesh.apertures):
            fh.write(f"{i} {j} {fid} {float(d)!r}\n")


def read_mesh(path) -> FineMesh:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"mesh file not found: {path}")
    lines = [ln.split() for ln in path.read_text().splitlines() if ln.strip() and not ln.lstrip().startswith("#")]
    pos = 0

    def section(name, width):
        nonlocal pos
        if pos >= len(lines):
            raise MeshError(f"{path}: missing {name} block")
        head = lines[pos]
        if head[0].upper() != name or len(head) != 2:
            raise MeshError(f"expected '{name} <count>' at block {pos}")
        try:
            count = int(head[1])
        except ValueError:
            raise MeshError(f"{path}: bad count in {name} header") from None
        block = lines[pos + 1: pos + 1 + count]
        if len(block) != count or any(len(r) != width for r in block):
            raise MeshError(f"malformed {name} block")
        pos += 1 + count
        return block

    nb = section("NODES", 3)
    tb = section("TRIANGLES", 3)
    fb = section("FRACTURES", 4) if pos < len(lines) else []
    nodes = np.array([[float(r[0]), float(r[1])] for r in nb]).reshape(-1, 2)
    markers = np.array([int(r[2]) for r in nb], dtype=np.int64)
    tris = np.array([[int(v) for v in r] for r in tb], dtype=np.int64).reshape(-1, 3)
    fe = np.array([[int(r[0]), int(r[1])] for r in fb], dtype=np.int64).reshape(-1, 2)
    fid = np.array([int(r[2]) for r in fb], dtype=np.int64)
    ap = np.array([float(r[3]) for r in fb])
    return FineMesh(nodes, tris, fe, fid, ap, markers)
