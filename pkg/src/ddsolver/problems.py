"""Scalable test systems: scalar Helmholtz on a structured hexahedral grid.

Two families are provided. ``sphere_problem`` puts a dielectric ball in a
unit cube and excites it with point sources at random interior nodes.
``array_problem`` drives a planar rows x cols array of point sources, one
right-hand side per element. The outer surface carries a homogeneous
Dirichlet condition, so boundary nodes are dropped from the system.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .sparse import SymSparseMatrix, sym_from_coo

_CORNERS = np.array([(a & 1, (a >> 1) & 1, (a >> 2) & 1) for a in range(8)])


@dataclass(frozen=True)
class HexMesh:
    nx: int
    ny: int
    nz: int
    h: float

    @property
    def n_nodes(self) -> int:
        return self.nx * self.ny * self.nz

    @property
    def n_cells(self) -> int:
        return (self.nx - 1) * (self.ny - 1) * (self.nz - 1)

    def node_id(self, i, j, k):
        return i + self.nx * (j + self.ny * k)

    def cell_nodes(self) -> np.ndarray:
        """(n_cells, 8) global node ids; local corner a = ix + 2 iy + 4 iz."""
        ci, cj, ck = np.meshgrid(np.arange(self.nx - 1), np.arange(self.ny - 1),
                                 np.arange(self.nz - 1), indexing="ij")
        ci, cj, ck = (a.transpose(2, 1, 0).ravel() for a in (ci, cj, ck))
        off = _CORNERS
        return self.node_id(ci[:, None] + off[:, 0], cj[:, None] + off[:, 1],
                            ck[:, None] + off[:, 2])

    def cell_centroids(self) -> np.ndarray:
        ci, cj, ck = np.meshgrid(np.arange(self.nx - 1), np.arange(self.ny - 1),
                                 np.arange(self.nz - 1), indexing="ij")
        pts = np.stack([a.transpose(2, 1, 0).ravel() for a in (ci, cj, ck)], axis=1)
        return (pts + 0.5) * self.h


@dataclass(frozen=True, eq=False)
class NodeMap:
    """Interior unknowns <-> global grid nodes."""

    interior_nodes: np.ndarray
    global_to_interior: np.ndarray

    @property
    def n_interior(self) -> int:
        return len(self.interior_nodes)


def build_grid(nx: int, ny: int, nz: int, h: float) -> HexMesh:
    if min(nx, ny, nz) < 2:
        raise ValueError(f"need at least 2 nodes per axis, got ({nx}, {ny}, {nz})")
    if not h > 0:
        raise ValueError(f"grid spacing must be positive, got {h}")
    return HexMesh(int(nx), int(ny), int(nz), float(h))


def sphere_material(mesh: HexMesh, center, radius: float, eps_in) -> np.ndarray:
    """Per-cell relative permittivity: ``eps_in`` inside the ball, 1 elsewhere."""
    if radius < 0:
        raise ValueError("radius must be non-negative")
    d = np.linalg.norm(mesh.cell_centroids() - np.asarray(center, dtype=float), axis=1)
    dtype = np.complex128 if np.iscomplexobj(eps_in) else np.float64
    eps = np.ones(mesh.n_cells, dtype=dtype)
    if radius > 0:
        eps[d <= radius] = eps_in
    return eps


@lru_cache(maxsize=None)
def _reference_matrices() -> tuple[np.ndarray, np.ndarray]:
    """Stiffness and mass of the unit cube, 2x2x2 Gauss-Legendre."""
    g = 1.0 / np.sqrt(3.0)
    sign = 2 * _CORNERS - 1
    K = np.zeros((8, 8))
    M = np.zeros((8, 8))
    for xi in (-g, g):
        for eta in (-g, g):
            for zeta in (-g, g):
                q = np.array([xi, eta, zeta])
                f = 1.0 + sign * q  # (8, 3)
                N = f.prod(axis=1) / 8.0
                dN = np.empty((8, 3))
                dN[:, 0] = sign[:, 0] * f[:, 1] * f[:, 2] / 8.0
                dN[:, 1] = sign[:, 1] * f[:, 0] * f[:, 2] / 8.0
                dN[:, 2] = sign[:, 2] * f[:, 0] * f[:, 1] / 8.0
                # unit cube: x = (xi + 1) / 2, so d/dx = 2 d/dxi and |J| = 1/8
                grad = 2.0 * dN
                K += grad @ grad.T / 8.0
                M += np.outer(N, N) / 8.0
    return K, M


def element_matrices(h: float, eps=1.0, k: float = 0.0) -> np.ndarray:
    """``K_e - k^2 eps M_e`` for a cube of side ``h``."""
    if not h > 0:
        raise ValueError(f"element size must be positive, got {h}")
    K, M = _reference_matrices()
    return h * K - (k * k) * eps * (h ** 3) * M


def assemble(mesh: HexMesh, eps: np.ndarray, k: float) -> tuple[SymSparseMatrix, NodeMap]:
    """Global system over interior nodes (zero Dirichlet on the outer surface)."""
    eps = np.asarray(eps)
    if eps.shape != (mesh.n_cells,):
        raise ValueError(f"material has {eps.shape} entries, mesh has {mesh.n_cells} cells")
    K, M = _reference_matrices()
    Kh = mesh.h * K
    Mh = (k * k) * mesh.h ** 3 * M

    i, j, kk = np.meshgrid(np.arange(mesh.nx), np.arange(mesh.ny), np.arange(mesh.nz), indexing="ij")
    i, j, kk = (a.transpose(2, 1, 0).ravel() for a in (i, j, kk))
    inside = ((i > 0) & (i < mesh.nx - 1) & (j > 0) & (j < mesh.ny - 1)
              & (kk > 0) & (kk < mesh.nz - 1))
    interior_nodes = np.flatnonzero(inside)
    g2i = np.full(mesh.n_nodes, -1, dtype=np.int64)
    g2i[interior_nodes] = np.arange(len(interior_nodes))
    nmap = NodeMap(interior_nodes, g2i)

    nodes = g2i[mesh.cell_nodes()]  # (cells, 8), -1 on boundary
    a, b = np.tril_indices(8)
    rows = nodes[:, a]
    cols = nodes[:, b]
    vals = Kh[a, b][None, :] - eps[:, None] * Mh[a, b][None, :]
    keep = (rows >= 0) & (cols >= 0)
    return sym_from_coo(len(interior_nodes), rows[keep], cols[keep], vals[keep]), nmap


def point_source_rhs(nmap: NodeMap, sources, n_interior: int | None = None) -> np.ndarray:
    """One unit column per source node (global ids)."""
    n = nmap.n_interior if n_interior is None else n_interior
    src = np.asarray(sources, dtype=np.int64).ravel()
    if np.any(src < 0) or np.any(src >= len(nmap.global_to_interior)):
        raise ValueError("source node out of range")
    idx = nmap.global_to_interior[src]
    if np.any(idx < 0):
        raise ValueError(f"source on the Dirichlet boundary: {src[idx < 0].tolist()}")
    if np.any(idx >= n):
        raise ValueError("source index beyond the system size")
    B = np.zeros((n, len(src)))
    B[idx, np.arange(len(src))] = 1.0
    return B


@dataclass(eq=False)
class Problem:
    name: str
    A: SymSparseMatrix
    B: np.ndarray
    nmap: NodeMap
    mesh: HexMesh


def sphere_problem(nodes_per_axis: int, k: float = 0.0, eps_contrast=4.0,
                   n_rhs: int = 200, seed: int = 0, radius: float = 0.3) -> Problem:
    """Dielectric ball in the unit cube, point sources at random interior nodes."""
    N = nodes_per_axis
    mesh = build_grid(N, N, N, 1.0 / (N - 1))
    eps = sphere_material(mesh, (0.5, 0.5, 0.5), radius, eps_contrast)
    A, nmap = assemble(mesh, eps, k)
    rng = np.random.default_rng(seed)
    pick = rng.choice(nmap.n_interior, size=n_rhs, replace=n_rhs > nmap.n_interior)
    B = point_source_rhs(nmap, nmap.interior_nodes[np.sort(pick)])
    return Problem(f"sphere{N}", A, B, nmap, mesh)


def array_sources(mesh: HexMesh, rows: int, cols: int, spacing: int) -> np.ndarray:
    """Global ids of a centred rows x cols source grid in the mid-z plane."""
    if rows < 1 or cols < 1 or spacing < 1:
        raise ValueError("rows, cols and spacing must be positive")
    span_x = (cols - 1) * spacing
    span_y = (rows - 1) * spacing
    x0 = (mesh.nx - 1 - span_x) // 2
    y0 = (mesh.ny - 1 - span_y) // 2
    z = (mesh.nz - 1) // 2
    if x0 < 1 or x0 + span_x > mesh.nx - 2 or y0 < 1 or y0 + span_y > mesh.ny - 2 or z < 1:
        raise ValueError(f"{rows}x{cols} array with spacing {spacing} does not fit "
                         f"inside a {mesh.nx}x{mesh.ny}x{mesh.nz} grid")
    yy, xx = np.meshgrid(y0 + spacing * np.arange(rows), x0 + spacing * np.arange(cols), indexing="ij")
    return mesh.node_id(xx.ravel(), yy.ravel(), z)


def array_problem(rows: int, cols: int, spacing: int, dims, k: float = 0.0,
                  h: float | None = None) -> tuple[SymSparseMatrix, np.ndarray, NodeMap]:
    """Uniform-medium grid excited by a planar source array."""
    nx, ny, nz = dims
    mesh = build_grid(nx, ny, nz, h if h is not None else 1.0 / (max(dims) - 1))
    src = array_sources(mesh, rows, cols, spacing)
    A, nmap = assemble(mesh, np.ones(mesh.n_cells), k)
    return A, point_source_rhs(nmap, src), nmap


def array_dims(rows: int, cols: int, spacing: int, margin: int = 3, depth: int | None = None):
    """Smallest grid that holds the array with ``margin`` nodes of clearance."""
    nx = (cols - 1) * spacing + 2 * margin + 1
    ny = (rows - 1) * spacing + 2 * margin + 1
    nz = depth if depth is not None else 2 * margin + 1
    return nx, ny, nz
