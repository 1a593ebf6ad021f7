"""Uniform dyadic quadrilateral meshes of the unit square.

Vertices and elements are numbered lexicographically with the x index
running fastest: vertex (i, j) has id ``i + j*(n+1)`` and element (i, j)
has id ``i + j*n`` where ``n = 2**level`` elements per side.
"""
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
import scipy.sparse as sparse

from .errors import CapacityError

MAX_LEVEL = 12


class Boundary(str, Enum):
    """Dirichlet part of the boundary; the rest is homogeneous Neumann."""
    FULL = "full"
    LEFT = "left"


@dataclass(frozen=True)
class StructuredQuadMesh:
    level: int

    @property
    def n(self):
        return 2**self.level

    @property
    def n_elems(self):
        return 4**self.level

    @property
    def n_verts(self):
        return (self.n + 1)**2

    @property
    def side(self):
        return 2.0**(-self.level)

    @property
    def mesh_size(self):
        # element diagonal
        return np.sqrt(2.0) * self.side

    def vertex_coords(self):
        x = np.linspace(0.0, 1.0, self.n + 1)
        X, Y = np.meshgrid(x, x)
        return np.column_stack([X.ravel(), Y.ravel()])

    def element_midpoints(self):
        x = (np.arange(self.n) + 0.5) * self.side
        X, Y = np.meshgrid(x, x)
        return np.column_stack([X.ravel(), Y.ravel()])

    def element_vertices(self):
        """Corner vertex ids per element, ordered SW, SE, NE, NW."""
        n = self.n
        i, j = np.meshgrid(np.arange(n), np.arange(n))
        sw = (i + j * (n + 1)).ravel()
        return np.column_stack([sw, sw + 1, sw + n + 2, sw + n + 1])

    def element_index(self, i, j):
        return i + j * self.n

    def element_ij(self, e):
        return e % self.n, e // self.n

    def vertex_counts(self):
        """Number of elements containing each vertex (1, 2 or 4)."""
        c = np.zeros(self.n_verts, dtype=int)
        np.add.at(c, self.element_vertices().ravel(), 1)
        return c

    def fine_elements(self, fine, e):
        """Element ids of ``fine`` covering coarse element ``e`` of this mesh."""
        r = 2**(fine.level - self.level)
        i, j = self.element_ij(e)
        a, b = np.meshgrid(np.arange(r), np.arange(r))
        return ((i * r + a) + (j * r + b) * fine.n).ravel()


@dataclass
class Patch:
    center_elem: int
    layers: int
    box: tuple  # (i0, i1, j0, j1), inclusive element index ranges
    elems: np.ndarray
    interior_fine_dofs: np.ndarray = field(default=None)


def build_mesh(level):
    if level < 0:
        raise ValueError(f"mesh level must be nonnegative, got {level}")
    if level > MAX_LEVEL:
        raise CapacityError(f"mesh level {level} exceeds the guard {MAX_LEVEL}")
    return StructuredQuadMesh(int(level))


def dirichlet_mask(mesh, bc):
    """Boolean mask of vertices lying on the Dirichlet boundary."""
    bc = Boundary(bc)
    n = mesh.n
    i, j = np.meshgrid(np.arange(n + 1), np.arange(n + 1))
    i, j = i.ravel(), j.ravel()
    if bc is Boundary.FULL:
        return (i == 0) | (i == n) | (j == 0) | (j == n)
    return i == 0


def free_vertices(mesh, bc):
    return np.flatnonzero(~dirichlet_mask(mesh, bc))


def free_index_map(mesh, bc):
    """Vertex id -> position among free vertices, -1 on the Dirichlet part."""
    free = free_vertices(mesh, bc)
    m = np.full(mesh.n_verts, -1, dtype=np.int64)
    m[free] = np.arange(free.size)
    return m


def element_patch(mesh, T, layers, fine=None, bc=None):
    """Extension of element ``T`` by ``layers`` rings of vertex-adjacent elements.

    If ``fine`` and ``bc`` are given, the patch also carries the fine vertex
    ids strictly inside it: vertices on the patch boundary are excluded unless
    that boundary is part of the Neumann boundary of the domain.
    """
    if not 0 <= T < mesh.n_elems:
        raise IndexError(f"element {T} out of range")
    n = mesh.n
    i, j = mesh.element_ij(T)
    i0, i1 = max(0, i - layers), min(n - 1, i + layers)
    j0, j1 = max(0, j - layers), min(n - 1, j + layers)
    I, J = np.meshgrid(np.arange(i0, i1 + 1), np.arange(j0, j1 + 1))
    elems = (I + J * n).ravel()
    patch = Patch(T, layers, (i0, i1, j0, j1), elems)
    if fine is not None:
        r = 2**(fine.level - mesh.level)
        nf = fine.n
        x0, x1 = i0 * r, (i1 + 1) * r
        y0, y1 = j0 * r, (j1 + 1) * r
        xs = np.arange(x0 if x0 == 0 else x0 + 1, x1 + 1 if x1 == nf else x1)
        ys = np.arange(y0 if y0 == 0 else y0 + 1, y1 + 1 if y1 == nf else y1)
        X, Y = np.meshgrid(xs, ys)
        verts = (X + Y * (nf + 1)).ravel()
        if bc is not None:
            verts = verts[~dirichlet_mask(fine, bc)[verts]]
        patch.interior_fine_dofs = verts
    return patch


def prolongation_matrix(coarse, fine):
    """Nodal interpolation of coarse Q1 functions onto the fine mesh (all vertices)."""
    if fine.level < coarse.level:
        raise ValueError(
            f"fine level {fine.level} is below coarse level {coarse.level}")
    r = 2**(fine.level - coarse.level)
    nc = coarse.n
    xf = np.arange(fine.n + 1)
    # 1D interpolation weights, then tensor product
    ic = np.minimum(xf // r, nc - 1)
    t = (xf - ic * r) / r
    rows1 = np.concatenate([xf, xf])
    cols1 = np.concatenate([ic, ic + 1])
    vals1 = np.concatenate([1.0 - t, t])
    keep = vals1 != 0.0
    P1 = sparse.csr_matrix((vals1[keep], (rows1[keep], cols1[keep])),
                           shape=(fine.n + 1, nc + 1))
    # x index fastest on both meshes: kron(Py, Px)
    return sparse.kron(P1, P1, format="csr")
