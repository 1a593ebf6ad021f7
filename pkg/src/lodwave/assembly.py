"""Q1 assembly of stiffness, mass and load, and sparse direct solvers.

Element matrices are exact for elementwise constant coefficients. Passing
``bc=None`` returns the unrestricted matrix over all vertices; otherwise
rows and columns are restricted to the free vertices of ``bc``.
"""
import numpy as np
import scipy.io
import scipy.sparse as sparse
import scipy.sparse.linalg as spla

from .errors import NumericError
from .mesh import free_vertices

# corner order SW, SE, NE, NW
STIFFNESS_REF = np.array([[4., -1., -2., -1.],
                          [-1., 4., -1., -2.],
                          [-2., -1., 4., -1.],
                          [-1., -2., -1., 4.]]) / 6.0
MASS_REF = np.array([[4., 2., 1., 2.],
                     [2., 4., 2., 1.],
                     [1., 2., 4., 2.],
                     [2., 1., 2., 4.]]) / 36.0

_GAUSS = 0.5 + np.array([-0.5, 0.5]) / np.sqrt(3.0)


def _scatter(mesh, local, weights):
    ev = mesh.element_vertices()
    rows = np.repeat(ev, 4, axis=1).ravel()
    cols = np.tile(ev, (1, 4)).ravel()
    vals = (weights[:, None] * local.ravel()[None, :]).ravel()
    return sparse.csr_matrix((vals, (rows, cols)), shape=(mesh.n_verts, mesh.n_verts))


def restrict(A, mesh, bc):
    if bc is None:
        return A
    free = free_vertices(mesh, bc)
    return A[free][:, free]


def assemble_stiffness(mesh, coeff_values, bc=None):
    coeff_values = np.asarray(coeff_values, dtype=float)
    if coeff_values.shape != (mesh.n_elems,):
        raise ValueError(
            f"expected {mesh.n_elems} coefficient values, got {coeff_values.shape}")
    return restrict(_scatter(mesh, STIFFNESS_REF, coeff_values), mesh, bc)


def assemble_mass(mesh, bc=None):
    w = np.full(mesh.n_elems, mesh.side**2)
    return restrict(_scatter(mesh, MASS_REF, w), mesh, bc)


def assemble_element_restricted_stiffness(mesh_fine, coeff_values, coarse, T, bc=None):
    """Stiffness integrated only over the fine elements inside coarse element ``T``."""
    coeff_values = np.asarray(coeff_values, dtype=float)
    mask = np.zeros(mesh_fine.n_elems)
    mask[coarse.fine_elements(mesh_fine, T)] = 1.0
    return assemble_stiffness(mesh_fine, coeff_values * mask, bc)


def _bilinear_shapes(s, t):
    return np.array([(1 - s) * (1 - t), s * (1 - t), s * t, (1 - s) * t])


def assemble_load(mesh, bc, f, t=0.0):
    """Load vector (f(., t), phi_i) by 2x2 Gauss quadrature on every element.

    ``f(x, t)`` takes points of shape (n, 2) and returns n values.
    """
    h = mesh.side
    sw = mesh.vertex_coords()[mesh.element_vertices()[:, 0]]
    contrib = np.zeros((mesh.n_elems, 4))
    for gs in _GAUSS:
        for gt in _GAUSS:
            pts = sw + h * np.array([gs, gt])
            fv = np.asarray(f(pts, t), dtype=float) * np.ones(mesh.n_elems)
            contrib += np.outer(fv, _bilinear_shapes(gs, gt)) * (h * h / 4.0)
    b = np.zeros(mesh.n_verts)
    np.add.at(b, mesh.element_vertices().ravel(), contrib.ravel())
    if bc is None:
        return b
    return b[free_vertices(mesh, bc)]


class LinearSolver:
    """Sparse LU factorization reused across right-hand sides."""

    def __init__(self, A, lu, name="matrix"):
        self.A = A
        self.lu = lu
        self.name = name
        self.shape = A.shape

    def solve(self, b):
        return self.lu.solve(np.asarray(b, dtype=float))

    def residual(self, x, b):
        """Relative residual ||Ax - b|| / ||b||."""
        nb = np.linalg.norm(b)
        r = np.linalg.norm(self.A @ x - b)
        return r / nb if nb > 0 else r


def factor_spd(A, name="matrix"):
    """Symmetric-mode LU without pivoting; fails unless A is SPD."""
    A = sparse.csc_matrix(A)
    if A.shape[0] != A.shape[1]:
        raise NumericError(f"{name} is not square: {A.shape}")
    if A.shape[0] == 0:
        raise NumericError(f"{name} is empty")
    try:
        lu = spla.splu(A, permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.0,
                       options={"SymmetricMode": True})
    except RuntimeError as exc:
        raise NumericError(f"factorization of {name} failed: {exc}") from exc
    d = lu.U.diagonal()
    if not np.array_equal(lu.perm_r, lu.perm_c) or not np.all(d > 0):
        raise NumericError(f"{name} is not symmetric positive definite")
    return LinearSolver(A, lu, name)


def factor_general(A, name="matrix"):
    """Pivoted sparse LU for (possibly indefinite) nonsingular matrices."""
    A = sparse.csc_matrix(A)
    try:
        lu = spla.splu(A)
    except RuntimeError as exc:
        raise NumericError(f"factorization of {name} failed: {exc}") from exc
    return LinearSolver(A, lu, name)


def solve_spd(A, b, name="matrix"):
    return factor_spd(A, name).solve(b)


def export_matrix_market(A, path, comment=""):
    scipy.io.mmwrite(str(path), sparse.coo_matrix(A), comment=comment)
