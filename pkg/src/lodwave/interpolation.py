"""Quasi-interpolation I_H = E_H o Pi_H from fine to coarse Q1 functions.

Pi_H is the elementwise L2 projection onto (discontinuous) Q1 on each coarse
element, E_H averages the element corner values at every free coarse vertex.
Dirichlet vertices are dropped by E_H, Neumann vertices are kept.
"""
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sparse

from .assembly import MASS_REF
from .errors import NumericError
from .mesh import free_index_map


def _check_refines(coarse, fine):
    if fine.level < coarse.level:
        raise ValueError(
            f"fine level {fine.level} does not refine coarse level {coarse.level}")


def local_projection_matrix(r):
    """4 x (r+1)**2 matrix of the L2 projection onto Q1 of one coarse element.

    Columns are the fine vertices of the element in local lexicographic order
    (x fastest); rows are the coarse corners SW, SE, NE, NW. The result does not
    depend on the element size.
    """
    nv = r + 1
    a, b = np.meshgrid(np.arange(r), np.arange(r))
    sw = (a + b * nv).ravel()
    ev = np.column_stack([sw, sw + 1, sw + nv + 1, sw + nv])
    Mf = np.zeros((nv * nv, nv * nv))
    for p in range(4):
        for q in range(4):
            np.add.at(Mf, (ev[:, p], ev[:, q]), MASS_REF[p, q] / r**2)
    s, t = np.meshgrid(np.arange(nv) / r, np.arange(nv) / r)
    s, t = s.ravel(), t.ravel()
    Ploc = np.column_stack([(1 - s) * (1 - t), s * (1 - t), s * t, (1 - s) * t])
    Mc = Ploc.T @ Mf @ Ploc
    return np.linalg.solve(Mc, Ploc.T @ Mf)


def _element_fine_vertices(coarse, fine):
    """Fine vertex ids of every coarse element, shape (n_elems, (r+1)**2)."""
    r = 2**(fine.level - coarse.level)
    nf = fine.n
    a, b = np.meshgrid(np.arange(r + 1), np.arange(r + 1))
    local = (a + b * (nf + 1)).ravel()
    I, J = np.meshgrid(np.arange(coarse.n), np.arange(coarse.n))
    origin = (I.ravel() * r + J.ravel() * r * (nf + 1))
    return origin[:, None] + local[None, :]


def piecewise_l2_projection(coarse, fine):
    """Pi_H as a sparse matrix from fine vertex values to element corner values.

    Row ``4*T + k`` holds corner ``k`` of coarse element ``T``.
    """
    _check_refines(coarse, fine)
    r = 2**(fine.level - coarse.level)
    L = local_projection_matrix(r)
    fv = _element_fine_vertices(coarse, fine)
    nT = coarse.n_elems
    rows = np.repeat(np.arange(4 * nT), fv.shape[1])
    cols = np.tile(fv, (1, 4)).ravel()
    vals = np.tile(L.ravel(), nT)
    return sparse.csr_matrix((vals, (rows, cols)), shape=(4 * nT, fine.n_verts))


def averaging_operator(coarse, bc):
    """E_H from element corner values (row 4*T+k) to free coarse vertex values."""
    fmap = free_index_map(coarse, bc)
    ev = coarse.element_vertices().ravel()
    card = coarse.vertex_counts()
    keep = fmap[ev] >= 0
    rows = fmap[ev][keep]
    cols = np.arange(ev.size)[keep]
    vals = 1.0 / card[ev][keep]
    nfree = int((fmap >= 0).sum())
    return sparse.csr_matrix((vals, (rows, cols)), shape=(nfree, ev.size))


@dataclass
class InterpolationOperator:
    matrix: sparse.csr_matrix  # coarse free dofs x fine free dofs
    coarse: object
    fine: object
    bc: object

    def __call__(self, v):
        return self.matrix @ v


def build_IH(coarse, fine, bc):
    _check_refines(coarse, fine)
    ffree = np.flatnonzero(free_index_map(fine, bc) >= 0)
    IH = (averaging_operator(coarse, bc) @ piecewise_l2_projection(coarse, fine))
    IH = sparse.csr_matrix(IH[:, ffree])
    IH.eliminate_zeros()
    return InterpolationOperator(IH, coarse, fine, bc)


def patch_constraint_rows(op, patch):
    """Free coarse dofs at vertices of the patch elements."""
    coarse = op.coarse
    fmap = free_index_map(coarse, op.bc)
    verts = np.unique(coarse.element_vertices()[patch.elems].ravel())
    rows = fmap[verts]
    return rows[rows >= 0]


def kernel_constraint_matrix(op, patch=None):
    """Matrix C with {w : C w = 0} the fine-scale space, optionally on a patch.

    With a patch, columns are the patch-interior fine dofs (in the order of
    ``patch.interior_fine_dofs``) and rows the free coarse vertices of the
    patch elements.
    """
    if patch is None:
        return op.matrix
    if patch.interior_fine_dofs is None:
        raise ValueError("patch has no fine dofs; build it with fine mesh and bc")
    cols = free_index_map(op.fine, op.bc)[patch.interior_fine_dofs]
    if cols.size == 0 or np.any(cols < 0):
        raise NumericError(
            f"patch around element {patch.center_elem} with {patch.layers} layers "
            f"has no interior fine dofs")
    rows = patch_constraint_rows(op, patch)
    return op.matrix[rows][:, cols]
