"""Element correctors, correction operators and the multiscale system.

Each element corrector solves a patch-local saddle point problem

    [K_p  C_p^T] [q]   [r]
    [C_p   0   ] [l] = [0]

where K_p is the fine stiffness on the patch-interior dofs, C_p the
quasi-interpolation restricted to the patch and r = a|_T(Lambda_{T,i}, .).
"""
from dataclasses import dataclass, field
import hashlib
import json
import logging
import multiprocessing
import os
import tempfile
from pathlib import Path

import numpy as np
import scipy.sparse as sparse

from .assembly import (STIFFNESS_REF, assemble_mass, assemble_stiffness,
                       factor_general)
from .coefficient import coefficient_hash
from .errors import NumericError
from .interpolation import _element_fine_vertices, build_IH, kernel_constraint_matrix
from .mesh import (Boundary, element_patch, free_index_map, free_vertices,
                   prolongation_matrix)

log = logging.getLogger(__name__)

SADDLE_RTOL = 1e-9
CACHE_ENV = "LODWAVE_CACHE_DIR"
CACHE_VERSION = 2


@dataclass
class Assemblies:
    """Fine-scale matrices shared by all corrector solves on one mesh pair."""
    coarse: object
    fine: object
    bc: Boundary
    coeff: np.ndarray  # one value per fine element
    K: sparse.csr_matrix  # fine stiffness on free dofs
    M: sparse.csr_matrix  # fine mass on free dofs
    P: sparse.csr_matrix  # prolongation, fine free x coarse free
    fine_free: np.ndarray = field(repr=False)
    coarse_free: np.ndarray = field(repr=False)

    @property
    def ratio(self):
        return 2**(self.fine.level - self.coarse.level)


def build_assemblies(coarse, fine, coeff, bc):
    if fine.level <= coarse.level:
        raise ValueError(
            f"fine level {fine.level} must exceed coarse level {coarse.level}")
    bc = Boundary(bc)
    coeff = np.asarray(coeff, dtype=float)
    ff, fc = free_vertices(fine, bc), free_vertices(coarse, bc)
    P = prolongation_matrix(coarse, fine)[ff][:, fc]
    return Assemblies(coarse, fine, bc, coeff,
                      assemble_stiffness(fine, coeff, bc), assemble_mass(fine, bc),
                      sparse.csr_matrix(P),
                      free_index_map(fine, bc), free_index_map(coarse, bc))


def _corner_templates(r):
    """G[i][e, k] = sum_m K_ref[k, m] Lambda_i(corner m of sub-element e)."""
    a, b = np.meshgrid(np.arange(r), np.arange(r))
    a, b = a.ravel(), b.ravel()
    cs = np.column_stack([a, a + 1, a + 1, a]) / r
    ct = np.column_stack([b, b, b + 1, b + 1]) / r
    lam = [(1 - cs) * (1 - ct), cs * (1 - ct), cs * ct, (1 - cs) * ct]
    return [L @ STIFFNESS_REF.T for L in lam]


def _local_sub_vertices(r):
    nv = r + 1
    a, b = np.meshgrid(np.arange(r), np.arange(r))
    sw = (a + b * nv).ravel()
    return np.column_stack([sw, sw + 1, sw + nv + 1, sw + nv])


class _ElementLoads:
    """Right-hand sides a|_T(Lambda_{T,i}, phi) on the fine vertices of T."""

    def __init__(self, asm):
        r = asm.ratio
        self.r = r
        self.templates = _corner_templates(r)
        self.sub = _local_sub_vertices(r).ravel()
        self.fine_verts = _element_fine_vertices(asm.coarse, asm.fine)
        self.asm = asm

    def __call__(self, T, i):
        asm = self.asm
        A = asm.coeff[asm.coarse.fine_elements(asm.fine, T)]
        contrib = (A[:, None] * self.templates[i]).ravel()
        loc = np.bincount(self.sub, weights=contrib, minlength=(self.r + 1)**2)
        return self.fine_verts[T], loc


@dataclass
class ElementCorrector:
    T: int
    i: int
    layers: int
    dofs: np.ndarray  # fine free dof indices (patch interior)
    values: np.ndarray
    column: int = -1  # coarse free dof of corner i

    def to_dense(self, n):
        v = np.zeros(n)
        v[self.dofs] = self.values
        return v


class _PatchSolver:
    """Factorized saddle point system of one patch, reused for its corners."""

    def __init__(self, asm, IH, patch):
        self.patch = patch
        fmap = asm.fine_free
        self.dofs = fmap[patch.interior_fine_dofs]
        C = kernel_constraint_matrix(IH, patch)
        Kp = asm.K[self.dofs][:, self.dofs]
        m, c = Kp.shape[0], C.shape[0]
        if c >= m:
            raise NumericError(
                f"patch around element {patch.center_elem} (layers={patch.layers}) "
                f"has {m} interior fine dofs but {c} constraints")
        self.S = sparse.bmat([[Kp, C.T], [C, None]], format="csc")
        self.m = m
        try:
            self.lu = factor_general(self.S, f"saddle point on patch {patch.box}")
        except NumericError as exc:
            raise NumericError(
                f"{exc} (element {patch.center_elem}, {m} dofs, {c} constraints)") from exc

    def solve(self, fine_verts, rloc, asm):
        fr = asm.fine_free[fine_verts]
        pos = np.searchsorted(self.dofs, fr)
        pos = np.minimum(pos, self.dofs.size - 1)
        hit = (fr >= 0) & (self.dofs[pos] == fr)
        rhs = np.zeros(self.S.shape[0])
        np.add.at(rhs, pos[hit], rloc[hit])
        x = self.lu.solve(rhs)
        res = self.lu.residual(x, rhs)
        if not np.all(np.isfinite(x)) or res > SADDLE_RTOL:
            raise NumericError(
                f"singular saddle point on patch {self.patch.box} around element "
                f"{self.patch.center_elem}: relative residual {res:.3e}")
        return x[:self.m]


def _free_corners(asm, T):
    ev = asm.coarse.element_vertices()[T]
    return [(i, v) for i, v in enumerate(ev) if asm.coarse_free[v] >= 0]


def solve_element_corrector(T, i, layers, asm, IH):
    patch = element_patch(asm.coarse, T, layers, asm.fine, asm.bc)
    solver = _PatchSolver(asm, IH, patch)
    fv, rloc = _ElementLoads(asm)(T, i)
    z = int(asm.coarse_free[asm.coarse.element_vertices()[T, i]])
    return ElementCorrector(T, i, layers, solver.dofs, solver.solve(fv, rloc, asm), z)


def _solve_elements(asm, IH, layers, elems):
    loads = _ElementLoads(asm)
    out = []
    cached_box, solver = None, None
    for T in elems:
        patch = element_patch(asm.coarse, T, layers, asm.fine, asm.bc)
        if patch.box != cached_box:
            try:
                solver = _PatchSolver(asm, IH, patch)
            except NumericError as exc:
                raise NumericError(f"corrector for element {T}: {exc}") from exc
            cached_box = patch.box
        for i, v in _free_corners(asm, T):
            fv, rloc = loads(T, i)
            try:
                q = solver.solve(fv, rloc, asm)
            except NumericError as exc:
                raise NumericError(f"corrector (T={T}, i={i}): {exc}") from exc
            out.append(ElementCorrector(T, i, layers, solver.dofs, q,
                                        int(asm.coarse_free[v])))
    return out


# worker state inherited through fork
_WORKER = {}


def _worker(elems):
    return _solve_elements(_WORKER["asm"], _WORKER["IH"], _WORKER["layers"], elems)


@dataclass
class CorrectorSet:
    coarse_level: int
    fine_level: int
    bc: Boundary
    layers: int
    coeff_hash: str
    correctors: list
    Q: sparse.csc_matrix  # fine free dofs x coarse free dofs

    def apply(self, vH):
        """C^l_h v_H as a fine free-dof vector."""
        return self.Q @ vH

    def key(self):
        return corrector_cache_key(self.coarse_level, self.fine_level,
                                   self.coeff_hash, self.layers, self.bc)


def assemble_correction_matrix(correctors, shape):
    """Q with column z = sum of the correctors q_{T,i} whose corner is z."""
    rows, cols, vals = [], [], []
    for c in correctors:
        rows.append(c.dofs)
        cols.append(np.full(c.dofs.size, c.column))
        vals.append(c.values)
    if not rows:
        return sparse.csc_matrix(shape)
    return sparse.csc_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=shape)


def build_corrector_set(asm, layers, IH=None, jobs=1):
    """Solve all element correctors on patches with ``layers`` layers."""
    if IH is None:
        IH = build_IH(asm.coarse, asm.fine, asm.bc)
    layers = int(layers)
    nT = asm.coarse.n_elems
    if jobs > 1 and nT > 1:
        chunks = [c for c in np.array_split(np.arange(nT), min(nT, 4 * jobs)) if c.size]
        _WORKER.update(asm=asm, IH=IH, layers=layers)
        try:
            ctx = multiprocessing.get_context("fork")
            with ctx.Pool(jobs) as pool:
                parts = pool.map(_worker, chunks)
        finally:
            _WORKER.clear()
        correctors = [c for part in parts for c in part]
    else:
        correctors = _solve_elements(asm, IH, layers, range(nT))
    Q = assemble_correction_matrix(correctors, (asm.K.shape[0], asm.P.shape[1]))
    return CorrectorSet(asm.coarse.level, asm.fine.level, asm.bc, layers,
                        coefficient_hash(asm.coeff), correctors, Q)


def global_layers(coarse):
    """Layer count whose patches cover the whole domain."""
    return coarse.n


@dataclass
class MultiscaleSystem:
    K_ms: sparse.csr_matrix
    M_ms: sparse.csr_matrix
    M_fem: sparse.csr_matrix
    B: sparse.csr_matrix  # coarse free dofs -> fine free dofs
    P: sparse.csr_matrix
    mesh_size: float


def build_multiscale_system(cset, asm):
    B = sparse.csr_matrix(asm.P - cset.Q)
    BT = sparse.csr_matrix(B.T)
    K_ms = sparse.csr_matrix(BT @ (asm.K @ B))
    M_ms = sparse.csr_matrix(BT @ (asm.M @ B))
    PT = sparse.csr_matrix(asm.P.T)
    M_fem = sparse.csr_matrix(PT @ (asm.M @ asm.P))
    # Galerkin products are symmetric up to roundoff; symmetrize exactly
    K_ms = sparse.csr_matrix(0.5 * (K_ms + K_ms.T))
    M_ms = sparse.csr_matrix(0.5 * (M_ms + M_ms.T))
    M_fem = sparse.csr_matrix(0.5 * (M_fem + M_fem.T))
    return MultiscaleSystem(K_ms, M_ms, M_fem, B, asm.P, asm.coarse.mesh_size)


def measure_localization_decay(asm, ell_max, ell_min=1, IH=None, jobs=1):
    """Rows (ell, max_z |(C_h - C^l_h) Lambda_z|_1 / |Lambda_z|_1).

    Seminorms use the unit-coefficient fine stiffness.
    """
    if IH is None:
        IH = build_IH(asm.coarse, asm.fine, asm.bc)
    K1 = assemble_stiffness(asm.fine, np.ones(asm.fine.n_elems), asm.bc)
    Qg = build_corrector_set(asm, global_layers(asm.coarse), IH, jobs).Q
    denom = np.sqrt(np.asarray((asm.P.T @ (K1 @ asm.P)).diagonal()))
    rows = []
    for ell in range(ell_min, ell_max + 1):
        D = sparse.csc_matrix(Qg - build_corrector_set(asm, ell, IH, jobs).Q)
        num = np.sqrt(np.maximum(np.asarray((D.T @ (K1 @ D)).diagonal()), 0.0))
        rows.append((ell, float(np.max(num / denom))))
        log.info("localization decay ell=%d: %.3e", ell, rows[-1][1])
    return rows


def corrector_cache_key(coarse_level, fine_level, coeff_hash, layers, bc):
    payload = json.dumps({"v": CACHE_VERSION, "coarse": coarse_level, "fine": fine_level,
                          "coeff": coeff_hash, "layers": layers,
                          "bc": Boundary(bc).value}, sort_keys=True)
    return hashlib.sha256(payload.encode()).hexdigest()[:32]


def cache_dir():
    d = Path(os.environ.get(CACHE_ENV) or Path.home() / ".cache" / "lodwave")
    d.mkdir(parents=True, exist_ok=True)
    return d


def atomic_save(path, writer):
    """Run ``writer(fileobj)`` into a temp file, then rename onto ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            writer(fh)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save_corrector_set(cset, path):
    cs = cset.correctors
    meta = json.dumps({"coarse_level": cset.coarse_level, "fine_level": cset.fine_level,
                       "bc": Boundary(cset.bc).value, "layers": cset.layers,
                       "coeff_hash": cset.coeff_hash, "version": CACHE_VERSION})
    Q = sparse.csc_matrix(cset.Q)
    arrays = dict(
        meta=np.array(meta),
        T=np.array([c.T for c in cs], dtype=np.int64),
        i=np.array([c.i for c in cs], dtype=np.int64),
        sizes=np.array([c.dofs.size for c in cs], dtype=np.int64),
        dofs=np.concatenate([c.dofs for c in cs]) if cs else np.zeros(0, np.int64),
        values=np.concatenate([c.values for c in cs]) if cs else np.zeros(0),
        columns=np.array([c.column for c in cs], dtype=np.int64),
        Q_shape=np.array(Q.shape))
    atomic_save(path, lambda fh: np.savez(fh, **arrays))


def load_corrector_set(path):
    with np.load(path) as z:
        meta = json.loads(str(z["meta"]))
        if meta.get("version") != CACHE_VERSION:
            raise ValueError(f"unsupported corrector cache version in {path}")
        offsets = np.concatenate([[0], np.cumsum(z["sizes"])])
        dofs, values = z["dofs"], z["values"]
        cs = [ElementCorrector(int(T), int(i), meta["layers"],
                               dofs[offsets[k]:offsets[k + 1]],
                               values[offsets[k]:offsets[k + 1]], int(col))
              for k, (T, i, col) in enumerate(zip(z["T"], z["i"], z["columns"]))]
        shape = tuple(int(s) for s in z["Q_shape"])
    return CorrectorSet(meta["coarse_level"], meta["fine_level"], Boundary(meta["bc"]),
                        meta["layers"], meta["coeff_hash"], cs,
                        assemble_correction_matrix(cs, shape))


def cached_corrector_set(asm, layers, IH=None, jobs=1, directory=None, use_cache=True):
    """Load the corrector set from the cache or build and store it."""
    key = corrector_cache_key(asm.coarse.level, asm.fine.level,
                              coefficient_hash(asm.coeff), int(layers), asm.bc)
    path = Path(directory or cache_dir()) / f"correctors-{key}.npz"
    if use_cache and path.exists():
        log.info("loading correctors from %s", path)
        return load_corrector_set(path)
    cset = build_corrector_set(asm, layers, IH, jobs)
    if use_cache:
        save_corrector_set(cset, path)
    return cset
