"""Fast property checks on small meshes, run by ``lodwave selftest``."""
import numpy as np

from . import coefficient as coef
from .assembly import assemble_stiffness
from .corrector import (build_assemblies, build_corrector_set, build_multiscale_system,
                        global_layers)
from .interpolation import build_IH
from .leapfrog import (MethodSpec, TimeGrid, ZeroSource, cfl_timestep, leapfrog_run,
                       multiscale_system_for)
from .mesh import Boundary, build_mesh, free_vertices, prolongation_matrix


def check_projectivity(rng):
    coarse, fine = build_mesh(2), build_mesh(4)
    worst = 0.0
    for bc in Boundary:
        IH = build_IH(coarse, fine, bc)
        P = prolongation_matrix(coarse, fine)[free_vertices(fine, bc)][:, free_vertices(coarse, bc)]
        v = rng.standard_normal((P.shape[1], 10))
        worst = max(worst, np.abs(IH.matrix @ (P @ v) - v).max())
    return worst <= 1e-12, f"max |I_H P v - v| = {worst:.2e}"


def _small_system(layers):
    coarse, fine = build_mesh(2), build_mesh(4)
    fld = coef.synthetic_checkerboard(1, 1 / 16, 0.5, 2.0)
    asm = build_assemblies(coarse, fine, coef.sample_to_mesh(fld, fine), Boundary.LEFT)
    cset = build_corrector_set(asm, layers)
    return asm, build_multiscale_system(cset, asm), fld


def check_orthogonality(rng):
    asm, ms, _ = _small_system(global_layers(build_mesh(2)))
    IH = build_IH(asm.coarse, asm.fine, asm.bc)
    worst = 0.0
    for _ in range(5):
        v, w = rng.standard_normal(ms.B.shape[1]), rng.standard_normal(asm.K.shape[0])
        w = w - ms.P @ IH(w)  # into the kernel of I_H
        Bv = ms.B @ v
        scale = np.sqrt(Bv @ (asm.K @ Bv)) * np.sqrt(w @ (asm.K @ w))
        worst = max(worst, abs(Bv @ (asm.K @ w)) / scale)
    return worst <= 1e-8, f"max relative a(Bv, w) = {worst:.2e}"


def check_energy(rng):
    asm, ms, fld = _small_system(1)
    system = multiscale_system_for("lod", ms, asm, fld.beta)
    dt = cfl_timestep(ms.mesh_size, fld.beta)
    u0 = rng.standard_normal(ms.B.shape[1])
    _, trace = leapfrog_run(MethodSpec("lod"), system, u0, np.zeros_like(u0),
                            ZeroSource(asm.K.shape[0]), TimeGrid.from_dt(dt, 1.0))
    drift = trace.relative_drift()
    return drift <= 1e-10, f"relative energy drift {drift:.2e}"


def check_stiffness_kernel(rng):
    m = build_mesh(3)
    K = assemble_stiffness(m, rng.uniform(0.5, 2.0, m.n_elems))
    r = np.abs(K @ np.ones(m.n_verts)).max()
    return r <= 1e-12, f"|K 1|_inf = {r:.2e}"


CHECKS = {
    "projectivity": check_projectivity,
    "corrector_orthogonality": check_orthogonality,
    "energy_conservation": check_energy,
    "stiffness_constants": check_stiffness_kernel,
}


def run_selftest(seed=0):
    rng = np.random.default_rng(seed)
    out = []
    for name, fn in CHECKS.items():
        ok, detail = fn(rng)
        out.append((name, bool(ok), detail))
    return out
