"""Explicit leapfrog time stepping with a Taylor start and energy tracking.

All variants share one recursion

    M (u_{n+1} - 2 u_n + u_{n-1}) / dt**2 + K u_n = F_n

and differ only in (M, K, F):

    fem             fine (or coarse Galerkin) mass and stiffness
    lod             M_ms, K_ms and B^T F_fine
    lod_simplified  M_fem, K_ms and P^T F_fine
"""
from dataclasses import dataclass, field
import csv
from enum import Enum
import math

import numpy as np
import scipy.sparse as sparse

from .assembly import assemble_load, factor_spd
from .errors import CFLViolationError, InstabilityError, NumericError

CFL_CONSTANT = 0.14
BLOWUP_RATIO = 1e6


class Variant(str, Enum):
    FEM = "fem"
    LOD = "lod"
    LOD_SIMPLIFIED = "lod_simplified"


@dataclass(frozen=True)
class MethodSpec:
    variant: Variant = Variant.LOD
    lumped_mass: bool = False

    def __post_init__(self):
        object.__setattr__(self, "variant", Variant(self.variant))


@dataclass(frozen=True)
class TimeGrid:
    dt: float
    final_time: float
    n_steps: int

    @classmethod
    def from_dt(cls, dt, final_time):
        if not dt > 0:
            raise ValueError(f"time step must be positive, got {dt}")
        n = max(1, math.ceil(final_time / dt * (1 - 1e-12)))
        return cls(float(dt), float(final_time), n)

    @property
    def times(self):
        return self.dt * np.arange(self.n_steps + 1)


def cfl_timestep(H, beta):
    """dt = sqrt(2) * beta**-1/2 * 0.14 * H."""
    if not H > 0 or not beta > 0:
        raise ValueError("mesh size and beta must be positive")
    return math.sqrt(2.0) * CFL_CONSTANT * H / math.sqrt(beta)


@dataclass
class LeapfrogSystem:
    """Matrices of one method variant acting on its own dof vectors."""
    M: sparse.spmatrix
    K: sparse.spmatrix
    mesh_size: float
    beta: float
    variant: Variant = Variant.FEM
    load_map: sparse.spmatrix = None  # fine free load -> system load
    basis: sparse.spmatrix = None  # system dofs -> fine free dofs

    def project_load(self, F):
        return F if self.load_map is None else self.load_map @ F


def fine_fem_system(K, M, mesh_size, beta):
    return LeapfrogSystem(M, K, mesh_size, beta, Variant.FEM)


def multiscale_system_for(method, ms, asm, beta):
    """(M, K, load map, basis) for a coarse variant from a MultiscaleSystem."""
    method = method if isinstance(method, MethodSpec) else MethodSpec(method)
    v = method.variant
    BT = sparse.csr_matrix(ms.B.T)
    PT = sparse.csr_matrix(ms.P.T)
    if v is Variant.LOD:
        return LeapfrogSystem(ms.M_ms, ms.K_ms, ms.mesh_size, beta, v, BT, ms.B)
    if v is Variant.LOD_SIMPLIFIED:
        return LeapfrogSystem(ms.M_fem, ms.K_ms, ms.mesh_size, beta, v, PT, ms.B)
    # classical coarse Q1 Galerkin with the resolved coefficient
    K = sparse.csr_matrix(PT @ (asm.K @ ms.P))
    return LeapfrogSystem(ms.M_fem, K, ms.mesh_size, beta, v, PT, ms.P)


class ZeroSource:
    def __init__(self, n):
        self.n = n

    def load(self, t):
        return np.zeros(self.n)


class SeparableSource:
    """f(x, t) = spatial(x) * temporal(t); the spatial load is assembled once."""

    def __init__(self, mesh, bc, spatial, temporal):
        self.vector = assemble_load(mesh, bc, lambda x, t: spatial(x))
        self.temporal = temporal

    def load(self, t):
        return self.temporal(t) * self.vector


class FunctionSource:
    def __init__(self, mesh, bc, f):
        self.mesh, self.bc, self.f = mesh, bc, f

    def load(self, t):
        return assemble_load(self.mesh, self.bc, self.f, t)


@dataclass
class Trajectory:
    dt: float
    steps: np.ndarray  # step index of every stored state
    states: np.ndarray  # shape (len(steps), n_dofs)
    basis: sparse.spmatrix = None

    def __len__(self):
        return len(self.steps)

    @property
    def times(self):
        return self.dt * np.asarray(self.steps)

    def fine(self, k):
        """Fine free-dof values of stored state ``k``."""
        u = np.asarray(self.states[k])
        return u if self.basis is None else self.basis @ u

    def index_of_time(self, t, tol=1e-9):
        """Position of the stored state at time ``t``, or None."""
        s = t / self.dt
        n = int(round(s))
        if abs(s - n) > tol * max(1.0, abs(s)):
            return None
        k = np.searchsorted(self.steps, n)
        if k < len(self.steps) and self.steps[k] == n:
            return int(k)
        return None


@dataclass
class EnergyTrace:
    dt: float
    energy: np.ndarray  # E^{n+1/2}, n = 0..N-1
    work: np.ndarray = field(default=None)  # dt (F_n, du_{n+1/2} + du_{n-1/2}), n = 1..N-1

    def relative_drift(self):
        e0 = self.energy[0]
        scale = abs(e0) if e0 != 0 else 1.0
        return float(np.max(np.abs(self.energy - e0)) / scale)


class _LumpedSolver:
    def __init__(self, M):
        d = np.asarray(M.sum(axis=1)).ravel()
        if not np.all(d > 0):
            raise NumericError("lumped mass matrix has nonpositive row sums")
        self.d = d

    def solve(self, b):
        return b / self.d


def mass_solver(M, lumped=False):
    return _LumpedSolver(M) if lumped else factor_spd(M, "mass matrix")


def taylor_first_step(Minv, K, u0, v0, F0, dt):
    """u1 = u0 + dt v0 + dt**2/2 M^-1 (F0 - K u0).

    ``Minv`` is a factorization (anything with ``solve``) or a sparse matrix.
    """
    if not hasattr(Minv, "solve"):
        Minv = factor_spd(Minv, "mass matrix")
    return u0 + dt * v0 + 0.5 * dt**2 * Minv.solve(F0 - K @ u0)


def leapfrog_run(method, system, u0, v0, source, grid, *, u1=None, enforce_cfl=True,
                 keep_every=1, storage=None, blowup=BLOWUP_RATIO):
    """Run the leapfrog recursion up to ``grid.n_steps``.

    ``source.load(t)`` returns fine free-dof load vectors; they are mapped to
    the variant's test space by the system. ``u1`` replaces the Taylor start.
    States at multiples of ``keep_every`` are stored, into ``storage`` if
    given (e.g. a memory map of shape (N // keep_every + 1, n_dofs)).
    """
    method = method if isinstance(method, MethodSpec) else MethodSpec(method)
    dt, N = grid.dt, grid.n_steps
    if enforce_cfl:
        limit = cfl_timestep(system.mesh_size, system.beta)
        if dt > limit * (1 + 1e-9):
            raise CFLViolationError(
                f"time step {dt:.6g} exceeds the CFL bound {limit:.6g} "
                f"(H={system.mesh_size:.6g}, beta={system.beta:g})")
    K = sparse.csr_matrix(system.K)
    M = sparse.csr_matrix(system.M)
    Minv = mass_solver(M, method.lumped_mass)
    if method.lumped_mass:
        M = sparse.diags(Minv.d)

    u0 = np.asarray(u0, dtype=float)
    v0 = np.asarray(v0, dtype=float)
    kept = np.arange(0, N + 1, keep_every)
    if storage is None:
        storage = np.empty((kept.size, u0.size))
    elif storage.shape != (kept.size, u0.size):
        raise ValueError(f"storage shape {storage.shape} != {(kept.size, u0.size)}")

    def keep(n, u):
        if n % keep_every == 0:
            storage[n // keep_every] = u

    def load(n):
        return system.project_load(source.load(n * dt))

    if u1 is None:
        u1 = taylor_first_step(Minv, K, u0, v0, load(0), dt)
    u_prev, u = u0, np.asarray(u1, dtype=float)
    Ku = K @ u
    energy = np.empty(N)
    work = np.empty(max(N - 1, 0))

    def check(n, d, u_n, Ku_n, u_next, Ku_next, E):
        if not (np.all(np.isfinite(u_next)) and np.isfinite(E)):
            raise InstabilityError(f"non-finite state at step {n + 1}", n + 1)
        # positive monitor; bounded by a fixed multiple of |E| while stable
        monitor = 0.5 * (d @ (M @ d) / dt**2 + 0.5 * (u_n @ Ku_n + u_next @ Ku_next))
        if monitor > 0 and monitor > blowup * abs(E):
            raise InstabilityError(
                f"unstable growth at step {n + 1} (|u|_inf={np.abs(u_next).max():.3e})",
                n + 1)

    keep(0, u_prev)
    d = u - u_prev
    energy[0] = 0.5 * (d @ (M @ d) / dt**2 + u_prev @ Ku)
    if N >= 1:
        keep(1, u)
    for n in range(1, N):
        F = load(n)
        u_next = 2 * u - u_prev + dt**2 * Minv.solve(F - Ku)
        Ku_next = K @ u_next
        d_next = u_next - u
        energy[n] = 0.5 * (d_next @ (M @ d_next) / dt**2 + u_next @ Ku)
        work[n - 1] = F @ (u_next - u_prev)
        check(n, d_next, u, Ku, u_next, Ku_next, energy[n])
        u_prev, u, Ku = u, u_next, Ku_next
        keep(n + 1, u)
    traj = Trajectory(dt, kept, storage)
    return traj, EnergyTrace(dt, energy, work)


def elevate_to_fine(traj, basis):
    """Trajectory whose ``fine(k)`` evaluates ``basis @ state``."""
    return Trajectory(traj.dt, traj.steps, traj.states, basis)


def export_trajectory_csv(traj, path, every=1, fine=False, labels=None):
    """Write every ``every``-th stored state as a CSV row (time, values).

    With ``fine=True`` the values are fine free-dof values ``basis @ u``.
    """
    first = traj.fine(0) if fine else np.asarray(traj.states[0])
    if labels is None:
        labels = [f"u{k}" for k in range(first.size)]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", *labels])
        for k in range(0, len(traj), every):
            u = traj.fine(k) if fine else np.asarray(traj.states[k])
            w.writerow([repr(float(traj.times[k]))] + [repr(float(x)) for x in u])
