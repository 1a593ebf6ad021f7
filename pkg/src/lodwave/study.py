"""Convergence studies: problem setups, reference solutions, error tables."""
from dataclasses import asdict, dataclass, field
import csv
import hashlib
import json
import logging
import math
import multiprocessing
import os
import platform
import time
from pathlib import Path

import numpy as np
import scipy
import scipy.sparse as sparse

from . import coefficient as coef
from .assembly import assemble_load, assemble_mass, assemble_stiffness, factor_spd
from .corrector import (CorrectorSet, build_assemblies, build_multiscale_system,
                        cache_dir, cached_corrector_set)
from .errors import LodWaveError
from .interpolation import build_IH
from .leapfrog import (MethodSpec, SeparableSource, TimeGrid, Trajectory, Variant,
                       ZeroSource, cfl_timestep, elevate_to_fine, fine_fem_system,
                       leapfrog_run, multiscale_system_for)
from .mesh import Boundary, build_mesh

log = logging.getLogger(__name__)

EXAMPLES = ("example2", "synthetic_ex1")


@dataclass
class ExperimentConfig:
    example: str = "example2"
    coarse_levels: list = field(default_factory=lambda: [1, 2, 3, 4, 5])
    fine_level: int = 7
    ell: list = field(default_factory=lambda: [2, 4])
    T: float = 1.0
    methods: list = field(default_factory=lambda: ["lod"])
    seed: int = 0
    epsilon: float = 1.0 / 64
    zero_source: bool = False
    output_dir: str = "results"
    jobs: int = 1
    use_cache: bool = True

    def __post_init__(self):
        if isinstance(self.ell, int):
            self.ell = [self.ell]
        if isinstance(self.methods, str):
            self.methods = [self.methods]
        self.methods = [Variant(m).value for m in self.methods]
        self.validate()

    def validate(self):
        if self.example not in EXAMPLES:
            raise ValueError(f"unknown example {self.example!r}; choose from {EXAMPLES}")
        if not self.coarse_levels:
            raise ValueError("coarse_levels is empty")
        if self.fine_level <= max(self.coarse_levels):
            raise ValueError(
                f"fine_level {self.fine_level} must exceed every coarse level")
        if self.example == "example2" and self.fine_level < 6:
            raise ValueError("example2 needs fine_level >= 6 to resolve the coefficient")
        if not self.T > 0:
            raise ValueError("final time T must be positive")

    @classmethod
    def from_json(cls, path):
        with open(path) as fh:
            data = json.load(fh)
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**data)

    def to_dict(self):
        return asdict(self)


@dataclass
class ProblemSetup:
    """Everything on the fine mesh that does not depend on the coarse mesh."""
    name: str
    field: coef.CoefficientField
    fine: object
    bc: Boundary
    coeff: np.ndarray
    K: sparse.csr_matrix  # coefficient stiffness, free dofs
    M: sparse.csr_matrix  # mass, free dofs
    K1: sparse.csr_matrix  # unit-coefficient stiffness, free dofs
    u0: np.ndarray
    v0: np.ndarray
    source: object
    T: float

    @property
    def beta(self):
        return self.field.beta

    def describe(self):
        return {"example": self.name, "fine_level": self.fine.level,
                "bc": self.bc.value, "coefficient": self.field.describe(),
                "coeff_hash": coef.coefficient_hash(self.coeff), "T": self.T}


def example2_initial(fine, K, bc):
    """u0 with a(u0, v) = (5 sin(pi x1) sin(pi x2), v) for all free v."""
    g = assemble_load(fine, bc, lambda x, t: 5 * np.sin(np.pi * x[:, 0]) * np.sin(np.pi * x[:, 1]))
    return factor_spd(K, "example 2 stiffness").solve(g), g


def make_problem(config):
    fine = build_mesh(config.fine_level)
    if config.example == "example2":
        fld, bc = coef.example2(), Boundary.LEFT
    else:
        fld = coef.synthetic_checkerboard(config.seed, config.epsilon, 0.04, 1.96)
        bc = Boundary.FULL
    values = coef.sample_to_mesh(fld, fine)
    K = assemble_stiffness(fine, values, bc)
    M = assemble_mass(fine, bc)
    K1 = assemble_stiffness(fine, np.ones(fine.n_elems), bc)
    n = K.shape[0]
    if config.example == "example2":
        u0, _ = example2_initial(fine, K, bc)
        source = SeparableSource(fine, bc, lambda x: np.sin(4 * np.pi * x[:, 0]),
                                 lambda t: 1.0 - t)
    else:
        u0 = np.zeros(n)
        source = SeparableSource(fine, bc, lambda x: np.ones(len(x)), lambda t: 1.0)
    if config.zero_source:
        source = ZeroSource(n)
    return ProblemSetup(config.example, fld, fine, bc, values, K, M, K1, u0,
                        np.zeros(n), source, config.T)


def coarse_timestep(setup, coarse_level):
    return cfl_timestep(build_mesh(coarse_level).mesh_size, setup.beta)


def reference_timing(setup, coarse_levels):
    """(dt_ref, stride, n_steps): a fine step dividing every coarse step.

    dt_ref = dt_c / ceil(dt_c / dt_cfl) for the finest coarse level; coarser
    levels have dyadic multiples of its step.
    """
    dt_cfl = cfl_timestep(setup.fine.mesh_size, setup.beta)
    dt_c = coarse_timestep(setup, max(coarse_levels))
    stride = math.ceil(dt_c / dt_cfl * (1 - 1e-9))
    dt_ref = dt_c / stride
    n_steps = 0
    for L in coarse_levels:
        g = TimeGrid.from_dt(coarse_timestep(setup, L), setup.T)
        ratio = g.dt / dt_ref
        if abs(ratio - round(ratio)) > 1e-9 * ratio:
            raise ValueError(f"coarse step of level {L} is not a multiple of {dt_ref}")
        n_steps = max(n_steps, g.n_steps * int(round(ratio)))
    return dt_ref, stride, n_steps


def reference_solution(setup, coarse_levels, use_cache=True, directory=None):
    """Fine standard FEM trajectory stored at every coarse-aligned step."""
    dt, stride, n_steps = reference_timing(setup, coarse_levels)
    grid = TimeGrid(dt, setup.T, n_steps)
    system = fine_fem_system(setup.K, setup.M, setup.fine.mesh_size, setup.beta)
    n_kept = n_steps // stride + 1
    key = hashlib.sha256(json.dumps(
        {"v": 1, "problem": setup.describe(), "dt": repr(dt), "stride": stride,
         "n": n_steps, "zero": isinstance(setup.source, ZeroSource)},
        sort_keys=True).encode()).hexdigest()[:32]
    path = Path(directory or cache_dir()) / f"reference-{key}.npy"
    if use_cache and path.exists():
        log.info("loading reference from %s", path)
        states = np.load(path, mmap_mode="r")
        return Trajectory(dt, np.arange(0, n_steps + 1, stride), states)
    log.info("reference: level %d, dt=%.4g, %d steps", setup.fine.level, dt, n_steps)
    if not use_cache:
        traj, _ = leapfrog_run(MethodSpec(Variant.FEM), system, setup.u0, setup.v0,
                               setup.source, grid, keep_every=stride)
        return traj
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + f".{os.getpid()}.tmp")
    try:
        storage = np.lib.format.open_memmap(tmp, mode="w+", dtype=np.float64,
                                            shape=(n_kept, setup.u0.size))
        leapfrog_run(MethodSpec(Variant.FEM), system, setup.u0, setup.v0, setup.source,
                     grid, keep_every=stride, storage=storage)
        storage.flush()
        del storage
        os.replace(tmp, path)
    finally:
        if tmp.exists():
            tmp.unlink()
    return Trajectory(dt, np.arange(0, n_steps + 1, stride), np.load(path, mmap_mode="r"))


def error_norm(traj, reference, M, K1, n_steps=None):
    """sqrt(sum_{i=1}^N dt (|d_i|_L2^2 + |grad d_i|_L2^2)), d_i = traj - reference at t_i.

    ``traj`` is sampled at its own steps 1..N (dt of ``traj``); the reference
    must hold states at exactly those times.
    """
    N = traj.steps[-1] if n_steps is None else n_steps
    total = 0.0
    for i in range(1, N + 1):
        k = traj.index_of_time(i * traj.dt)
        r = reference.index_of_time(i * traj.dt)
        if k is None or r is None:
            raise ValueError(f"time {i * traj.dt:.6g} is missing from a trajectory")
        d = traj.fine(k) - reference.fine(r)
        total += traj.dt * (d @ (M @ d) + d @ (K1 @ d))
    return math.sqrt(total)


@dataclass
class ErrorRow:
    H: float
    ell: int
    variant: str
    error: float
    seconds: float
    order: float = float("nan")
    coarse_level: int = 0
    status: str = "ok"


@dataclass
class ErrorTable:
    rows: list

    def series(self):
        out = {}
        for r in self.rows:
            out.setdefault((r.variant, r.ell), []).append(r)
        return out

    def fill_orders(self):
        for rows in self.series().values():
            rows.sort(key=lambda r: -r.H)
            for a, b in zip(rows, rows[1:]):
                if a.error > 0 and b.error > 0:
                    b.order = math.log(a.error / b.error) / math.log(a.H / b.H)
        self.rows.sort(key=lambda r: (r.variant, r.ell, -r.H))
        return self

    def lookup(self, variant, ell, coarse_level):
        for r in self.rows:
            if (r.variant, r.ell, r.coarse_level) == (variant, ell, coarse_level):
                return r
        raise KeyError((variant, ell, coarse_level))


def convergence_slope(H, errors):
    """Least-squares slope of log(error) against log(H)."""
    return float(np.polyfit(np.log(H), np.log(errors), 1)[0])


class CoarseStage:
    """Per-coarse-level assemblies shared by the rows of one level."""

    def __init__(self, setup, level):
        self.coarse = build_mesh(level)
        self.asm = build_assemblies(self.coarse, setup.fine, setup.coeff, setup.bc)
        self.IH = build_IH(self.coarse, setup.fine, setup.bc)


def coarse_system(setup, stage, variant, ell, use_cache=True, jobs=1):
    """LeapfrogSystem of one coarse variant (correctors built or loaded)."""
    variant = Variant(variant)
    asm = stage.asm
    if variant is Variant.FEM:
        cset = _no_correction(asm)
    else:
        cset = cached_corrector_set(asm, ell, stage.IH, jobs=jobs, use_cache=use_cache)
    ms = build_multiscale_system(cset, asm)
    return multiscale_system_for(variant, ms, asm, setup.beta)


def simulate(setup, stage, variant, ell, dt=None, use_cache=True, jobs=1,
             enforce_cfl=True):
    """Coarse leapfrog run from I_H u0, I_H v0; dt defaults to the CFL step."""
    system = coarse_system(setup, stage, variant, ell, use_cache, jobs)
    if dt is None:
        dt = cfl_timestep(stage.coarse.mesh_size, setup.beta)
    grid = TimeGrid.from_dt(dt, setup.T)
    traj, energy = leapfrog_run(MethodSpec(variant), system, stage.IH(setup.u0),
                                stage.IH(setup.v0), setup.source, grid,
                                enforce_cfl=enforce_cfl)
    return elevate_to_fine(traj, system.basis), energy


def run_row(setup, reference, stage, variant, ell, use_cache=True, jobs=1):
    t0 = time.perf_counter()
    traj, _ = simulate(setup, stage, variant, ell, use_cache=use_cache, jobs=jobs)
    err = error_norm(traj, reference, setup.M, setup.K1)
    return ErrorRow(stage.coarse.mesh_size, int(ell), Variant(variant).value, err,
                    time.perf_counter() - t0, coarse_level=stage.coarse.level)


def _no_correction(asm):
    return CorrectorSet(asm.coarse.level, asm.fine.level, asm.bc, 0, "",
                        [], sparse.csc_matrix(asm.P.shape))


_ROW_STATE = {}


def _row_worker(task):
    level, variant, ell = task
    s = _ROW_STATE
    try:
        return run_row(s["setup"], s["reference"], CoarseStage(s["setup"], level),
                       variant, ell, s["use_cache"])
    except LodWaveError as exc:
        return _failed_row(level, variant, ell, exc)


def _failed_row(level, variant, ell, exc):
    log.error("row (level=%d, %s, ell=%d) failed: %s", level, variant, ell, exc)
    return ErrorRow(build_mesh(level).mesh_size, int(ell), Variant(variant).value,
                    float("nan"), 0.0, coarse_level=level,
                    status=f"{type(exc).__name__}: {exc}")


def _tasks(config):
    tasks = []
    for level in config.coarse_levels:
        for variant in config.methods:
            ells = [0] if Variant(variant) is Variant.FEM else config.ell
            tasks.extend((level, variant, ell) for ell in ells)
    return tasks


def run_convergence_study(config, setup=None, reference=None, write=True):
    setup = setup or make_problem(config)
    if reference is None:
        reference = reference_solution(setup, config.coarse_levels, config.use_cache)
    tasks = _tasks(config)
    if config.jobs > 1 and len(tasks) > 1:
        _ROW_STATE.update(setup=setup, reference=reference, use_cache=config.use_cache)
        try:
            with multiprocessing.get_context("fork").Pool(config.jobs) as pool:
                rows = pool.map(_row_worker, tasks)
        finally:
            _ROW_STATE.clear()
    else:
        rows, stages = [], {}
        for level, variant, ell in tasks:
            try:
                if level not in stages:
                    stages = {level: CoarseStage(setup, level)}
                rows.append(run_row(setup, reference, stages[level], variant, ell,
                                    config.use_cache))
                log.info("level %d %s ell=%d: error %.4e", level, variant, ell,
                         rows[-1].error)
            except LodWaveError as exc:
                rows.append(_failed_row(level, variant, ell, exc))
    table = ErrorTable(rows).fill_orders()
    if write:
        write_outputs(table, config, setup)
    return table


CSV_COLUMNS = ("H", "ell", "variant", "error", "order", "seconds")


def write_outputs(table, config, setup):
    out = Path(config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "errors.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_COLUMNS)
        for r in table.rows:
            w.writerow([repr(r.H), r.ell, r.variant, repr(r.error), repr(r.order),
                        f"{r.seconds:.3f}"])
    meta = {"config": config.to_dict(), "problem": setup.describe(),
            "rows": [asdict(r) for r in table.rows],
            "environment": {"python": platform.python_version(),
                            "numpy": np.__version__, "scipy": scipy.__version__,
                            "platform": platform.platform()}}
    with open(out / "results.json", "w") as fh:
        json.dump(meta, fh, indent=2, default=float)
    (out / "errors.gp").write_text(gnuplot_script(table, "errors.csv"))


def gnuplot_script(table, csv_name):
    lines = ['set datafile separator ","', "set logscale xy",
             "set xrange [0.01:1]", "set xlabel 'mesh size H'",
             "set ylabel 'error in discrete L2(0,T;H1) norm'", "set key top left",
             "set terminal pngcairo size 800,600",
             "set output 'errors.png'"]
    plots = []
    for variant, ell in table.series():
        sel = f'(strcol(3) eq "{variant}" && $2 == {ell} ? $4 : 1/0)'
        plots.append(f"'{csv_name}' using 1:{sel} every ::1 with linespoints "
                     f"title '{variant}, l={ell}'")
    plots.append("0.0625*x title 'order 1' dashtype 2 lc rgb 'black'")
    lines.append("plot " + ", \\\n     ".join(plots))
    return "\n".join(lines) + "\n"
