"""Scalar coefficient fields and their sampling onto fine meshes."""
from dataclasses import dataclass
import hashlib

import numpy as np

from .errors import ResolutionError

# finest scale of the Example 2 formula (floor(64 x2))
EXAMPLE2_RESOLUTION = 1.0 / 64
EXAMPLE2_ALPHA = 1.0
EXAMPLE2_BETA = 17.78
EXAMPLE2_EPSILON = 0.02


def _floor_factor(s):
    return (np.floor(2 * s) * np.floor(8 * (1 - s))
            + np.floor(2 * (1 - s)) * np.floor(8 * s))


def example2_eval(x):
    """Evaluate the Example 2 coefficient at points ``x`` of shape (..., 2)."""
    x = np.asarray(x, dtype=float)
    x1, x2 = x[..., 0], x[..., 1]
    return (1.9 * _floor_factor(x1) * _floor_factor(x2)
            * np.sin(np.floor(32 * x1))**2 * np.sin(np.floor(64 * x2))**2 + 1.0)


@dataclass(frozen=True)
class CoefficientField:
    kind: str  # "example2", "checkerboard" or "constant"
    alpha: float
    beta: float
    epsilon: float
    resolution: float = 0.0  # largest admissible fine cell side; 0 = any
    seed: int = None
    value: float = None
    cells: np.ndarray = None  # checkerboard values on the epsilon grid

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        if self.kind == "example2":
            return example2_eval(x)
        if self.kind == "constant":
            return np.full(x.shape[:-1], self.value)
        m = self.cells.shape[0]
        i = np.minimum((x[..., 0] * m).astype(int), m - 1)
        j = np.minimum((x[..., 1] * m).astype(int), m - 1)
        return self.cells[j, i]

    def describe(self):
        d = {"kind": self.kind, "alpha": self.alpha, "beta": self.beta,
             "epsilon": self.epsilon}
        if self.seed is not None:
            d["seed"] = self.seed
        if self.value is not None:
            d["value"] = self.value
        return d


def example2():
    # epsilon is metadata; the resolution requirement is the 1/64 grid
    return CoefficientField("example2", EXAMPLE2_ALPHA, EXAMPLE2_BETA,
                            EXAMPLE2_EPSILON, resolution=EXAMPLE2_RESOLUTION)


def constant(value=1.0):
    return CoefficientField("constant", value, value, 1.0, value=float(value))


def synthetic_checkerboard(seed, epsilon, alpha, beta):
    """I.i.d. uniform values in [alpha, beta] on a dyadic epsilon-grid."""
    if not alpha > 0 or beta < alpha:
        raise ValueError(f"need 0 < alpha <= beta, got alpha={alpha}, beta={beta}")
    m = 1.0 / epsilon
    if not (m >= 1 and m == round(m) and (int(m) & (int(m) - 1)) == 0):
        raise ValueError(f"epsilon must be a dyadic fraction 2**-k, got {epsilon}")
    m = int(m)
    rng = np.random.default_rng(seed)
    cells = rng.uniform(alpha, beta, size=(m, m))
    return CoefficientField("checkerboard", float(alpha), float(beta),
                            float(epsilon), resolution=float(epsilon),
                            seed=seed, cells=cells)


def sample_to_mesh(field, mesh):
    """One coefficient value per element, taken at the element midpoint."""
    if field.resolution and mesh.side > field.resolution * (1 + 1e-12):
        raise ResolutionError(
            f"mesh side {mesh.side} does not resolve the coefficient scale "
            f"{field.resolution}")
    values = np.asarray(field(mesh.element_midpoints()), dtype=float)
    lo, hi = values.min(), values.max()
    tol = 1e-12 * field.beta
    if lo < field.alpha - tol or hi > field.beta + tol:
        raise ValueError(
            f"sampled values [{lo}, {hi}] violate bounds [{field.alpha}, {field.beta}]")
    return values


def coefficient_hash(values):
    return hashlib.sha256(np.ascontiguousarray(values, dtype="<f8").tobytes()).hexdigest()


def export_csv(values, mesh, path):
    """Write element values row-major (one mesh row of elements per line)."""
    np.savetxt(path, np.asarray(values).reshape(mesh.n, mesh.n), delimiter=",",
               fmt="%.10g")
