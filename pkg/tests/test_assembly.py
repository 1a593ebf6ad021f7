import numpy as np
import pytest
import scipy.io
import scipy.sparse as sparse
from hypothesis import given, settings, strategies as st

from lodwave.assembly import (assemble_element_restricted_stiffness, assemble_load,
                              assemble_mass, assemble_stiffness, export_matrix_market,
                              factor_general, factor_spd, solve_spd)
from lodwave.corrector import build_assemblies
from lodwave.errors import NumericError
from lodwave.mesh import build_mesh


# global vertex order of one element is SW, SE, NW, NE; local is SW, SE, NE, NW
LOCAL = [0, 1, 3, 2]


def test_single_element_stiffness():
    K = assemble_stiffness(build_mesh(0), [1.0]).toarray()[np.ix_(LOCAL, LOCAL)]
    expected = np.array([[4, -1, -2, -1], [-1, 4, -1, -2],
                         [-2, -1, 4, -1], [-1, -2, -1, 4]]) / 6
    np.testing.assert_allclose(K, expected, atol=1e-15)


def test_single_element_mass():
    M = assemble_mass(build_mesh(0)).toarray()[np.ix_(LOCAL, LOCAL)]
    expected = np.array([[4, 2, 1, 2], [2, 4, 2, 1], [1, 2, 4, 2], [2, 1, 2, 4]]) / 36
    np.testing.assert_allclose(M, expected, atol=1e-15)


@pytest.mark.parametrize("level", [1, 3, 5])
def test_mass_integrates_one(level):
    m = build_mesh(level)
    M = assemble_mass(m)
    one = np.ones(m.n_verts)
    assert one @ M @ one == pytest.approx(1.0, abs=1e-13)


def test_stiffness_kernel_and_linear_energy():
    m = build_mesh(3)
    K = assemble_stiffness(m, np.ones(m.n_elems))
    x = m.vertex_coords()
    np.testing.assert_allclose(K @ np.ones(m.n_verts), 0.0, atol=1e-13)
    # |grad x|^2 integrates to 1
    assert x[:, 0] @ K @ x[:, 0] == pytest.approx(1.0, abs=1e-13)


def test_stiffness_scales_with_coefficient():
    m = build_mesh(2)
    K1 = assemble_stiffness(m, np.ones(m.n_elems))
    K3 = assemble_stiffness(m, 3 * np.ones(m.n_elems))
    assert abs(K3 - 3 * K1).max() < 1e-14


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 2**31 - 1))
def test_stiffness_symmetric_psd_and_additive(seed):
    rng = np.random.default_rng(seed)
    m = build_mesh(2)
    a, b = rng.uniform(0.1, 5, m.n_elems), rng.uniform(0.1, 5, m.n_elems)
    Ka, Kb = assemble_stiffness(m, a), assemble_stiffness(m, b)
    assert abs(Ka - Ka.T).max() < 1e-14
    assert np.linalg.eigvalsh(Ka.toarray()).min() > -1e-12
    assert abs(assemble_stiffness(m, a + b) - Ka - Kb).max() < 1e-13


def test_element_restricted_stiffness_sums_to_full():
    coarse, fine = build_mesh(1), build_mesh(3)
    rng = np.random.default_rng(0)
    A = rng.uniform(1, 2, fine.n_elems)
    total = sum(assemble_element_restricted_stiffness(fine, A, coarse, T)
                for T in range(coarse.n_elems))
    assert abs(total - assemble_stiffness(fine, A)).max() < 1e-13


def test_stiffness_rejects_wrong_length():
    with pytest.raises(ValueError):
        assemble_stiffness(build_mesh(2), np.ones(3))


def test_load_constant_source():
    m = build_mesh(3)
    b = assemble_load(m, None, lambda x, t: np.ones(len(x)))
    assert b.sum() == pytest.approx(1.0, abs=1e-14)
    s = m.side
    interior = m.vertex_coords()[:, 0] > 0
    interior &= m.vertex_coords()[:, 0] < 1
    interior &= m.vertex_coords()[:, 1] > 0
    interior &= m.vertex_coords()[:, 1] < 1
    np.testing.assert_allclose(b[interior], s**2)


def test_load_time_dependent_zero_at_final_time():
    m = build_mesh(3)
    f = lambda x, t: np.sin(4 * np.pi * x[:, 0]) * (1 - t)
    assert np.abs(assemble_load(m, "left", f, 1.0)).max() == 0.0
    assert np.abs(assemble_load(m, "left", f, 0.5)).max() > 0


def test_load_bilinear_exact():
    # 2x2 Gauss integrates bilinear * bilinear exactly: b = M f_nodal
    m = build_mesh(2)
    g = lambda x: 1 + x[:, 0] + 2 * x[:, 1] + 3 * x[:, 0] * x[:, 1]
    b = assemble_load(m, None, lambda x, t: g(x))
    np.testing.assert_allclose(b, assemble_mass(m) @ g(m.vertex_coords()), atol=1e-14)


@pytest.mark.parametrize("bc", ["full", "left"])
def test_restricted_matrices_spd(bc):
    m = build_mesh(3)
    K = assemble_stiffness(m, np.ones(m.n_elems), bc)
    assert np.linalg.eigvalsh(K.toarray()).min() > 0


def test_factor_spd_residual():
    coarse, fine = build_mesh(1), build_mesh(5)
    rng = np.random.default_rng(1)
    asm = build_assemblies(coarse, fine, rng.uniform(1, 17, fine.n_elems), "left")
    b = rng.standard_normal(asm.K.shape[0])
    solver = factor_spd(asm.K)
    assert solver.residual(solver.solve(b), b) < 1e-12
    np.testing.assert_allclose(solve_spd(asm.M, b), factor_spd(asm.M).solve(b))


def test_factor_spd_rejects_indefinite():
    A = sparse.csc_matrix(np.diag([1.0, -2.0, 3.0]))
    with pytest.raises(NumericError):
        factor_spd(A)
    # the general factorization handles it
    x = factor_general(A).solve(np.ones(3))
    np.testing.assert_allclose(x, [1, -0.5, 1 / 3])


def test_factor_spd_rejects_singular_neumann_stiffness():
    m = build_mesh(2)
    with pytest.raises(NumericError):
        factor_spd(assemble_stiffness(m, np.ones(m.n_elems)))


def test_export_matrix_market(tmp_path):
    m = build_mesh(2)
    K = assemble_stiffness(m, np.ones(m.n_elems), "full")
    export_matrix_market(K, tmp_path / "K.mtx", comment="test")
    back = scipy.io.mmread(str(tmp_path / "K.mtx"))
    assert abs(sparse.csr_matrix(back) - K).max() < 1e-15
