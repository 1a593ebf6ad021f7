import math

import numpy as np
import pytest

from lodwave import coefficient as coef
from lodwave.errors import ResolutionError
from lodwave.mesh import build_mesh


def test_example2_point_values():
    assert coef.example2_eval([0.1, 0.1]) == pytest.approx(1.0)
    # floor factors at 0.6 are 1*3 + 0*4 = 3 in each direction
    expected = 1.9 * 3 * 3 * math.sin(19)**2 * math.sin(38)**2 + 1
    assert coef.example2_eval([0.6, 0.6]) == pytest.approx(expected, rel=1e-14)
    assert expected == pytest.approx(1.03374, abs=1e-5)


def test_example2_bounds_on_grid():
    x = (np.arange(100) + 0.37) / 100
    X, Y = np.meshgrid(x, x)
    v = coef.example2_eval(np.stack([X, Y], axis=-1))
    assert v.min() >= 1.0
    assert v.max() <= 1.9 * 9 + 1


def test_example2_sampled_extremes_level8():
    v = coef.sample_to_mesh(coef.example2(), build_mesh(8))
    assert v.min() == pytest.approx(1.0)
    assert v.max() == pytest.approx(17.78, abs=5e-3)


def test_example2_midpoint_element_value():
    m = build_mesh(8)
    v = coef.sample_to_mesh(coef.example2(), m)
    i = int(0.1 / m.side)
    assert v[m.element_index(i, i)] == pytest.approx(1.0)


def test_example2_underresolved():
    with pytest.raises(ResolutionError):
        coef.sample_to_mesh(coef.example2(), build_mesh(5))


def test_refinement_consistency_example2():
    v6 = coef.sample_to_mesh(coef.example2(), build_mesh(6)).reshape(64, 64)
    v8 = coef.sample_to_mesh(coef.example2(), build_mesh(8)).reshape(256, 256)
    np.testing.assert_array_equal(np.kron(v6, np.ones((4, 4))), v8)


def test_constant_field():
    v = coef.sample_to_mesh(coef.constant(1.0), build_mesh(3))
    assert np.all(v == 1.0)


def test_checkerboard_constant_when_alpha_equals_beta():
    f = coef.synthetic_checkerboard(3, 1 / 8, 1.0, 1.0)
    assert np.all(coef.sample_to_mesh(f, build_mesh(4)) == 1.0)


def test_checkerboard_deterministic_and_bounded():
    a = coef.synthetic_checkerboard(7, 1 / 128, 0.04, 1.96)
    b = coef.synthetic_checkerboard(7, 1 / 128, 0.04, 1.96)
    va, vb = (coef.sample_to_mesh(f, build_mesh(8)) for f in (a, b))
    np.testing.assert_array_equal(va, vb)
    assert va.min() >= 0.04 and va.max() <= 1.96
    c = coef.synthetic_checkerboard(8, 1 / 128, 0.04, 1.96)
    assert not np.array_equal(va, coef.sample_to_mesh(c, build_mesh(8)))


def test_checkerboard_refinement_consistency():
    f = coef.synthetic_checkerboard(1, 1 / 16, 0.5, 2.0)
    v4 = coef.sample_to_mesh(f, build_mesh(4)).reshape(16, 16)
    v6 = coef.sample_to_mesh(f, build_mesh(6)).reshape(64, 64)
    np.testing.assert_array_equal(np.kron(v4, np.ones((4, 4))), v6)


@pytest.mark.parametrize("eps", [0.006, 0.3, 3.0])
def test_checkerboard_rejects_nondyadic(eps):
    with pytest.raises(ValueError):
        coef.synthetic_checkerboard(0, eps, 0.04, 1.96)


def test_checkerboard_resolution_error():
    f = coef.synthetic_checkerboard(0, 1 / 64, 0.04, 1.96)
    with pytest.raises(ResolutionError):
        coef.sample_to_mesh(f, build_mesh(5))


def test_export_csv(tmp_path):
    m = build_mesh(2)
    v = np.arange(16.0)
    coef.export_csv(v, m, tmp_path / "a.csv")
    back = np.loadtxt(tmp_path / "a.csv", delimiter=",")
    assert back.shape == (4, 4)
    np.testing.assert_array_equal(back.ravel(), v)
