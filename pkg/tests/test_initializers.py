import numpy as np
import pytest

from nmtlite.errors import ShapeError
from nmtlite.initializers import init_weight, zeros
from nmtlite.rng import RngState


def test_orthogonal_square_is_orthogonal():
    w = init_weight("orthogonal", (4, 4), RngState(1)).data
    np.testing.assert_allclose(w.T @ w, np.eye(4), atol=1e-10)


def test_orthogonal_tall_has_orthonormal_columns():
    w = init_weight("orthogonal", (6, 3), RngState(1)).data
    np.testing.assert_allclose(w.T @ w, np.eye(3), atol=1e-10)


def test_orthogonal_wide_has_orthonormal_rows():
    w = init_weight("orthogonal", (3, 6), RngState(1)).data
    np.testing.assert_allclose(w @ w.T, np.eye(3), atol=1e-10)


def test_orthogonal_singular_values_are_one():
    w = init_weight("orthogonal", (8, 8), RngState(5)).data
    s = np.linalg.svd(w, compute_uv=False)
    np.testing.assert_allclose(s, 1.0, atol=1e-8)


def test_orthogonal_requires_rank_2():
    with pytest.raises(ShapeError):
        init_weight("orthogonal", (4,), RngState(0))


def test_zero_extent_rejected():
    with pytest.raises(ShapeError):
        init_weight("normal", (0, 3), RngState(0))


def test_xavier_sample_variance():
    # uniform(+-sqrt(6/200)) has variance 6/200/3 = 0.01
    w = init_weight("xavier", (100, 100), RngState(2)).data
    assert abs(w.var() - 0.01) / 0.01 < 0.20


def test_he_sample_variance():
    w = init_weight("he", (100, 50), RngState(3)).data
    assert abs(w.var() - 0.02) / 0.02 < 0.20


def test_normal_std():
    w = init_weight("normal", (200, 200), RngState(4)).data
    assert abs(w.std() - 0.01) / 0.01 < 0.05


def test_determinism_per_seed():
    for method in ("xavier", "he", "orthogonal", "normal"):
        a = init_weight(method, (5, 5), RngState(9)).data
        b = init_weight(method, (5, 5), RngState(9)).data
        assert a.tobytes() == b.tobytes()
        c = init_weight(method, (5, 5), RngState(10)).data
        assert a.tobytes() != c.tobytes()


def test_rng_children_are_independent_and_reproducible():
    root = RngState(1235)
    a = root.child("dropout", 3).normal(0, 1, (4,))
    b = root.child("dropout", 4).normal(0, 1, (4,))
    assert a.tobytes() != b.tobytes()
    again = RngState(1235).child("dropout", 3).normal(0, 1, (4,))
    assert a.tobytes() == again.tobytes()


def test_biases_are_zero():
    np.testing.assert_array_equal(zeros((7,)).data, np.zeros(7))


def test_unknown_method():
    with pytest.raises(ValueError):
        init_weight("glorot", (2, 2), RngState(0))
