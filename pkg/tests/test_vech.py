import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from coco.objective import vec_of, vech_of
from coco.vech import diag_selector, dup_sandwich, duplication, svec_scale, unvech, vec, vech, vech_multiplicity


class TestVech:
    def test_small_examples(self):
        A = np.array([[1.0, 2.0], [2.0, 3.0]])
        np.testing.assert_array_equal(vech_of(A), [1, 2, 3])
        np.testing.assert_array_equal(vec_of(A), [1, 2, 2, 3])
        np.testing.assert_array_equal(unvech([1.0, 2.0, 3.0], 2), A)

    def test_column_major_order(self):
        A = np.arange(9.0).reshape(3, 3)
        A = A + A.T
        np.testing.assert_array_equal(vech(A), [A[0, 0], A[1, 0], A[2, 0], A[1, 1], A[2, 1], A[2, 2]])

    def test_asymmetric_rejected(self):
        with pytest.raises(ValueError):
            vech(np.array([[1.0, 2.0], [2.1, 3.0]]))

    def test_unvech_length_checked(self):
        with pytest.raises(ValueError):
            unvech(np.ones(4), 2)

    @given(st.integers(1, 12), st.integers(0, 2**32 - 1))
    def test_duplication_identity(self, n, seed):
        rng = np.random.default_rng(seed)
        B = rng.standard_normal((n, n))
        A = B + B.T
        np.testing.assert_allclose(duplication(n) @ vech(A), vec(A), atol=0)
        np.testing.assert_array_equal(unvech(vech(A), n), A)


class TestDuplication:
    def test_d2(self):
        np.testing.assert_array_equal(duplication(2), [[1, 0, 0], [0, 1, 0], [0, 1, 0], [0, 0, 1]])

    def test_diag_selector(self):
        R2 = diag_selector(2)
        A = np.array([[1.0, 2.0], [3.0, 4.0]])
        np.testing.assert_array_equal(R2.T @ vec(A), [1.0, 4.0])
        R3 = diag_selector(3)
        np.testing.assert_array_equal(R3.T @ R3, np.eye(3))
        np.testing.assert_array_equal(np.flatnonzero(np.diag(R3 @ R3.T)), [0, 4, 8])

    @pytest.mark.parametrize("n", [1, 2, 4, 7])
    def test_multiplicity_and_sandwich(self, n):
        D = duplication(n)
        np.testing.assert_array_equal(vech_multiplicity(n), np.diag(D.T @ D))
        rng = np.random.default_rng(n)
        X = rng.standard_normal((n * n, n * n))
        np.testing.assert_allclose(dup_sandwich(X, n), D.T @ X @ D, rtol=1e-13, atol=1e-13)

    def test_svec_scale_is_isometry(self):
        rng = np.random.default_rng(0)
        B = rng.standard_normal((4, 4))
        A = B + B.T
        s = svec_scale(4)
        assert np.linalg.norm(s * vech(A)) == pytest.approx(np.linalg.norm(A), rel=1e-14)
