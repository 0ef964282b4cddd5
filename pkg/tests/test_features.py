import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from coco.errors import DataError, NumericalError
from coco.features import (
    FeatureMap,
    KernelOracle,
    KernelSpec,
    MatrixOracle,
    build_feature_map,
    constant_id_feature,
    eval_kernel,
    kernel_matrix,
    median_heuristic,
    pivoted_cholesky,
)

KINDS = [KernelSpec("cosine"), KernelSpec("gaussian", 0.7), KernelSpec("laplace", 1.3), KernelSpec("imq", 0.5)]


def nystrom_residual_trace(K, pivots):
    """Dense oracle: ``tr(K - K[:, P] K[P, P]^{-1} K[P, :])``."""
    P = list(pivots)
    C = K[:, P]
    return float(np.trace(K - C @ np.linalg.solve(K[np.ix_(P, P)], C.T)))


class TestKernels:
    def test_cosine_values(self):
        assert eval_kernel(KernelSpec("cosine"), [1, 0], [1, 0]) == 1.0
        # closed form <z,z'>/(|z||z'|) = 1/sqrt(2)
        assert eval_kernel(KernelSpec("cosine"), [1, 0], [1, 1]) == pytest.approx(0.7071068, abs=1e-7)

    def test_gaussian_value(self):
        assert eval_kernel(KernelSpec("gaussian", 1.0), [1, 0], [0, 1]) == pytest.approx(0.3678794, abs=1e-7)

    def test_laplace_imq_values(self):
        assert eval_kernel(KernelSpec("laplace", 2.0), [0, 0], [3, 4]) == pytest.approx(np.exp(-2.5))
        assert eval_kernel(KernelSpec("imq", 0.5), [0, 0], [1, 0]) == pytest.approx(1 / np.sqrt(1.5))

    def test_cosine_zero_vector(self):
        with pytest.raises(DataError):
            eval_kernel(KernelSpec("cosine"), [0, 0], [1, 0])

    def test_dimension_mismatch(self):
        for spec in KINDS:
            with pytest.raises(ValueError):
                eval_kernel(spec, [1, 0], [1, 0, 0])

    def test_invalid_spec(self):
        with pytest.raises(ValueError):
            KernelSpec("gaussian", 0.0)
        with pytest.raises(ValueError):
            KernelSpec("poly")

    @given(st.integers(0, 2**32 - 1), st.sampled_from(KINDS))
    def test_symmetry(self, seed, spec):
        rng = np.random.default_rng(seed)
        z, w = rng.standard_normal((2, 4))
        assert eval_kernel(spec, z, w) == eval_kernel(spec, w, z)

    @pytest.mark.parametrize("spec", KINDS, ids=lambda s: s.kind)
    def test_matrix_psd(self, spec):
        rng = np.random.default_rng(5)
        for _ in range(20):
            Z = rng.standard_normal((30, 3))
            K = kernel_matrix(spec, Z, Z)
            assert np.linalg.eigvalsh(K)[0] >= -1e-8 * np.trace(K)

    def test_matrix_matches_scalar(self):
        rng = np.random.default_rng(1)
        X, Y = rng.standard_normal((4, 3)), rng.standard_normal((5, 3))
        for spec in KINDS:
            K = kernel_matrix(spec, X, Y)
            ref = [[eval_kernel(spec, x, y) for y in Y] for x in X]
            np.testing.assert_allclose(K, ref, rtol=1e-12, atol=1e-14)


class TestPivotedCholesky:
    def test_identity(self):
        piv, L, err = pivoted_cholesky(MatrixOracle(np.eye(3)), m_max=3)
        assert piv == [0, 1, 2] and err == 0.0
        np.testing.assert_allclose(L @ L.T, np.eye(3))

    def test_rank_one(self):
        piv, L, err = pivoted_cholesky(MatrixOracle(np.ones((3, 3))), m_max=1)
        assert piv == [0] and err == 0.0

    def test_low_rank_gram(self):
        G = np.array([[1.0, 0.5], [0.2, -1.0], [2.0, 0.3], [-0.4, 0.8], [0.0, 1.5]])
        K = G @ G.T
        piv, L, err = pivoted_cholesky(MatrixOracle(K), m_max=2)
        # dense oracle: residual spectrum beyond rank 2 is zero
        assert np.sum(np.linalg.eigvalsh(K)[:-2]) < 1e-12
        assert err <= 1e-10
        assert nystrom_residual_trace(K, piv) <= 1e-10

    def test_ties_lowest_index(self):
        piv, _, _ = pivoted_cholesky(MatrixOracle(np.diag([2.0, 3.0, 3.0])), m_max=1)
        assert piv == [1]

    def test_not_psd(self):
        K = np.array([[1.0, 2.0], [2.0, 1.0]])
        with pytest.raises(NumericalError):
            pivoted_cholesky(MatrixOracle(K), m_max=2)

    def test_tolerance_stops_early(self):
        rng = np.random.default_rng(2)
        Z = rng.standard_normal((40, 2))
        piv, _, err = pivoted_cholesky(KernelOracle(KernelSpec("gaussian", 1.0), Z), m_max=40, tol=1.0)
        assert err <= 1.0 and len(piv) < 40

    @pytest.mark.parametrize("spec", KINDS[1:], ids=lambda s: s.kind)
    def test_trace_error_matches_dense_and_monotone(self, spec):
        rng = np.random.default_rng(3)
        Z = rng.standard_normal((25, 2))
        K = kernel_matrix(spec, Z, Z)
        prev = np.inf
        for m in range(1, 9):
            piv, L, err = pivoted_cholesky(KernelOracle(spec, Z), m_max=m)
            assert err <= prev + 1e-12
            prev = err
            assert err == pytest.approx(nystrom_residual_trace(K, piv), rel=1e-8, abs=1e-10)
            np.testing.assert_allclose(L[piv], np.tril(L[piv]), atol=0)


class TestFeatureMap:
    def test_orthonormal_unit_vectors(self):
        Z = np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [1.0, 1.0, 1.0]])
        fm = build_feature_map(KernelSpec("cosine"), Z, 3)
        assert np.linalg.norm(fm.gram - np.eye(3)) <= 1e-8

    @pytest.mark.parametrize("spec", KINDS, ids=lambda s: s.kind)
    def test_interpolation_at_pivots(self, spec):
        rng = np.random.default_rng(7)
        Z = rng.standard_normal((30, 3))
        fm = build_feature_map(spec, Z, 5)
        P = fm(fm.pivots)
        np.testing.assert_allclose(P @ P.T, kernel_matrix(spec, fm.pivots, fm.pivots), atol=1e-9)
        assert np.linalg.norm(fm.gram - np.eye(fm.rank)) <= 1e-8

    def test_identity_mixing(self):
        rng = np.random.default_rng(8)
        Z = rng.standard_normal((20, 2))
        spec = KernelSpec("gaussian", 1.0)
        fm = build_feature_map(spec, Z, 4, mixing_mode="identity")
        np.testing.assert_array_equal(fm.mixing, np.eye(4))
        np.testing.assert_allclose(fm.gram, kernel_matrix(spec, fm.pivots, fm.pivots))

    def test_rank_capped_by_kernel_rank(self):
        rng = np.random.default_rng(9)
        Z = rng.standard_normal((50, 3))
        fm = build_feature_map(KernelSpec("cosine"), Z, 10)
        # the cosine kernel of 3-vectors has rank 3
        assert fm.rank == 3
        assert fm.trace_error <= 1e-10

    def test_json_round_trip(self):
        rng = np.random.default_rng(10)
        Z = rng.standard_normal((20, 2))
        fm = build_feature_map(KernelSpec("laplace", 0.8), Z, 4)
        back = FeatureMap.from_dict(fm.to_dict())
        W = rng.standard_normal((6, 2))
        np.testing.assert_array_equal(fm(W), back(W))
        assert back.trace_error == fm.trace_error

    def test_constant(self):
        fm = constant_id_feature()
        np.testing.assert_array_equal(fm(np.zeros((3, 5))), np.ones((3, 1)))
        np.testing.assert_array_equal(fm.gram, [[1.0]])
        assert fm.trace_error == 0.0 and fm.rank == 1

    def test_empty_sample(self):
        with pytest.raises(DataError):
            build_feature_map(KernelSpec("gaussian"), np.zeros((0, 2)), 2)

    def test_median_heuristic(self):
        Z = np.array([[0.0], [1.0], [3.0]])
        # squared distances 1, 9, 4
        assert median_heuristic(Z) == 4.0
        assert median_heuristic(np.zeros((1, 2))) == 1.0
