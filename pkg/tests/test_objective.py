import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from coco.objective import (
    AggregateObjective,
    aggregate,
    build_objective,
    loss_direct,
    loss_vectorized,
    objective_from_arrays,
    section_coefficients,
    strong_convexity_bound,
)
from coco.panel import DataPoint
from coco.params import ParamU
from coco.vech import diag_selector, duplication, vec, vech
from helpers import random_U


def one(z):
    return np.ones((np.atleast_2d(z).shape[0], 1))


def tiny(x=2.0):
    return DataPoint(1, np.array([x]), np.zeros((1, 1)), 1.0)


def dense_coefficients(xi, Phi_s, Phi_i, G_sy=None, G_id=None, lam_sy=0.0, lam_id=0.0):
    """Independent oracle: explicit Kronecker design ``Q`` and ``A = 2w Q^T Q``."""
    N = xi.n
    m_s, m_i = Phi_s.shape[1], Phi_i.shape[1]
    Ps = np.zeros((N + 1, m_s + 1))
    Ps[0, 0] = 1.0
    Ps[1:, 1:] = Phi_s
    Pi = np.zeros((N + 1, m_i))
    Pi[1:] = Phi_i
    R = diag_selector(N + 1)
    P = np.hstack([np.kron(Ps, Ps), R @ R.T @ np.kron(Pi, Pi)])
    Ds, Di = duplication(m_s + 1), duplication(m_i)
    Dblk = np.zeros((Ds.shape[0] + Di.shape[0], Ds.shape[1] + Di.shape[1]))
    Dblk[: Ds.shape[0], : Ds.shape[1]] = Ds
    Dblk[Ds.shape[0]:, Ds.shape[1]:] = Di
    Q = P @ Dblk
    xb = np.r_[1.0, xi.returns]
    y = vec(np.outer(xb, xb))
    w = xi.weight
    Gs = np.zeros((m_s + 1, m_s + 1))
    Gs[1:, 1:] = np.eye(m_s) if G_sy is None else G_sy
    Gi = np.eye(m_i) if G_id is None else G_id
    reg = np.r_[lam_sy * Ds.T @ vec(Gs), lam_id * Di.T @ vec(Gi)]
    return 2 * w * Q.T @ Q, -2 * w * Q.T @ y + reg, w * float(y @ y), P


class TestTinySection:
    def test_coefficients(self):
        c = section_coefficients(tiny(), one, one)
        np.testing.assert_array_equal(c.A, [[2, 0, 0, 0], [0, 4, 0, 0], [0, 0, 2, 2], [0, 0, 2, 2]])
        np.testing.assert_array_equal(c.b, [-2, -8, -8, -8])
        assert c.c == 25.0
        np.testing.assert_array_equal(c.A[:, 2], c.A[:, 3])

    def test_loss_values(self):
        c = section_coefficients(tiny(), one, one)
        assert loss_direct((np.diag([1.0, 0.0]), [[0.0]]), tiny(), one, one) == 24.0
        assert loss_direct((np.array([[1.0, 2.0], [2.0, 4.0]]), [[0.0]]), tiny(), one, one) == 0.0
        assert loss_vectorized(c, [1, 0, 0, 0]) == 24.0
        assert loss_vectorized(c, [1, 2, 4, 0]) == 0.0
        assert loss_vectorized(c, np.zeros(4)) == 25.0

    def test_strong_convexity_zero(self):
        assert strong_convexity_bound(section_coefficients(tiny(), one, one)) == 0.0

    def test_zero_returns_minimised_at_corner(self):
        xi = tiny(0.0)
        rng = np.random.default_rng(0)
        base = loss_direct((np.diag([1.0, 0.0]), [[0.0]]), xi, one, one)
        assert base == 0.0
        for _ in range(50):
            U = random_U(rng, 1, 1)
            assert loss_direct(U, xi, one, one) >= base

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            loss_vectorized(section_coefficients(tiny(), one, one), np.zeros(3))

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            loss_direct((np.eye(3), [[0.0]]), tiny(), one, one)


class TestAgainstDenseDesign:
    @given(st.integers(0, 2**32 - 1), st.integers(1, 3), st.integers(1, 2), st.integers(1, 5))
    def test_coefficients_match(self, seed, m_s, m_i, N):
        rng = np.random.default_rng(seed)
        Phi_s, Phi_i = rng.standard_normal((N, m_s)), rng.standard_normal((N, m_i))
        B = rng.standard_normal((m_s, m_s))
        G_sy = B @ B.T
        xi = DataPoint(N, rng.standard_normal(N), np.zeros((N, 1)), 1.0 / N)
        lam = rng.uniform(0, 1, 2)

        class F:
            def __init__(self, P, g):
                self.P, self.gram = P, g

            def __call__(self, Z):
                return self.P

        c = section_coefficients(xi, F(Phi_s, G_sy), F(Phi_i, np.eye(m_i)), *lam)
        A, b, cc, _ = dense_coefficients(xi, Phi_s, Phi_i, G_sy, None, *lam)
        np.testing.assert_allclose(c.A, A, rtol=1e-12, atol=1e-12)
        np.testing.assert_allclose(c.b, b, rtol=1e-12, atol=1e-12)
        assert c.c == pytest.approx(cc, rel=1e-13)

    def test_strong_convexity_matches_svd(self):
        rng = np.random.default_rng(3)
        xi = DataPoint(3, rng.standard_normal(3), rng.standard_normal((3, 2)), 1 / 3)
        c = section_coefficients(xi, one, one)
        _, _, _, P = dense_coefficients(xi, np.ones((3, 1)), np.ones((3, 1)))
        smin = np.linalg.svd(P, compute_uv=False)[-1]
        bound = strong_convexity_bound(c)
        assert bound > 0
        assert bound == pytest.approx(2 * xi.weight * smin**2, rel=1e-10)
        scaled = DataPoint(3, 7.0 * xi.returns, xi.covariates, xi.weight)
        assert strong_convexity_bound(section_coefficients(scaled, one, one)) == bound

    def test_A_psd(self):
        rng = np.random.default_rng(4)
        for _ in range(100):
            N, m_s, m_i = rng.integers(1, 9), rng.integers(1, 5), rng.integers(1, 3)
            xi = DataPoint(N, rng.standard_normal(N), np.zeros((N, 1)), 1.0 / N)
            P_s, P_i = rng.standard_normal((N, m_s)), rng.standard_normal((N, m_i))
            c = section_coefficients(xi, lambda z: P_s, lambda z: P_i)
            np.testing.assert_array_equal(c.A, c.A.T)
            assert np.linalg.eigvalsh(c.A)[0] >= -1e-9 * np.trace(c.A)


class TestAggregate:
    def _sections(self, rng, T=5):
        out = []
        for _ in range(T):
            N = int(rng.integers(2, 6))
            P_s, P_i = rng.standard_normal((N, 2)), np.ones((N, 1))
            xi = DataPoint(N, rng.standard_normal(N), rng.standard_normal((N, 2)), 1.0 / N)
            out.append((xi, section_coefficients(xi, lambda z, P=P_s: P, lambda z, P=P_i: P)))
        return out

    def test_single_and_identical(self):
        rng = np.random.default_rng(5)
        (_, c), = self._sections(rng, 1)
        agg = aggregate([c])
        np.testing.assert_array_equal(agg.A_T, c.A)
        agg2 = aggregate([c, c])
        np.testing.assert_allclose(agg2.A_T, c.A, rtol=0, atol=0)
        np.testing.assert_array_equal(agg2.b_T, c.b)

    def test_permutation(self):
        rng = np.random.default_rng(6)
        cs = [c for _, c in self._sections(rng, 7)]
        a = aggregate(cs)
        b = aggregate(cs[::-1])
        np.testing.assert_allclose(a.A_T, b.A_T, atol=1e-13)
        np.testing.assert_allclose(a.b_T, b.b_T, atol=1e-13)
        assert a.c_T == pytest.approx(b.c_T, abs=1e-13)

    def test_empty(self):
        with pytest.raises(ValueError):
            aggregate([])

    def test_build_objective_matches_aggregate(self):
        rng = np.random.default_rng(7)
        pts = [DataPoint(n, rng.standard_normal(n), rng.standard_normal((n, 2)), 1.0 / n) for n in (3, 5, 3, 4)]

        def fs(Z):
            return np.tanh(Z)

        agg = aggregate(section_coefficients(p, fs, one, 0.3, 0.1) for p in pts)
        obj = build_objective(pts, fs, one, 0.3, 0.1)
        np.testing.assert_allclose(obj.A_T, agg.A_T, rtol=1e-12, atol=1e-14)
        np.testing.assert_allclose(obj.b_T, agg.b_T, rtol=1e-12, atol=1e-14)
        assert obj.c_T == pytest.approx(agg.c_T, rel=1e-13)

    def test_from_arrays_matches(self):
        rng = np.random.default_rng(8)
        T, N = 6, 4
        Ps, Pi, X = rng.standard_normal((T, N, 2)), np.ones((T, N, 1)), rng.standard_normal((T, N))
        obj = objective_from_arrays(Ps, Pi, X, 1.0 / N)
        pts = [DataPoint(N, X[t], np.zeros((N, 1)), 1.0 / N) for t in range(T)]
        cs = [section_coefficients(p, lambda z, P=Ps[t]: P, one) for t, p in enumerate(pts)]
        agg = aggregate(cs)
        np.testing.assert_allclose(obj.A_T, agg.A_T, rtol=1e-12, atol=1e-14)
        np.testing.assert_allclose(obj.b_T, agg.b_T, rtol=1e-12, atol=1e-14)

    def test_serialise_and_extend(self):
        rng = np.random.default_rng(9)
        cs = [c for _, c in self._sections(rng, 6)]
        full = aggregate(cs)
        a, b = aggregate(cs[:2]), aggregate(cs[2:])
        ext = AggregateObjective.from_dict(a.to_dict()).extend(b)
        assert ext.T == 6
        np.testing.assert_allclose(ext.A_T, full.A_T, rtol=1e-12, atol=1e-14)
        np.testing.assert_allclose(ext.b_T, full.b_T, rtol=1e-12, atol=1e-14)
        u = rng.standard_normal(full.M)
        assert ext.value(u) == pytest.approx(full.value(u), rel=1e-12)


class TestLossEquivalence:
    @given(st.integers(0, 2**32 - 1))
    def test_direct_equals_vectorized(self, seed):
        rng = np.random.default_rng(seed)
        m_s, m_i, N = rng.integers(1, 6), rng.integers(1, 3), rng.integers(1, 9)
        P_s, P_i = rng.standard_normal((N, m_s)), rng.standard_normal((N, m_i))
        xi = DataPoint(N, rng.standard_normal(N), np.zeros((N, 1)), 1.0 / N)
        U = random_U(rng, m_s, m_i)
        lam = rng.uniform(0, 1, 2)
        d = loss_direct(U, xi, lambda z: P_s, lambda z: P_i, *lam)
        v = loss_vectorized(section_coefficients(xi, lambda z: P_s, lambda z: P_i, *lam), U.u)
        assert abs(d - v) <= 1e-10 * (1 + abs(d))

    def test_param_vector_round_trip(self):
        U = random_U(np.random.default_rng(0), 3, 2)
        back = ParamU.from_vector(U.u, 3, 2)
        np.testing.assert_array_equal(back.U_sy, U.U_sy)
        np.testing.assert_array_equal(vech(back.U_id), vech(U.U_id))
