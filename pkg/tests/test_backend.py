import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from coco import _backend, _fallback
from coco.errors import ProjectionError

try:
    from coco import _core
except ImportError:  # extension not built
    _core = None

IMPLS = [_fallback] + ([_core] if _core is not None else [])
needs_core = pytest.mark.skipif(_core is None, reason="compiled extension not built")


def sym(rng, n):
    B = rng.standard_normal((n, n))
    return 0.5 * (B + B.T)


@pytest.mark.parametrize("impl", IMPLS, ids=lambda m: m.BACKEND)
class TestKernels:
    def test_jacobi_matches_numpy(self, impl):
        rng = np.random.default_rng(0)
        for n in (1, 2, 5, 12):
            A = sym(rng, n)
            w, V = impl.jacobi_eigh(A)
            np.testing.assert_allclose(w, np.linalg.eigvalsh(A), atol=1e-12)
            np.testing.assert_allclose(V @ np.diag(w) @ V.T, A, atol=1e-12)
            np.testing.assert_allclose(V.T @ V, np.eye(n), atol=1e-12)

    def test_jacobi_warm_start(self, impl):
        rng = np.random.default_rng(1)
        A = sym(rng, 6)
        _, V = impl.jacobi_eigh(A)
        w, V2 = impl.jacobi_eigh(A + 1e-6 * sym(rng, 6), V0=V)
        np.testing.assert_allclose(V2 @ np.diag(w) @ V2.T, A, atol=1e-5)

    def test_psd_floor(self, impl):
        rng = np.random.default_rng(2)
        for _ in range(20):
            S = sym(rng, 4)
            X = impl.project_psd_floor(S, 0.2)
            w, Q = np.linalg.eigh(S)
            np.testing.assert_allclose(X, Q @ np.diag(np.maximum(w, 0.2)) @ Q.T, atol=1e-12)

    def test_dsy_iteration_cap(self, impl):
        U = np.diag([-3.0, -4.0, -5.0])
        with pytest.raises(ProjectionError):
            impl.project_dsy(U, 0.0, 1e-15, 2)

    def test_dsy_empty(self, impl):
        with pytest.raises(ValueError):
            impl.project_dsy(np.zeros((0, 0)))


@needs_core
class TestEquivalence:
    @given(st.integers(0, 2**32 - 1), st.integers(1, 8))
    def test_projections_agree(self, seed, n):
        rng = np.random.default_rng(seed)
        U = 2.0 * sym(rng, n)
        floor = float(rng.choice([0.0, 1e-3, 0.1]))
        np.testing.assert_allclose(_core.project_psd_floor(U, floor), _fallback.project_psd_floor(U, floor), atol=1e-11)
        Xc, _ = _core.project_dsy(U, floor)
        Xf, _ = _fallback.project_dsy(U, floor)
        np.testing.assert_allclose(Xc, Xf, atol=1e-8)

    @given(st.integers(0, 2**32 - 1), st.integers(1, 10))
    def test_eigenvalues_agree(self, seed, n):
        A = sym(np.random.default_rng(seed), n)
        np.testing.assert_allclose(_core.jacobi_eigh(A)[0], _fallback.jacobi_eigh(A)[0], atol=1e-12)


def test_selected_backend():
    assert _backend.BACKEND in ("compiled", "python")
    assert _backend.COMPILED == (_backend.BACKEND == "compiled")
    if _core is not None and os.environ.get("COCO_PURE_PYTHON", "") in ("", "0"):
        assert _backend.COMPILED


def test_forced_fallback_subprocess():
    env = dict(os.environ, COCO_PURE_PYTHON="1")
    code = "from coco import _backend, solver; print(_backend.BACKEND)"
    proc = subprocess.run([sys.executable, "-c", code], capture_output=True, text=True, env=env, check=True)
    assert proc.stdout.strip() == "python"
