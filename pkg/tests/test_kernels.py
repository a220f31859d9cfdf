import subprocess
import sys

import numpy as np
import pytest

from leanpremise import kernels
from leanpremise.kernels import numba_backend, numpy_backend


@pytest.fixture(params=[np.float32, np.float64], ids=["f32", "f64"])
def dtype(request):
    return request.param


def tol(dtype):
    return 1e-5 if dtype == np.float32 else 1e-10


class TestBackendEquivalence:
    def test_gelu(self, rng, dtype):
        x = rng.standard_normal((7, 11)).astype(dtype)
        np.testing.assert_allclose(
            numpy_backend.gelu(x), numba_backend.gelu(x), atol=tol(dtype)
        )

    def test_gelu_backward(self, rng, dtype):
        x = rng.standard_normal((5, 9)).astype(dtype)
        dy = rng.standard_normal((5, 9)).astype(dtype)
        np.testing.assert_allclose(
            numpy_backend.gelu_backward(dy, x),
            numba_backend.gelu_backward(dy, x),
            atol=tol(dtype),
        )

    def test_gelu_noncontiguous_input(self, rng, dtype):
        x = rng.standard_normal((8, 8)).astype(dtype)
        view = x.T  # non-contiguous
        np.testing.assert_allclose(
            numba_backend.gelu(view), numpy_backend.gelu(np.ascontiguousarray(view)),
            atol=tol(dtype),
        )

    def test_layer_norm(self, rng, dtype):
        x = rng.standard_normal((6, 16)).astype(dtype)
        g = rng.standard_normal(16).astype(dtype)
        b = rng.standard_normal(16).astype(dtype)
        np.testing.assert_allclose(
            numpy_backend.layer_norm(x, g, b, 1e-12),
            numba_backend.layer_norm(x, g, b, 1e-12),
            atol=tol(dtype),
        )

    def test_layer_norm_backward(self, rng, dtype):
        x = rng.standard_normal((6, 16)).astype(dtype)
        g = rng.standard_normal(16).astype(dtype)
        dy = rng.standard_normal((6, 16)).astype(dtype)
        for a, b in zip(
            numpy_backend.layer_norm_backward(dy, x, g, 1e-12),
            numba_backend.layer_norm_backward(dy, x, g, 1e-12),
        ):
            np.testing.assert_allclose(a, b, atol=1e-4 if dtype == np.float32 else 1e-10)

    def test_attn_softmax(self, rng, dtype):
        scores = rng.standard_normal((3, 2, 5, 5)).astype(dtype)
        lens = np.array([5, 3, 1], dtype=np.int64)
        p_np = numpy_backend.attn_softmax(scores, lens)
        p_nb = numba_backend.attn_softmax(scores, lens)
        np.testing.assert_allclose(p_np, p_nb, atol=tol(dtype))
        # rows sum to one over the valid prefix, zero beyond
        assert p_np[:, :, :, :].sum(axis=3) == pytest.approx(1.0, abs=1e-5)
        assert (p_np[1, :, :, 3:] == 0).all()
        assert (p_np[2, :, :, 1:] == 0).all()

    def test_attn_softmax_backward(self, rng, dtype):
        scores = rng.standard_normal((2, 2, 4, 4)).astype(dtype)
        lens = np.array([4, 2], dtype=np.int64)
        probs = numpy_backend.attn_softmax(scores, lens)
        dp = rng.standard_normal(probs.shape).astype(dtype)
        np.testing.assert_allclose(
            numpy_backend.attn_softmax_backward(dp, probs),
            numba_backend.attn_softmax_backward(dp, probs),
            atol=tol(dtype),
        )

    def test_add_at_rows_with_repeats(self, rng, dtype):
        out_np = np.zeros((6, 4), dtype=dtype)
        out_nb = np.zeros((6, 4), dtype=dtype)
        idx = np.array([0, 3, 3, 3, 5, 0], dtype=np.int64)
        vals = rng.standard_normal((6, 4)).astype(dtype)
        numpy_backend.add_at_rows(out_np, idx, vals)
        numba_backend.add_at_rows(out_nb, idx, vals)
        np.testing.assert_allclose(out_np, out_nb, atol=tol(dtype))
        assert out_np[1].sum() == 0.0


class TestDispatch:
    def test_active_backend_is_valid(self):
        assert kernels.BACKEND in ("numpy", "numba")

    @pytest.mark.parametrize("backend", ["numpy", "numba"])
    def test_env_flag_selects_backend(self, backend):
        code = (
            "from leanpremise import kernels; "
            f"assert kernels.BACKEND == '{backend}', kernels.BACKEND; "
            "print(kernels.BACKEND)"
        )
        out = subprocess.run(
            [sys.executable, "-c", code],
            env={"PATH": "/usr/bin:/bin", "LEANPREMISE_BACKEND": backend},
            capture_output=True,
            text=True,
        )
        assert out.returncode == 0, out.stderr
        assert out.stdout.strip() == backend

    def test_bad_env_value_rejected(self):
        code = "import leanpremise.kernels"
        out = subprocess.run(
            [sys.executable, "-c", code],
            env={"PATH": "/usr/bin:/bin", "LEANPREMISE_BACKEND": "cuda"},
            capture_output=True,
            text=True,
        )
        assert out.returncode != 0
        assert "LEANPREMISE_BACKEND" in out.stderr
