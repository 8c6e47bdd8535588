"""Kernel backend selection and exact compiled/fallback agreement."""

import numpy as np
import pytest

import satl._kernels_py as kpy
from satl.backend import active_backend, kernels


def _ext_or_skip():
    try:
        import satl._kernels as kext
    except ImportError:
        pytest.skip("compiled extension not built")
    return kext


def test_active_backend_reports_name():
    assert active_backend() in ("ext", "python")


def test_selected_kernels_expose_api():
    for fn in ("im2col", "col2im", "maxpool2_forward", "maxpool2_backward",
               "prng_fill_uniform", "prng_fill_normal"):
        assert hasattr(kernels, fn)


@pytest.mark.parametrize("dtype", [np.float32, np.float64])
@pytest.mark.parametrize("stride", [1, 2, 3])
def test_im2col_col2im_parity(dtype, stride):
    kext = _ext_or_skip()
    rng = np.random.default_rng(11)
    xp = np.ascontiguousarray(rng.standard_normal((3, 5, 12, 10)).astype(dtype))
    a = kext.im2col(xp, 3, 3, stride)
    b = kpy.im2col(xp, 3, 3, stride)
    assert a.dtype == b.dtype == dtype
    assert np.array_equal(a, b)
    cols = np.ascontiguousarray(rng.standard_normal(a.shape).astype(dtype))
    ca = kext.col2im(cols, 3, 5, 12, 10, 3, 3, stride)
    cb = kpy.col2im(cols, 3, 5, 12, 10, 3, 3, stride)
    assert np.array_equal(ca, cb)


@pytest.mark.parametrize("dtype", [np.float32, np.float64])
def test_maxpool_parity_including_tie_indices(dtype):
    kext = _ext_or_skip()
    rng = np.random.default_rng(12)
    x = rng.standard_normal((2, 3, 8, 8)).astype(dtype)
    x[0, 0, :2, :2] = 1.5  # forced tie inside a window
    x = np.ascontiguousarray(x)
    oa, ia = kext.maxpool2_forward(x)
    ob, ib = kpy.maxpool2_forward(x)
    assert np.array_equal(oa, ob)
    assert np.array_equal(ia, ib)
    assert ia[0, 0, 0, 0] == 0  # first element wins the tie
    g = np.ascontiguousarray(rng.standard_normal(oa.shape).astype(dtype))
    assert np.array_equal(kext.maxpool2_backward(g, ia), kpy.maxpool2_backward(g, ib))


def test_prng_stream_parity_and_state_advance():
    kext = _ext_or_skip()
    s1 = np.array([7, 11, 13, 17], dtype=np.uint64)
    s2 = s1.copy()
    for n in (1, 2, 7, 64):
        u1 = np.empty(n)
        u2 = np.empty(n)
        kext.prng_fill_normal(s1, u1)
        kpy.prng_fill_normal(s2, u2)
        assert np.array_equal(s1, s2)
        assert np.array_equal(u1, u2)
        kext.prng_fill_uniform(s1, u1, n % 2 == 0)
        kpy.prng_fill_uniform(s2, u2, n % 2 == 0)
        assert np.array_equal(s1, s2)
        assert np.array_equal(u1, u2)


def test_forced_python_backend(monkeypatch):
    """SATL_BACKEND=python must select the fallback in a fresh process."""
    import subprocess
    import sys

    out = subprocess.run(
        [sys.executable, "-c", "from satl.backend import active_backend; print(active_backend())"],
        env={"PATH": "/usr/bin:/bin", "SATL_BACKEND": "python"},
        capture_output=True,
        text=True,
    )
    assert out.stdout.strip() == "python"


def test_invalid_backend_value_rejected():
    import subprocess
    import sys

    out = subprocess.run(
        [sys.executable, "-c", "import satl.backend"],
        env={"PATH": "/usr/bin:/bin", "SATL_BACKEND": "turbo"},
        capture_output=True,
        text=True,
    )
    assert out.returncode != 0
    assert "SATL_BACKEND" in out.stderr


def test_conv_training_step_parity_across_backends():
    """One optimizer step computed by each backend gives identical bytes."""
    import subprocess
    import sys

    script = r"""
import numpy as np
from satl import STYLE_PRESETS, generate_synthetic, build_classifier, EncoderConfig
from satl.engine.prng import Prng
from satl.engine import tensor as T
from satl.losses import cross_entropy
from satl.pipeline import SgdMomentum
from satl.data import batches
from satl.models import params_hash

ds = generate_synthetic(16, 0.5, STYLE_PRESETS["source"][0], image_size=(32, 32), prng=Prng(3))
model = build_classifier(EncoderConfig(input_shape=(3, 32, 32), stages=((1, 4), (1, 8))), Prng(4))
opt = SgdMomentum([(model.params, 1e-3)], weight_decay=5e-4)
for batch in batches(ds, 8, Prng(5)):
    opt.zero_grad()
    T.backward(cross_entropy(model.forward(batch.x), batch.labels))
    opt.step()
print(params_hash(model.params))
"""
    hashes = {}
    for backend in ("ext", "python"):
        out = subprocess.run(
            [sys.executable, "-c", script],
            env={"PATH": "/usr/bin:/bin", "SATL_BACKEND": backend},
            capture_output=True,
            text=True,
        )
        if backend == "ext" and out.returncode != 0:
            pytest.skip("compiled extension not built")
        assert out.returncode == 0, out.stderr
        hashes[backend] = out.stdout.strip()
    assert hashes["ext"] == hashes["python"]
