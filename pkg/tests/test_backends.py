"""Backend parity and selection.

The numba kernels must agree with the numpy reference: forward outputs to
1e-12 and backward gradients to 1e-10. The two backends share BLAS for
matmuls but use different libm builds for tanh/exp, so single-ulp input
differences get amplified slightly through the softmax chains.
"""

from __future__ import annotations

import numpy as np
import pytest

from lexattn import kattn, kernels
from lexattn.kattn import HeadParams

FWD_TOL = 1e-12
BWD_TOL = 1e-10


def test_numba_backend_is_available():
    # the jit path is a hard requirement, not an optional accelerator: the
    # gradient-check and training time budgets assume it
    assert "numba" in kernels.available()


def test_backends_expose_the_same_kernel_surface():
    npk = kernels.get("numpy")
    nbk = kernels.get("numba")
    public = [
        name
        for name in dir(npk)
        if not name.startswith("_") and callable(getattr(npk, name))
    ]
    assert public, "reference backend exports no kernels?"
    for name in public:
        assert hasattr(nbk, name), f"numba backend missing {name}"


# ---------------------------------------------------------------- selection


def test_get_unknown_backend_raises():
    with pytest.raises(ValueError, match="bogus"):
        kernels.get("bogus")


def test_env_variable_selects_backend(monkeypatch):
    monkeypatch.setenv("LEXATTN_BACKEND", "numpy")
    kernels.set_active(None)
    try:
        assert kernels.backend_name() == "numpy"
    finally:
        kernels.set_active(None)


def test_auto_prefers_numba(monkeypatch):
    monkeypatch.delenv("LEXATTN_BACKEND", raising=False)
    kernels.set_active(None)
    try:
        assert kernels.backend_name() == "numba"
    finally:
        kernels.set_active(None)


def test_set_active_overrides_environment(monkeypatch):
    monkeypatch.setenv("LEXATTN_BACKEND", "numpy")
    kernels.set_active(None)
    try:
        assert kernels.backend_name() == "numpy"
        kernels.set_active("numba")
        assert kernels.backend_name() == "numba"
    finally:
        kernels.set_active(None)


# ---------------------------------------------------------------- parity


def _instance(seed):
    rng = np.random.default_rng(seed)
    length = int(rng.integers(1, 8))
    d_h = int(rng.integers(2, 6))
    d_k = int(rng.integers(1, 5))
    d_v = int(rng.integers(1, 5))
    h = rng.normal(size=(length, d_h))
    kp = np.ones((length, length))
    mask = rng.random((length, length)) < 0.5
    kp[mask] += rng.random(int(mask.sum()))
    p = HeadParams.create(rng, d_h, d_k, d_v)
    for name in HeadParams.field_names():
        arr = getattr(p, name)
        if name.endswith("_b"):
            arr += rng.normal(0.0, 0.3, size=arr.shape)
    return h, kp, p


def _run_head(backend_name, h, kp, p, dy):
    kernels.set_active(backend_name)
    try:
        y, cache = kattn.head_forward(h, kp, p)
        dh, dkp, grads = kattn.head_backward(dy, cache, p)
    finally:
        kernels.set_active(None)
    return y, dh, dkp, grads


@pytest.mark.parametrize("seed", range(30))
def test_head_forward_and_backward_parity(seed):
    h, kp, p = _instance(seed)
    kernels.set_active("numpy")
    try:
        y_probe, _ = kattn.head_forward(h, kp, p)
    finally:
        kernels.set_active(None)
    dy = np.random.default_rng(10_000 + seed).normal(size=y_probe.shape)

    y_np, dh_np, dkp_np, g_np = _run_head("numpy", h, kp, p, dy)
    y_nb, dh_nb, dkp_nb, g_nb = _run_head("numba", h, kp, p, dy)

    assert np.max(np.abs(y_np - y_nb)) < FWD_TOL
    assert np.max(np.abs(dh_np - dh_nb)) < BWD_TOL
    assert np.max(np.abs(dkp_np - dkp_nb)) < BWD_TOL
    assert g_np.keys() == g_nb.keys()
    for name in g_np:
        diff = np.max(np.abs(g_np[name] - g_nb[name]))
        assert diff < BWD_TOL, f"{name}: {diff:.3e}"
