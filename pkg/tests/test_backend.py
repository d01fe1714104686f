import os
import subprocess
import sys

import numpy as np
import pytest

import flowcap
from flowcap import _backend, _kernels
from flowcap.fields import Named, Separable, Sum, Affine, SIN, softplus, relu_field, Conjugated

compiled_available = True
try:
    from flowcap import _rk4  # noqa: F401
except ImportError:
    compiled_available = False

needs_compiled = pytest.mark.skipif(not compiled_available, reason="compiled extension not built")


def _lowered_args(f):
    low = f.lower()
    return low.A, low.c, low.S, low.W, low.B, low.codes, low.params, low.trace_weights


FIELDS = {
    "sinsum": Named("sinsum"),
    "permute_relu": Named("permute_relu"),
    "mix": Sum([(0.5, Affine(np.array([[0.1, -1.0], [1.0, 0.2]]), [0.3, 0.0])),
                (1.0, Separable(softplus(3.0), dim=2)),
                (-0.4, Conjugated(np.eye(2), np.array([[1.0, 2.0], [0.0, 1.0]]), [0.1, 0.1], Separable(SIN, dim=2)))]),
}


def test_backend_reported():
    assert flowcap.BACKEND in ("compiled", "python")
    assert _backend.kernels("python") is _kernels.rk4_lowered
    with pytest.raises(ValueError):
        _backend.kernels("fortran")


@needs_compiled
@pytest.mark.parametrize("name", sorted(FIELDS))
@pytest.mark.parametrize("track", [False, True])
def test_compiled_matches_python(name, track):
    X = np.random.default_rng(0).uniform(-2, 2, (50, 2))
    args = _lowered_args(FIELDS[name])
    outs = [_backend.kernels(b)(X.copy(), *args, 1e-3, 500, 1e6, track) for b in ("python", "compiled")]
    (Y0, l0, s0, _), (Y1, l1, s1, _) = outs
    assert s0 == s1 == 0
    assert np.max(np.abs(np.asarray(Y0) - np.asarray(Y1))) <= 1e-11
    if track:
        assert np.max(np.abs(np.asarray(l0) - np.asarray(l1))) <= 1e-11


@needs_compiled
def test_both_backends_report_blowup():
    f = Separable(flowcap.fields.QUADRATIC, dim=1)
    X = np.array([[2.0]])
    for b in ("python", "compiled"):
        _, _, status, step = _backend.kernels(b)(X.copy(), *_lowered_args(f), 1e-3, 1000, 1e6, False)
        assert status == _kernels.BLOWUP
        assert step < 1000


def test_pure_env_var_forces_python():
    env = dict(os.environ, FLOWCAP_PURE="1")
    out = subprocess.run([sys.executable, "-c", "import flowcap; print(flowcap.BACKEND)"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"


def test_generic_kernel_matches_lowered():
    f = FIELDS["mix"]
    X = np.random.default_rng(1).uniform(-1, 1, (10, 2))
    Y0, _, s0, _ = _kernels.rk4_lowered(X.copy(), *_lowered_args(f), 1e-3, 300, 1e6, False)
    Y1, _, s1, _ = _kernels.rk4_generic(f._eval, X.copy(), 1e-3, 300, 1e6)
    assert s0 == s1 == 0
    assert np.max(np.abs(Y0 - Y1)) <= 1e-12


def test_relu_lowered_logdet():
    f = relu_field(2)
    X = np.array([[1.0, -1.0]])
    _, ld, _, _ = _kernels.rk4_lowered(X, *_lowered_args(f), 1e-3, 1000, 1e6, True)
    assert ld[0] == pytest.approx(1.0, abs=1e-12)
