import os
import subprocess
import sys

import numpy as np
import pytest

from dnform import _kernel_py, kernels

try:
    from dnform import _vkcore
except ImportError:  # extension not built
    _vkcore = None

needs_ext = pytest.mark.skipif(_vkcore is None, reason="compiled extension not built")


def _backend_in_subprocess(env_value):
    env = dict(os.environ, DNFORM_PURE_PYTHON=env_value)
    out = subprocess.run([sys.executable, "-c", "from dnform import kernels; print(kernels.BACKEND)"],
                         env=env, capture_output=True, text=True, check=True)
    return out.stdout.strip()


class TestSelection:
    def test_forced_fallback(self):
        assert _backend_in_subprocess("1") == "python"

    @needs_ext
    def test_compiled_by_default(self):
        assert _backend_in_subprocess("") == "cython"
        assert kernels.BACKEND in ("cython", "python")


@needs_ext
class TestEquivalence:
    @pytest.fixture
    def states(self, beam, rng):
        return 1e-3 * rng.standard_normal((7, beam.n_dof))

    def test_force(self, beam, states):
        ev = beam.force_evaluator
        f_c = ev.force(states, backend=_vkcore)
        f_p = ev.force(states, backend=_kernel_py)
        assert np.allclose(f_c, f_p, rtol=0, atol=1e-13 * np.abs(f_p).max())

    def test_tangent(self, beam, states):
        ev = beam.force_evaluator
        k_c = ev.tangent(states, backend=_vkcore)
        k_p = ev.tangent(states, backend=_kernel_py)
        assert np.allclose(k_c, k_p, rtol=0, atol=1e-13 * np.abs(k_p).max())

    def test_single_state(self, beam, rng):
        x = 1e-3 * rng.standard_normal(beam.n_dof)
        ev = beam.force_evaluator
        assert np.allclose(ev.force(x, backend=_vkcore), ev.force(x, backend=_kernel_py),
                           rtol=1e-12, atol=1e-20)


def test_hermite_slopes_integrate_shape_functions():
    # the slopes integrate to the nodal differences of the Hermite functions
    x, w = np.polynomial.legendre.leggauss(5)
    xi, wt = 0.5 * (x + 1), 0.5 * w
    L = 0.3
    s = _kernel_py.hermite_slopes(L, xi)
    assert np.allclose(wt @ s * L, [-1.0, 0.0, 1.0, 0.0])


def test_zero_state_has_no_force(beam):
    assert not np.any(beam.nonlinear_force(np.zeros(beam.n_dof)))
    assert not np.any(beam.nonlinear_tangent(np.zeros(beam.n_dof)))
