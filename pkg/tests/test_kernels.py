import os
import subprocess
import sys

import numpy as np
import pytest

from smartdwr import kernels
from smartdwr.quadrature import make_quadrature
from smartdwr.space import shape_functions

compiled = pytest.importorskip("smartdwr._kernels")


@pytest.mark.parametrize("degree", [1, 2])
@pytest.mark.parametrize("p,eps", [(2.0, 0.0), (4.0, 1e-10), (3.0, 0.1)])
def test_compiled_matches_numpy(degree, p, eps):
    rng = np.random.default_rng(degree)
    rule = make_quadrature(2 * degree + 3)
    _, DN = shape_functions(degree, rule.points)
    DN = np.ascontiguousarray(DN)
    U = rng.standard_normal((40, DN.shape[1]))
    h = rng.uniform(0.01, 1.0, 40)
    w = np.ascontiguousarray(rule.weights)
    a = kernels.flux_residual_py(U, DN, w, h, p, eps)
    b = np.asarray(compiled.flux_residual(U, DN, w, h, p, eps))
    assert np.allclose(a, b, rtol=1e-13, atol=1e-13 * np.abs(a).max())
    A = kernels.flux_jacobian_py(U, DN, w, h, p, eps)
    B = np.asarray(compiled.flux_jacobian(U, DN, w, h, p, eps))
    assert np.allclose(A, B, rtol=1e-13, atol=1e-13 * np.abs(A).max())
    assert np.allclose(B, np.transpose(B, (0, 2, 1)), atol=1e-13 * np.abs(B).max())


def test_jacobian_is_derivative_of_residual():
    rng = np.random.default_rng(3)
    rule = make_quadrature(5)
    _, DN = shape_functions(1, rule.points)
    U, dU = rng.standard_normal((2, 5, 4))
    h = np.full(5, 0.5)
    t = 1e-6
    fd = (kernels.flux_residual(U + t * dU, DN, rule.weights, h, 4.0, 0.0)
          - kernels.flux_residual(U - t * dU, DN, rule.weights, h, 4.0, 0.0)) / (2 * t)
    J = kernels.flux_jacobian(U, DN, rule.weights, h, 4.0, 0.0)
    assert np.allclose(np.einsum("cij,cj->ci", J, dU), fd, rtol=1e-6, atol=1e-8)


def test_backend_selection_and_pure_fallback():
    assert kernels.BACKEND == ("python" if os.environ.get("SMARTDWR_PURE") not in (None, "", "0") else "compiled")
    env = dict(os.environ, SMARTDWR_PURE="1")
    code = ("from smartdwr import kernels; from smartdwr.driver import RunConfig, run_adaptive; "
            "r = run_adaptive(RunConfig(max_levels=3)); print(kernels.BACKEND, repr(r[-1].J_value))")
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    backend, value = out.stdout.split()
    assert backend == "python"
    from smartdwr.driver import RunConfig, run_adaptive
    here = run_adaptive(RunConfig(max_levels=3))[-1].J_value
    assert float(value) == pytest.approx(here, rel=1e-12)
