import os
import subprocess
import sys

import numpy as np

from bilinkoop import basis, mpc, plant
from bilinkoop.basis import build_basis


def test_monomial_kernels_agree():
    rng = np.random.default_rng(0)
    b = build_basis("nonlinear", 6, 3, 3)
    V = rng.normal(size=(50, 9))
    assert np.allclose(basis._monomials_nb(V, b.exponents), basis._monomials_np(V, b.exponents),
                       rtol=1e-13, atol=1e-13)
    z1, J1 = basis._monomials_jac_nb(V[0], b.exponents)
    z2, J2 = basis._monomials_jac_np(V[0], b.exponents)
    assert np.allclose(z1, z2, rtol=1e-13) and np.allclose(J1, J2, rtol=1e-13, atol=1e-13)


def test_integrator_kernels_agree():
    rng = np.random.default_rng(1)
    coeffs = plant.ArmParameters()._coefficients()
    th, dth = rng.uniform(-2, 2, (8, 3)), rng.uniform(-1, 1, (8, 3))
    tau = rng.uniform(-1, 1, (8, 3))
    a = plant._rk4_batch_nb(th, dth, tau, 5e-4, 100, *coeffs)
    b = plant._rk4_batch_np(th, dth, tau, 5e-4, 100, *coeffs)
    for x, y in zip(a, b):
        assert np.allclose(x, y, rtol=1e-12, atol=1e-12)


def test_nmpc_rollout_kernels_agree():
    rng = np.random.default_rng(2)
    b = build_basis("nonlinear", 6, 3, 2)
    Crows = 0.05 * rng.normal(size=(6, b.M))
    x0, U = rng.normal(size=6), rng.normal(size=(10, 3))
    X1, S1 = mpc._nmpc_rollout_nb(Crows, b.exponents, x0, U, True)
    X2, S2 = mpc._nmpc_rollout_np(Crows, b.exponents, x0, U, True)
    assert np.allclose(X1, X2, rtol=1e-12) and np.allclose(S1, S2, rtol=1e-11, atol=1e-13)


def test_env_flag_selects_numpy_backend():
    code = ("import bilinkoop, bilinkoop.basis as b;"
            "print(bilinkoop.BACKEND, b.monomials is b._monomials_np)")
    for flag, expected in (("0", "numpy True"), ("off", "numpy True")):
        env = dict(os.environ, BILINKOOP_NUMBA=flag)
        out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True,
                             text=True, check=True).stdout.strip()
        assert out == expected


def test_condensed_qp_kernels_agree():
    rng = np.random.default_rng(3)
    P = rng.normal(size=(11, 2, 20))
    B, z0, R = rng.normal(size=(20, 3)), rng.normal(size=20), rng.normal(size=(10, 2))
    U1, ok1 = mpc._condensed_nb(P, B, z0, R, 1.0, 0.5)
    U2, ok2 = mpc._condensed_np(P, B, z0, R, 1.0, 0.5)
    assert ok1 and ok2 and np.allclose(U1, U2, rtol=1e-9, atol=1e-11)
