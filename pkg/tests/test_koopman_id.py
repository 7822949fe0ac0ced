import json

import numpy as np
import pytest
import scipy.linalg
from hypothesis import given, settings, strategies as st

from bilinkoop.basis import build_basis, lift_batch
from bilinkoop.koopman_id import (KoopmanMatrix, LogDomainError, ModelBilinear, RankDeficientError,
                                  continuous_generator, extract, extract_bilinear, extract_linear,
                                  extract_nonlinear, fit_koopman, load_model, model_from_dict,
                                  model_to_dict, reassemble, save_model)
from bilinkoop.plant import SnapshotDataset


def affine_data(rng, K=400, Ts=0.05):
    A = rng.normal(size=(3, 3)) * 0.3
    B = rng.normal(size=(3, 1))
    c = rng.normal(size=3) * 0.1
    P = rng.normal(size=(K, 3))
    U = rng.normal(size=(K, 1))
    Q = P @ A.T + U @ B.T + c
    return SnapshotDataset(Ts, P, Q, U), A, B, c


@pytest.mark.parametrize("method", ["normal", "qr"])
def test_exact_recovery_of_lifted_linear_map(method):
    rng = np.random.default_rng(0)
    ds, A, B, c = affine_data(rng)
    basis = build_basis("linear", 3, 1, 1)
    K = fit_koopman(ds, basis, ridge=0.0, method=method)
    G = np.zeros((5, 5))
    G[:3, :3], G[:3, 3], G[:3, 4] = A, c, B[:, 0]
    G[3, 3] = G[4, 4] = 1.0
    assert np.max(np.abs(K.KT - G)) < 1e-8
    m = extract_linear(K)
    assert np.allclose(m.A[:3, :3], A, atol=1e-8) and np.allclose(m.B[:3], B, atol=1e-8)
    assert np.array_equal(m.C, np.hstack([np.eye(3), np.zeros((3, 1))]))


def test_decay_oracle():
    """xdot = -x sampled at 0.05 s: K entry exp(-0.05), generator entry -1."""
    rng = np.random.default_rng(1)
    P = rng.uniform(-1, 1, size=(50, 1))
    ds = SnapshotDataset(0.05, P, P * np.exp(-0.05), np.zeros((50, 0)))
    K = fit_koopman(ds, build_basis("linear", 1, 0, 1), ridge=0.0)
    assert abs(K.KT[0, 0] - np.exp(-0.05)) < 1e-12
    Kc = continuous_generator(K)
    assert abs(Kc.Kc[0, 0] + 1.0) < 1e-9 and abs(Kc.Kc[1, 1]) < 1e-9


def test_ridge_closed_form():
    rng = np.random.default_rng(2)
    ds, *_ = affine_data(rng, K=60)
    ds.Q[:] += 0.01 * rng.normal(size=ds.Q.shape)
    basis = build_basis("bilinear", 3, 1, 2)
    lam = 0.3
    Pp, Pq = lift_batch(basis, ds.P, ds.U), lift_batch(basis, ds.Q, ds.U)
    expected = np.linalg.solve(Pp.T @ Pp + lam * np.eye(basis.M), Pp.T @ Pq)
    for method in ("normal", "qr"):
        K = fit_koopman(ds, basis, ridge=lam, method=method)
        assert np.allclose(K.K_Ts, expected, atol=1e-9)
        assert K.ridge == lam


def test_rank_deficiency_is_reported():
    P = np.zeros((30, 2))
    P[:, 0] = np.linspace(-1, 1, 30)
    ds = SnapshotDataset(0.05, P, P, np.zeros((30, 1)))
    basis = build_basis("linear", 2, 1, 1)
    for method in ("normal", "qr"):
        with pytest.raises(RankDeficientError, match="ridge"):
            fit_koopman(ds, basis, ridge=0.0, method=method)
    fit_koopman(ds, basis, ridge=1e-6)


def test_dimension_mismatch():
    ds, *_ = affine_data(np.random.default_rng(0), K=10)
    with pytest.raises(ValueError):
        fit_koopman(ds, build_basis("linear", 2, 1, 1))


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_fit_is_permutation_invariant(seed):
    rng = np.random.default_rng(seed)
    ds, *_ = affine_data(rng, K=80)
    ds.Q[:] = np.tanh(ds.Q)
    perm = rng.permutation(80)
    ds2 = SnapshotDataset(ds.Ts, ds.P[perm], ds.Q[perm], ds.U[perm])
    basis = build_basis("nonlinear", 3, 1, 2)
    a, b = fit_koopman(ds, basis, ridge=1e-3), fit_koopman(ds2, basis, ridge=1e-3)
    assert np.allclose(a.K_Ts, b.K_Ts, atol=1e-9)


def random_right_half_disk(rng, M):
    """Diagonalizable real matrix whose eigenvalues lie in |z - 1| < 1 (Re z > 0)."""
    k = M // 2
    lam = []
    for _ in range(k):
        r, a = rng.uniform(0.05, 0.95), rng.uniform(0, 2 * np.pi)
        lam.append(1 + r * np.exp(1j * a))
    blocks = [np.array([[z.real, z.imag], [-z.imag, z.real]]) for z in lam]
    if M % 2:
        blocks.append(np.array([[rng.uniform(0.05, 1.95)]]))
    D = scipy.linalg.block_diag(*blocks)
    V = rng.normal(size=(M, M)) + 3 * np.eye(M)
    return V @ D @ np.linalg.inv(V)


def test_generator_round_trip_many():
    rng = np.random.default_rng(5)
    for i in range(50):
        Kd = random_right_half_disk(rng, 2 + i % 7)
        G = continuous_generator(Kd, 0.05)
        rel = np.linalg.norm(scipy.linalg.expm(0.05 * G.Kc) - Kd) / np.linalg.norm(Kd)
        assert rel < 1e-8


def test_generator_defective_matrix_uses_fallback():
    J = np.array([[0.9, 1.0], [0.0, 0.9]])
    G = continuous_generator(J, 0.1)
    assert np.allclose(scipy.linalg.expm(0.1 * G.Kc), J, atol=1e-12)


@pytest.mark.parametrize("mat", [np.diag([0.5, -0.3]), np.diag([0.5, 0.0]),
                                 np.array([[-1.0, 1e-20], [0.0, 2.0]])])
def test_generator_domain_violations(mat):
    with pytest.raises(LogDomainError):
        continuous_generator(mat, 0.05)


def test_generator_requires_period():
    with pytest.raises(ValueError):
        continuous_generator(np.eye(2))


def bilinear_koopman(rng, n=2, m=2, rho=2):
    basis = build_basis("bilinear", n, m, rho)
    N = basis.N
    KT = rng.normal(size=(basis.M, basis.M))
    return KoopmanMatrix(KT.T.copy(), 0.05, basis), basis, N


def test_bilinear_extraction_layout():
    rng = np.random.default_rng(7)
    K, basis, N = bilinear_koopman(rng)
    model = extract_bilinear(K)
    c = basis.const_index
    top = K.KT[:N]
    assert np.array_equal(model.A, top[:, :N])
    for j in range(2):
        blk = top[:, N * (j + 1): N * (j + 2)]
        assert np.array_equal(model.B[:, j], blk[:, c])
        assert np.all(model.H[j][:, c] == 0)
        mask = np.arange(N) != c
        assert np.array_equal(model.H[j][:, mask], blk[:, mask])
    assert np.array_equal(reassemble(model), top)
    # the realization reproduces the first N rows of K' psi
    x, u = rng.normal(size=2), rng.normal(size=2)
    z = lift_batch(basis, x[None], u[None])[0]
    zs = z[:N]
    pred = model.A @ zs + sum(model.H[j] @ zs * u[j] for j in range(2)) + model.B @ u
    assert np.allclose(pred, top @ z, atol=1e-12)


def test_scalar_bilinear_recovery():
    rng = np.random.default_rng(4)
    P, U = rng.uniform(-1, 1, (500, 1)), rng.uniform(-1, 1, (500, 1))
    Q = 0.9 * P + 0.3 * P * U + 0.1 * U
    K = fit_koopman(SnapshotDataset(0.05, P, Q, U), build_basis("bilinear", 1, 1, 1), ridge=0.0)
    m = extract(K)
    assert abs(m.A[0, 0] - 0.9) < 1e-10 and abs(m.H[0][0, 0] - 0.3) < 1e-10
    assert abs(m.B[0, 0] - 0.1) < 1e-10


def test_extraction_family_checks():
    rng = np.random.default_rng(0)
    K, *_ = bilinear_koopman(rng)
    with pytest.raises(ValueError):
        extract_linear(K)
    with pytest.raises(ValueError):
        extract_nonlinear(K)
    nb = build_basis("nonlinear", 2, 1, 2)
    Kn = KoopmanMatrix(rng.normal(size=(nb.M, nb.M)), 0.05, nb)
    assert np.array_equal(extract(Kn).Crows, Kn.KT[:2])


@pytest.mark.parametrize("family", ["linear", "bilinear", "nonlinear"])
def test_model_file_round_trip(tmp_path, family):
    rng = np.random.default_rng(9)
    basis = build_basis(family, 2, 2, 2)
    K = KoopmanMatrix(rng.normal(size=(basis.M, basis.M)) / 3.0, 0.05, basis, 1e-7)
    for obj in (K, extract(K)):
        p = tmp_path / "m.json"
        save_model(obj, p)
        back = load_model(p)
        assert type(back) is type(obj) and back.basis == basis
        for k, v in model_to_dict(obj)["matrices"].items():
            assert model_to_dict(back)["matrices"][k] == v
        save_model(back, tmp_path / "m2.json")
        assert p.read_bytes() == (tmp_path / "m2.json").read_bytes()
    d = json.loads(p.read_text())
    assert d["M"] == basis.M and d["rho"] == 2
    d["ordering_version"] = 99
    with pytest.raises(ValueError):
        model_from_dict(d)


def test_arm_bilinear_model_size():
    basis = build_basis("bilinear", 6, 3, 3)
    assert basis.M == 336
    K = KoopmanMatrix(np.eye(336), 0.05, basis)
    m = extract(K)
    assert isinstance(m, ModelBilinear) and m.A.shape == (84, 84) and len(m.H) == 3
