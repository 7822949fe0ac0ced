import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from bilinkoop.basis import build_basis
from bilinkoop.koopman_id import ModelBilinear, ModelLinear, ModelNonlinear
from bilinkoop.mpc import (ControlLog, KNMPC, MpcConfig, ReferenceTrajectory, block_m_reference,
                           load_reference, make_controller, mpc_cost, nmpc_gradient,
                           read_control_log, run_closed_loop, solve_kbmpc, solve_kmpc,
                           solve_knmpc, write_control_log, write_reference)


def scalar_model(a, b):
    basis = build_basis("linear", 1, 1, 1)
    return ModelLinear(np.array([[a, 0.0], [0.0, 1.0]]), np.array([[b], [0.0]]),
                       np.array([[1.0, 0.0]]), basis, 0.05)


@pytest.mark.parametrize("a,b,rho,x,r", [(0.9, 0.5, 0.1, 1.0, 2.0), (1.2, -0.3, 1e-3, -0.4, 0.7)])
def test_one_step_hand_formula(a, b, rho, x, r):
    cfg = MpcConfig(horizon=1, weight_ee=1.0, weight_u=rho, output_index=(0,))
    U = solve_kmpc(scalar_model(a, b), [x], [[r]], cfg)
    assert U[0, 0] == pytest.approx(b * (r - a * x) / (b * b + rho), rel=1e-12)


def random_bilinear(rng, n=2, m=2, rho=2, h_scale=0.3):
    basis = build_basis("bilinear", n, m, rho)
    N = basis.N
    A = rng.normal(size=(N, N))
    A *= 0.95 / max(abs(np.linalg.eigvals(A)))
    H = []
    for _ in range(m):
        Hj = h_scale * rng.normal(size=(N, N))
        Hj[:, basis.const_index] = 0.0
        H.append(Hj)
    C = np.hstack([np.eye(n), np.zeros((n, N - n))])
    return ModelBilinear(A, tuple(H), rng.normal(size=(N, m)), C, basis, 0.05)


def test_kbmpc_with_zero_h_equals_kmpc():
    rng = np.random.default_rng(0)
    bil = random_bilinear(rng, h_scale=0.0)
    lin = ModelLinear(bil.A, bil.B, bil.C, build_basis("linear", 2, 2, 2), 0.05)
    cfg = MpcConfig(horizon=8, weight_u=1e-2, output_index=(0, 1))
    x, R = rng.normal(size=2), rng.normal(size=(8, 2))
    assert np.max(np.abs(solve_kbmpc(bil, x, R, cfg) - solve_kmpc(lin, x, R, cfg))) < 1e-10


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_kbmpc_solution_is_optimal(seed):
    rng = np.random.default_rng(seed)
    model = random_bilinear(rng)
    cfg = MpcConfig(horizon=6, weight_u=0.05, output_index=(0, 1))
    x, R = rng.normal(size=2), rng.normal(size=(6, 2))
    U = solve_kbmpc(model, x, R, cfg)
    c0 = mpc_cost(model, x, R, U, cfg)
    for _ in range(5):
        d = 1e-3 * rng.normal(size=U.shape)
        assert mpc_cost(model, x, R, U + d, cfg) >= c0 - 1e-12


def affine_nonlinear(rng, n=2, m=1, rho=2):
    """Nonlinear-family model whose predictor is affine in (x, u), plus its linear twin."""
    nb = build_basis("nonlinear", n, m, rho)
    A = rng.normal(size=(n, n))
    A *= 0.9 / max(abs(np.linalg.eigvals(A)))
    B, c = rng.normal(size=(n, m)), 0.1 * rng.normal(size=n)
    labels = nb.labels()
    Crows = np.zeros((n, nb.M))
    for k in range(n):
        Crows[:, labels.index(f"x{k + 1}")] = A[:, k]
    for j in range(m):
        Crows[:, labels.index(f"u{j + 1}")] = B[:, j]
    Crows[:, nb.const_index] = c
    lb = build_basis("linear", n, m, 1)
    Al = np.zeros((n + 1, n + 1))
    Al[:n, :n], Al[:n, n], Al[n, n] = A, c, 1.0
    Bl = np.vstack([B, np.zeros((1, m))])
    C = np.hstack([np.eye(n), np.zeros((n, 1))])
    return ModelNonlinear(Crows, nb, 0.05), ModelLinear(Al, Bl, C, lb, 0.05)


def test_knmpc_matches_kmpc_on_affine_predictor():
    rng = np.random.default_rng(1)
    non, lin = affine_nonlinear(rng)
    cfg = MpcConfig(horizon=10, weight_u=1e-3, output_index=(0, 1))
    x, R = rng.normal(size=2), rng.normal(size=(10, 2))
    res = solve_knmpc(non, x, R, cfg=cfg)
    assert not res.failed
    assert np.max(np.abs(res.U - solve_kmpc(lin, x, R, cfg))) < 1e-6
    assert res.cost == pytest.approx(mpc_cost(non, x, R, res.U, cfg), rel=1e-10)


def random_nonlinear(rng, n=2, m=2, rho=3, scale=0.1):
    nb = build_basis("nonlinear", n, m, rho)
    Crows = scale * rng.normal(size=(n, nb.M))
    Crows[:, :n] += 0.8 * np.eye(n)
    return ModelNonlinear(Crows, nb, 0.05)


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_knmpc_gradient_matches_finite_differences(seed):
    rng = np.random.default_rng(seed)
    model = random_nonlinear(rng)
    cfg = MpcConfig(horizon=5, weight_u=1e-2, output_index=(0, 1))
    x, R, U = 0.5 * rng.normal(size=2), rng.normal(size=(5, 2)), 0.3 * rng.normal(size=(5, 2))
    g = nmpc_gradient(model, x, R, U, cfg)
    fd = np.zeros_like(U)
    h = 1e-6
    for idx in np.ndindex(U.shape):
        e = np.zeros_like(U)
        e[idx] = h
        fd[idx] = (mpc_cost(model, x, R, U + e, cfg) - mpc_cost(model, x, R, U - e, cfg)) / (2 * h)
    assert np.linalg.norm(g - fd) <= 1e-4 * max(1.0, np.linalg.norm(fd))


def test_knmpc_decreases_cost_monotonically():
    rng = np.random.default_rng(2)
    model = random_nonlinear(rng, scale=0.2)
    cfg = MpcConfig(horizon=8, weight_u=1e-3, output_index=(0, 1))
    x, R = rng.normal(size=2), rng.normal(size=(8, 2))
    res = solve_knmpc(model, x, R, cfg=cfg)
    assert np.all(np.diff(res.costs) < 0)
    assert res.cost <= mpc_cost(model, x, R, np.zeros((8, 2)), cfg)


def test_knmpc_reports_non_finite_start():
    rng = np.random.default_rng(3)
    model = random_nonlinear(rng)
    cfg = MpcConfig(horizon=3, output_index=(0, 1))
    res = solve_knmpc(model, [np.inf, 0.0], np.zeros((3, 2)), cfg=cfg)
    assert res.failed


def test_block_m_reference_geometry():
    ref = block_m_reference(0.4, (0.0, -0.55), 15.0, 0.05)
    assert len(ref) == 300 and ref.samples.shape == (300, 2)
    S = ref.samples
    h = 0.2
    # starts and ends at bottom corners, passes the top corners and the middle vertex
    assert np.allclose(S[0], [-h, -0.55 - h]) and np.allclose(S[-1], [h, -0.55 - h])
    for v in ([-h, -0.35], [0.0, -0.55], [h, -0.35]):
        assert np.min(np.linalg.norm(S - v, axis=1)) < 0.01
    L = 2 * 0.4 + 2 * np.hypot(h, h)
    steps = np.linalg.norm(np.diff(S, axis=0), axis=1)
    assert np.max(steps) <= L / 299 + 1e-12
    assert np.median(steps) == pytest.approx(L / 299, rel=1e-9)
    assert np.all(np.linalg.norm(S, axis=1) <= 0.99)


def test_block_m_degenerate_and_out_of_reach():
    ref = block_m_reference(0.0, (0.1, -0.5), 1.0, 0.05)
    assert np.all(ref.samples == [0.1, -0.5])
    with pytest.raises(ValueError):
        block_m_reference(0.8, (0.0, -0.8))


def test_reference_window_holds_last_sample():
    ref = ReferenceTrajectory(np.arange(10.0).reshape(5, 2), 0.05)
    w = ref.window(3, 4)
    assert np.array_equal(w, [[6, 7], [8, 9], [8, 9], [8, 9]])


def test_reference_file(tmp_path):
    ref = block_m_reference(0.3, (0.0, -0.5), 2.0, 0.05)
    write_reference(ref, tmp_path / "r.csv")
    back = load_reference(tmp_path / "r.csv", 0.05)
    assert np.array_equal(back.samples, ref.samples)
    (tmp_path / "far.csv").write_text("ref_x,ref_y\n2.0,0.0\n")
    with pytest.raises(ValueError):
        load_reference(tmp_path / "far.csv", 0.05)


def test_horizon_window_checked():
    with pytest.raises(ValueError):
        solve_kmpc(scalar_model(0.9, 0.5), [0.0], np.zeros((2, 1)),
                   MpcConfig(horizon=3, output_index=(0,)))


def test_controller_factory_checks_model_type():
    rng = np.random.default_rng(0)
    with pytest.raises(TypeError):
        make_controller("kmpc", random_bilinear(rng), MpcConfig())
    with pytest.raises(ValueError):
        make_controller("pid", random_bilinear(rng), MpcConfig())


class FakeClock:
    def __init__(self):
        self.t = 0.0

    def __call__(self):
        self.t += 0.001
        return self.t


class Raising:
    name = "broken"
    cfg = MpcConfig()

    def solve(self, x, w):
        raise FloatingPointError("boom")


def test_closed_loop_failure_applies_zero_torque():
    ref = block_m_reference(0.3, (0.0, -0.6), 0.5, 0.05)
    log = run_closed_loop(None, Raising(), ref, clock=FakeClock())
    assert len(log) == 10 and np.all(log.flag == 1) and np.all(log.u == 0)
    # arm stays hanging
    assert np.allclose(log.ee, [0.0, -0.99])
    assert np.allclose(log.solve_time, 0.001)


def test_closed_loop_with_affine_predictor_and_log_file(tmp_path):
    """A hand-built affine predictor of the arm's end effector still tracks."""
    rng = np.random.default_rng(4)
    non, _ = affine_nonlinear(rng, n=6, m=3, rho=1)
    ctrl = KNMPC(non, MpcConfig(horizon=5))
    ref = block_m_reference(0.3, (0.0, -0.6), 0.5, 0.05)
    log = run_closed_loop(None, ctrl, ref, clock=FakeClock())
    assert np.all(np.isfinite(log.u)) and log.controller == "knmpc"
    write_control_log(log, tmp_path / "c.csv")
    back = read_control_log(tmp_path / "c.csv")
    for k in ("t", "ref", "ee", "u", "solve_time", "flag"):
        assert np.array_equal(getattr(back, k), getattr(log, k))
    last = (tmp_path / "c.csv").read_text().splitlines()[-1]
    assert last.startswith("# summary controller=knmpc mean_error=")
    assert isinstance(back, ControlLog) and back.mean_error == pytest.approx(log.mean_error)
