"""Koopman model predictive controllers and the closed-loop harness.

K-MPC and K-BMPC condense the horizon into an unconstrained, strictly convex
QP solved with one Cholesky factorization. K-BMPC freezes the lifted state
in the bilinear terms at its current value, ``B~ = B + [H_1 z0 | .. | H_m z0]``.
K-NMPC runs Levenberg-damped Gauss-Newton on the re-lifting nonlinear
predictor (single shooting).
"""

from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.linalg

from ._accel import njit, pick
from .basis import _monomials_jac_np
from .koopman_id import ModelBilinear, ModelLinear, ModelNonlinear
from .plant import ArmParameters, forward_kinematics, hanging_state, integrate_step
from .realization import lift_state

__all__ = [
    "MpcConfig",
    "ReferenceTrajectory",
    "ControlLog",
    "NmpcResult",
    "block_m_reference",
    "load_reference",
    "write_reference",
    "solve_kmpc",
    "solve_kbmpc",
    "solve_knmpc",
    "mpc_cost",
    "KMPC",
    "KBMPC",
    "KNMPC",
    "make_controller",
    "warm_up",
    "run_closed_loop",
    "write_control_log",
    "read_control_log",
]

log = logging.getLogger(__name__)

FLAG_OK = 0
FLAG_FAILED = 1


@dataclass(frozen=True)
class MpcConfig:
    horizon: int = 10
    weight_ee: float = 1.0
    weight_u: float = 1e-3
    Ts: float = 0.05
    nmpc_max_iters: int = 30
    nmpc_damping: float = 1e-6
    output_index: tuple = (4, 5)

    def __post_init__(self):
        if self.horizon < 1:
            raise ValueError("horizon must be at least one step")
        if self.weight_ee <= 0 or self.weight_u <= 0:
            raise ValueError("cost weights must be positive")
        if self.Ts <= 0 or self.nmpc_max_iters < 1 or self.nmpc_damping < 0:
            raise ValueError("invalid MPC timing/solver settings")
        object.__setattr__(self, "output_index", tuple(int(i) for i in self.output_index))


# -- reference ------------------------------------------------------------------

@dataclass(frozen=True)
class ReferenceTrajectory:
    samples: np.ndarray
    Ts: float

    @property
    def duration(self) -> float:
        return len(self.samples) * self.Ts

    def __len__(self):
        return len(self.samples)

    def window(self, k: int, length: int) -> np.ndarray:
        """Samples ``k .. k + length - 1``, holding the last one past the end."""
        idx = np.minimum(np.arange(k, k + length), len(self.samples) - 1)
        return self.samples[idx]


def block_m_reference(scale: float = 0.4, center=(0.0, -0.55), duration: float = 15.0,
                      Ts: float = 0.05, reach: float = 0.99) -> ReferenceTrajectory:
    """Constant-speed traversal of a block letter M (square, side ``scale``).

    The four strokes run bottom-left, top-left, middle, top-right,
    bottom-right; the traversal starts from whichever bottom corner is
    closer to the hanging end-effector position ``(0, -reach)``.
    """
    c = np.asarray(center, dtype=float)
    h = 0.5 * scale
    verts = c + np.array([[-h, -h], [-h, h], [0.0, 0.0], [h, h], [h, -h]])
    if np.any(np.linalg.norm(verts, axis=1) > reach + 1e-12):
        raise ValueError("block-M reference leaves the reachable workspace")
    hang = np.array([0.0, -reach])
    if np.linalg.norm(verts[-1] - hang) < np.linalg.norm(verts[0] - hang):
        verts = verts[::-1]
    n = int(round(duration / Ts))
    if n < 1:
        raise ValueError("duration shorter than one sampling period")
    seg = np.linalg.norm(np.diff(verts, axis=0), axis=1)
    arc = np.concatenate([[0.0], np.cumsum(seg)])
    if arc[-1] == 0.0:
        return ReferenceTrajectory(np.tile(c, (n, 1)), Ts)
    s = arc[-1] * np.arange(n) / max(n - 1, 1)
    pts = np.column_stack([np.interp(s, arc, verts[:, 0]), np.interp(s, arc, verts[:, 1])])
    return ReferenceTrajectory(pts, Ts)


def load_reference(path, Ts: float, reach: float = 0.99) -> ReferenceTrajectory:
    """Reference from a CSV with ``ref_x,ref_y`` columns, one row per period."""
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    pts = np.array([[float(r["ref_x"]), float(r["ref_y"])] for r in rows])
    if len(pts) == 0:
        raise ValueError(f"{path}: empty reference")
    if np.any(np.linalg.norm(pts, axis=1) > reach + 1e-12):
        raise ValueError(f"{path}: reference leaves the reachable workspace")
    return ReferenceTrajectory(pts, Ts)


def write_reference(ref: ReferenceTrajectory, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["ref_x", "ref_y"])
        for x, y in ref.samples:
            w.writerow([format(x, ".17g"), format(y, ".17g")])


# -- condensed QP (K-MPC / K-BMPC) --------------------------------------------------

def _output_powers(A: np.ndarray, SC: np.ndarray, horizon: int) -> np.ndarray:
    """Stack of ``S C A^t`` for ``t = 0..horizon``, shape (horizon + 1, p, N)."""
    P = np.empty((horizon + 1,) + SC.shape)
    P[0] = SC
    for t in range(horizon):
        P[t + 1] = P[t] @ A
    return P


@njit(cache=True)
def _condensed_nb(P, B, z0, R, w_ee, w_u):
    Nh = R.shape[0]
    p, N = P.shape[1], P.shape[2]
    m = B.shape[1]
    G = np.empty((Nh, p, m))
    for j in range(Nh):
        G[j] = P[j] @ B
    nu = Nh * m
    Gam = np.zeros((Nh * p, nu))
    for t in range(Nh):
        for s in range(t + 1):
            for a in range(p):
                for b in range(m):
                    Gam[t * p + a, s * m + b] = G[t - s, a, b]
    res = np.empty(Nh * p)
    for t in range(Nh):
        fz = P[t + 1] @ z0
        for a in range(p):
            res[t * p + a] = R[t, a] - fz[a]
    H = w_ee * (Gam.T @ Gam)
    g = w_ee * (Gam.T @ res)
    for i in range(nu):
        H[i, i] += w_u
    # in-place Cholesky, then two triangular solves
    L = np.zeros((nu, nu))
    for j in range(nu):
        d = H[j, j]
        for k in range(j):
            d -= L[j, k] * L[j, k]
        if not d > 0.0:
            return np.full((Nh, m), np.nan), False
        L[j, j] = math.sqrt(d)
        for i in range(j + 1, nu):
            acc = H[i, j]
            for k in range(j):
                acc -= L[i, k] * L[j, k]
            L[i, j] = acc / L[j, j]
    y = np.empty(nu)
    for i in range(nu):
        acc = g[i]
        for k in range(i):
            acc -= L[i, k] * y[k]
        y[i] = acc / L[i, i]
    x = np.empty(nu)
    for i in range(nu - 1, -1, -1):
        acc = y[i]
        for k in range(i + 1, nu):
            acc -= L[k, i] * x[k]
        x[i] = acc / L[i, i]
    return x.reshape(Nh, m), True


def _condensed_np(P, B, z0, R, w_ee, w_u):
    Nh = R.shape[0]
    p, m = P.shape[1], B.shape[1]
    G = P[:Nh] @ B  # G[j] = S C A^j B
    lag = np.subtract.outer(np.arange(Nh), np.arange(Nh))
    Gam = np.where((lag >= 0)[:, :, None, None], G[np.maximum(lag, 0)], 0.0)
    Gam = Gam.transpose(0, 2, 1, 3).reshape(Nh * p, Nh * m)
    free = (P[1:Nh + 1] @ z0).reshape(-1)
    H = w_ee * (Gam.T @ Gam)
    H.flat[:: Nh * m + 1] += w_u
    g = w_ee * (Gam.T @ (R.reshape(-1) - free))
    try:
        cho = scipy.linalg.cho_factor(H, lower=True, check_finite=False)
    except np.linalg.LinAlgError:
        return np.full((Nh, m), np.nan), False
    return scipy.linalg.cho_solve(cho, g, check_finite=False).reshape(Nh, m), True


_condensed = pick(_condensed_nb, _condensed_np)


def _condensed_solve(P, B, z0, R, cfg: MpcConfig) -> np.ndarray:
    """Unconstrained condensed QP: minimize over the stacked input sequence."""
    R = np.ascontiguousarray(np.asarray(R, dtype=float)[: cfg.horizon])
    U, ok = _condensed(P, np.ascontiguousarray(B), np.ascontiguousarray(z0), R,
                       float(cfg.weight_ee), float(cfg.weight_u))
    if not ok:
        raise FloatingPointError("condensed MPC Hessian is not positive definite")
    return U


def _selector(model, cfg: MpcConfig) -> np.ndarray:
    return model.C[list(cfg.output_index)]


def effective_input_matrix(model: ModelBilinear, z0, _stacked=None) -> np.ndarray:
    """``B + [H_1 z0 | .. | H_m z0]``; ``_stacked`` is ``vstack(H)`` if precomputed."""
    Hs = np.vstack(model.H) if _stacked is None else _stacked
    return model.B + (Hs @ z0).reshape(len(model.H), -1).T


def _check_window(ref_window, cfg):
    R = np.atleast_2d(np.asarray(ref_window, dtype=float))
    if len(R) < cfg.horizon:
        raise ValueError("reference window shorter than the horizon")
    return R


def solve_kmpc(model: ModelLinear, x_now, ref_window, cfg: MpcConfig | None = None,
               _powers=None) -> np.ndarray:
    """Optimal input sequence (horizon, m) for the lifted linear model."""
    cfg = cfg or MpcConfig()
    R = _check_window(ref_window, cfg)
    z0 = lift_state(model, x_now)
    P = _powers if _powers is not None else _output_powers(model.A, _selector(model, cfg), cfg.horizon)
    return _condensed_solve(P, model.B, z0, R, cfg)


def solve_kbmpc(model: ModelBilinear, x_now, ref_window, cfg: MpcConfig | None = None,
                _powers=None, _stacked=None) -> np.ndarray:
    """K-MPC on ``(A, B + [H_j z0])`` with ``z0`` the current lifted state."""
    cfg = cfg or MpcConfig()
    R = _check_window(ref_window, cfg)
    z0 = lift_state(model, x_now)
    P = _powers if _powers is not None else _output_powers(model.A, _selector(model, cfg), cfg.horizon)
    return _condensed_solve(P, effective_input_matrix(model, z0, _stacked), z0, R, cfg)


def mpc_cost(model, x_now, ref_window, U, cfg: MpcConfig | None = None) -> float:
    """Cost of ``U`` under the prediction model each controller optimizes.

    Linear models roll out their lifted dynamics, bilinear models the frozen
    ``B~(z0)`` approximation, nonlinear models the re-lifting predictor.
    """
    cfg = cfg or MpcConfig()
    R = _check_window(ref_window, cfg)
    U = np.asarray(U, dtype=float).reshape(cfg.horizon, -1)
    idx = list(cfg.output_index)
    cost = cfg.weight_u * float(np.sum(U**2))
    if isinstance(model, ModelNonlinear):
        X, _ = _nmpc_rollout(model.Crows, model.basis.exponents, np.asarray(x_now, float), U, False)
        return cost + cfg.weight_ee * float(np.sum((X[1:, idx] - R[:cfg.horizon]) ** 2))
    z = lift_state(model, x_now)
    Bt = effective_input_matrix(model, z) if isinstance(model, ModelBilinear) else model.B
    SC = model.C[idx]
    for t in range(cfg.horizon):
        z = model.A @ z + Bt @ U[t]
        cost += cfg.weight_ee * float(np.sum((SC @ z - R[t]) ** 2))
    return cost


# -- K-NMPC -------------------------------------------------------------------------

@njit(cache=True)
def _nmpc_rollout_nb(Crows, E, x0, U, with_sens):
    Nh, m = U.shape
    n = x0.shape[0]
    d = n + m
    X = np.empty((Nh + 1, n))
    X[0] = x0
    S = np.zeros((Nh + 1, n, Nh * m))
    Mb = E.shape[0]
    pmax = 1
    for i in range(Mb):
        for k in range(d):
            if E[i, k] > pmax:
                pmax = E[i, k]
    pw = np.empty((d, pmax + 1))
    v = np.empty(d)
    psi = np.empty(Mb)
    J = np.zeros((Mb, d))
    for t in range(Nh):
        for k in range(n):
            v[k] = X[t, k]
        for k in range(m):
            v[n + k] = U[t, k]
        for k in range(d):
            pw[k, 0] = 1.0
            for e in range(1, pmax + 1):
                pw[k, e] = pw[k, e - 1] * v[k]
        for i in range(Mb):
            acc = 1.0
            for k in range(d):
                acc *= pw[k, E[i, k]]
            psi[i] = acc
            if with_sens:
                for k in range(d):
                    e = E[i, k]
                    if e == 0:
                        J[i, k] = 0.0
                        continue
                    g = e * pw[k, e - 1]
                    for l in range(d):
                        if l != k:
                            g *= pw[l, E[i, l]]
                    J[i, k] = g
        for r in range(n):
            acc = 0.0
            for i in range(Mb):
                acc += Crows[r, i] * psi[i]
            X[t + 1, r] = acc
        if with_sens:
            CJ = Crows @ J  # (n, d)
            for r in range(n):
                for c in range(t * m):
                    acc = 0.0
                    for k in range(n):
                        acc += CJ[r, k] * S[t, k, c]
                    S[t + 1, r, c] = acc
                for k in range(m):
                    S[t + 1, r, t * m + k] = CJ[r, n + k]
    return X, S


def _nmpc_rollout_np(Crows, E, x0, U, with_sens):
    Nh, m = U.shape
    n = x0.shape[0]
    X = np.empty((Nh + 1, n))
    X[0] = x0
    S = np.zeros((Nh + 1, n, Nh * m))
    for t in range(Nh):
        v = np.concatenate([X[t], U[t]])
        psi, J = _monomials_jac_np(v, E)
        X[t + 1] = Crows @ psi
        if with_sens:
            CJ = Crows @ J
            S[t + 1, :, : t * m] = CJ[:, :n] @ S[t, :, : t * m]
            S[t + 1, :, t * m:(t + 1) * m] = CJ[:, n:]
    return X, S


_nmpc_rollout = pick(_nmpc_rollout_nb, _nmpc_rollout_np)


@dataclass
class NmpcResult:
    U: np.ndarray
    cost: float
    iterations: int
    grad_norm: float
    failed: bool = False
    costs: list = field(default_factory=list)


def _nmpc_residual(model: ModelNonlinear, x0, U, R, cfg, with_jac=True):
    idx = list(cfg.output_index)
    with np.errstate(over="ignore", invalid="ignore"):
        X, S = _nmpc_rollout(model.Crows, model.basis.exponents, x0, U, with_jac)
    we, wu = math.sqrt(cfg.weight_ee), math.sqrt(cfg.weight_u)
    r = np.concatenate([we * (X[1:, idx] - R).reshape(-1), wu * U.reshape(-1)])
    if not with_jac:
        return r, None
    Jy = we * S[1:, idx, :].reshape(-1, U.size)
    return r, np.vstack([Jy, wu * np.eye(U.size)])


def nmpc_gradient(model: ModelNonlinear, x_now, ref_window, U, cfg: MpcConfig | None = None):
    """Analytic gradient of ``mpc_cost`` for the nonlinear predictor."""
    cfg = cfg or MpcConfig()
    R = _check_window(ref_window, cfg)[: cfg.horizon]
    U = np.asarray(U, dtype=float).reshape(cfg.horizon, -1)
    r, J = _nmpc_residual(model, np.asarray(x_now, float), U, R, cfg)
    return (2.0 * J.T @ r).reshape(U.shape)


def solve_knmpc(model: ModelNonlinear, x_now, ref_window, warm_start=None,
                cfg: MpcConfig | None = None, grad_tol: float = 1e-8) -> NmpcResult:
    """Levenberg-damped Gauss-Newton single shooting from ``warm_start``.

    Returns the best iterate found; this is a local method with no
    global-optimality guarantee.
    """
    cfg = cfg or MpcConfig()
    m = model.basis.m
    R = _check_window(ref_window, cfg)[: cfg.horizon]
    x0 = np.asarray(x_now, dtype=float)
    U = np.zeros((cfg.horizon, m)) if warm_start is None else \
        np.array(warm_start, dtype=float).reshape(cfg.horizon, m)
    r, J = _nmpc_residual(model, x0, U, R, cfg)
    if not (np.all(np.isfinite(r)) and np.all(np.isfinite(J))):
        return NmpcResult(U, math.inf, 0, math.inf, failed=True)
    cost = float(r @ r)
    costs = [cost]
    lam = cfg.nmpc_damping
    it = 0
    g = J.T @ r
    while it < cfg.nmpc_max_iters:
        gnorm = 2.0 * float(np.linalg.norm(g))
        if gnorm < grad_tol:
            break
        it += 1
        JtJ = J.T @ J
        JtJ.flat[:: JtJ.shape[0] + 1] += lam
        try:
            cho = scipy.linalg.cho_factor(JtJ, lower=True, check_finite=False)
        except np.linalg.LinAlgError:
            # roundoff on a badly scaled Jacobian: damp harder and retry
            lam *= 10.0
            if lam > 1e12:
                break
            continue
        step = -scipy.linalg.cho_solve(cho, g, check_finite=False)
        U_try = U + step.reshape(U.shape)
        r_try, J_try = _nmpc_residual(model, x0, U_try, R, cfg)
        c_try = float(r_try @ r_try) if np.all(np.isfinite(r_try)) else math.inf
        if c_try < cost and np.all(np.isfinite(J_try)):
            U, r, J, cost = U_try, r_try, J_try, c_try
            g = J.T @ r
            costs.append(cost)
            lam = max(lam / 3.0, 1e-12)
        else:
            lam *= 10.0
            if lam > 1e12:
                break
    return NmpcResult(U, cost, it, 2.0 * float(np.linalg.norm(g)), costs=costs)


# -- controllers ----------------------------------------------------------------------

class KMPC:
    name = "kmpc"

    def __init__(self, model: ModelLinear, cfg: MpcConfig):
        self.model, self.cfg = model, cfg
        self._P = _output_powers(model.A, _selector(model, cfg), cfg.horizon)
        self.failed = False

    def reset(self) -> None:
        self.failed = False

    def solve(self, x_now, ref_window) -> np.ndarray:
        return solve_kmpc(self.model, x_now, ref_window, self.cfg, _powers=self._P)


class KBMPC(KMPC):
    name = "kbmpc"

    def __init__(self, model: ModelBilinear, cfg: MpcConfig):
        super().__init__(model, cfg)
        self._Hs = np.vstack(model.H)

    def solve(self, x_now, ref_window) -> np.ndarray:
        return solve_kbmpc(self.model, x_now, ref_window, self.cfg, _powers=self._P,
                           _stacked=self._Hs)


class KNMPC:
    """Holds the shifted previous solution as warm start."""

    name = "knmpc"

    def __init__(self, model: ModelNonlinear, cfg: MpcConfig):
        self.model, self.cfg = model, cfg
        self.warm = np.zeros((cfg.horizon, model.basis.m))
        self.failed = False
        self.last: NmpcResult | None = None

    def reset(self) -> None:
        """Drop the warm start (e.g. after a compile-warming call)."""
        self.warm = np.zeros_like(self.warm)
        self.failed, self.last = False, None

    def solve(self, x_now, ref_window) -> np.ndarray:
        res = solve_knmpc(self.model, x_now, ref_window, self.warm, self.cfg)
        self.last, self.failed = res, res.failed
        if not res.failed:
            self.warm = np.vstack([res.U[1:], np.zeros((1, res.U.shape[1]))])
        return res.U


_CONTROLLERS = {"kmpc": (KMPC, ModelLinear), "kbmpc": (KBMPC, ModelBilinear),
                "knmpc": (KNMPC, ModelNonlinear)}


def make_controller(name: str, model, cfg: MpcConfig):
    try:
        cls, model_type = _CONTROLLERS[name.lower()]
    except KeyError:
        raise ValueError(f"unknown controller {name!r}; expected one of {sorted(_CONTROLLERS)}")
    if not isinstance(model, model_type):
        raise TypeError(f"{name} needs a {model_type.__name__}, got {type(model).__name__}")
    return cls(model, cfg)


def warm_up(controller, params: ArmParameters | None, ref: ReferenceTrajectory) -> None:
    """One untimed solve from the hanging pose so JIT compilation stays out of timings."""
    y = forward_kinematics(hanging_state(params or ArmParameters()).theta, params)
    controller.solve(y, ref.window(1, controller.cfg.horizon))
    controller.reset()


# -- closed loop ------------------------------------------------------------------------

@dataclass
class ControlLog:
    t: np.ndarray
    ref: np.ndarray
    ee: np.ndarray
    u: np.ndarray
    solve_time: np.ndarray
    flag: np.ndarray
    controller: str = ""

    @property
    def err(self) -> np.ndarray:
        return np.linalg.norm(self.ee - self.ref, axis=1)

    @property
    def mean_error(self) -> float:
        return float(np.mean(self.err))

    @property
    def mean_solve_time(self) -> float:
        return float(np.mean(self.solve_time))

    def __len__(self):
        return len(self.t)


def run_closed_loop(params: ArmParameters | None, controller, ref: ReferenceTrajectory,
                    cfg: MpcConfig | None = None, seed: int = 0, substeps: int | None = None,
                    clock=time.perf_counter) -> ControlLog:
    """Track ``ref`` from the hanging state, one MPC solve per sampling period.

    ``solve_time`` covers the controller call only. A controller exception or
    flagged failure applies zero torque for that step. ``seed`` is accepted
    for interface symmetry; the loop itself draws no random numbers.
    """
    params = params or ArmParameters()
    cfg = cfg or controller.cfg
    state = hanging_state(params)
    T = len(ref)
    m = params.n_links
    idx = list(cfg.output_index)
    ees, us = np.empty((T, 2)), np.zeros((T, m))
    times, flags = np.empty(T), np.zeros(T, dtype=int)
    for k in range(T):
        y = forward_kinematics(state.theta, params)
        ees[k] = y[idx]
        window = ref.window(k + 1, cfg.horizon)
        t0 = clock()
        try:
            U = controller.solve(y, window)
            failed = bool(getattr(controller, "failed", False)) or not np.all(np.isfinite(U[0]))
        except (FloatingPointError, np.linalg.LinAlgError, ValueError) as exc:
            log.warning("controller failed at step %d: %s", k, exc)
            failed = True
        times[k] = clock() - t0
        if failed:
            flags[k] = FLAG_FAILED
        else:
            us[k] = U[0]
        state = integrate_step(state, us[k], cfg.Ts, params, substeps)
    return ControlLog(np.arange(T) * cfg.Ts, ref.samples.copy(), ees, us, times, flags,
                      getattr(controller, "name", ""))


LOG_COLUMNS = ["t", "ref_x", "ref_y", "ee_x", "ee_y", "err", "u1", "u2", "u3", "solve_time", "flag"]


def write_control_log(clog: ControlLog, path) -> None:
    """Per-step CSV plus a trailing ``# summary`` comment line."""
    m = clog.u.shape[1]
    cols = LOG_COLUMNS[:6] + [f"u{j + 1}" for j in range(m)] + LOG_COLUMNS[-2:]
    err = clog.err
    with open(Path(path), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for k in range(len(clog)):
            vals = [clog.t[k], *clog.ref[k], *clog.ee[k], err[k], *clog.u[k], clog.solve_time[k]]
            w.writerow([format(float(v), ".17g") for v in vals] + [int(clog.flag[k])])
        fh.write(f"# summary controller={clog.controller} mean_error={clog.mean_error:.17g} "
                 f"mean_solve_time={clog.mean_solve_time:.17g} "
                 f"failures={int(np.count_nonzero(clog.flag))}\n")


def read_control_log(path) -> ControlLog:
    with open(Path(path), newline="") as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    rows = list(csv.DictReader(lines))
    m = sum(1 for k in rows[0] if k.startswith("u"))
    arr = lambda *ks: np.array([[float(r[k]) for k in ks] for r in rows])
    return ControlLog(arr("t")[:, 0], arr("ref_x", "ref_y"), arr("ee_x", "ee_y"),
                      arr(*[f"u{j + 1}" for j in range(m)]), arr("solve_time")[:, 0],
                      arr("flag")[:, 0].astype(int))
