"""Simulated 3-link planar arm: dynamics, integration and snapshot collection.

Joint angles are relative to the previous link and measured from the
straight-down configuration, so ``theta = 0`` is the hanging pose. Each link
is a uniform thin rod (center of mass at mid-link, inertia ``m L^2 / 12``).
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from ._accel import njit, pick

__all__ = [
    "ArmParameters",
    "PlantState",
    "Snapshot",
    "SnapshotDataset",
    "ExcitationConfig",
    "SimulationDivergence",
    "forward_kinematics",
    "arm_acceleration",
    "integrate_step",
    "mechanical_energy",
    "hanging_state",
    "collect_snapshots",
    "episode_rollouts",
    "write_snapshots",
    "read_snapshots",
]

# Max RK4 substep length [s]. The default arm is heavily overdamped (fastest
# mode ~ 1e3 1/s) and explicit RK4 is unstable beyond roughly 2.8 / 1e3 s.
MAX_SUBSTEP = 5e-4


class SimulationDivergence(FloatingPointError):
    """Raised when the integrated state becomes non-finite."""


@dataclass(frozen=True)
class ArmParameters:
    link_masses: tuple = (0.1, 0.1, 0.1)
    link_lengths: tuple = (0.33, 0.33, 0.33)
    joint_stiffness: tuple = (1e-5, 1e-5, 1e-5)
    joint_damping: tuple = (1.0, 1.0, 1.0)
    gravity: float = 9.81

    def __post_init__(self):
        for name in ("link_masses", "link_lengths", "joint_stiffness", "joint_damping"):
            object.__setattr__(self, name, tuple(float(v) for v in getattr(self, name)))
        sizes = {len(self.link_masses), len(self.link_lengths),
                 len(self.joint_stiffness), len(self.joint_damping)}
        if len(sizes) != 1:
            raise ValueError("arm parameter vectors must all have the same length")
        if min(self.link_masses) <= 0 or min(self.link_lengths) <= 0:
            raise ValueError("link masses and lengths must be strictly positive")
        if min(self.joint_stiffness) < 0 or min(self.joint_damping) < 0:
            raise ValueError("joint stiffness and damping must be non-negative")

    @property
    def n_links(self) -> int:
        return len(self.link_masses)

    @property
    def reach(self) -> float:
        return float(sum(self.link_lengths))

    def to_dict(self) -> dict:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}

    @classmethod
    def from_dict(cls, d: dict) -> "ArmParameters":
        return cls(**{k: tuple(v) if isinstance(v, list) else v for k, v in d.items()})

    def _coefficients(self):
        """Configuration-independent terms of the chain dynamics.

        ``W[j, k] = sum_i m_i a_ij a_ik`` with ``a_ij`` the lever arm of link
        ``j`` on the center of mass of link ``i``; ``gc[j] = g sum_i m_i a_ij``.
        """
        m = np.asarray(self.link_masses)
        L = np.asarray(self.link_lengths)
        nl = len(m)
        a = np.zeros((nl, nl))
        for i in range(nl):
            a[i, :i] = L[:i]
            a[i, i] = 0.5 * L[i]
        W = np.einsum("i,ij,ik->jk", m, a, a)
        inertia = m * L**2 / 12.0
        gc = self.gravity * (m @ a)
        return (np.ascontiguousarray(W), inertia, gc,
                np.asarray(self.joint_stiffness), np.asarray(self.joint_damping))


@dataclass
class PlantState:
    theta: np.ndarray
    theta_dot: np.ndarray

    def __post_init__(self):
        self.theta = np.asarray(self.theta, dtype=float)
        self.theta_dot = np.asarray(self.theta_dot, dtype=float)
        if not (np.all(np.isfinite(self.theta)) and np.all(np.isfinite(self.theta_dot))):
            raise SimulationDivergence("plant state is not finite")


def hanging_state(params: ArmParameters | None = None) -> PlantState:
    nl = (params or ArmParameters()).n_links
    return PlantState(np.zeros(nl), np.zeros(nl))


@dataclass(frozen=True)
class ExcitationConfig:
    torque_amplitude: float = 0.02
    hold_steps: int = 5
    init_angle_range: float = math.pi / 2
    episode_length: int = 200
    episodes: int = 60

    def __post_init__(self):
        if self.torque_amplitude < 0 or self.init_angle_range < 0:
            raise ValueError("excitation amplitudes must be non-negative")
        if self.hold_steps < 1 or self.episode_length < 1 or self.episodes < 1:
            raise ValueError("hold_steps, episode_length and episodes must be positive")


@dataclass(frozen=True)
class Snapshot:
    p: np.ndarray
    q: np.ndarray
    u: np.ndarray


@dataclass
class SnapshotDataset:
    """Snapshot triples stored column-stacked: ``P[k], Q[k], U[k]``."""

    Ts: float
    P: np.ndarray
    Q: np.ndarray
    U: np.ndarray
    seed: int | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.P = np.atleast_2d(np.asarray(self.P, dtype=float))
        self.Q = np.atleast_2d(np.asarray(self.Q, dtype=float))
        U = np.asarray(self.U, dtype=float)
        self.U = U.reshape(len(self.P), -1)
        if self.P.shape != self.Q.shape or len(self.U) != len(self.P):
            raise ValueError("snapshot arrays have inconsistent shapes")
        if self.Ts <= 0:
            raise ValueError("sampling period must be positive")

    def __len__(self) -> int:
        return len(self.P)

    def __getitem__(self, k) -> Snapshot:
        return Snapshot(self.P[k], self.Q[k], self.U[k])

    @property
    def snapshots(self) -> list[Snapshot]:
        return [self[k] for k in range(len(self))]


# -- kinematics --------------------------------------------------------------

def forward_kinematics(theta, params: ArmParameters | None = None) -> np.ndarray:
    """Cartesian link-end positions ``(a1, b1, a2, b2, ...)``.

    Accepts a single configuration or a batch of shape ``(B, n_links)``.
    """
    params = params or ArmParameters()
    theta = np.asarray(theta, dtype=float)
    phi = np.cumsum(theta, axis=-1)
    L = np.asarray(params.link_lengths)
    ax = np.cumsum(L * np.sin(phi), axis=-1)
    by = np.cumsum(-L * np.cos(phi), axis=-1)
    out = np.empty(theta.shape[:-1] + (2 * theta.shape[-1],))
    out[..., 0::2] = ax
    out[..., 1::2] = by
    return out


# -- dynamics kernels ----------------------------------------------------------

@njit(cache=True)
def _accel_nb(theta, dtheta, tau, W, inertia, gc, stiff, damp):
    nl = theta.shape[0]
    if not (np.all(np.isfinite(theta)) and np.all(np.isfinite(dtheta))):
        return np.full(nl, np.nan)
    phi = np.empty(nl)
    dphi = np.empty(nl)
    s = 0.0
    ds = 0.0
    for j in range(nl):
        s += theta[j]
        ds += dtheta[j]
        phi[j] = s
        dphi[j] = ds
    Mphi = np.empty((nl, nl))
    hphi = np.empty(nl)
    for j in range(nl):
        acc = gc[j] * math.sin(phi[j])
        for k in range(nl):
            dj = phi[j] - phi[k]
            Mphi[j, k] = W[j, k] * math.cos(dj)
            acc += W[j, k] * math.sin(dj) * dphi[k] * dphi[k]
        Mphi[j, j] += inertia[j]
        hphi[j] = acc
    # theta-space: M = T' Mphi T, rhs = tau - K theta - D dtheta - T' hphi,
    # with T lower-triangular ones (T' x)[i] = sum_{j >= i} x[j].
    Mt = np.empty((nl, nl))
    for i in range(nl):
        for k in range(nl):
            acc = 0.0
            for j in range(i, nl):
                for l in range(k, nl):
                    acc += Mphi[j, l]
            Mt[i, k] = acc
    rhs = np.empty(nl)
    for i in range(nl):
        acc = 0.0
        for j in range(i, nl):
            acc += hphi[j]
        rhs[i] = tau[i] - stiff[i] * theta[i] - damp[i] * dtheta[i] - acc
    if not np.all(np.isfinite(rhs)):
        return np.full(nl, np.nan)
    return np.linalg.solve(Mt, rhs)


@njit(cache=True)
def _rk4_batch_nb(theta, dtheta, tau, h, nsub, W, inertia, gc, stiff, damp):
    B = theta.shape[0]
    th_out = theta.copy()
    dth_out = dtheta.copy()
    for b in range(B):
        x = theta[b].copy()
        v = dtheta[b].copy()
        t = tau[b]
        for _ in range(nsub):
            a1 = _accel_nb(x, v, t, W, inertia, gc, stiff, damp)
            x2 = x + 0.5 * h * v
            v2 = v + 0.5 * h * a1
            a2 = _accel_nb(x2, v2, t, W, inertia, gc, stiff, damp)
            x3 = x + 0.5 * h * v2
            v3 = v + 0.5 * h * a2
            a3 = _accel_nb(x3, v3, t, W, inertia, gc, stiff, damp)
            x4 = x + h * v3
            v4 = v + h * a3
            a4 = _accel_nb(x4, v4, t, W, inertia, gc, stiff, damp)
            x = x + (h / 6.0) * (v + 2.0 * v2 + 2.0 * v3 + v4)
            v = v + (h / 6.0) * (a1 + 2.0 * a2 + 2.0 * a3 + a4)
            if not (np.all(np.isfinite(x)) and np.all(np.isfinite(v))):
                # diverged row: report NaN like the numpy path instead of raising
                x[:] = np.nan
                v[:] = np.nan
                break
        th_out[b] = x
        dth_out[b] = v
    return th_out, dth_out


def _accel_np(theta, dtheta, tau, W, inertia, gc, stiff, damp):
    """Batched twin of ``_accel_nb``; leading axis is the batch."""
    phi = np.cumsum(theta, axis=1)
    dphi = np.cumsum(dtheta, axis=1)
    diff = phi[:, :, None] - phi[:, None, :]
    Mphi = W * np.cos(diff) + np.diag(inertia)
    hphi = np.einsum("bjk,bk->bj", W * np.sin(diff), dphi**2) + gc * np.sin(phi)
    # T' x == reverse cumulative sum
    Mt = np.flip(np.cumsum(np.flip(Mphi, 1), 1), 1)
    Mt = np.flip(np.cumsum(np.flip(Mt, 2), 2), 2)
    Th = np.flip(np.cumsum(np.flip(hphi, 1), 1), 1)
    rhs = tau - stiff * theta - damp * dtheta - Th
    return np.linalg.solve(Mt, rhs[..., None])[..., 0]


def _rk4_batch_np(theta, dtheta, tau, h, nsub, W, inertia, gc, stiff, damp):
    x = np.array(theta, dtype=float)
    v = np.array(dtheta, dtype=float)
    f = lambda x_, v_: _accel_np(x_, v_, tau, W, inertia, gc, stiff, damp)
    for _ in range(nsub):
        a1 = f(x, v)
        v2 = v + 0.5 * h * a1
        a2 = f(x + 0.5 * h * v, v2)
        v3 = v + 0.5 * h * a2
        a3 = f(x + 0.5 * h * v2, v3)
        v4 = v + h * a3
        a4 = f(x + h * v3, v4)
        x = x + (h / 6.0) * (v + 2.0 * v2 + 2.0 * v3 + v4)
        v = v + (h / 6.0) * (a1 + 2.0 * a2 + 2.0 * a3 + a4)
    return x, v


_rk4_batch = pick(_rk4_batch_nb, _rk4_batch_np)


def arm_acceleration(state: PlantState, torque, params: ArmParameters | None = None) -> np.ndarray:
    """Joint accelerations from ``M(q) qdd = tau - C qd - g - K q - D qd``."""
    params = params or ArmParameters()
    coeffs = params._coefficients()
    tau = np.asarray(torque, dtype=float)
    try:
        acc = _accel_np(state.theta[None], state.theta_dot[None], tau[None], *coeffs)[0]
    except np.linalg.LinAlgError as exc:  # pragma: no cover
        raise FloatingPointError(f"mass matrix solve failed: {exc}") from exc
    return acc


def default_substeps(Ts: float) -> int:
    return max(10, math.ceil(Ts / MAX_SUBSTEP - 1e-9))


def integrate_batch(theta, dtheta, torque, Ts, params: ArmParameters | None = None,
                    substeps: int | None = None):
    """RK4-integrate a batch of states over ``Ts`` with torques held constant."""
    params = params or ArmParameters()
    if Ts <= 0:
        raise ValueError("Ts must be positive")
    nsub = default_substeps(Ts) if substeps is None else int(substeps)
    theta = np.ascontiguousarray(np.atleast_2d(theta), dtype=float)
    dtheta = np.ascontiguousarray(np.atleast_2d(dtheta), dtype=float)
    torque = np.ascontiguousarray(np.atleast_2d(torque), dtype=float)
    # divergence shows up as non-finite rows, which callers check
    with np.errstate(over="ignore", invalid="ignore"):
        return _rk4_batch(theta, dtheta, torque, Ts / nsub, nsub, *params._coefficients())


def integrate_step(state: PlantState, torque, Ts: float, params: ArmParameters | None = None,
                   substeps: int | None = None) -> PlantState:
    """Advance one sampling period with a zero-order-hold torque.

    The period is split into ``substeps`` classical RK4 steps (default: at
    least 10 and no longer than ``MAX_SUBSTEP`` each).
    """
    th, dth = integrate_batch(state.theta, state.theta_dot, np.asarray(torque, dtype=float),
                              Ts, params, substeps)
    if not (np.all(np.isfinite(th)) and np.all(np.isfinite(dth))):
        raise SimulationDivergence("non-finite state after integration step")
    return PlantState(th[0], dth[0])


def mechanical_energy(state: PlantState, params: ArmParameters | None = None) -> float:
    """Kinetic + gravitational + spring energy; zero at the hanging rest state."""
    params = params or ArmParameters()
    W, inertia, gc, stiff, _ = params._coefficients()
    phi = np.cumsum(state.theta)
    dphi = np.cumsum(state.theta_dot)
    Mphi = W * np.cos(phi[:, None] - phi[None, :]) + np.diag(inertia)
    kinetic = 0.5 * dphi @ Mphi @ dphi
    gravity = float(gc @ (1.0 - np.cos(phi)))
    spring = 0.5 * float(stiff @ state.theta**2)
    return float(kinetic + gravity + spring)


# -- data collection -------------------------------------------------------------

def _simulate_episodes(rng, n_ep, params, exc, Ts, substeps):
    nl = params.n_links
    theta = rng.uniform(-exc.init_angle_range, exc.init_angle_range, size=(n_ep, nl))
    dtheta = np.zeros((n_ep, nl))
    n_holds = -(-exc.episode_length // exc.hold_steps)
    holds = rng.uniform(-exc.torque_amplitude, exc.torque_amplitude, size=(n_ep, n_holds, nl))
    torques = np.repeat(holds, exc.hold_steps, axis=1)[:, : exc.episode_length]
    thetas = np.empty((n_ep, exc.episode_length + 1, nl))
    thetas[:, 0] = theta
    for t in range(exc.episode_length):
        theta, dtheta = integrate_batch(theta, dtheta, torques[:, t], Ts, params, substeps)
        thetas[:, t + 1] = theta
    ok = np.all(np.isfinite(thetas), axis=(1, 2))
    return thetas, torques, ok


def collect_snapshots(params: ArmParameters | None = None, excitation: ExcitationConfig | None = None,
                      K: int = 12000, Ts: float = 0.05, seed: int = 0,
                      substeps: int | None = None, max_resample: int = 10) -> SnapshotDataset:
    """Random-excitation episodes, flattened into ``K`` snapshot triples.

    Episodes start at rest from uniformly random joint angles and are driven
    by uniform random torques held for ``hold_steps`` periods. Diverged
    episodes are discarded and redrawn from the same generator.
    """
    params = params or ArmParameters()
    exc = excitation or ExcitationConfig()
    if K < 1:
        raise ValueError("K must be at least 1")
    rng = np.random.default_rng(seed)
    n_ep = -(-K // exc.episode_length)
    thetas, torques, ok = _simulate_episodes(rng, n_ep, params, exc, Ts, substeps)
    for _ in range(max_resample):
        if ok.all():
            break
        bad = np.flatnonzero(~ok)
        th2, tq2, ok2 = _simulate_episodes(rng, len(bad), params, exc, Ts, substeps)
        thetas[bad], torques[bad], ok[bad] = th2, tq2, ok2
    else:
        if not ok.all():
            raise SimulationDivergence("episodes kept diverging after resampling")
    Y = forward_kinematics(thetas, params)
    P = Y[:, :-1].reshape(-1, Y.shape[-1])[:K]
    Q = Y[:, 1:].reshape(-1, Y.shape[-1])[:K]
    U = torques.reshape(-1, params.n_links)[:K]
    meta = {"params": params.to_dict(), "excitation": asdict(exc)}
    return SnapshotDataset(Ts=float(Ts), P=P, Q=Q, U=U, seed=seed, meta=meta)


def episode_rollouts(params: ArmParameters | None, excitation: ExcitationConfig | None,
                     n_episodes: int, horizon: int, Ts: float, seed: int,
                     substeps: int | None = None):
    """Output/input trajectories for held-out validation.

    Returns ``(X, U)`` with shapes ``(E, horizon + 1, 2 n_links)`` and
    ``(E, horizon, n_links)``.
    """
    params = params or ArmParameters()
    exc = excitation or ExcitationConfig()
    exc = ExcitationConfig(exc.torque_amplitude, exc.hold_steps, exc.init_angle_range,
                           horizon, n_episodes)
    rng = np.random.default_rng(seed)
    thetas, torques, ok = _simulate_episodes(rng, n_episodes, params, exc, Ts, substeps)
    if not ok.all():
        raise SimulationDivergence("validation episode diverged")
    return forward_kinematics(thetas, params), torques


# -- file format -------------------------------------------------------------------

def write_snapshots(ds: SnapshotDataset, path) -> None:
    """CSV ``k,p1..,q1..,u1..`` plus a ``.meta.json`` sidecar."""
    path = Path(path)
    n, m = ds.P.shape[1], ds.U.shape[1]
    header = (["k"] + [f"p{i + 1}" for i in range(n)] + [f"q{i + 1}" for i in range(n)]
              + [f"u{i + 1}" for i in range(m)])
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for k in range(len(ds)):
            row = np.concatenate([ds.P[k], ds.Q[k], ds.U[k]])
            w.writerow([k] + [format(v, ".17g") for v in row])
    meta = {"Ts": ds.Ts, "seed": ds.seed, "n": n, "m": m, "K": len(ds), **ds.meta}
    Path(str(path) + ".meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")


def read_snapshots(path) -> SnapshotDataset:
    path = Path(path)
    meta = json.loads(Path(str(path) + ".meta.json").read_text())
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        header = next(r)
        rows = np.array([[float(v) for v in row[1:]] for row in r])
    n, m = meta["n"], meta["m"]
    if len(header) != 1 + 2 * n + m:
        raise ValueError(f"{path}: header does not match metadata dimensions")
    rows = rows.reshape(-1, 2 * n + m)
    extra = {k: v for k, v in meta.items() if k not in ("Ts", "seed", "n", "m", "K")}
    return SnapshotDataset(Ts=meta["Ts"], P=rows[:, :n], Q=rows[:, n:2 * n], U=rows[:, 2 * n:],
                           seed=meta["seed"], meta=extra)
