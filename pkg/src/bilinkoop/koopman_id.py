"""EDMD fitting of the Koopman matrix and extraction of model realizations."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.linalg

from .basis import Basis, lift_batch
from .plant import SnapshotDataset

__all__ = [
    "KoopmanMatrix",
    "GeneratorMatrix",
    "ModelLinear",
    "ModelBilinear",
    "ModelNonlinear",
    "RankDeficientError",
    "LogDomainError",
    "fit_koopman",
    "default_ridge",
    "continuous_generator",
    "extract_linear",
    "extract_bilinear",
    "extract_nonlinear",
    "extract",
    "save_model",
    "load_model",
]

log = logging.getLogger(__name__)

ORDERING_VERSION = 1
_QR_THRESHOLD = 200
DEFAULT_RELATIVE_RIDGE = 1e-8


class RankDeficientError(np.linalg.LinAlgError):
    pass


class LogDomainError(ValueError):
    """Matrix has an eigenvalue outside the principal-logarithm domain."""


@dataclass(frozen=True)
class KoopmanMatrix:
    """``K_Ts`` such that ``K_Ts.T @ psi(p, u) ~ psi(q, u)``."""

    K_Ts: np.ndarray
    Ts: float
    basis: Basis
    ridge: float = 0.0

    def __post_init__(self):
        M = self.basis.M
        if self.K_Ts.shape != (M, M):
            raise ValueError(f"Koopman matrix must be {M}x{M}, got {self.K_Ts.shape}")

    @property
    def KT(self) -> np.ndarray:
        return self.K_Ts.T


@dataclass(frozen=True)
class GeneratorMatrix:
    Kc: np.ndarray
    Ts: float


@dataclass(frozen=True)
class ModelLinear:
    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    basis: Basis
    Ts: float
    family = "linear"


@dataclass(frozen=True)
class ModelBilinear:
    A: np.ndarray
    H: tuple
    B: np.ndarray
    C: np.ndarray
    basis: Basis
    Ts: float
    family = "bilinear"

    def __post_init__(self):
        if len(self.H) != self.B.shape[1]:
            raise ValueError("need one H matrix per input")


@dataclass(frozen=True)
class ModelNonlinear:
    Crows: np.ndarray
    basis: Basis
    Ts: float
    family = "nonlinear"


def default_ridge(gram: np.ndarray) -> float:
    return DEFAULT_RELATIVE_RIDGE * float(np.trace(gram)) / gram.shape[0]


def fit_koopman(dataset: SnapshotDataset, basis: Basis, ridge: float | None = None,
                method: str = "auto", relative_ridge: float | None = None) -> KoopmanMatrix:
    """Least-squares Koopman matrix from snapshot triples.

    Minimizes ``sum_k ||K' psi(p_k, u_k) - psi(q_k, u_k)||^2 + ridge ||K||_F^2``.
    ``ridge=None`` selects ``relative_ridge * trace(Gram) / M`` with
    ``relative_ridge`` defaulting to ``1e-8``. ``method`` is ``"normal"``
    (Cholesky on the Gram matrix), ``"qr"`` (orthogonal factorization of the
    augmented data matrix) or ``"auto"`` (QR above 200 basis functions).
    """
    if len(dataset) == 0:
        raise ValueError("empty dataset")
    if dataset.P.shape[1] != basis.n or dataset.U.shape[1] != basis.m:
        raise ValueError("snapshot dimensions do not match the basis")
    Psi_p = lift_batch(basis, dataset.P, dataset.U)
    Psi_q = lift_batch(basis, dataset.Q, dataset.U)
    M = basis.M
    if method == "auto":
        method = "qr" if M > _QR_THRESHOLD else "normal"
    if ridge is None:
        rel = DEFAULT_RELATIVE_RIDGE if relative_ridge is None else relative_ridge
        ridge = rel * float(np.einsum("ij,ij->", Psi_p, Psi_p)) / M
    if ridge < 0:
        raise ValueError("ridge must be non-negative")

    if method == "normal":
        G = Psi_p.T @ Psi_p
        rhs = Psi_p.T @ Psi_q
        if ridge > 0:
            G[np.diag_indices(M)] += ridge
        try:
            cho = scipy.linalg.cho_factor(G, lower=True, check_finite=True)
            ok = np.all(np.abs(np.diag(cho[0])) > 1e-14 * np.sqrt(np.abs(np.diag(G)).max()))
        except np.linalg.LinAlgError:
            ok = False
        if not ok:
            raise RankDeficientError("lifted data matrix is rank deficient; use ridge > 0")
        K = scipy.linalg.cho_solve(cho, rhs)
    elif method == "qr":
        A = Psi_p
        Y = Psi_q
        if ridge > 0:
            A = np.vstack([A, np.sqrt(ridge) * np.eye(M)])
            Y = np.vstack([Y, np.zeros((M, M))])
        Qf, R = scipy.linalg.qr(A, mode="economic")
        d = np.abs(np.diag(R))
        if d.min() <= 1e-13 * d.max():
            raise RankDeficientError("lifted data matrix is rank deficient; use ridge > 0")
        K = scipy.linalg.solve_triangular(R, Qf.T @ Y)
    else:
        raise ValueError(f"unknown method {method!r}")
    log.debug("fitted %r with ridge %.3g via %s", basis, ridge, method)
    return KoopmanMatrix(np.ascontiguousarray(K), float(dataset.Ts), basis, float(ridge))


def continuous_generator(K: KoopmanMatrix | np.ndarray, Ts: float | None = None,
                         tol: float = 1e-12) -> GeneratorMatrix:
    """``(1/Ts) log K_Ts`` with the principal matrix logarithm.

    Uses the eigendecomposition when it is well conditioned and falls back to
    the Schur-based ``scipy.linalg.logm`` otherwise. Matrices with an
    eigenvalue on the closed negative real axis are rejected.
    """
    if isinstance(K, KoopmanMatrix):
        mat, Ts = K.K_Ts, K.Ts
    else:
        mat = np.asarray(K, dtype=float)
    if Ts is None or Ts <= 0:
        raise ValueError("a positive sampling period is required")
    mat = np.atleast_2d(mat)
    lam, V = np.linalg.eig(mat)
    scale = max(1.0, float(np.abs(lam).max()))
    bad = (np.abs(lam.imag) <= tol * scale) & (lam.real <= tol * scale)
    if bad.any():
        raise LogDomainError(
            f"eigenvalue {lam[bad][0]:.3g} lies on the closed negative real axis; "
            "principal logarithm undefined")
    L = None
    if np.linalg.cond(V) < 1e6:
        Lc = (V * np.log(lam)) @ np.linalg.inv(V)
        if np.abs(Lc.imag).max() <= 1e-10 * max(1.0, np.abs(Lc.real).max()):
            L = Lc.real
    if L is None or not _roundtrip_ok(L, mat):
        L = scipy.linalg.logm(mat)
        if np.iscomplexobj(L):
            L = L.real
    return GeneratorMatrix(L / Ts, float(Ts))


def _roundtrip_ok(L, mat, tol=1e-10):
    return (np.linalg.norm(scipy.linalg.expm(L) - mat)
            <= tol * max(np.linalg.norm(mat), 1e-300))


def _require(K: KoopmanMatrix, family: str):
    if K.basis.spec.family != family:
        raise ValueError(f"expected a {family} basis, got {K.basis.spec.family}")


def _selector(basis: Basis, width: int) -> np.ndarray:
    C = np.zeros((basis.n, width))
    C[np.arange(basis.n), np.arange(basis.n)] = 1.0
    return C


def extract_linear(K: KoopmanMatrix) -> ModelLinear:
    _require(K, "linear")
    N = K.basis.N
    top = K.KT[:N]
    return ModelLinear(top[:, :N].copy(), top[:, N:].copy(), _selector(K.basis, N), K.basis, K.Ts)


def extract_bilinear(K: KoopmanMatrix) -> ModelBilinear:
    """Read ``A``, ``H_j`` and ``B`` off the first ``N`` rows of ``K'``.

    Block ``j`` of ``N`` columns after ``A`` multiplies ``u_j``; its
    constant-monomial column is ``B[:, j]`` and is zeroed in ``H_j`` so the
    realization ``A z + sum_j H_j z u_j + B u`` does not count it twice.
    """
    _require(K, "bilinear")
    basis = K.basis
    N, m = basis.N, basis.m
    top = K.KT[:N]
    c = basis.const_index
    A = top[:, :N].copy()
    H, B = [], np.empty((N, m))
    for j in range(m):
        blk = top[:, N * (j + 1): N * (j + 2)].copy()
        B[:, j] = blk[:, c]
        blk[:, c] = 0.0
        H.append(blk)
    return ModelBilinear(A, tuple(H), B, _selector(basis, N), basis, K.Ts)


def extract_nonlinear(K: KoopmanMatrix) -> ModelNonlinear:
    _require(K, "nonlinear")
    return ModelNonlinear(K.KT[: K.basis.n].copy(), K.basis, K.Ts)


def extract(K: KoopmanMatrix):
    """Dispatch on the basis family."""
    return {"linear": extract_linear, "bilinear": extract_bilinear,
            "nonlinear": extract_nonlinear}[K.basis.spec.family](K)


def reassemble(model) -> np.ndarray:
    """Inverse of extraction: the rows of ``K'`` the model was read from."""
    if isinstance(model, ModelLinear):
        return np.hstack([model.A, model.B])
    if isinstance(model, ModelBilinear):
        c = model.basis.const_index
        blocks = [model.A]
        for j, Hj in enumerate(model.H):
            blk = Hj.copy()
            blk[:, c] = model.B[:, j]
            blocks.append(blk)
        return np.hstack(blocks)
    return model.Crows


# -- model file ----------------------------------------------------------------

def _mat(a) -> dict:
    a = np.atleast_2d(np.asarray(a, dtype=float))
    return {"rows": a.shape[0], "cols": a.shape[1], "data": [float(v) for v in a.ravel()]}


def _unmat(d) -> np.ndarray:
    return np.array(d["data"], dtype=float).reshape(d["rows"], d["cols"])


def model_to_dict(model) -> dict:
    basis = model.basis
    out = {"format": "bilinkoop-model", "ordering_version": ORDERING_VERSION,
           "family": basis.spec.family, "n": basis.n, "m": basis.m, "rho": basis.spec.rho,
           "M": basis.M, "Ts": model.Ts, "basis": basis.to_dict()}
    if isinstance(model, KoopmanMatrix):
        out["kind"] = "koopman"
        out["ridge"] = model.ridge
        out["matrices"] = {"K_Ts": _mat(model.K_Ts)}
    elif isinstance(model, ModelLinear):
        out["kind"] = "model"
        out["matrices"] = {"A": _mat(model.A), "B": _mat(model.B), "C": _mat(model.C)}
    elif isinstance(model, ModelBilinear):
        out["kind"] = "model"
        out["matrices"] = {"A": _mat(model.A), "B": _mat(model.B), "C": _mat(model.C),
                           **{f"H{j + 1}": _mat(h) for j, h in enumerate(model.H)}}
    elif isinstance(model, ModelNonlinear):
        out["kind"] = "model"
        out["matrices"] = {"Crows": _mat(model.Crows)}
    else:
        raise TypeError(f"cannot serialize {type(model).__name__}")
    return out


def model_from_dict(d: dict):
    if d.get("format") != "bilinkoop-model":
        raise ValueError("not a model file")
    if d.get("ordering_version") != ORDERING_VERSION:
        raise ValueError(f"unsupported ordering version {d.get('ordering_version')}")
    basis = Basis.from_dict(d["basis"])
    mats = {k: _unmat(v) for k, v in d["matrices"].items()}
    Ts = float(d["Ts"])
    if d["kind"] == "koopman":
        return KoopmanMatrix(mats["K_Ts"], Ts, basis, float(d.get("ridge", 0.0)))
    fam = d["family"]
    if fam == "linear":
        return ModelLinear(mats["A"], mats["B"], mats["C"], basis, Ts)
    if fam == "bilinear":
        H = tuple(mats[f"H{j + 1}"] for j in range(basis.m))
        return ModelBilinear(mats["A"], H, mats["B"], mats["C"], basis, Ts)
    return ModelNonlinear(mats["Crows"], basis, Ts)


def save_model(model, path) -> None:
    """Write a model (or Koopman matrix) as JSON.

    Floats are written with ``repr`` (shortest round-tripping form, at most
    17 significant digits), so reading back is bit-exact.
    """
    Path(path).write_text(json.dumps(model_to_dict(model), indent=1) + "\n")


def load_model(path):
    return model_from_dict(json.loads(Path(path).read_text()))
