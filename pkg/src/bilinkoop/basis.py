"""Monomial dictionaries and lifting functions.

Every dictionary entry is stored as one row of an integer exponent matrix
over the stacked variables ``(x_1..x_n, u_1..u_m)``. Evaluating the lift is
then a row-wise product of powers, which keeps the three families on one
code path:

* ``linear``: state monomials of degree <= rho, then ``u_1..u_m``.
* ``bilinear``: the state block repeated with factors ``1, u_1, .., u_m``.
  The ``1 * u_j`` entries double as the input projections.
* ``nonlinear``: all monomials of ``(x, u)`` of degree <= rho.

Within each block the degree-1 state projections come first, then the
constant, then the remaining monomials in graded lexicographic order.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from itertools import combinations_with_replacement
from math import comb

import numpy as np

from ._accel import njit, pick

__all__ = [
    "FAMILIES",
    "MAX_RHO",
    "MultiIndex",
    "BasisSpec",
    "Basis",
    "enumerate_monomials",
    "basis_dimension",
    "build_basis",
    "lift",
    "lift_batch",
    "lift_jacobians",
]

FAMILIES = ("linear", "bilinear", "nonlinear")
MAX_RHO = 12


@dataclass(frozen=True)
class MultiIndex:
    exponents: tuple

    def __post_init__(self):
        exps = tuple(int(e) for e in self.exponents)
        if any(e < 0 for e in exps):
            raise ValueError("exponents must be non-negative")
        object.__setattr__(self, "exponents", exps)

    @property
    def degree(self) -> int:
        return sum(self.exponents)

    def __len__(self):
        return len(self.exponents)

    def __add__(self, other: "MultiIndex") -> "MultiIndex":
        if len(self) != len(other):
            raise ValueError("multi-indices over different variable counts")
        return MultiIndex(tuple(a + b for a, b in zip(self.exponents, other.exponents)))

    def __str__(self):
        terms = [f"x{i + 1}" + (f"^{e}" if e > 1 else "") for i, e in enumerate(self.exponents) if e]
        return "*".join(terms) or "1"


def enumerate_monomials(n: int, rho: int) -> list[MultiIndex]:
    """All multi-indices in ``n`` variables with total degree <= ``rho``.

    Order: ``x_1..x_n``, the constant, then degrees 2..rho in graded
    lexicographic order (``x1^2, x1 x2, ..``).
    """
    if n < 1:
        raise ValueError("need at least one variable")
    if rho < 0:
        raise ValueError("rho must be non-negative")
    out = []
    if rho >= 1:
        out += [MultiIndex(tuple(int(i == k) for i in range(n))) for k in range(n)]
    out.append(MultiIndex((0,) * n))
    for d in range(2, rho + 1):
        for combo in combinations_with_replacement(range(n), d):
            exps = [0] * n
            for k in combo:
                exps[k] += 1
            out.append(MultiIndex(tuple(exps)))
    return out


@dataclass(frozen=True)
class BasisSpec:
    family: str
    n: int
    m: int
    rho: int

    def __post_init__(self):
        fam = str(self.family).lower()
        if fam not in FAMILIES:
            raise ValueError(f"unknown basis family {self.family!r}; expected one of {FAMILIES}")
        object.__setattr__(self, "family", fam)
        if self.n < 1 or self.m < 0 or self.rho < 1:
            raise ValueError("basis spec needs n >= 1, m >= 0, rho >= 1")
        if self.rho > MAX_RHO:
            raise ValueError(f"rho above {MAX_RHO} is not supported")

    @property
    def n_state(self) -> int:
        """Size ``N`` of the state-only monomial block."""
        return comb(self.n + self.rho, self.rho)


def basis_dimension(spec: BasisSpec) -> int:
    N = spec.n_state
    if spec.family == "linear":
        return N + spec.m
    if spec.family == "bilinear":
        return N * (spec.m + 1)
    return comb(spec.n + spec.m + spec.rho, spec.rho)


class Basis:
    """Immutable, ordered monomial dictionary ``psi: R^n x R^m -> R^M``."""

    def __init__(self, spec: BasisSpec, exponents: np.ndarray):
        self.spec = spec
        E = np.array(exponents, dtype=np.int64, copy=True)
        if E.ndim != 2 or E.shape[1] != spec.n + spec.m:
            raise ValueError("exponent matrix must have n + m columns")
        E.setflags(write=False)
        self._E = E
        self._check()

    def _check(self):
        n = self.spec.n
        E = self._E
        if not np.array_equal(E[:n, :n], np.eye(n, dtype=np.int64)) or E[:n, n:].any():
            raise ValueError("the first n entries must be the state projections")
        state_only = ~E[:, n:].any(axis=1)
        const = state_only & ~E[:, :n].any(axis=1)
        if const.sum() != 1:
            raise ValueError("the constant monomial must appear exactly once")
        if len(E) != basis_dimension(self.spec):
            raise ValueError("entry count does not match the family dimension")
        if len({tuple(r) for r in E}) != len(E):
            raise ValueError("duplicate basis entries")

    @property
    def exponents(self) -> np.ndarray:
        return self._E

    @property
    def M(self) -> int:
        return len(self._E)

    @property
    def n(self) -> int:
        return self.spec.n

    @property
    def m(self) -> int:
        return self.spec.m

    @property
    def N(self) -> int:
        return self.spec.n_state

    @cached_property
    def const_index(self) -> int:
        return int(np.flatnonzero(~self._E.any(axis=1))[0])

    @property
    def entries(self) -> list[tuple[MultiIndex, MultiIndex]]:
        """``(state multi-index, input multi-index)`` per dictionary entry."""
        n = self.n
        return [(MultiIndex(tuple(r[:n])), MultiIndex(tuple(r[n:]))) for r in self._E]

    def labels(self) -> list[str]:
        names = [f"x{i + 1}" for i in range(self.n)] + [f"u{j + 1}" for j in range(self.m)]
        out = []
        for row in self._E:
            terms = [v + (f"^{e}" if e > 1 else "") for v, e in zip(names, row) if e]
            out.append("*".join(terms) or "1")
        return out

    def state_exponents(self) -> np.ndarray:
        """Exponents (over x and u) of the first ``N`` state-only entries."""
        return self._E[: self.N]

    def __eq__(self, other):
        return (isinstance(other, Basis) and self.spec == other.spec
                and np.array_equal(self._E, other._E))

    def __hash__(self):
        return hash((self.spec, self._E.tobytes()))

    def __repr__(self):
        s = self.spec
        return f"Basis({s.family!r}, n={s.n}, m={s.m}, rho={s.rho}, M={self.M})"

    def to_dict(self) -> dict:
        s = self.spec
        return {"family": s.family, "n": s.n, "m": s.m, "rho": s.rho,
                "entries": self._E.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "Basis":
        return cls(BasisSpec(d["family"], d["n"], d["m"], d["rho"]), np.asarray(d["entries"]))


def build_basis(spec: BasisSpec | str, n: int | None = None, m: int | None = None,
                rho: int | None = None) -> Basis:
    """Construct the dictionary for ``spec`` (or ``family, n, m, rho``)."""
    if not isinstance(spec, BasisSpec):
        spec = BasisSpec(spec, n, m, rho)
    n, m = spec.n, spec.m
    state = np.array([mi.exponents + (0,) * m for mi in enumerate_monomials(n, spec.rho)],
                     dtype=np.int64)
    if spec.family == "linear":
        E = np.vstack([state, np.hstack([np.zeros((m, n), np.int64), np.eye(m, dtype=np.int64)])])
    elif spec.family == "bilinear":
        blocks = [state]
        for j in range(m):
            blk = state.copy()
            blk[:, n + j] = 1
            blocks.append(blk)
        E = np.vstack(blocks)
    else:
        joint = enumerate_monomials(n + m, spec.rho)
        E = np.array([mi.exponents for mi in joint], dtype=np.int64)
    return Basis(spec, E)


# -- evaluation kernels --------------------------------------------------------------

@njit(cache=True)
def _monomials_nb(V, E):
    B, d = V.shape
    M = E.shape[0]
    pmax = 0
    for i in range(M):
        for k in range(d):
            if E[i, k] > pmax:
                pmax = E[i, k]
    out = np.empty((B, M))
    pw = np.empty((d, pmax + 1))
    for b in range(B):
        for k in range(d):
            pw[k, 0] = 1.0
            for e in range(1, pmax + 1):
                pw[k, e] = pw[k, e - 1] * V[b, k]
        for i in range(M):
            acc = 1.0
            for k in range(d):
                acc *= pw[k, E[i, k]]
            out[b, i] = acc
    return out


def _monomials_np(V, E):
    pmax = int(E.max()) if E.size else 0
    pw = np.ones((V.shape[0], V.shape[1], pmax + 1))
    for e in range(1, pmax + 1):
        pw[:, :, e] = pw[:, :, e - 1] * V
    cols = np.arange(V.shape[1])
    out = np.ones((V.shape[0], E.shape[0]))
    for k in cols:
        out *= pw[:, k, E[:, k]]
    return out


@njit(cache=True)
def _monomials_jac_nb(v, E):
    d = v.shape[0]
    M = E.shape[0]
    pmax = 1
    for i in range(M):
        for k in range(d):
            if E[i, k] > pmax:
                pmax = E[i, k]
    pw = np.empty((d, pmax + 1))
    for k in range(d):
        pw[k, 0] = 1.0
        for e in range(1, pmax + 1):
            pw[k, e] = pw[k, e - 1] * v[k]
    vals = np.empty(M)
    J = np.zeros((M, d))
    for i in range(M):
        acc = 1.0
        for k in range(d):
            acc *= pw[k, E[i, k]]
        vals[i] = acc
        for k in range(d):
            e = E[i, k]
            if e == 0:
                continue
            g = e * pw[k, e - 1]
            for l in range(d):
                if l != k:
                    g *= pw[l, E[i, l]]
            J[i, k] = g
    return vals, J


def _monomials_jac_np(v, E):
    d = v.shape[0]
    pmax = max(int(E.max()) if E.size else 0, 1)
    pw = np.ones((d, pmax + 1))
    for e in range(1, pmax + 1):
        pw[:, e] = pw[:, e - 1] * v
    factors = pw[np.arange(d), E]  # (M, d)
    vals = factors.prod(axis=1)
    J = np.zeros(E.shape, dtype=float)
    dfac = E * pw[np.arange(d), np.maximum(E - 1, 0)]
    for k in range(d):
        others = np.delete(factors, k, axis=1).prod(axis=1)
        J[:, k] = dfac[:, k] * others
    return vals, J


monomials = pick(_monomials_nb, _monomials_np)
monomials_jac = pick(_monomials_jac_nb, _monomials_jac_np)


def _stack(basis: Basis, x, u) -> np.ndarray:
    x = np.asarray(x, dtype=float).reshape(-1)
    u = np.asarray(u if u is not None else [], dtype=float).reshape(-1)
    if x.shape[0] != basis.n or u.shape[0] != basis.m:
        raise ValueError(f"expected x in R^{basis.n} and u in R^{basis.m}, "
                         f"got {x.shape[0]} and {u.shape[0]}")
    return np.concatenate([x, u])


def lift(basis: Basis, x, u=None) -> np.ndarray:
    """Evaluate every dictionary entry at ``(x, u)``."""
    v = _stack(basis, x, u)
    return monomials(v[None, :], basis.exponents)[0]


def lift_batch(basis: Basis, X, U=None) -> np.ndarray:
    """Row-wise lift of ``X`` (K, n) and ``U`` (K, m) into a (K, M) array."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    U = np.zeros((len(X), 0)) if U is None else np.asarray(U, dtype=float).reshape(len(X), -1)
    if X.shape[1] != basis.n or U.shape[1] != basis.m:
        raise ValueError("dimension mismatch between data and basis")
    return monomials(np.ascontiguousarray(np.hstack([X, U])), basis.exponents)


def lift_jacobians(basis: Basis, x, u=None) -> tuple[np.ndarray, np.ndarray]:
    """Analytic ``d psi / dx`` (M, n) and ``d psi / du`` (M, m)."""
    v = _stack(basis, x, u)
    _, J = monomials_jac(v, basis.exponents)
    return J[:, : basis.n], J[:, basis.n:]


def lift_with_jacobian(basis: Basis, x, u=None) -> tuple[np.ndarray, np.ndarray]:
    """Values and the full (M, n + m) Jacobian in one pass."""
    return monomials_jac(_stack(basis, x, u), basis.exponents)
