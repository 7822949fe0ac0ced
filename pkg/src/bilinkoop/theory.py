"""Realizability checks for polynomial control-affine systems.

For ``xdot = F_x(x) + sum_j F_u^j(x) u_j`` and the dictionary of all state
monomials of degree <= rho, a realization over that dictionary is

* linear iff every drift Lie derivative ``L_{F_x} z_i`` stays in the
  dictionary span and every input Lie derivative ``L_{F_u^j} z_i`` is a
  constant;
* bilinear iff both kinds of Lie derivative stay in the dictionary span
  (the products ``z_k u_j`` then carry the input terms).

Span membership over monomials is a finite coefficient comparison, so the
checks are exact up to float rounding of the stored coefficients.
"""

from __future__ import annotations

import json
import re
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .basis import MultiIndex, enumerate_monomials

__all__ = [
    "Polynomial",
    "PolyControlAffineField",
    "RealizationCertificate",
    "Residual",
    "lie_derivative",
    "check_linear",
    "check_bilinear",
    "classify",
    "rebuild_lie_derivatives",
    "read_field",
    "parse_field",
    "format_field",
    "simulate_field",
    "field_snapshots",
]

ZERO_TOL = 1e-12


class Polynomial:
    """Sparse real polynomial in ``n`` variables, keyed by exponent tuples."""

    __slots__ = ("n", "_terms")

    def __init__(self, n: int, terms=None):
        if n < 1:
            raise ValueError("polynomial needs at least one variable")
        self.n = int(n)
        acc = defaultdict(float)
        for exps, c in (dict(terms) if terms is not None else {}).items():
            exps = exps.exponents if isinstance(exps, MultiIndex) else tuple(int(e) for e in exps)
            if len(exps) != self.n:
                raise ValueError("exponent length does not match variable count")
            acc[exps] += float(c)
        self._terms = {e: c for e, c in acc.items() if c != 0.0}

    @classmethod
    def constant(cls, n: int, c: float) -> "Polynomial":
        return cls(n, {(0,) * n: c})

    @classmethod
    def variable(cls, n: int, k: int, power: int = 1) -> "Polynomial":
        e = [0] * n
        e[k] = power
        return cls(n, {tuple(e): 1.0})

    @classmethod
    def monomial(cls, mi: MultiIndex, c: float = 1.0) -> "Polynomial":
        return cls(len(mi), {mi.exponents: c})

    @property
    def terms(self) -> dict:
        return dict(self._terms)

    @property
    def degree(self) -> int:
        return max((sum(e) for e in self._terms), default=-1)

    def coefficient(self, exps) -> float:
        exps = exps.exponents if isinstance(exps, MultiIndex) else tuple(exps)
        return self._terms.get(exps, 0.0)

    def is_zero(self) -> bool:
        return not self._terms

    def _check(self, other: "Polynomial"):
        if other.n != self.n:
            raise ValueError("polynomials over different variable counts")

    def __add__(self, other):
        if not isinstance(other, Polynomial):
            other = Polynomial.constant(self.n, other)
        self._check(other)
        acc = dict(self._terms)
        for e, c in other._terms.items():
            acc[e] = acc.get(e, 0.0) + c
        return Polynomial(self.n, acc)

    __radd__ = __add__

    def __neg__(self):
        return Polynomial(self.n, {e: -c for e, c in self._terms.items()})

    def __sub__(self, other):
        return self + (-other)

    def __mul__(self, other):
        if not isinstance(other, Polynomial):
            return Polynomial(self.n, {e: c * float(other) for e, c in self._terms.items()})
        self._check(other)
        acc = defaultdict(float)
        for e1, c1 in self._terms.items():
            for e2, c2 in other._terms.items():
                acc[tuple(a + b for a, b in zip(e1, e2))] += c1 * c2
        return Polynomial(self.n, acc)

    __rmul__ = __mul__

    def derivative(self, k: int) -> "Polynomial":
        acc = {}
        for e, c in self._terms.items():
            if e[k]:
                d = list(e)
                d[k] -= 1
                acc[tuple(d)] = c * e[k]
        return Polynomial(self.n, acc)

    def __call__(self, x) -> np.ndarray:
        """Evaluate at a point ``(n,)`` or a batch ``(B, n)``."""
        x = np.asarray(x, dtype=float)
        out = np.zeros(x.shape[:-1])
        for e, c in self._terms.items():
            out = out + c * np.prod(x ** np.asarray(e), axis=-1)
        return out

    def max_abs_coefficient(self) -> float:
        return max((abs(c) for c in self._terms.values()), default=0.0)

    def __eq__(self, other):
        return isinstance(other, Polynomial) and self.n == other.n and self._terms == other._terms

    def __repr__(self):
        return f"Polynomial({self})"

    def __str__(self):
        if not self._terms:
            return "0"
        parts = []
        for e, c in sorted(self._terms.items(), key=lambda t: (sum(t[0]), [-v for v in t[0]])):
            mono = str(MultiIndex(e))
            parts.append(f"{c:g}" if mono == "1" else f"{c:g}*{mono}")
        return " + ".join(parts).replace("+ -", "- ")


def lie_derivative(z: Polynomial, field_column) -> Polynomial:
    """``sum_k dz/dx_k * field_k`` expanded exactly."""
    field_column = list(field_column)
    if len(field_column) != z.n or any(f.n != z.n for f in field_column):
        raise ValueError("field column must hold n polynomials in n variables")
    out = Polynomial(z.n)
    for k, fk in enumerate(field_column):
        dz = z.derivative(k)
        if not dz.is_zero() and not fk.is_zero():
            out = out + dz * fk
    return out


@dataclass
class PolyControlAffineField:
    """``xdot = Fx(x) + sum_j Fu[j](x) u_j`` with polynomial entries."""

    Fx: list
    Fu: list = field(default_factory=list)

    def __post_init__(self):
        n = len(self.Fx)
        if n < 1:
            raise ValueError("empty drift")
        for col in [self.Fx, *self.Fu]:
            if len(col) != n or any(p.n != n for p in col):
                raise ValueError("every field column needs n polynomials in n variables")

    @property
    def n(self) -> int:
        return len(self.Fx)

    @property
    def m(self) -> int:
        return len(self.Fu)

    def __call__(self, x, u) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        u = np.asarray(u, dtype=float)
        out = np.stack([p(x) for p in self.Fx], axis=-1)
        for j, col in enumerate(self.Fu):
            out = out + np.stack([p(x) for p in col], axis=-1) * u[..., j:j + 1]
        return out


@dataclass(frozen=True)
class Residual:
    """A monomial of a Lie derivative that falls outside the allowed span."""

    source: str          # "drift" or "u<j>"
    observable: MultiIndex
    monomial: MultiIndex
    coefficient: float

    def __str__(self):
        return f"d/dt[{self.observable}] via {self.source}: {self.coefficient:g}*{self.monomial}"


@dataclass
class RealizationCertificate:
    verdict: str                     # "linear" | "bilinear" | "neither"
    rho: int
    monomials: list
    A: np.ndarray | None = None      # (N, N)
    B: np.ndarray | None = None      # (N, m)
    H: np.ndarray | None = None      # (m, N, N), constant column zero
    residual_monomials: list = field(default_factory=list)

    def to_dict(self) -> dict:
        labels = [str(mi) for mi in self.monomials]

        def table(mat):
            return [[labels[i], labels[k], float(mat[i, k])] for i, k in zip(*np.nonzero(mat))]

        out = {"verdict": self.verdict, "rho": self.rho, "monomials": labels}
        if self.verdict != "neither":
            out["a"] = table(self.A)
            out["b"] = [[labels[i], f"u{j + 1}", float(self.B[i, j])]
                        for i, j in zip(*np.nonzero(self.B))]
            if self.verdict == "bilinear":
                out["h"] = [[f"u{j + 1}", *row] for j in range(self.H.shape[0])
                            for row in table(self.H[j])]
        out["residual_monomials"] = [
            {"source": r.source, "observable": str(r.observable),
             "monomial": str(r.monomial), "coefficient": r.coefficient}
            for r in self.residual_monomials]
        return out

    def to_text(self) -> str:
        return json.dumps(self.to_dict(), indent=1) + "\n"


def _decompose(poly: Polynomial, index: dict, scale: float):
    """Split ``poly`` into in-dictionary coefficients and escaping terms."""
    coeffs = np.zeros(len(index))
    escaped = []
    for e, c in poly.terms.items():
        if abs(c) <= ZERO_TOL * scale:
            continue
        k = index.get(e)
        if k is None:
            escaped.append((MultiIndex(e), c))
        else:
            coeffs[k] = c
    return coeffs, escaped


def _check(fld: PolyControlAffineField, rho: int, bilinear: bool) -> RealizationCertificate:
    if rho < 1:
        raise ValueError("rho must be at least 1")
    monos = enumerate_monomials(fld.n, rho)
    index = {mi.exponents: k for k, mi in enumerate(monos)}
    const = index[(0,) * fld.n]
    N, m = len(monos), fld.m
    A, B, H = np.zeros((N, N)), np.zeros((N, m)), np.zeros((m, N, N))
    residuals = []
    for i, mi in enumerate(monos):
        z = Polynomial.monomial(mi)
        drift = lie_derivative(z, fld.Fx)
        A[i], esc = _decompose(drift, index, max(1.0, drift.max_abs_coefficient()))
        residuals += [Residual("drift", mi, e, c) for e, c in esc]
        for j, col in enumerate(fld.Fu):
            inp = lie_derivative(z, col)
            coeffs, esc = _decompose(inp, index, max(1.0, inp.max_abs_coefficient()))
            B[i, j] = coeffs[const]
            coeffs[const] = 0.0
            if bilinear:
                H[j, i] = coeffs
            else:
                esc += [(monos[k], coeffs[k]) for k in np.flatnonzero(coeffs)]
            residuals += [Residual(f"u{j + 1}", mi, e, c) for e, c in esc]
    if residuals:
        return RealizationCertificate("neither", rho, monos, residual_monomials=residuals)
    if bilinear:
        return RealizationCertificate("bilinear", rho, monos, A, B, H)
    return RealizationCertificate("linear", rho, monos, A, B, np.zeros((m, N, N)))


def check_linear(fld: PolyControlAffineField, rho: int) -> RealizationCertificate:
    """Linear-realization test over all state monomials of degree <= rho."""
    return _check(fld, rho, bilinear=False)


def check_bilinear(fld: PolyControlAffineField, rho: int) -> RealizationCertificate:
    """Bilinear-realization test over all state monomials of degree <= rho."""
    return _check(fld, rho, bilinear=True)


def classify(fld: PolyControlAffineField, rho: int) -> RealizationCertificate:
    """Strongest verdict: linear if possible, else bilinear, else neither."""
    cert = check_linear(fld, rho)
    if cert.verdict == "linear":
        return cert
    # on failure the bilinear residuals are the ones no realization absorbs
    return check_bilinear(fld, rho)


def rebuild_lie_derivatives(cert: RealizationCertificate, n: int, m: int):
    """Lie derivatives implied by a certificate's coefficients.

    Returns ``(drift, inputs)`` where ``drift[i]`` and ``inputs[i][j]`` are
    Polynomials built as ``sum_k a_ik z_k`` and ``b_ij + sum_k h_jik z_k``.
    """
    if cert.verdict == "neither":
        raise ValueError("a 'neither' certificate carries no coefficients")
    monos = [Polynomial.monomial(mi) for mi in cert.monomials]
    N = len(monos)
    drift, inputs = [], []
    for i in range(N):
        drift.append(sum((monos[k] * cert.A[i, k] for k in range(N)), Polynomial(n)))
        row = []
        for j in range(m):
            p = Polynomial.constant(n, cert.B[i, j])
            p = p + sum((monos[k] * cert.H[j, i, k] for k in range(N)), Polynomial(n))
            row.append(p)
        inputs.append(row)
    return drift, inputs


# -- text format ---------------------------------------------------------------------

_LINE = re.compile(r"^\s*(\d+)\s*:\s*(.+?)\s*$")
_FACTOR = re.compile(r"^(x|u)(\d+)(?:\^(\d+))?$")


def parse_field(text: str, n: int | None = None, m: int | None = None) -> PolyControlAffineField:
    """Parse ``component : coefficient * x1^e1 ... [* u_j]`` lines.

    Components and variables are 1-based; ``#`` starts a comment. ``n`` and
    ``m`` default to the largest indices seen.
    """
    terms = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        mt = _LINE.match(line)
        if not mt:
            raise ValueError(f"line {lineno}: expected 'component : term'")
        comp = int(mt.group(1))
        factors = [f.strip() for f in mt.group(2).split("*")]
        try:
            coef = float(factors[0])
        except ValueError:
            raise ValueError(f"line {lineno}: term must start with a numeric coefficient") from None
        xs, us = {}, []
        for f in factors[1:]:
            mf = _FACTOR.match(f.replace(" ", ""))
            if not mf:
                raise ValueError(f"line {lineno}: bad factor {f!r}")
            var, idx, power = mf.group(1), int(mf.group(2)), int(mf.group(3) or 1)
            if idx < 1 or comp < 1:
                raise ValueError(f"line {lineno}: indices are 1-based")
            if var == "x":
                xs[idx] = xs.get(idx, 0) + power
            else:
                if power != 1:
                    raise ValueError(f"line {lineno}: inputs enter affinely (power 1 only)")
                us.append(idx)
        if len(us) > 1:
            raise ValueError(f"line {lineno}: at most one input factor per term")
        terms.append((lineno, comp, coef, xs, us[0] if us else 0))
    if not terms:
        raise ValueError("no terms in field description")
    n_seen = max(max([t[1] for t in terms]), max([max(t[3], default=0) for t in terms]))
    m_seen = max(t[4] for t in terms)
    n = n_seen if n is None else n
    m = m_seen if m is None else m
    if n_seen > n or m_seen > m:
        raise ValueError("term indices exceed declared dimensions")
    Fx = [Polynomial(n) for _ in range(n)]
    Fu = [[Polynomial(n) for _ in range(n)] for _ in range(m)]
    for _, comp, coef, xs, uj in terms:
        exps = tuple(xs.get(k + 1, 0) for k in range(n))
        p = Polynomial(n, {exps: coef})
        if uj:
            Fu[uj - 1][comp - 1] = Fu[uj - 1][comp - 1] + p
        else:
            Fx[comp - 1] = Fx[comp - 1] + p
    return PolyControlAffineField(Fx, Fu)


def format_field(fld: PolyControlAffineField) -> str:
    lines = []
    cols = [(fld.Fx, "")] + [(col, f" * u{j + 1}") for j, col in enumerate(fld.Fu)]
    for col, suffix in cols:
        for i, p in enumerate(col):
            for e, c in sorted(p.terms.items()):
                mono = " * ".join(f"x{k + 1}" + (f"^{v}" if v > 1 else "")
                                  for k, v in enumerate(e) if v)
                body = repr(c) + (" * " + mono if mono else "") + suffix
                lines.append(f"{i + 1} : {body}")
    return "\n".join(lines) + "\n"


def read_field(path) -> PolyControlAffineField:
    return parse_field(Path(path).read_text())


# -- simulation (for cross-checks against identification) -----------------------------

def _rk4(fld, x, u, h, nsub):
    for _ in range(nsub):
        k1 = fld(x, u)
        k2 = fld(x + 0.5 * h * k1, u)
        k3 = fld(x + 0.5 * h * k2, u)
        k4 = fld(x + h * k3, u)
        x = x + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
    return x


def simulate_field(fld: PolyControlAffineField, x0, u_seq, Ts: float, substeps: int = 50):
    """Zero-order-hold trajectory ``(len(u_seq) + 1, n)`` via fixed-step RK4."""
    u_seq = np.asarray(u_seq, dtype=float).reshape(-1, fld.m)
    X = np.empty((len(u_seq) + 1, fld.n))
    X[0] = x0
    for t, u in enumerate(u_seq):
        X[t + 1] = _rk4(fld, X[t], u, Ts / substeps, substeps)
    return X


def field_snapshots(fld: PolyControlAffineField, K: int, Ts: float, x_range: float,
                    u_range: float, seed: int = 0, substeps: int = 50):
    """Independent random ``(p, u)`` pairs pushed through one sampling period."""
    from .plant import SnapshotDataset

    rng = np.random.default_rng(seed)
    P = rng.uniform(-x_range, x_range, size=(K, fld.n))
    U = rng.uniform(-u_range, u_range, size=(K, fld.m))
    Q = _rk4(fld, P, U, Ts / substeps, substeps)
    return SnapshotDataset(Ts=Ts, P=P, Q=Q, U=U, seed=seed)
