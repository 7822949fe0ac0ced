"""Open-loop simulation of identified models and prediction-error metrics."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence, Union

import numpy as np

from .basis import lift, monomials
from .koopman_id import ModelBilinear, ModelLinear, ModelNonlinear

__all__ = [
    "Model",
    "PredictionEpisode",
    "ErrorReport",
    "ModelDivergence",
    "lift_state",
    "simulate_model",
    "one_step_predict",
    "prediction_error",
    "write_error_report",
    "read_error_report",
    "episodes_from_arrays",
    "write_episodes",
    "read_episodes",
]

Model = Union[ModelLinear, ModelBilinear, ModelNonlinear]


class ModelDivergence(FloatingPointError):
    def __init__(self, step: int):
        super().__init__(f"model rollout became non-finite at step {step}")
        self.step = step


@dataclass
class PredictionEpisode:
    x0: np.ndarray
    u_seq: np.ndarray
    x_true: np.ndarray

    def __post_init__(self):
        self.x0 = np.asarray(self.x0, dtype=float)
        self.u_seq = np.atleast_2d(np.asarray(self.u_seq, dtype=float))
        self.x_true = np.atleast_2d(np.asarray(self.x_true, dtype=float))
        if len(self.x_true) != len(self.u_seq) + 1:
            raise ValueError("x_true must have one more sample than u_seq")


@dataclass
class ErrorReport:
    raw_mean_error: float
    normalized_error: float
    per_step: np.ndarray = field(repr=False)
    baseline_error: float = float("nan")


def lift_state(model: Model, x) -> np.ndarray:
    """State-only block ``z = psi_state(x)`` of a linear/bilinear dictionary."""
    basis = model.basis
    x = np.asarray(x, dtype=float).reshape(1, -1)
    if x.shape[1] != basis.n:
        raise ValueError(f"expected a state in R^{basis.n}")
    return monomials(x, np.ascontiguousarray(basis.state_exponents()[:, : basis.n]))[0]


def _bilinear_step(model: ModelBilinear, z, u):
    zn = model.A @ z + model.B @ u
    for j, Hj in enumerate(model.H):
        if u[j] != 0.0:
            zn += (Hj @ z) * u[j]
    return zn


def simulate_model(model: Model, x0, u_seq) -> np.ndarray:
    """Roll the realization forward; returns ``(len(u_seq) + 1, n)`` outputs.

    Linear and bilinear models evolve in lifted coordinates (lifted once at
    ``x0``); nonlinear models re-lift ``(x[t], u[t])`` every step. Raises
    ``ModelDivergence`` at the first non-finite step.
    """
    with np.errstate(over="ignore", invalid="ignore"):
        return _simulate(model, x0, u_seq)


def _simulate(model: Model, x0, u_seq) -> np.ndarray:
    basis = model.basis
    u_seq = np.asarray(u_seq, dtype=float).reshape(-1, basis.m) if basis.m else \
        np.zeros((len(u_seq) if np.ndim(u_seq) else int(u_seq), 0))
    T = len(u_seq)
    X = np.empty((T + 1, basis.n))
    X[0] = np.asarray(x0, dtype=float)
    if isinstance(model, ModelNonlinear):
        x = X[0]
        for t in range(T):
            x = model.Crows @ lift(basis, x, u_seq[t])
            if not np.all(np.isfinite(x)):
                raise ModelDivergence(t + 1)
            X[t + 1] = x
        return X
    z = lift_state(model, X[0])
    bil = isinstance(model, ModelBilinear)
    X[0] = model.C @ z
    for t in range(T):
        z = _bilinear_step(model, z, u_seq[t]) if bil else model.A @ z + model.B @ u_seq[t]
        if not np.all(np.isfinite(z)):
            raise ModelDivergence(t + 1)
        X[t + 1] = model.C @ z
    return X


def one_step_predict(model: Model, x, u) -> np.ndarray:
    """Prediction of the next output from a measured one (always re-lifted)."""
    u = np.asarray(u, dtype=float).reshape(-1)
    if isinstance(model, ModelNonlinear):
        return model.Crows @ lift(model.basis, x, u)
    z = lift_state(model, x)
    z = _bilinear_step(model, z, u) if isinstance(model, ModelBilinear) else \
        model.A @ z + model.B @ u
    return model.C @ z


def prediction_error(model: Model, episodes: Sequence[PredictionEpisode],
                     one_step: bool = False, on_divergence: str = "raise") -> ErrorReport:
    """Mean Euclidean output error, normalized by the zero predictor's error.

    Averages over every predicted sample (steps 1..T) of every episode.
    With ``on_divergence="inf"`` a diverging rollout yields an infinite error
    instead of raising.
    """
    if not episodes:
        raise ValueError("no episodes to evaluate")
    errs, base = [], []
    for ep in episodes:
        truth = ep.x_true[1:]
        if one_step:
            pred = np.array([one_step_predict(model, ep.x_true[t], ep.u_seq[t])
                             for t in range(len(ep.u_seq))])
        else:
            try:
                pred = simulate_model(model, ep.x0, ep.u_seq)[1:]
            except ModelDivergence:
                if on_divergence != "inf":
                    raise
                pred = np.full_like(truth, np.inf)
        errs.append(np.linalg.norm(pred - truth, axis=1))
        base.append(np.linalg.norm(truth, axis=1))
    errs = np.array(errs)
    baseline = float(np.mean(base))
    if baseline == 0.0:
        raise ValueError("zero-response baseline error is zero; degenerate validation data")
    raw = float(np.mean(errs))
    return ErrorReport(raw, raw / baseline, errs.mean(axis=0), baseline)


def episodes_from_arrays(X, U) -> list[PredictionEpisode]:
    return [PredictionEpisode(X[e, 0], U[e], X[e]) for e in range(len(X))]


ERROR_COLUMNS = ["model", "family", "rho", "M", "raw_error", "normalized_error",
                 "one_step_raw_error", "one_step_normalized_error"]


def write_error_report(rows: Sequence[dict], path) -> None:
    """One row per model; ``rows`` are dicts keyed by ``ERROR_COLUMNS``."""
    with open(Path(path), "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=ERROR_COLUMNS, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: (format(v, ".17g") if isinstance(v, float) else v)
                        for k, v in r.items()})


def read_error_report(path) -> list[dict]:
    with open(Path(path), newline="") as fh:
        rows = list(csv.DictReader(fh))
    for r in rows:
        r["rho"], r["M"] = int(r["rho"]), int(r["M"])
        for k in ERROR_COLUMNS[4:]:
            r[k] = float(r[k])
    return rows


def write_episodes(episodes: Sequence[PredictionEpisode], path) -> None:
    """CSV ``episode,t,x1..,u1..``; the input cells of each final row are empty."""
    n, m = episodes[0].x_true.shape[1], episodes[0].u_seq.shape[1]
    with open(Path(path), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["episode", "t"] + [f"x{i + 1}" for i in range(n)]
                   + [f"u{j + 1}" for j in range(m)])
        for e, ep in enumerate(episodes):
            T = len(ep.u_seq)
            for t in range(T + 1):
                us = [format(v, ".17g") for v in ep.u_seq[t]] if t < T else [""] * m
                w.writerow([e, t] + [format(v, ".17g") for v in ep.x_true[t]] + us)


def read_episodes(path) -> list[PredictionEpisode]:
    with open(Path(path), newline="") as fh:
        r = csv.reader(fh)
        header = next(r)
        rows = list(r)
    n = sum(1 for h in header if h.startswith("x"))
    m = sum(1 for h in header if h.startswith("u"))
    if n == 0 or len(header) != 2 + n + m:
        raise ValueError(f"{path}: expected columns episode,t,x1..,u1..")
    groups: dict[int, list] = {}
    for row in rows:
        groups.setdefault(int(row[0]), []).append(row)
    out = []
    for e in sorted(groups):
        g = sorted(groups[e], key=lambda row: int(row[1]))
        X = np.array([[float(v) for v in row[2:2 + n]] for row in g])
        U = np.array([[float(v) for v in row[2 + n:]] for row in g[:-1]]).reshape(-1, m)
        out.append(PredictionEpisode(X[0], U, X))
    if not out:
        raise ValueError(f"{path}: no episodes")
    return out
