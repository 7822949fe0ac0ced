"""``bilinkoop`` command line: collect, fit, eval, control, theory.

Failures print a single ``error <CODE>: <message>`` line on stderr and exit
nonzero (2 config/usage, 3 file IO, 4 numerical, 5 invalid input).
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from .basis import FAMILIES, build_basis
from .config import ConfigError, ExperimentConfig, load_config
from .koopman_id import (LogDomainError, RankDeficientError, extract, fit_koopman, load_model,
                         save_model)
from .mpc import (block_m_reference, load_reference, make_controller, run_closed_loop,
                  warm_up, write_control_log)
from .plant import SimulationDivergence, collect_snapshots, episode_rollouts, read_snapshots, \
    write_snapshots
from .realization import (ModelDivergence, episodes_from_arrays, prediction_error, read_episodes,
                          write_error_report)
from .theory import check_linear, classify, read_field

log = logging.getLogger("bilinkoop")

CONTROLLER_FAMILY = {"kmpc": "linear", "kbmpc": "bilinear", "knmpc": "nonlinear"}
EXIT_CODES = {"E_CONFIG": 2, "E_IO": 3, "E_NUMERIC": 4, "E_INPUT": 5}


class CliError(Exception):
    def __init__(self, code: str, message: str):
        super().__init__(message)
        self.code = code


def _atomic(path: Path, writer, *sidecars: str):
    """Write via a temporary name and rename, so readers never see partial files."""
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(f".{path.name}.tmp{os.getpid()}")
    writer(tmp)
    for suffix in sidecars:
        os.replace(str(tmp) + suffix, str(path) + suffix)
    os.replace(tmp, path)


def _model_name(family: str, rho: int) -> str:
    return f"{family}_rho{rho}.json"


def _config(args) -> ExperimentConfig:
    cfg = load_config(args.config)
    return cfg.override(seed=args.seed, episodes=getattr(args, "episodes", None),
                        steps=getattr(args, "steps", None))


def _data_path(args, cfg) -> Path:
    return Path(args.data) if args.data else Path(cfg.out) / "snapshots.csv"


def _load_data(path: Path):
    if not path.exists():
        raise CliError("E_IO", f"snapshot file not found: {path}")
    return read_snapshots(path)


def _fit(ds, cfg, family, rho):
    n, m = ds.P.shape[1], ds.U.shape[1]
    basis = build_basis(family, n, m, rho)
    K = fit_koopman(ds, basis, ridge=cfg.fit.ridge, relative_ridge=cfg.fit.relative_ridge)
    return extract(K)


def _targets(args, cfg):
    if args.family and args.rho:
        return [(args.family, args.rho)]
    if args.family:
        return [(args.family, r) for r in getattr(cfg.sweep, args.family)]
    if args.rho:
        return [(f, args.rho) for f in FAMILIES]
    return cfg.sweep.items()


# -- subcommands -----------------------------------------------------------------------

def cmd_collect(args) -> int:
    cfg = _config(args)
    out = Path(args.out) if args.out else Path(cfg.out) / "snapshots.csv"
    ds = collect_snapshots(cfg.plant, cfg.excitation, K=cfg.n_snapshots, Ts=cfg.Ts,
                           seed=cfg.seed)
    _atomic(out, lambda p: write_snapshots(ds, p), ".meta.json")
    print(f"wrote {len(ds)} snapshots to {out}")
    return 0


def cmd_fit(args) -> int:
    cfg = _config(args)
    ds = _load_data(_data_path(args, cfg))
    targets = _targets(args, cfg)
    single = len(targets) == 1 and args.out and args.out.endswith(".json")
    outdir = Path(args.out) if args.out and not single else Path(cfg.out) / "models"
    for family, rho in targets:
        model = _fit(ds, cfg, family, rho)
        path = Path(args.out) if single else outdir / _model_name(family, rho)
        _atomic(path, lambda p: save_model(model, p))
        print(f"{family} rho={rho} M={model.basis.M} -> {path}")
    return 0


def _validation(args, cfg, ds):
    if args.validation:
        return read_episodes(args.validation)
    if ds.P.shape[1] != 2 * cfg.plant.n_links:
        raise CliError("E_INPUT", "snapshots do not come from the configured arm; "
                                  "pass --validation episodes")
    X, U = episode_rollouts(cfg.plant, cfg.excitation, cfg.eval.episodes, cfg.eval.horizon,
                            cfg.Ts, seed=cfg.seed + cfg.eval.seed_offset)
    return episodes_from_arrays(X, U)


def cmd_eval(args) -> int:
    cfg = _config(args)
    ds = _load_data(_data_path(args, cfg))
    episodes = _validation(args, cfg, ds)
    rows = []
    for family, rho in _targets(args, cfg):
        mpath = Path(args.models) / _model_name(family, rho) if args.models else None
        model = load_model(mpath) if mpath and mpath.exists() else _fit(ds, cfg, family, rho)
        ms = prediction_error(model, episodes, on_divergence="inf")
        os_ = prediction_error(model, episodes, one_step=True, on_divergence="inf")
        rows.append({"model": _model_name(family, rho)[:-5], "family": family, "rho": rho,
                     "M": model.basis.M, "raw_error": ms.raw_mean_error,
                     "normalized_error": ms.normalized_error,
                     "one_step_raw_error": os_.raw_mean_error,
                     "one_step_normalized_error": os_.normalized_error})
        print(f"{family} rho={rho} M={model.basis.M} normalized_error={ms.normalized_error:.6g}")
    out = Path(args.out) if args.out else Path(cfg.out) / "errors.csv"
    _atomic(out, lambda p: write_error_report(rows, p))
    print(f"wrote {out}")
    return 0


def cmd_control(args) -> int:
    cfg = _config(args).override(rho=args.rho, ref=args.ref)
    names = [args.controller] if args.controller else list(CONTROLLER_FAMILY)
    if args.model and len(names) != 1:
        raise CliError("E_CONFIG", "--model needs a single --controller")
    if cfg.reference.path:
        ref = load_reference(cfg.reference.path, cfg.Ts, reach=cfg.plant.reach)
    else:
        ref = block_m_reference(cfg.reference.scale, cfg.reference.center,
                                cfg.reference.duration, cfg.Ts, reach=cfg.plant.reach)
    ds = None
    single = len(names) == 1 and args.out and args.out.endswith(".csv")
    outdir = Path(args.out) if args.out and not single else Path(cfg.out) / "control"
    for name in names:
        if args.model:
            model = load_model(args.model)
        else:
            ds = ds or _load_data(_data_path(args, cfg))
            model = _fit(ds, cfg, CONTROLLER_FAMILY[name], cfg.control.rho)
        ctrl = make_controller(name, model, cfg.mpc)
        warm_up(ctrl, cfg.plant, ref)
        clog = run_closed_loop(cfg.plant, ctrl, ref, cfg.mpc)
        path = Path(args.out) if single else outdir / f"{name}.csv"
        _atomic(path, lambda p: write_control_log(clog, p))
        print(f"{name} mean_error={clog.mean_error:.6g} "
              f"mean_solve_time={clog.mean_solve_time:.6g} -> {path}")
    return 0


def cmd_theory(args) -> int:
    path = Path(args.field)
    if not path.exists():
        raise CliError("E_IO", f"field file not found: {path}")
    fld = read_field(path)
    rho = args.rho or 1
    cert = check_linear(fld, rho) if args.check == "linear" else classify(fld, rho)
    text = cert.to_text()
    if args.out:
        _atomic(Path(args.out), lambda p: Path(p).write_text(text))
    sys.stdout.write(text)
    return 0


# -- entry point ------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="bilinkoop", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="experiment config (JSON)")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--out")

    def fam(sp):
        sp.add_argument("--family", choices=FAMILIES)
        sp.add_argument("--rho", type=int)
        sp.add_argument("--data", help="snapshot CSV (default <out>/snapshots.csv)")

    sp = sub.add_parser("collect", help="simulate the arm and write snapshots")
    common(sp)
    sp.add_argument("--episodes", type=int)
    sp.add_argument("--steps", type=int, help="steps per episode")
    sp.set_defaults(func=cmd_collect)

    sp = sub.add_parser("fit", help="fit and save realizations")
    common(sp)
    fam(sp)
    sp.set_defaults(func=cmd_fit)

    sp = sub.add_parser("eval", help="open-loop prediction errors over the sweep")
    common(sp)
    fam(sp)
    sp.add_argument("--models", help="directory of saved models (fit if missing)")
    sp.add_argument("--validation", help="episode CSV (default: simulate held-out episodes)")
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("control", help="closed-loop tracking runs")
    common(sp)
    sp.add_argument("--controller", choices=sorted(CONTROLLER_FAMILY))
    sp.add_argument("--rho", type=int)
    sp.add_argument("--ref", help="reference CSV with ref_x,ref_y columns")
    sp.add_argument("--model", help="saved model (default: fit from --data)")
    sp.add_argument("--data")
    sp.set_defaults(func=cmd_control)

    sp = sub.add_parser("theory", help="realizability certificate for a polynomial field")
    sp.add_argument("field", help="field description file")
    sp.add_argument("--rho", type=int)
    sp.add_argument("--out")
    sp.add_argument("--check", choices=["linear", "auto"], default="auto")
    sp.set_defaults(func=cmd_theory)
    return p


def _classify(exc: BaseException) -> str:
    if isinstance(exc, CliError):
        return exc.code
    if isinstance(exc, ConfigError):
        return "E_CONFIG"
    if isinstance(exc, OSError):
        return "E_IO"
    if isinstance(exc, (RankDeficientError, LogDomainError, ModelDivergence,
                        SimulationDivergence, FloatingPointError)):
        return "E_NUMERIC"
    return "E_INPUT"


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (CliError, ConfigError, OSError, ValueError, TypeError, KeyError,
            json.JSONDecodeError, FloatingPointError) as exc:
        code = _classify(exc)
        msg = " ".join(str(exc).split()) or type(exc).__name__
        print(f"error {code}: {msg}", file=sys.stderr)
        return EXIT_CODES[code]


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
