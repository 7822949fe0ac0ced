"""Koopman-based linear, bilinear and nonlinear realizations with MPC.

Submodules: ``basis`` (monomial dictionaries and lifting), ``plant``
(3-link arm simulator and snapshot collection), ``koopman_id`` (EDMD fit and
model extraction), ``realization`` (open-loop prediction), ``mpc``
(K-MPC / K-BMPC / K-NMPC and the closed loop), ``theory`` (exact
realizability checks for polynomial fields).
"""

from ._accel import BACKEND
from .basis import Basis, BasisSpec, MultiIndex, basis_dimension, build_basis, enumerate_monomials, lift
from .koopman_id import (KoopmanMatrix, ModelBilinear, ModelLinear, ModelNonlinear,
                         continuous_generator, extract, fit_koopman, load_model, save_model)
from .mpc import MpcConfig, block_m_reference, make_controller, run_closed_loop
from .plant import ArmParameters, ExcitationConfig, SnapshotDataset, collect_snapshots
from .realization import prediction_error, simulate_model
from .theory import PolyControlAffineField, Polynomial, check_bilinear, check_linear

__version__ = "0.1.0"

__all__ = [
    "BACKEND", "Basis", "BasisSpec", "MultiIndex", "basis_dimension", "build_basis",
    "enumerate_monomials", "lift", "KoopmanMatrix", "ModelBilinear", "ModelLinear",
    "ModelNonlinear", "continuous_generator", "extract", "fit_koopman", "load_model",
    "save_model", "MpcConfig", "block_m_reference", "make_controller", "run_closed_loop",
    "ArmParameters", "ExcitationConfig", "SnapshotDataset", "collect_snapshots",
    "prediction_error", "simulate_model", "PolyControlAffineField", "Polynomial",
    "check_bilinear", "check_linear",
]
