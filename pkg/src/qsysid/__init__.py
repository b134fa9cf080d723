"""Identification of physically realizable linear quantum systems from
single-shot homodyne records."""

from .errors import QSysIdError
from .model import (CavityParams, QuantumRealization, StateSpace, build_cavity, load_model,
                    quadrature_select, realizability_residual, save_model)
from .numerics import solve_filter_are, solve_lyapunov, symplectic_form
from .projection import bisection_identify, loss, recover_gain, reduced_projection, to_canonical
from .simulate import generate_prbs, load_record, save_record, simulate_homodyne, split_record
from .subspace import HankelConfig, n4sid_estimate, relative_energy
from .validation import autocorr, cross_corr, fit_percent, fpe, predict

__version__ = "0.1.0"

__all__ = [
    "QSysIdError",
    "CavityParams", "QuantumRealization", "StateSpace", "build_cavity", "load_model",
    "quadrature_select", "realizability_residual", "save_model",
    "solve_filter_are", "solve_lyapunov", "symplectic_form",
    "bisection_identify", "loss", "recover_gain", "reduced_projection", "to_canonical",
    "generate_prbs", "load_record", "save_record", "simulate_homodyne", "split_record",
    "HankelConfig", "n4sid_estimate", "relative_energy",
    "autocorr", "cross_corr", "fit_percent", "fpe", "predict",
]
