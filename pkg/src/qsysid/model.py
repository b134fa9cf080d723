"""Quadrature-form linear quantum systems.

State ordering is ``(q1, p1, ..., qn, pn)`` and field/output ordering is
interleaved ``(y1_q, y1_p, ..., ym_q, ym_p)``; every row selection in the
package derives from this convention.
"""

import hashlib
import json
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import DimensionMismatch, EmptyKappas, NotHurwitz, SingularV
from .numerics import symplectic_form

__all__ = [
    "StateSpace",
    "QuadratureSubsystem",
    "CavityParams",
    "QuantumRealization",
    "MeasuredModel",
    "build_cavity",
    "random_realizable",
    "quadrature_select",
    "realizability_residual",
    "similarity_transform",
    "markov_parameters",
    "model_to_dict",
    "model_from_dict",
    "save_model",
    "load_model",
    "model_hash",
]


def _mat(x):
    return np.atleast_2d(np.asarray(x, dtype=float))


@dataclass
class StateSpace:
    """Real quadrature-form matrices ``(A, B, C, D)`` with n modes and m fields."""

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: np.ndarray

    def __post_init__(self):
        self.A, self.B, self.C, self.D = map(_mat, (self.A, self.B, self.C, self.D))
        d, k = self.A.shape[0], self.B.shape[1]
        if (self.A.shape != (d, d) or d % 2 or k % 2 or self.B.shape[0] != d
                or self.C.shape != (k, d) or self.D.shape != (k, k)):
            raise DimensionMismatch(
                f"inconsistent shapes A{self.A.shape} B{self.B.shape} "
                f"C{self.C.shape} D{self.D.shape}")
        for M in (self.A, self.B, self.C, self.D):
            if not np.all(np.isfinite(M)):
                raise ValueError("state-space matrices must be finite")

    @property
    def n(self):
        return self.A.shape[0] // 2

    @property
    def m(self):
        return self.B.shape[1] // 2


@dataclass
class QuadratureSubsystem:
    which: str
    C_meas: np.ndarray
    D_meas: np.ndarray


@dataclass
class CavityParams:
    """Detuned passive cavity coupled to ``len(kappas)`` fields."""

    detuning: float
    kappas: list

    def __post_init__(self):
        self.kappas = [float(k) for k in self.kappas]
        if not self.kappas:
            raise EmptyKappas("at least one coupling rate is required")
        if any(k < 0 for k in self.kappas):
            raise ValueError("coupling rates must be nonnegative")
        if sum(self.kappas) <= 0:
            raise ValueError("total coupling must be positive")


@dataclass
class QuantumRealization:
    """Measured-quadrature model with its realizability certificate.

    ``C`` and ``D`` hold only the measured rows (m of them). ``Z`` is the
    skew-symmetric matrix in the realizability constraints, ``Q`` the
    stabilizing filter Riccati solution and ``L`` the steady-state gain.
    """

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: np.ndarray
    Z: np.ndarray
    Q: Optional[np.ndarray] = None
    L: Optional[np.ndarray] = None
    quadrature: Optional[str] = None
    meta: dict = field(default_factory=dict)

    @property
    def n(self):
        return self.A.shape[0] // 2

    @property
    def m(self):
        return self.B.shape[1] // 2

    def residuals(self):
        return realizability_residual(self.A, self.B, self.C, self.D, self.Z)


@dataclass
class MeasuredModel:
    """Measured-quadrature model without a realizability certificate
    (a classical estimate read back from file)."""

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: np.ndarray
    L: Optional[np.ndarray] = None
    quadrature: Optional[str] = None


def build_cavity(params, field_sign=1.0):
    """System matrices of the detuned multi-port optical cavity.

    ``A = -(sum kappa / 2) I + 2 Delta J``, ``B = [-sqrt(k_j) I2]``,
    ``C = [sqrt(k_j) I2]`` stacked, ``D = I``. ``field_sign = -1`` flips
    the sign of both B and C, which is the similarity transform ``-I``.
    """
    if not isinstance(params, CavityParams):
        params = CavityParams(*params)
    k = np.sqrt(np.asarray(params.kappas))
    m = len(k)
    J = symplectic_form(1)
    A = -0.5 * np.sum(params.kappas) * np.eye(2) + 2.0 * params.detuning * J
    B = -field_sign * np.hstack([kj * np.eye(2) for kj in k])
    C = field_sign * np.vstack([kj * np.eye(2) for kj in k])
    return StateSpace(A, B, C, np.eye(2 * m))


def random_realizable(n, m, rng, coupling=1.0, margin=0.0, max_tries=1000):
    """Random physically realizable system with ``Z = J_n`` and ``D = I``.

    With a random positive definite Hamiltonian matrix H and coupling B,
    ``A = J_n H + 1/2 B J_m B^T J_n`` and ``C = J_m B^T J_n`` satisfy both
    realizability constraints by construction. Draws are repeated until
    every eigenvalue of A has real part below ``-margin``.
    """
    Jn, Jm = symplectic_form(n), symplectic_form(m)
    for _ in range(max_tries):
        M = rng.standard_normal((2 * n, 2 * n))
        H = M @ M.T / (2 * n) + 0.1 * np.eye(2 * n)
        B = coupling * rng.standard_normal((2 * n, 2 * m))
        A = Jn @ H + 0.5 * B @ Jm @ B.T @ Jn
        if np.max(np.linalg.eigvals(A).real) < -margin:
            return StateSpace(A, B, Jm @ B.T @ Jn, np.eye(2 * m))
    raise NotHurwitz(f"no Hurwitz draw in {max_tries} tries")


def quadrature_select(sys, which):
    """Rows of C and D for the amplitude (``"q"``) or phase (``"p"``) outputs."""
    if which not in ("q", "p"):
        raise ValueError(f"quadrature must be 'q' or 'p', got {which!r}")
    start = 0 if which == "q" else 1
    return QuadratureSubsystem(which, sys.C[start::2].copy(), sys.D[start::2].copy())


def realizability_residual(A, B, C_meas, D_meas, Z):
    """Frobenius norms of the two physical-realizability constraints.

    Returns ``(||A Z + Z A^T + B J_m B^T||, ||Z C^T + B J_m D^T||)``.
    C and D may be the full output matrices or only the measured rows.
    """
    A, B, C, D, Z = map(_mat, (A, B, C_meas, D_meas, Z))
    d = A.shape[0]
    if B.shape[1] % 2:
        raise DimensionMismatch("B must have an even number of columns")
    Jm = symplectic_form(B.shape[1] // 2)
    if (A.shape != (d, d) or Z.shape != (d, d) or B.shape[0] != d
            or C.shape[1] != d or D.shape != (C.shape[0], B.shape[1])):
        raise DimensionMismatch(
            f"inconsistent shapes A{A.shape} B{B.shape} C{C.shape} "
            f"D{D.shape} Z{Z.shape}")
    r1 = A @ Z + Z @ A.T + B @ Jm @ B.T
    r2 = Z @ C.T + B @ Jm @ D.T
    return float(np.linalg.norm(r1)), float(np.linalg.norm(r2))


def similarity_transform(A, B, C_meas, V):
    """Return ``(V A V^-1, V B, C V^-1)``."""
    A, B, C, V = map(_mat, (A, B, C_meas, V))
    if V.shape != A.shape:
        raise DimensionMismatch(f"V is {V.shape} but A is {A.shape}")
    if not np.all(np.isfinite(V)) or np.linalg.cond(V) >= 1e12:
        raise SingularV("similarity transform is numerically singular")
    Vinv = np.linalg.inv(V)
    return V @ A @ Vinv, V @ B, C @ Vinv


def markov_parameters(A, B, C, k_max):
    """``[C B, C A B, ..., C A^k_max B]`` stacked along axis 0."""
    out = []
    X = np.asarray(B, dtype=float)
    for _ in range(k_max + 1):
        out.append(C @ X)
        X = A @ X
    return np.array(out)


# -- serialization -----------------------------------------------------------

def model_to_dict(model):
    """Shared JSON document ``{n, m, A, B, C, D, Z?, Q?, L?}``."""
    doc = {"n": int(model.A.shape[0] // 2), "m": int(model.B.shape[1] // 2)}
    for key in ("A", "B", "C", "D", "Z", "Q", "L"):
        val = getattr(model, key, None)
        if val is not None:
            doc[key] = np.asarray(val, dtype=float).tolist()
    quad = getattr(model, "quadrature", None)
    if quad is not None:
        doc["quadrature"] = quad
    return doc


def model_from_dict(doc):
    """Inverse of :func:`model_to_dict`.

    Documents with Z give a :class:`QuantumRealization`, other documents
    with 2m output rows a :class:`StateSpace` and the rest (measured rows
    only) a :class:`MeasuredModel`.
    """
    mats = {k: _mat(doc[k]) for k in ("A", "B", "C", "D", "Z", "Q", "L") if k in doc}
    if mats["A"].shape[0] != 2 * doc["n"] or mats["B"].shape[1] != 2 * doc["m"]:
        raise DimensionMismatch("n/m fields disagree with matrix shapes")
    if "Z" in mats:
        return QuantumRealization(mats["A"], mats["B"], mats["C"], mats["D"],
                                  mats["Z"], mats.get("Q"), mats.get("L"),
                                  quadrature=doc.get("quadrature"))
    if mats["C"].shape[0] == 2 * doc["m"] and "L" not in mats:
        return StateSpace(mats["A"], mats["B"], mats["C"], mats["D"])
    return MeasuredModel(mats["A"], mats["B"], mats["C"], mats["D"], mats.get("L"),
                         doc.get("quadrature"))


def save_model(model, path):
    with open(path, "w") as fh:
        json.dump(model_to_dict(model), fh, indent=1)
        fh.write("\n")


def load_model(path):
    with open(path) as fh:
        return model_from_dict(json.load(fh))


def model_hash(model):
    """Short content hash of the serialized model."""
    blob = json.dumps(model_to_dict(model), sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:16]
