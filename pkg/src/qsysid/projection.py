"""Projection of a classical estimate onto physically realizable models.

Given an identified triple ``(A_hat, B_hat, C_hat)`` for one measured
quadrature, find ``(A, B, C)`` close to it in the quadratic loss

    1/2 (||A - A_hat||^2 + ||B - B_hat||^2 + ||C - C_hat||^2)

such that, for some skew-symmetric Z and some P > 0,

    A Z + Z A^T + B J_m B^T = 0,   Z C^T + B J_m D^T = 0,
    A^T P + P A < 0.

Two solvers are provided. The lifted solver writes every bilinear product
as a block of one of two PSD matrices of bounded rank and searches that
rank-constrained LMI set by alternating projections, with an outer
multiplicative search on the loss bound. The reduced solver eliminates Z
(unique Lyapunov solution) and C (second constraint solved exactly) and
minimizes the loss over ``(A, B)`` directly; it supplies the initial loss
bound and an independent cross-check.
"""

import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import (DimensionMismatch, NoFeasiblePointFound, NotHurwitz, SingularZ,
                     ZSingularOnPath)
from .model import QuantumRealization, realizability_residual, similarity_transform
from .numerics import (check_hurwitz, is_hurwitz, kalman_gain, project_psd_rank,
                       skew_canonical_factor, solve_filter_are, solve_lyapunov,
                       symplectic_form)

logger = logging.getLogger(__name__)

__all__ = [
    "EPSILON",
    "Target",
    "LiftedProblem",
    "FeasibilityResult",
    "ProjectionResult",
    "loss",
    "init_certificate",
    "build_lifted",
    "solve_rank_feasibility",
    "bisection_identify",
    "reduced_projection",
    "reduced_loss_and_grad",
    "eliminate",
    "recover_gain",
    "to_canonical",
    "conditioning_scale",
]

EPSILON = 1e-3
DET_TOL = 1e-10


@dataclass
class Target:
    """The classical triple a projection is measured against.

    ``weights`` multiply the three squared norms of the loss. They stay 1
    in the coordinates of the classical estimate and absorb the
    conditioning scale otherwise, so the loss keeps its value under
    :meth:`scaled`.
    """

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    weights: tuple = (1.0, 1.0, 1.0)

    @classmethod
    def from_any(cls, obj):
        if isinstance(obj, cls):
            return obj
        if isinstance(obj, (tuple, list)):
            return cls(*[np.atleast_2d(np.asarray(x, float)) for x in obj])
        if hasattr(obj, "A_hat"):
            return cls(obj.A_hat, obj.B_hat, obj.C_hat)
        return cls(obj.A, obj.B, obj.C)

    def scaled(self, t):
        """Coordinates after the similarity transform ``t I``."""
        wA, wB, wC = self.weights
        return Target(self.A.copy(), t * self.B, self.C / t, (wA, wB / t ** 2, wC * t ** 2))


def loss(Abar, Bbar, Cbar, target):
    """Quadratic distance ``1/2 (||dA||_F^2 + ||dB||_F^2 + ||dC||_F^2)``.

    Weighted by ``target.weights`` when the target is a :class:`Target`.
    """
    tgt = Target.from_any(target)
    pairs = [(Abar, tgt.A), (Bbar, tgt.B), (Cbar, tgt.C)]
    total = 0.0
    for (X, Y), w in zip(pairs, tgt.weights):
        X, Y = np.atleast_2d(X), np.atleast_2d(Y)
        if X.shape != Y.shape:
            raise DimensionMismatch(f"shape {X.shape} vs target {Y.shape}")
        total += w * np.sum((X - Y) ** 2)
    return 0.5 * float(total)


def init_certificate(A_hat):
    """Lyapunov certificate ``P`` with ``A^T P + P A = -I``."""
    A_hat = np.atleast_2d(np.asarray(A_hat, dtype=float))
    check_hurwitz(A_hat, "A_hat")
    P = solve_lyapunov(A_hat.T, np.eye(A_hat.shape[0]))
    return 0.5 * (P + P.T)


def conditioning_scale(target, policy="balance", amplitude=None):
    """Scalar t of the conditioning similarity ``x -> t x``.

    ``"balance"`` equalizes ``||t B||`` and ``||C / t||``; ``"amplitude"``
    uses ``6 * amplitude``; a number is used as is; ``None`` means 1.
    """
    tgt = Target.from_any(target)
    if policy is None:
        return 1.0
    if policy == "balance":
        nb, nc = np.linalg.norm(tgt.B), np.linalg.norm(tgt.C)
        return float(np.sqrt(nc / nb)) if nb > 0 and nc > 0 else 1.0
    if policy == "amplitude":
        if amplitude is None:
            raise ValueError("amplitude policy needs the input amplitude")
        return 6.0 * float(amplitude)
    return float(policy)


# -- lifted problem -----------------------------------------------------------

_LABELS_1 = ("I", "A^T", "A", "B", "C^T", "Z^T", "P^T")
_LABELS_2 = ("I", "B^T", "J^T B^T")


def _ranges(widths, labels):
    out, start = {}, 0
    for lab, w in zip(labels, widths):
        out[lab] = slice(start, start + w)
        start += w
    return out, start


def _sym(X):
    return 0.5 * (X + X.T)


@dataclass
class LiftedProblem:
    """Rank-constrained LMI instance for one loss bound.

    ``G1`` is the Gram matrix of the stacked factor
    ``[I; A; A^T; B^T; C; Z; P]`` (block k is ``block_index_1`` entry k)
    and ``G2`` that of ``[I; B; B J]``. In terms of blocks ``G(k, l)`` the
    constraints are::

        G1(1,7) symmetric,  G1(1,7) >= eps I
        G1(3,7) + G1(7,3) <= -eps G1(1,7)
        -G1(2,6) + G1(6,2) + G2(3,2) = 0          (A Z + Z A^T + B J B^T = 0)
        G1(6,5) + G1(1,4) J D^T = 0               (Z C^T + B J D^T = 0)
        G1(1,6) + G1(6,1) = 0                     (Z skew)
        G1(1,1) = I, G2(1,1) = I, G1(1,3) = G1(2,1),
        G1(1,4) = G2(2,1), G2(3,1) = G2(2,1) J
        G1, G2 PSD, rank G1 <= 2n, rank G2 <= 2m
        loss(G1) <= gamma
    """

    n: int
    m: int
    A_hat: np.ndarray
    B_hat: np.ndarray
    C_hat: np.ndarray
    D_meas: np.ndarray
    gamma: float
    epsilon: float = EPSILON
    weights: tuple = (1.0, 1.0, 1.0)
    block_index_1: dict = field(init=False)
    block_index_2: dict = field(init=False)
    G1_dim: int = field(init=False)
    G2_dim: int = field(init=False)

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        n2, m2, m = 2 * self.n, 2 * self.m, self.m
        self.block_index_1, self.G1_dim = _ranges((n2, n2, n2, m2, m, n2, n2), _LABELS_1)
        self.block_index_2, self.G2_dim = _ranges((m2, n2, n2), _LABELS_2)
        self.Jm = symplectic_form(self.m)
        self._affine = None
        self._loss_lin = None

    # block access with 1-based indices as in the constraint list
    def b1(self, G1, k, l):
        r = self.block_index_1
        return G1[r[_LABELS_1[k - 1]], r[_LABELS_1[l - 1]]]

    def b2(self, G2, k, l):
        r = self.block_index_2
        return G2[r[_LABELS_2[k - 1]], r[_LABELS_2[l - 1]]]

    def _set1(self, G1, k, l, X):
        r = self.block_index_1
        G1[r[_LABELS_1[k - 1]], r[_LABELS_1[l - 1]]] = X
        G1[r[_LABELS_1[l - 1]], r[_LABELS_1[k - 1]]] = X.T

    # factors ----------------------------------------------------------------
    def factors(self, A, B, C, Z, P):
        G1 = np.vstack([np.eye(2 * self.n), A, A.T, B.T, C, Z, P])
        G2 = np.vstack([np.eye(2 * self.m), B, B @ self.Jm])
        return G1, G2

    def lift(self, A, B, C, Z, P):
        """Gram matrices ``(G1 G1^T, G2 G2^T)`` of the stacked factors."""
        F1, F2 = self.factors(A, B, C, Z, P)
        return F1 @ F1.T, F2 @ F2.T

    def recover(self, G1):
        """Read ``(A, B, C, Z, P)`` from the first block column of G1.

        Uses ``X_k = G1(k,1) G1(1,1)^-1``, which undoes any orthogonal
        ambiguity in the factorization.
        """
        Minv = np.linalg.inv(self.b1(G1, 1, 1))
        get = lambda k: self.b1(G1, k, 1) @ Minv  # noqa: E731
        return {"A": get(2), "B": get(4).T, "C": get(5), "Z": get(6), "P": get(7)}

    # loss as an affine functional of G1 -------------------------------------
    def loss_functional(self):
        """``(W, c)`` with ``loss(G1) = <W, G1> + c`` (W symmetric)."""
        if self._loss_lin is None:
            wA, wB, wC = self.weights
            W = np.zeros((self.G1_dim, self.G1_dim))
            for k, w in ((2, wA), (4, wB), (5, wC)):
                r = self.block_index_1[_LABELS_1[k - 1]]
                W[r, r] = 0.5 * w * np.eye(r.stop - r.start)
            self._set1(W, 2, 1, -0.5 * wA * self.A_hat)
            self._set1(W, 1, 4, -0.5 * wB * self.B_hat)
            self._set1(W, 5, 1, -0.5 * wC * self.C_hat)
            c = 0.5 * (wA * np.sum(self.A_hat ** 2) + wB * np.sum(self.B_hat ** 2)
                       + wC * np.sum(self.C_hat ** 2))
            self._loss_lin = (W, c)
        return self._loss_lin

    def lifted_loss(self, G1):
        W, c = self.loss_functional()
        return float(np.sum(W * G1) + c)

    # affine equalities ------------------------------------------------------
    def equality_residuals(self, G1, G2):
        """Stacked residuals of all linear equality constraints."""
        b1, b2, J, D = self.b1, self.b2, self.Jm, self.D_meas
        parts = [
            b1(G1, 1, 7) - b1(G1, 7, 1),
            -b1(G1, 2, 6) + b1(G1, 6, 2) + b2(G2, 3, 2),
            b1(G1, 6, 5) + b1(G1, 1, 4) @ J @ D.T,
            b1(G1, 1, 6) + b1(G1, 6, 1),
            b1(G1, 1, 1) - np.eye(2 * self.n),
            b2(G2, 1, 1) - np.eye(2 * self.m),
            b1(G1, 1, 3) - b1(G1, 2, 1),
            b1(G1, 1, 4) - b2(G2, 2, 1),
            b2(G2, 3, 1) - b2(G2, 2, 1) @ J,
        ]
        return np.concatenate([p.ravel() for p in parts])

    def _affine_system(self):
        # equalities in the coordinates y = sw * (upper triangles of G1, G2),
        # where the Euclidean norm of y is the Frobenius norm of (G1, G2)
        if self._affine is None:
            N1, N2 = self.G1_dim, self.G2_dim
            i1, i2 = np.triu_indices(N1), np.triu_indices(N2)
            n1 = len(i1[0])
            nv = n1 + len(i2[0])
            w = np.concatenate([np.where(i1[0] == i1[1], 1.0, 2.0),
                                np.where(i2[0] == i2[1], 1.0, 2.0)])
            sw = np.sqrt(w)
            zero1, zero2 = np.zeros((N1, N1)), np.zeros((N2, N2))
            r0 = self.equality_residuals(zero1, zero2)
            E = np.empty((r0.size, nv))
            for col in range(nv):
                G1, G2 = zero1.copy(), zero2.copy()
                if col < n1:
                    a, b = i1[0][col], i1[1][col]
                    G1[a, b] = G1[b, a] = 1.0
                else:
                    a, b = i2[0][col - n1], i2[1][col - n1]
                    G2[a, b] = G2[b, a] = 1.0
                E[:, col] = self.equality_residuals(G1, G2) - r0
            # drop the identically zero rows (diagonal of a symmetric-block difference)
            keep = np.any(E != 0, axis=1)
            Es, rhs = E[keep] / sw, -r0[keep]
            W, _ = self.loss_functional()
            wl = np.concatenate([W[i1] * w[:n1], np.zeros(nv - n1)]) / sw
            pinv = np.linalg.pinv(Es, rcond=1e-12)
            self._affine = {"i1": i1, "i2": i2, "n1": n1, "sw": sw, "Es": Es, "rhs": rhs,
                            "loss_row": wl, "proj": np.eye(nv) - pinv @ Es,
                            "offset": pinv @ rhs}
        return self._affine

    def to_vec(self, G1, G2):
        a = self._affine_system()
        return a["sw"] * np.concatenate([G1[a["i1"]], G2[a["i2"]]])

    def from_vec(self, y):
        a = self._affine_system()
        x = y / a["sw"]
        n1 = a["n1"]
        H1 = np.zeros((self.G1_dim, self.G1_dim))
        H1[a["i1"]] = x[:n1]
        H2 = np.zeros((self.G2_dim, self.G2_dim))
        H2[a["i2"]] = x[n1:]
        return H1 + np.triu(H1, 1).T, H2 + np.triu(H2, 1).T

    def project_affine(self, G1, G2):
        a = self._affine_system()
        return self.from_vec(a["proj"] @ self.to_vec(G1, G2) + a["offset"])

    def tangent_basis(self, G1, G2):
        """Orthonormal basis (vector coordinates) of the tangent space of
        the rank-bounded PSD matrices at ``(G1, G2)``.

        At ``G = U S U^T`` of rank k the tangent space is
        ``{U M^T + M U^T}``.
        """
        a = self._affine_system()
        n1 = a["n1"]
        blocks = []
        for G, k, idx, sw in ((G1, 2 * self.n, a["i1"], a["sw"][:n1]),
                              (G2, 2 * self.m, a["i2"], a["sw"][n1:])):
            N = G.shape[0]
            U = np.linalg.eigh(_sym(G))[1][:, -k:]
            X = np.einsum("ij,ab->jaib", U, np.eye(N)).reshape(k * N, N, N)
            X = X + X.transpose(0, 2, 1)
            Phi = (X[:, idx[0], idx[1]] * sw).T
            Uq, s, _ = np.linalg.svd(Phi, full_matrices=False)
            blocks.append(Uq[:, s > 1e-10 * s[0]])
        T = np.zeros((n1 + blocks[1].shape[0], blocks[0].shape[1] + blocks[1].shape[1]))
        T[:n1, :blocks[0].shape[1]] = blocks[0]
        T[n1:, blocks[0].shape[1]:] = blocks[1]
        return T

    def affine_tangent_projector(self, base, T):
        """Projector onto ``base + span(T)`` intersected with the equalities
        and the loss bound (least squares where inconsistent).

        Returns a function of a vector-coordinate point.
        """
        a = self._affine_system()
        W, c = self.loss_functional()
        K, h = a["Es"] @ T, a["rhs"] - a["Es"] @ base
        lrow = a["loss_row"] @ T
        lh = self.gamma - c - a["loss_row"] @ base
        maps = []
        for KK, hh in ((K, h), (np.vstack([K, lrow]), np.append(h, lh))):
            Kp = np.linalg.pinv(KK, rcond=1e-12)
            maps.append((np.eye(T.shape[1]) - Kp @ KK, Kp @ hh))

        def project(y):
            phi0 = T.T @ (y - base)
            M, off = maps[0]
            phi = M @ phi0 + off
            if lrow @ phi > lh:
                M, off = maps[1]
                phi = M @ phi0 + off
            return base + T @ phi

        return project

    # inequality sets --------------------------------------------------------
    def project_certificate(self, G1):
        """Project onto ``sym(G1(1,7)) >= eps I`` (skew part untouched)."""
        X = self.b1(G1, 1, 7)
        S, K = _sym(X), X - _sym(X)
        w, U = np.linalg.eigh(S)
        if w.min() >= self.epsilon:
            return G1
        S = (U * np.maximum(w, self.epsilon)) @ U.T
        G1 = G1.copy()
        self._set1(G1, 1, 7, S + K)
        return G1

    def project_stability(self, G1):
        """Project onto ``G1(3,7) + G1(7,3) + eps sym(G1(1,7)) <= 0``."""
        Y, P = self.b1(G1, 3, 7), self.b1(G1, 1, 7)
        S, Ps = _sym(Y), _sym(P)
        eps = self.epsilon
        c = np.sqrt(4.0 + eps ** 2)
        u = (2.0 * S + eps * Ps) / c
        w, U = np.linalg.eigh(u)
        if w.max() <= 0:
            return G1
        v = (eps * S - 2.0 * Ps) / c
        u = (U * np.minimum(w, 0.0)) @ U.T
        S_new = (2.0 * u + eps * v) / c
        P_new = (eps * u - 2.0 * v) / c
        G1 = G1.copy()
        self._set1(G1, 3, 7, S_new + (Y - S))
        self._set1(G1, 1, 7, P_new + (P - Ps))
        return G1

    def project_loss(self, G1):
        W, c = self.loss_functional()
        excess = np.sum(W * G1) + c - self.gamma
        if excess <= 0:
            return G1
        return G1 - (excess / np.sum(W * W)) * W

    # diagnostics ------------------------------------------------------------
    def violations(self, G1, G2):
        """Constraint violations of a lifted point (all nonnegative)."""
        eq = np.linalg.norm(self.equality_residuals(G1, G2))
        P = _sym(self.b1(G1, 1, 7))
        cert = max(0.0, self.epsilon - np.linalg.eigvalsh(P).min())
        M = _sym(self.b1(G1, 3, 7) + self.b1(G1, 7, 3) + self.epsilon * P)
        stab = max(0.0, np.linalg.eigvalsh(M).max())
        w1, w2 = np.linalg.eigvalsh(_sym(G1)), np.linalg.eigvalsh(_sym(G2))
        psd = max(0.0, -w1.min(), -w2.min())
        k1, k2 = 2 * self.n, 2 * self.m
        tail = max(np.sum(np.abs(w1[:-k1])) / max(np.abs(w1).sum(), 1e-300),
                   np.sum(np.abs(w2[:-k2])) / max(np.abs(w2).sum(), 1e-300))
        return {
            "equality": float(eq),
            "certificate": float(cert),
            "stability": float(stab),
            "psd": float(psd),
            "loss_excess": max(0.0, self.lifted_loss(G1) - self.gamma),
            "rank_tail": float(tail),
            "scale": float(1.0 + np.linalg.norm(G1) + np.linalg.norm(G2)),
        }


def build_lifted(target, D_meas, gamma, epsilon=EPSILON):
    """Set up the lifted rank-constrained feasibility problem for bound ``gamma``."""
    tgt = Target.from_any(target)
    check_hurwitz(tgt.A, "A_hat")
    D = np.atleast_2d(np.asarray(D_meas, dtype=float))
    n2, m2 = tgt.A.shape[0], tgt.B.shape[1]
    if tgt.B.shape[0] != n2 or tgt.C.shape != (D.shape[0], n2) or D.shape[1] != m2:
        raise DimensionMismatch("target and D_meas dimensions disagree")
    return LiftedProblem(n2 // 2, m2 // 2, tgt.A, tgt.B, tgt.C, D, float(gamma), epsilon,
                         tuple(tgt.weights))


@dataclass
class FeasibilityResult:
    status: str  # "feasible", "infeasible" or "stalled"
    G1: np.ndarray
    G2: np.ndarray
    variables: Optional[dict]
    iterations: int
    violations: dict

    @property
    def feasible(self):
        return self.status == "feasible"


def _violation_score(prob, v):
    # matrix residuals relative to the size of the lifted point, the loss
    # bound relative to gamma itself
    scale = v["scale"]
    return max(v["equality"] / scale, v["certificate"] / prob.epsilon, v["stability"] / scale,
               v["psd"] / scale, v["loss_excess"] / (prob.gamma + 1e-10), v["rank_tail"])


def _cone_cycle(prob, y, affine, inner_iter):
    # Dykstra between an (affine-type) set and the certificate/stability cones
    G1, G2 = prob.from_vec(y)
    v = prob.violations(G1, G2)
    if v["certificate"] <= 0 and v["stability"] <= 0:
        return y
    x = y
    p = [0.0, 0.0, 0.0]
    for _ in range(inner_iter):
        z = affine(x + p[0])
        p[0], x = x + p[0] - z, z
        for idx, proj in ((1, prob.project_certificate), (2, prob.project_stability)):
            H1, H2 = prob.from_vec(x + p[idx])
            z = prob.to_vec(proj(H1), H2)
            p[idx], x = x + p[idx] - z, z
    return x


def _ap_step(prob, G1, G2, inner_iter):
    # plain alternating projections: Dykstra over every convex set
    x1, x2 = G1, G2
    p = [[0.0, 0.0] for _ in range(5)]
    for _ in range(inner_iter):
        y1, y2 = prob.project_affine(x1 + p[0][0], x2 + p[0][1])
        p[0] = [x1 + p[0][0] - y1, x2 + p[0][1] - y2]
        x1, x2 = y1, y2
        for idx, proj in ((1, prob.project_certificate), (2, prob.project_stability),
                          (3, prob.project_loss)):
            y1 = proj(x1 + p[idx][0])
            p[idx][0] = x1 + p[idx][0] - y1
            x1 = y1
        y1 = project_psd_rank(x1 + p[4][0], prob.G1_dim)
        y2 = project_psd_rank(x2 + p[4][1], prob.G2_dim)
        p[4] = [x1 + p[4][0] - y1, x2 + p[4][1] - y2]
        x1, x2 = y1, y2
    return x1, x2


def _newton_step(prob, G1, G2, inner_iter):
    # project the rank point onto the constraints restricted to the
    # tangent space of the rank manifold at that point
    base = prob.to_vec(G1, G2)
    affine = prob.affine_tangent_projector(base, prob.tangent_basis(G1, G2))
    y = _cone_cycle(prob, affine(base), affine, inner_iter)
    return prob.from_vec(y)


def solve_rank_feasibility(prob, init, max_iter=2000, tol=1e-6, inner_iter=20,
                           method="newton", stall_window=50, stall_tol=1e-12):
    """Search the rank-constrained LMI set by alternating projections.

    Each outer iteration moves to a point satisfying the convex
    constraints (affine equalities, certificate and stability cones, loss
    half-space) and then projects back onto the PSD matrices of bounded
    rank. With ``method="newton"`` the convex step is restricted to the
    tangent space of the rank manifold at the current point, which turns
    the linear convergence of plain alternating projections into
    Newton-like local convergence; the equalities and the loss bound are
    then met by one least-squares solve and the two cones by Dykstra
    cycles. ``method="ap"`` runs ``inner_iter`` Dykstra cycles over all
    convex sets including the PSD cones.

    Parameters
    ----------
    prob : LiftedProblem
    init : tuple ``(A, B, C, Z, P)`` or ``(G1, G2)``
        Warm start; factor tuples are lifted to Gram matrices.

    Returns
    -------
    FeasibilityResult
        ``status`` is ``"feasible"`` once every violation of the rank
        projected point is below ``tol``, ``"infeasible"`` after
        ``max_iter`` iterations and ``"stalled"`` when the best violation
        improved by less than ``stall_tol`` (relative) over
        ``stall_window`` iterations.
    """
    if method not in ("newton", "ap"):
        raise ValueError(f"unknown method {method!r}")
    step = _newton_step if method == "newton" else _ap_step
    if len(init) == 5:
        G1, G2 = prob.lift(*init)
    else:
        G1, G2 = (np.array(g, dtype=float) for g in init)
    k1, k2 = 2 * prob.n, 2 * prob.m
    G1, G2 = project_psd_rank(G1, k1), project_psd_rank(G2, k2)

    v = prob.violations(G1, G2)
    score = _violation_score(prob, v)
    history = [score]
    it = 0
    while score > tol and it < max_iter:
        it += 1
        H1, H2 = step(prob, G1, G2, inner_iter)
        G1, G2 = project_psd_rank(H1, k1), project_psd_rank(H2, k2)
        v = prob.violations(G1, G2)
        score = _violation_score(prob, v)
        history.append(score)
        if not np.isfinite(score):
            break
        if it >= stall_window:
            before = min(history[:-stall_window])
            if before - min(history[-stall_window:]) < stall_tol * (1.0 + before):
                break

    if score <= tol:
        status = "feasible"
    elif it >= max_iter:
        status = "infeasible"
    else:
        status = "stalled"
    variables = prob.recover(G1) if status == "feasible" else None
    return FeasibilityResult(status, G1, G2, variables, it, v)


# -- reduced (elimination) solver -------------------------------------------

def eliminate(A, B, D_meas):
    """Realizable completion of ``(A, B)``: the unique Z and the matching C.

    Z solves ``A Z + Z A^T + B J B^T = 0``; ``C^T = -Z^-1 B J D^T``.
    """
    Jm = symplectic_form(B.shape[1] // 2)
    Z = solve_lyapunov(A, B @ Jm @ B.T)
    Z = 0.5 * (Z - Z.T)
    if abs(np.linalg.det(Z)) <= DET_TOL:
        raise SingularZ(f"|det Z| = {abs(np.linalg.det(Z)):.3e}")
    C = -np.linalg.solve(Z, B @ Jm @ D_meas.T).T
    return Z, C


def reduced_loss_and_grad(A, B, target, D_meas):
    """Loss of the realizable completion of ``(A, B)`` and its gradient.

    The gradient comes from the adjoint of the Lyapunov map: with
    ``G = w_C (C - C_hat)`` and ``H = -C^T G Z^-T``, solve
    ``A^T Lam + Lam A = H``; then::

        dL/dA = w_A (A - A_hat) - (Lam Z^T + Lam^T Z)
        dL/dB = w_B (B - B_hat) - Z^-1 G^T D J - (Lam B J^T + Lam^T B J)
    """
    tgt = Target.from_any(target)
    D = np.atleast_2d(np.asarray(D_meas, dtype=float))
    Jm = symplectic_form(B.shape[1] // 2)
    Z, C = eliminate(A, B, D)
    wA, wB, wC = tgt.weights
    G = wC * (C - tgt.C)
    f = loss(A, B, C, tgt)
    Zinv = np.linalg.inv(Z)
    H = -C.T @ G @ Zinv.T
    Lam = solve_lyapunov(A.T, -H)
    gA = wA * (A - tgt.A) - (Lam @ Z.T + Lam.T @ Z)
    gB = wB * (B - tgt.B) - Zinv @ G.T @ D @ Jm - (Lam @ B @ Jm.T + Lam.T @ B @ Jm)
    return f, gA, gB, Z, C


@dataclass
class ProjectionResult:
    """Outcome of a realizability projection.

    ``Abar, Bbar, Cbar, Z, P`` and ``target`` are in the conditioned
    coordinates the solver worked in; ``realization`` is mapped back to the
    coordinates of the classical estimate (``scale`` undone) and carries
    the recovered Kalman gain. The target's weights make ``loss`` equal to
    the loss of ``realization`` against the classical estimate, and
    ``gamma_final`` is a bound on that same quantity.
    """

    realization: QuantumRealization
    gamma_final: float
    loss: float
    iterations: int
    residuals: dict
    solver: str
    Abar: np.ndarray
    Bbar: np.ndarray
    Cbar: np.ndarray
    Z: np.ndarray
    P: Optional[np.ndarray]
    target: Target
    scale: float = 1.0
    history: list = field(default_factory=list)


def _residual_report(A, B, C, D, Z):
    r1, r2 = realizability_residual(A, B, C, D, Z)
    return {
        "I": r1,
        "II": r2,
        "skew": float(np.linalg.norm(Z + Z.T)),
        "det_Z": float(np.linalg.det(Z)),
        "max_re_eig_A": float(np.max(np.linalg.eigvals(A).real)),
    }


def _finish(Abar, Bbar, Cbar, Z, P, D, tgt, scale, solver, gamma, iters, history,
            quadrature=None):
    f = loss(Abar, Bbar, Cbar, tgt)
    Q, Lg = recover_gain(Abar, Bbar, Cbar, D)
    # back to the coordinates of the classical estimate (x -> x / scale)
    inv = 1.0 / scale
    real = QuantumRealization(Abar.copy(), inv * Bbar, scale * Cbar, D.copy(), inv ** 2 * Z,
                              inv ** 2 * Q, inv * Lg, quadrature=quadrature)
    res = _residual_report(real.A, real.B, real.C, real.D, real.Z)
    return ProjectionResult(real, float(gamma), f, iters, res, solver, Abar, Bbar, Cbar, Z,
                            P, tgt, scale, history)


def reduced_projection(target, D_meas, init=None, max_iter=500, gtol=1e-10, scale=1.0,
                       quadrature=None):
    """Minimize the loss over realizable models parametrized by ``(A, B)``.

    Quasi-Newton (BFGS) descent with a backtracking line search. Trial
    steps are rejected when A stops being Hurwitz or when
    ``|det Z| < 1e-10``. Z and C are eliminated exactly, so constraints
    (I), (II) and skewness hold to rounding error at every iterate.

    Parameters
    ----------
    target : ClassicalEstimate, Target or ``(A, B, C)``
        Already in the coordinates the loss should be measured in.
    init : ``(A0, B0)``, optional
        Starting point; the target's own ``(A, B)`` by default, with B
        perturbed towards every state direction if that makes Z singular.
    scale : float
        Conditioning scale the target was obtained with; only used to map
        the realization back.
    """
    tgt = Target.from_any(target)
    D = np.atleast_2d(np.asarray(D_meas, dtype=float))
    check_hurwitz(tgt.A, "A_hat")
    A = np.array(tgt.A if init is None else init[0], dtype=float)
    B = np.array(tgt.B if init is None else init[1], dtype=float)
    na = A.size

    def evaluate(theta):
        Ai, Bi = theta[:na].reshape(A.shape), theta[na:].reshape(B.shape)
        if not is_hurwitz(Ai):
            return None
        try:
            f, gA, gB, Z, C = reduced_loss_and_grad(Ai, Bi, tgt, D)
        except (SingularZ, NotHurwitz, np.linalg.LinAlgError):
            return None
        if not np.isfinite(f):
            return None
        return f, np.concatenate([gA.ravel(), gB.ravel()]), Z, C

    theta = np.concatenate([A.ravel(), B.ravel()])
    cur = evaluate(theta)
    if cur is None and not is_hurwitz(A):
        raise NotHurwitz("initial A is not Hurwitz")
    if cur is None and init is None:
        # modes the input barely reaches make Z(A_hat, B_hat) singular;
        # start from B_hat plus a growing coupling to every mode instead
        E = np.zeros_like(B)
        E[np.arange(B.shape[0]), np.arange(B.shape[0]) % B.shape[1]] = 1.0
        size = max(np.linalg.norm(B), 1e-3)
        for eta in (1e-3, 1e-2, 1e-1, 1.0):
            theta = np.concatenate([A.ravel(), (B + eta * size * E).ravel()])
            cur = evaluate(theta)
            if cur is not None:
                break
    if cur is None:
        raise ZSingularOnPath("initial point has a singular Z")
    f, g, Z, C = cur
    H = np.eye(theta.size)
    it = 0
    for it in range(1, max_iter + 1):
        if np.linalg.norm(g) <= gtol * (1.0 + f):
            break
        d = -H @ g
        if d @ g >= 0:
            H = np.eye(theta.size)
            d = -g
        step, accepted = 1.0, None
        for _ in range(60):
            trial = evaluate(theta + step * d)
            if trial is not None and trial[0] <= f + 1e-4 * step * (d @ g):
                accepted = trial
                break
            step *= 0.5
        if accepted is None:
            if it == 1 and evaluate(theta + 1e-8 * d) is None:
                raise ZSingularOnPath("no descent step keeps Z invertible")
            break
        s = step * d
        f_new, g_new, Z, C = accepted
        yv = g_new - g
        sy = s @ yv
        if sy > 1e-16 * np.linalg.norm(s) * np.linalg.norm(yv):
            rho = 1.0 / sy
            V = np.eye(theta.size) - rho * np.outer(s, yv)
            H = V @ H @ V.T + rho * np.outer(s, s)
        theta = theta + s
        converged = abs(f - f_new) <= 1e-15 * (1.0 + f)
        f, g = f_new, g_new
        if converged:
            break
    Abar, Bbar = theta[:na].reshape(A.shape), theta[na:].reshape(B.shape)
    P = init_certificate(Abar)
    return _finish(Abar, Bbar, C, Z, P, D, tgt, scale, "reduced", f, it, [],
                   quadrature=quadrature)


# -- outer search -------------------------------------------------------------

def bisection_identify(target, D_meas, gamma0=None, rounds=25, epsilon=EPSILON,
                       conditioning="balance", amplitude=None, max_iter=2000, tol=1e-9,
                       inner_iter=20, quadrature=None, reduced=None, fallback=True):
    """Projection by the lifted solver with a multiplicative search on the bound.

    Each round solves the rank-constrained feasibility problem for the
    current bound gamma; gamma is halved after a feasible round and
    multiplied by 1.2 after an infeasible one. The first round starts
    from the classical estimate with ``Z = J_n`` and the Lyapunov
    certificate of ``A_hat``; later rounds start from the last feasible
    point. While no round has been feasible, a failed start from the
    classical estimate is retried from the reduced solution, which is
    feasible for any bound above its loss.

    The target is first put in conditioned coordinates ``x -> t x`` (see
    :func:`conditioning_scale`); losses and bounds refer to those
    coordinates, but the loss weights keep every loss and bound equal to
    its value in the coordinates of the classical estimate, so the scale
    only affects numerical conditioning. A round counts as feasible when
    the lifted search succeeds and the exact completion of the recovered
    ``(A, B)`` (Z and C from the eliminated equations) still has loss at
    most gamma; the returned model is that completion, with the Kalman gain
    recovered from the filter Riccati equation.

    Parameters
    ----------
    gamma0 : float, optional
        Initial bound. Defaults to twice the loss reached by
        :func:`reduced_projection` (at least 1e-4), which is feasible.
    rounds : int
    reduced : ProjectionResult, optional
        Precomputed reduced solution in the same conditioned coordinates.
    fallback : bool
        Retry failed early rounds from the reduced solution. With
        ``False`` every round starts from the classical estimate or the
        last feasible lifted point only.
    """
    raw = Target.from_any(target)
    D = np.atleast_2d(np.asarray(D_meas, dtype=float))
    check_hurwitz(raw.A, "A_hat")
    t = conditioning_scale(raw, conditioning, amplitude)
    tgt = raw.scaled(t)
    if reduced is None:
        reduced = reduced_projection(tgt, D, scale=t)
    if gamma0 is None:
        gamma0 = max(2.0 * reduced.loss, 1e-4)
    if not gamma0 > 0:
        raise ValueError("gamma0 must be positive")

    n2 = tgt.A.shape[0]
    start = (tgt.A, tgt.B, tgt.C, symplectic_form(n2 // 2), init_certificate(tgt.A))
    seed = (reduced.Abar, reduced.Bbar, reduced.Cbar, reduced.Z, reduced.P)
    opts = dict(max_iter=max_iter, tol=tol, inner_iter=inner_iter)

    def attempt(gamma, inits):
        # a round succeeds when the lifted search is feasible and the
        # exact completion of its (A, B) still meets the bound
        prob = build_lifted(tgt, D, gamma, epsilon)
        spent, status = 0, "infeasible"
        for init in inits:
            out = solve_rank_feasibility(prob, init, **opts)
            spent += out.iterations
            status = out.status
            if out.feasible:
                comp = _complete(out.variables, D)
                if comp is not None and loss(comp[0], comp[1], comp[2], tgt) <= \
                        gamma * (1 + 1e-6) + 1e-12:
                    return "feasible", comp, spent
                status = "rejected"
        return status, None, spent

    warm, gamma = start, float(gamma0)
    best, history, iters = None, [], 0
    for _ in range(rounds):
        # while nothing has been feasible, a failed start from the
        # classical estimate is retried from the reduced solution, which
        # meets any bound above its loss
        inits = [warm] if best is not None or gamma < reduced.loss or not fallback \
            else [warm, seed]
        status, comp, spent = attempt(gamma, inits)
        iters += spent
        history.append((gamma, status, spent))
        logger.debug("gamma=%.4g %s after %d iterations", gamma, status, spent)
        if comp is not None:
            if best is None or gamma < best[0]:
                best = (gamma, comp)
            warm = comp
            gamma *= 0.5
        else:
            gamma *= 1.2
    if best is None and rounds == 0:
        status, comp, spent = attempt(gamma, [start, seed] if fallback else [start])
        iters += spent
        if comp is not None:
            best = (gamma, comp)
    if best is None:
        raise NoFeasiblePointFound("no round of the search was feasible")
    gamma_best, (Abar, Bbar, Cbar, Z, P) = best
    return _finish(Abar, Bbar, Cbar, Z, P, D, tgt, t, "lifted", gamma_best, iters, history,
                   quadrature=quadrature)


def _complete(v, D):
    # exact realizable completion of recovered lifted variables
    A, B = v["A"], v["B"]
    if not is_hurwitz(A):
        return None
    try:
        Z, C = eliminate(A, B, D)
    except (SingularZ, NotHurwitz, np.linalg.LinAlgError):
        return None
    return A, B, C, Z, _sym(v["P"])


def recover_gain(Abar, Bbar, Cbar, D_meas):
    """Filter Riccati solution Q and Kalman gain ``L = Q C^T + B D^T``."""
    Q = solve_filter_are(Abar, Bbar, Cbar, D_meas)
    return Q, kalman_gain(Q, Bbar, Cbar, D_meas)


def to_canonical(result):
    """Realization in coordinates where ``Z = J_n``.

    Factor ``Z = V J V^T`` and apply the similarity ``V^-1``:
    ``(V^-1 A V, V^-1 B, C V)``, ``L -> V^-1 L``, ``Q -> V^-1 Q V^-T``.
    """
    real = result.realization if isinstance(result, ProjectionResult) else result
    V = skew_canonical_factor(real.Z)
    Vinv = np.linalg.inv(V)
    A, B, C = similarity_transform(real.A, real.B, real.C, Vinv)
    Q = None if real.Q is None else Vinv @ real.Q @ Vinv.T
    L = None if real.L is None else Vinv @ real.L
    Z = symplectic_form(A.shape[0] // 2)
    return QuantumRealization(A, B, C, real.D.copy(), Z, Q, L, quadrature=real.quadrature,
                              meta={"V": V})
