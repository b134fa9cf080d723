"""Dense linear-algebra kernels.

Lyapunov and Riccati solvers, Riccati ODE integration, the canonical
factorization of skew-symmetric matrices and the PSD/rank projection used
by the rank-constrained feasibility solver.  Everything here is a pure
function of its arguments.
"""

import numpy as np
import scipy.linalg

from .errors import (Blowup, DimensionMismatch, NoStabilizingSolution,
                     NotHurwitz, NotSkew, SingularNoise, SingularZ)

__all__ = [
    "HURWITZ_TOL",
    "symplectic_form",
    "is_hurwitz",
    "check_hurwitz",
    "solve_lyapunov",
    "solve_filter_are",
    "kalman_gain",
    "riccati_rhs",
    "integrate_rde",
    "skew_canonical_factor",
    "project_psd_rank",
]

HURWITZ_TOL = 1e-12
# Kronecker system size limit; larger problems go through Bartels-Stewart.
_KRON_MAX_DIM = 12


def symplectic_form(n):
    """Return the 2n x 2n block-diagonal matrix ``I_n kron [[0, 1], [-1, 0]]``."""
    J = np.array([[0.0, 1.0], [-1.0, 0.0]])
    return np.kron(np.eye(n), J)


def _square(M, name):
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise DimensionMismatch(f"{name} must be square, got shape {M.shape}")
    return M


def is_hurwitz(A, tol=HURWITZ_TOL):
    A = np.atleast_2d(np.asarray(A, dtype=float))
    if A.size == 0:
        return True
    if not np.all(np.isfinite(A)):
        return False
    return bool(np.max(np.linalg.eigvals(A).real) < -tol)


def check_hurwitz(A, name="A"):
    if not is_hurwitz(A):
        lam = np.max(np.linalg.eigvals(A).real)
        raise NotHurwitz(f"{name} is not Hurwitz (max Re(eig) = {lam:.3e})")


def solve_lyapunov(A, W):
    """Solve ``A X + X A^T + W = 0`` for X.

    Small problems use the vectorized Kronecker system
    ``(I kron A + A kron I) vec(X) = -vec(W)``; larger ones fall back on
    the Bartels-Stewart solver in scipy.

    Parameters
    ----------
    A : (d, d) array_like
        Hurwitz matrix.
    W : (d, d) array_like
        Constant term.

    Returns
    -------
    X : (d, d) ndarray
        The unique solution. Skew-symmetric whenever W is.

    Raises
    ------
    NotHurwitz
        If some eigenvalue of A has real part >= -1e-12.
    DimensionMismatch
        If A and W are not square of the same size.
    """
    A = _square(A, "A")
    W = _square(W, "W")
    if A.shape != W.shape:
        raise DimensionMismatch(f"A is {A.shape} but W is {W.shape}")
    check_hurwitz(A)
    d = A.shape[0]
    if d <= _KRON_MAX_DIM:
        I = np.eye(d)
        K = np.kron(I, A) + np.kron(A, I)
        x = np.linalg.solve(K, -W.reshape(-1, order="F"))
        return x.reshape(d, d, order="F")
    return scipy.linalg.solve_continuous_lyapunov(A, -W)


def _filter_are_data(A, B, C, D):
    A = _square(A, "A")
    B = np.atleast_2d(np.asarray(B, dtype=float))
    C = np.atleast_2d(np.asarray(C, dtype=float))
    D = np.atleast_2d(np.asarray(D, dtype=float))
    d = A.shape[0]
    if B.shape[0] != d or C.shape[1] != d or D.shape[0] != C.shape[0] \
            or D.shape[1] != B.shape[1]:
        raise DimensionMismatch(
            f"inconsistent shapes A{A.shape} B{B.shape} C{C.shape} D{D.shape}")
    R = D @ D.T
    if np.linalg.cond(R) >= 1e12:
        raise SingularNoise("D D^T is numerically singular")
    return A, B, C, D, R


def riccati_rhs(Q, A, B, C, D):
    """Right-hand side of the filter Riccati equation at Q."""
    R = D @ D.T
    L = Q @ C.T + B @ D.T
    return A @ Q + Q @ A.T + B @ B.T - L @ np.linalg.solve(R, L.T)


def solve_filter_are(A, B, C_meas, D_meas):
    """Stabilizing solution of the homodyne-filter algebraic Riccati equation.

    Solves ``A Q + Q A^T + B B^T - L R^{-1} L^T = 0`` with
    ``L = Q C^T + B D^T`` and ``R = D D^T``.

    The equation is first rewritten without cross term,
    ``At Q + Q At^T - Q C^T R^-1 C Q + B (I - D^T R^-1 D) B^T = 0`` with
    ``At = A - B D^T R^-1 C``; the stable invariant subspace of the
    associated Hamiltonian is taken from an ordered real Schur form, and a
    single Newton (Kleinman) step polishes the result.
    """
    A, B, C, D, R = _filter_are_data(A, B, C_meas, D_meas)
    check_hurwitz(A)
    d = A.shape[0]
    Rinv_C = np.linalg.solve(R, C)
    At = A - B @ D.T @ Rinv_C
    G = C.T @ Rinv_C
    G = 0.5 * (G + G.T)
    Qt = B @ (np.eye(B.shape[1]) - D.T @ np.linalg.solve(R, D)) @ B.T
    Qt = 0.5 * (Qt + Qt.T)

    # control-form Hamiltonian for X At^T-transposed problem
    H = np.block([[At.T, -G], [-Qt, -At]])
    try:
        T, U, sdim = scipy.linalg.schur(H, output="real", sort="lhp")
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise NoStabilizingSolution(str(exc)) from exc
    if sdim != d:
        raise NoStabilizingSolution(
            f"Hamiltonian has {sdim} stable eigenvalues, expected {d}")
    U1, U2 = U[:d, :d], U[d:, :d]
    if np.linalg.cond(U1) > 1e12:
        raise NoStabilizingSolution("stable invariant subspace is not a graph")
    Q = np.linalg.solve(U1.T, U2.T).T
    Q = 0.5 * (Q + Q.T)

    # Kleinman step: (At - Q G) Qn + Qn (At - Q G)^T + Qt + Q G Q = 0
    F = At - Q @ G
    if is_hurwitz(F):
        Qn = solve_lyapunov(F, Qt + Q @ G @ Q)
        Qn = 0.5 * (Qn + Qn.T)
        if np.linalg.norm(riccati_rhs(Qn, A, B, C, D)) <= \
                np.linalg.norm(riccati_rhs(Q, A, B, C, D)):
            Q = Qn

    L = Q @ C.T + B @ D.T
    if not is_hurwitz(A - L @ Rinv_C):
        raise NoStabilizingSolution("closed-loop filter matrix is not Hurwitz")
    return Q


def kalman_gain(Q, B, C_meas, D_meas):
    """Steady-state gain ``L = Q C^T + B D^T``."""
    Q = _square(Q, "Q")
    B = np.atleast_2d(np.asarray(B, dtype=float))
    C = np.atleast_2d(np.asarray(C_meas, dtype=float))
    D = np.atleast_2d(np.asarray(D_meas, dtype=float))
    if B.shape[0] != Q.shape[0] or C.shape[1] != Q.shape[0] \
            or D.shape != (C.shape[0], B.shape[1]):
        raise DimensionMismatch(
            f"inconsistent shapes Q{Q.shape} B{B.shape} C{C.shape} D{D.shape}")
    return Q @ C.T + B @ D.T


def integrate_rde(Q0, A, B, C_meas, D_meas, t_end, dt):
    """Integrate the filter Riccati ODE with classical RK4.

    Returns
    -------
    t : (K+1,) ndarray
        Sample times ``k * dt``.
    Q : (K+1, d, d) ndarray
        Covariance trajectory; each sample is re-symmetrized.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    A, B, C, D, _ = _filter_are_data(A, B, C_meas, D_meas)
    Q = _square(Q0, "Q0")
    if Q.shape != A.shape:
        raise DimensionMismatch(f"Q0 is {Q.shape} but A is {A.shape}")
    steps = int(round(t_end / dt))
    out = np.empty((steps + 1,) + Q.shape)
    out[0] = 0.5 * (Q + Q.T)
    Q = out[0]
    f = lambda X: riccati_rhs(X, A, B, C, D)  # noqa: E731
    for k in range(steps):
        k1 = f(Q)
        k2 = f(Q + 0.5 * dt * k1)
        k3 = f(Q + 0.5 * dt * k2)
        k4 = f(Q + dt * k3)
        Q = Q + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        Q = 0.5 * (Q + Q.T)
        if not np.all(np.isfinite(Q)) or np.linalg.norm(Q) > 1e12:
            raise Blowup(f"Riccati trajectory diverged at t = {(k + 1) * dt:g}")
        out[k + 1] = Q
    return dt * np.arange(steps + 1), out


def skew_canonical_factor(Z, skew_tol=1e-8, det_tol=1e-10):
    """Factor a skew-symmetric invertible Z as ``V J_n V^T``.

    The real Schur form of a skew-symmetric matrix is block diagonal with
    blocks ``[[0, s], [-s, 0]]``. Blocks are reordered by decreasing ``s``,
    signs are fixed by swapping columns, and ``V = U diag(sqrt(s))``.
    V is not unique; only the factorization identity is guaranteed.
    """
    Z = _square(Z, "Z")
    d = Z.shape[0]
    scale = max(np.linalg.norm(Z, 2), 1.0)
    if d % 2 or np.linalg.norm(Z + Z.T, 2) > skew_tol * scale:
        raise NotSkew("Z is not skew-symmetric of even dimension")
    if abs(np.linalg.det(Z)) <= det_tol:
        raise SingularZ(f"|det Z| = {abs(np.linalg.det(Z)):.3e}")
    Zs = 0.5 * (Z - Z.T)
    T, U = scipy.linalg.schur(Zs, output="real")
    cols, sig = [], []
    k = 0
    while k < d:
        if k + 1 < d and abs(T[k + 1, k]) > 0.0:
            s = 0.5 * (T[k, k + 1] - T[k + 1, k])
            if s > 0:
                cols.append((U[:, k], U[:, k + 1]))
            else:
                cols.append((U[:, k + 1], U[:, k]))
            sig.append(abs(s))
            k += 2
        else:
            raise SingularZ("Z has a zero eigenvalue")
    order = np.argsort(sig, kind="stable")[::-1]
    V = np.empty_like(Z)
    for j, idx in enumerate(order):
        r = np.sqrt(sig[idx])
        V[:, 2 * j] = r * cols[idx][0]
        V[:, 2 * j + 1] = r * cols[idx][1]
    return V


def project_psd_rank(M, k):
    """Nearest (Frobenius) PSD matrix of rank at most k."""
    M = np.asarray(M, dtype=float)
    w, U = np.linalg.eigh(0.5 * (M + M.T))
    w = np.clip(w, 0.0, None)
    if k < len(w):
        w[: len(w) - max(k, 0)] = 0.0
    return (U * w) @ U.T
