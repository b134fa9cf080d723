"""Combined deterministic-stochastic subspace identification.

Identifies an innovation-form model ``(A, B, C, L)`` of one measured
quadrature from a single record, with the feedthrough D known and
subtracted up front. The discrete model comes from an oblique projection
of future outputs on the past along future inputs (N4SID family) and is
then mapped to continuous time.
"""

import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.linalg

from .errors import DimensionMismatch, InsufficientData, LogUndefined, UnstableEstimate
from .numerics import is_hurwitz

logger = logging.getLogger(__name__)

__all__ = [
    "HankelConfig",
    "ClassicalEstimate",
    "remove_feedthrough",
    "build_hankel",
    "n4sid_estimate",
    "relative_energy",
    "d2c",
    "c2d",
]


@dataclass
class HankelConfig:
    """Block-Hankel settings.

    ``weighting`` picks the SVD weights: ``"cva"`` (canonical variates),
    ``"moesp"`` (left weight identity) or ``"n4sid"`` (no weights). The
    singular values of the MOESP-weighted projection carry the signal
    energy used for order selection; canonical correlations (CVA) saturate
    at one and do not.
    ``regularization`` is a relative ridge used in every normal-equation
    solve.
    """

    block_rows: int = 10
    regularization: float = 1e-8
    weighting: str = "moesp"

    def __post_init__(self):
        if self.block_rows < 1:
            raise ValueError("block_rows must be positive")
        if self.weighting not in ("cva", "moesp", "n4sid"):
            raise ValueError(f"unknown weighting {self.weighting!r}")


@dataclass
class ClassicalEstimate:
    """Continuous-time innovation-form estimate ``(A_hat, B_hat, C_hat, L_hat)``.

    ``A_d, B_d, K_d`` keep the discrete model the continuous one was
    converted from; ``stable`` flags whether ``A_hat`` is Hurwitz.
    """

    A_hat: np.ndarray
    B_hat: np.ndarray
    C_hat: np.ndarray
    L_hat: np.ndarray
    innov_cov: np.ndarray
    sing_values: np.ndarray
    order: int
    Ts: float
    D_meas: Optional[np.ndarray] = None
    A_d: Optional[np.ndarray] = None
    B_d: Optional[np.ndarray] = None
    K_d: Optional[np.ndarray] = None
    method: str = "euler"
    stable: bool = True
    quadrature: Optional[str] = None
    meta: dict = field(default_factory=dict)

    # aliases so estimates can be used wherever a model is expected
    @property
    def A(self):
        return self.A_hat

    @property
    def B(self):
        return self.B_hat

    @property
    def C(self):
        return self.C_hat

    @property
    def D(self):
        return self.D_meas

    @property
    def L(self):
        return self.L_hat


def remove_feedthrough(rec, D_meas):
    """Output with the known direct term removed, ``z[k] = ydot[k] - D a[k]``."""
    D = np.atleast_2d(np.asarray(D_meas, dtype=float))
    if D.shape != (rec.ydot.shape[1], rec.alpha.shape[1]):
        raise DimensionMismatch(
            f"D is {D.shape}, record has {rec.ydot.shape[1]} outputs and "
            f"{rec.alpha.shape[1]} inputs")
    return rec.ydot - rec.alpha @ D.T


def _hankel(x, rows, j):
    # x: (N, c) time-major; result (rows * c, j)
    c = x.shape[1]
    H = np.empty((rows * c, j))
    for r in range(rows):
        H[r * c:(r + 1) * c] = x[r:r + j].T
    return H


def build_hankel(u, z, i):
    """Past and future block-Hankel matrices ``(U_p, U_f, Z_p, Z_f)``.

    ``u`` and ``z`` are time-major arrays (one row per sample). Each
    matrix has i block rows and ``j = N - 2 i + 1`` columns.
    """
    u = np.asarray(u, dtype=float)
    z = np.asarray(z, dtype=float)
    if u.ndim == 1:
        u = u[:, None]
    if z.ndim == 1:
        z = z[:, None]
    if u.shape[0] != z.shape[0]:
        raise DimensionMismatch("u and z differ in length")
    N = u.shape[0]
    j = N - 2 * i + 1
    if i < 1 or j < 1:
        raise InsufficientData(f"{N} samples cannot fill 2 x {i} block rows")
    Hu, Hz = _hankel(u, 2 * i, j), _hankel(z, 2 * i, j)
    ku, kz = u.shape[1], z.shape[1]
    return Hu[:i * ku], Hu[i * ku:], Hz[:i * kz], Hz[i * kz:]


def _solve_sym(G, rhs, ridge):
    # solves G X = rhs for symmetric PSD G with a relative ridge
    lam = ridge * np.trace(G) / max(G.shape[0], 1)
    return scipy.linalg.solve(G + lam * np.eye(G.shape[0]), rhs, assume_a="pos")


def _perp(X, U, ridge):
    """``X`` times the projector onto the orthogonal complement of row(U)."""
    coef = _solve_sym(U @ U.T, U @ X.T, ridge)
    return X - coef.T @ U


def _oblique(Zf, Uf, Wp, ridge):
    """Oblique projection of Zf along Uf onto Wp; also returns its Uf-perp part."""
    Zp_ = _perp(Zf, Uf, ridge)
    Wp_ = _perp(Wp, Uf, ridge)
    coef = _solve_sym(Wp_ @ Wp_.T, Wp_ @ Zp_.T, ridge).T
    return coef @ Wp, coef @ Wp_, Zp_


def _inv_sqrt(S, ridge):
    w, V = np.linalg.eigh(0.5 * (S + S.T))
    w = np.maximum(w, ridge * max(w.max(), 1e-300))
    return (V / np.sqrt(w)) @ V.T, (V * np.sqrt(w)) @ V.T


def _output_error_B(A, C, u, z):
    """Least-squares B (and initial state) for ``z = C x``, ``x+ = A x + B u``."""
    nx, k = A.shape[0], u.shape[1]
    N, m = z.shape
    # M[t] = sum_{s<t} A^(t-1-s) (x) u[s], shape (nx, nx, k)
    M = np.zeros((nx, nx, k))
    P = np.eye(nx)
    rows = np.empty((N, m, nx * k + nx))
    for t in range(N):
        rows[t, :, :nx * k] = np.einsum("ij,jak->iak", C, M).reshape(m, nx * k)
        rows[t, :, nx * k:] = C @ P
        M = np.einsum("ij,jak->iak", A, M)
        M[np.arange(nx), np.arange(nx)] += u[t]
        P = A @ P
    theta, *_ = np.linalg.lstsq(rows.reshape(N * m, -1), z.reshape(-1), rcond=None)
    B = theta[:nx * k].reshape(nx, k)
    return B, theta[nx * k:]


def _noise_model(A, B, C, Xi, Xi1, Ui, Zi):
    j = Xi.shape[1]
    rw = Xi1 - A @ Xi - B @ Ui
    rv = Zi - C @ Xi
    S_all = np.vstack([rw, rv]) @ np.vstack([rw, rv]).T / j
    w, V = np.linalg.eigh(0.5 * (S_all + S_all.T))
    S_all = (V * np.clip(w, 0, None)) @ V.T
    nx = A.shape[0]
    Qw, S, Rv = S_all[:nx, :nx], S_all[:nx, nx:], S_all[nx:, nx:]
    try:
        P = scipy.linalg.solve_discrete_are(A.T, C.T, Qw, Rv, s=S)
        Lam = C @ P @ C.T + Rv
        K = (A @ P @ C.T + S) @ np.linalg.inv(Lam)
        if not np.all(np.isfinite(K)):
            raise np.linalg.LinAlgError("non-finite gain")
    except (np.linalg.LinAlgError, ValueError) as exc:
        logger.warning("discrete Riccati solve failed (%s); using S R^-1", exc)
        Lam = Rv
        K = S @ np.linalg.inv(Rv)
    return K, 0.5 * (Lam + Lam.T)


def _innovation_cov(A, B, C, K, u, z, x0):
    """Sample covariance of the one-step predictor residuals."""
    x = np.asarray(x0, dtype=float)
    E = np.empty_like(z)
    Bu = u @ B.T
    for t in range(z.shape[0]):
        e = z[t] - C @ x
        E[t] = e
        x = A @ x + Bu[t] + K @ e
    S = E.T @ E / E.shape[0]
    return 0.5 * (S + S.T)


def c2d(A, B, Ts, method="zoh"):
    """Discretize ``(A, B)``: exact zero-order hold or forward Euler."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.atleast_2d(np.asarray(B, dtype=float))
    if method == "euler":
        return np.eye(A.shape[0]) + Ts * A, Ts * B
    d, k = A.shape[0], B.shape[1]
    M = np.zeros((d + k, d + k))
    M[:d, :d], M[:d, d:] = A, B
    E = scipy.linalg.expm(Ts * M)
    return E[:d, :d], E[:d, d:]


def d2c(A_d, B_d, Ts):
    """Invert a zero-order-hold discretization.

    ``A_c = log(A_d) / Ts`` with the principal logarithm and
    ``B_c = A_c (A_d - I)^-1 B_d``.

    Raises
    ------
    LogUndefined
        If A_d has an eigenvalue on the closed negative real axis.
    """
    A_d = np.atleast_2d(np.asarray(A_d, dtype=float))
    B_d = np.atleast_2d(np.asarray(B_d, dtype=float))
    if Ts <= 0:
        raise ValueError("Ts must be positive")
    lam = np.linalg.eigvals(A_d)
    scale = max(1.0, np.abs(lam).max())
    if np.any((lam.real <= 0) & (np.abs(lam.imag) <= 1e-12 * scale)):
        raise LogUndefined("A_d has an eigenvalue on the closed negative real axis")
    A_c = scipy.linalg.logm(A_d)
    A_c = np.real_if_close(A_c, tol=1e6).real / Ts
    # B_d = Ts phi1(Ts A_c) B_c; phi1 stays invertible when A_d has eigenvalue 1
    B_c = np.linalg.solve(_phi1(Ts * A_c), B_d) / Ts
    return A_c, B_c


def _phi1(M):
    # sum_k M^k / (k+1)!  ==  (e^M - I) M^-1
    d = M.shape[0]
    E = scipy.linalg.expm(np.block([[M, np.eye(d)], [np.zeros((d, d)), np.zeros((d, d))]]))
    return E[:d, d:]


def _to_continuous(A_d, B_d, K_d, Ts, method):
    I = np.eye(A_d.shape[0])
    if method == "euler":
        return (A_d - I) / Ts, B_d / Ts, K_d / Ts
    A_c, B_c = d2c(A_d, B_d, Ts)
    _, Kc = d2c(A_d, K_d, Ts)
    return A_c, B_c, Kc


def n4sid_estimate(rec, order, D_meas, cfg=None, method="euler", strict=False):
    """Identify an order-``order`` (mode count) innovation model from a record.

    Steps: subtract the known feedthrough; build past/future Hankel
    matrices; oblique projection of future outputs along future inputs;
    weighted SVD (singular values kept for order selection); extended
    observability matrix from the dominant ``2 * order`` directions, giving
    C and A by shift invariance; B and the initial state by linear least
    squares on the output; state sequences from the two oblique
    projections give residual covariances and one discrete Riccati solve
    gives the innovation gain and covariance. Finally the discrete model is
    mapped to continuous time with ``method`` (``"euler"`` matches the
    simulator's Euler-Maruyama recursion, ``"zoh"`` uses :func:`d2c`).

    The continuous gain follows the convention of the simulator:
    ``K_d = L Ts R^-1`` with ``R = D D^T``.

    Parameters
    ----------
    rec : MeasurementRecord
    order : int
        Mode count n; the state dimension is 2n.
    D_meas : (m, 2m) array_like
    cfg : HankelConfig, optional
    method : {"euler", "zoh"}
    strict : bool
        Raise :class:`UnstableEstimate` instead of flagging a non-Hurwitz A.
    """
    cfg = cfg or HankelConfig()
    if method not in ("euler", "zoh"):
        raise ValueError(f"unknown conversion method {method!r}")
    D = np.atleast_2d(np.asarray(D_meas, dtype=float))
    z = remove_feedthrough(rec, D)
    u = rec.alpha
    N, m = z.shape
    k = u.shape[1]
    i = cfg.block_rows
    nx = 2 * int(order)
    if order < 1 or nx > m * i:
        raise ValueError(f"order {order} not supported with {i} block rows and {m} outputs")
    if N < 2 * i + 10 * nx:
        raise InsufficientData(f"need at least {2 * i + 10 * nx} samples, got {N}")
    ridge = cfg.regularization
    Ts = rec.Ts

    j = N - 2 * i + 1
    Hu, Hz = _hankel(u, 2 * i, j), _hankel(z, 2 * i, j)
    Up, Uf = Hu[:i * k], Hu[i * k:]
    Zp, Zf = Hz[:i * m], Hz[i * m:]
    Wp = np.vstack([Up, Zp])
    O, O_perp, Zf_perp = _oblique(Zf, Uf, Wp, ridge)

    if cfg.weighting == "cva":
        W1, W1inv = _inv_sqrt(Zf_perp @ Zf_perp.T / j, ridge)
        target = W1 @ O_perp
    elif cfg.weighting == "moesp":
        W1 = W1inv = np.eye(i * m)
        target = O_perp
    else:
        W1 = W1inv = np.eye(i * m)
        target = O
    U, s, _ = np.linalg.svd(target / np.sqrt(j), full_matrices=False)
    Gamma = W1inv @ U[:, :nx] * np.sqrt(s[:nx])

    C_d = Gamma[:m]
    A_d = np.linalg.lstsq(Gamma[:-m], Gamma[m:], rcond=None)[0]
    B_d, x0 = _output_error_B(A_d, C_d, u, z)

    # state sequences X_i, X_{i+1} for the noise model
    Wp1 = np.vstack([Hu[:(i + 1) * k], Hz[:(i + 1) * m]])
    O1, _, _ = _oblique(Hz[(i + 1) * m:], Hu[(i + 1) * k:], Wp1, ridge)
    Xi = np.linalg.pinv(Gamma) @ O
    Xi1 = np.linalg.pinv(Gamma[:-m]) @ O1
    K_d, _ = _noise_model(A_d, B_d, C_d, Xi, Xi1, Hu[i * k:(i + 1) * k],
                          Hz[i * m:(i + 1) * m])
    innov = _innovation_cov(A_d, B_d, C_d, K_d, u, z, x0)

    R = D @ D.T
    A_c, B_c, Kc = _to_continuous(A_d, B_d, K_d, Ts, method)
    L_c = Kc @ R
    est = ClassicalEstimate(A_c, B_c, C_d, L_c, innov, s, int(order), Ts, D,
                            A_d, B_d, K_d, method, is_hurwitz(A_c), rec.quadrature)
    if not est.stable:
        msg = "identified A is not Hurwitz"
        if strict:
            raise UnstableEstimate(msg, est)
        logger.warning(msg)
    return est


def relative_energy(sing_values):
    """Per-mode order-selection scores.

    The score of mode n is ``log10(s[2n-1]^2 + s[2n]^2)`` (1-based), i.e.
    the log energy of the pair of singular values that mode adds. Scores
    are monotone in the singular values. The projection is normalized by
    the column count, so the noise-floor scores do not drift with the
    record length or the input amplitude.
    """
    s = np.asarray(sing_values, dtype=float)
    if s.size == 0:
        raise ValueError("no singular values")
    pairs = s[: 2 * (s.size // 2)].reshape(-1, 2)
    energy = np.sum(pairs ** 2, axis=1)
    with np.errstate(divide="ignore"):
        return np.log10(energy)
