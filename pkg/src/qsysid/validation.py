"""Prediction-error diagnostics on validation data."""

from dataclasses import dataclass

import numpy as np
import scipy.linalg
import scipy.stats

from .errors import DegenerateN, DimensionMismatch, InsufficientData, ZeroVarianceChannel
from .numerics import check_hurwitz

__all__ = [
    "CONFIDENCE_Z99",
    "ResidualSet",
    "parameter_count",
    "predict",
    "fpe",
    "fit_percent",
    "autocorr",
    "cross_corr",
    "fraction_inside",
]

CONFIDENCE_Z99 = float(scipy.stats.norm.ppf(0.995))  # 2.5758...


@dataclass
class ResidualSet:
    """One-step prediction residuals ``e = ydot - predictions``.

    ``direct`` is the known feedthrough contribution ``D a`` contained in
    both the data and the predictions.
    """

    e: np.ndarray
    predictions: np.ndarray
    N: int
    d: int
    direct: np.ndarray
    x0: np.ndarray


def parameter_count(n, m):
    """Free entries of (A, B, C, L) for n modes and m measured outputs, D known."""
    return (2 * n) ** 2 + 2 * n * 2 * m + m * 2 * n + 2 * n * m


def _model_arrays(model):
    A = np.atleast_2d(np.asarray(model.A, dtype=float))
    B = np.atleast_2d(np.asarray(model.B, dtype=float))
    C = np.atleast_2d(np.asarray(model.C, dtype=float))
    D = np.atleast_2d(np.asarray(model.D, dtype=float))
    L = getattr(model, "L", None)
    L = np.zeros((A.shape[0], C.shape[0])) if L is None else np.atleast_2d(np.asarray(L, float))
    return A, B, C, D, L


def _transition(A, B, G, Ts, scheme):
    # discrete (state, input, innovation) matrices of the predictor
    d = A.shape[0]
    if scheme == "euler":
        return np.eye(d) + Ts * A, Ts * B, Ts * G
    k = B.shape[1] + G.shape[1]
    M = np.zeros((d + k, d + k))
    M[:d, :d], M[:d, d:] = A, np.hstack([B, G])
    E = scipy.linalg.expm(Ts * M)
    return E[:d, :d], E[:d, d:d + B.shape[1]], E[:d, d + B.shape[1]:]


def predict(model, rec, x0="zero", scheme="euler"):
    """Run the model's one-step-ahead Kalman predictor over a record.

    With ``R = D D^T`` the Euler predictor is::

        x[k+1] = x[k] + (A x[k] + B a[k]) Ts + L R^-1 e[k] Ts
        yhat[k] = C x[k] + D a[k],   e[k] = ydot[k] - yhat[k]

    which matches the simulator step for step, so the true model on its
    own record returns the injected noise. ``scheme="zoh"`` integrates the
    same dynamics exactly over each hold interval.

    Parameters
    ----------
    model : object with ``A, B, C, D`` and optionally ``L``
        ``C`` and ``D`` are the measured rows.
    rec : MeasurementRecord
    x0 : {"zero", "estimate"} or array_like
        ``"estimate"`` fits the initial state by least squares on the
        residuals (the residual is affine in the initial state).
    scheme : {"euler", "zoh"}
    """
    A, B, C, D, L = _model_arrays(model)
    check_hurwitz(A)
    alpha, y = rec.alpha, rec.ydot
    if B.shape[1] != alpha.shape[1] or C.shape[0] != y.shape[1] \
            or D.shape != (y.shape[1], alpha.shape[1]) or L.shape != (A.shape[0], C.shape[0]):
        raise DimensionMismatch("model and record dimensions disagree")
    R = D @ D.T
    G = L @ np.linalg.inv(R)
    F, Gu, Ge = _transition(A, B, G, rec.Ts, scheme)
    N, m = y.shape
    nx = A.shape[0]
    direct = alpha @ D.T
    drive = alpha @ Gu.T

    if isinstance(x0, str):
        if x0 not in ("zero", "estimate"):
            raise ValueError(f"unknown initial-state option {x0!r}")
        x_init = np.zeros(nx)
    else:
        x_init = np.asarray(x0, dtype=float)

    def run(x):
        E = np.empty((N, m))
        for k in range(N):
            e = y[k] - direct[k] - C @ x
            E[k] = e
            x = F @ x + drive[k] + Ge @ e
        return E

    E = run(x_init)
    if isinstance(x0, str) and x0 == "estimate":
        # residual sensitivity: d e[k] / d x0 = -C (F - Ge C)^k
        Fc = F - Ge @ C
        Psi = np.empty((N, m, nx))
        P = np.eye(nx)
        for k in range(N):
            Psi[k] = C @ P
            P = Fc @ P
        x_init = np.linalg.lstsq(Psi.reshape(N * m, nx), E.reshape(-1), rcond=None)[0]
        E = E - (Psi @ x_init)
    d = parameter_count(nx // 2, m)
    return ResidualSet(E, y - E, N, d, direct, x_init)


def fpe(res):
    """Akaike final prediction error ``det(E^T E / N) (1 + d/N) / (1 - d/N)``."""
    N, d = res.N, res.d
    if N <= d:
        raise DegenerateN(f"N = {N} does not exceed the parameter count d = {d}")
    S = res.e.T @ res.e / N
    return float(np.linalg.det(S) * (1 + d / N) / (1 - d / N))


def fit_percent(res, rec, known_feedthrough=True):
    """Normalized-RMS percentage fit per output channel.

    ``100 (1 - ||e_l|| / ||y_l - mean(y_l)||)``. With ``known_feedthrough``
    the reference output is the measured one minus the known ``D a`` term,
    which neither model nor data can be wrong about.
    """
    y = rec.ydot - res.direct if known_feedthrough else rec.ydot
    dev = np.sqrt(np.sum((y - y.mean(axis=0)) ** 2, axis=0))
    if np.any(dev <= 0):
        raise ZeroVarianceChannel("an output channel is constant")
    return 100.0 * (1.0 - np.sqrt(np.sum(res.e ** 2, axis=0)) / dev)


def autocorr(res, max_lag):
    """Biased residual autocorrelation per channel, lags 0..max_lag.

    Returns ``(rho, bound)`` with ``rho`` of shape (m, max_lag + 1) and the
    99% two-sided band ``bound = 2.5758 / sqrt(N)``.
    """
    e = np.asarray(res.e if hasattr(res, "e") else res, dtype=float)
    if e.ndim == 1:
        e = e[:, None]
    N = e.shape[0]
    if N <= max_lag:
        raise InsufficientData(f"N = {N} must exceed max_lag = {max_lag}")
    den = np.sum(e ** 2, axis=0)
    rho = np.array([[np.dot(e[:N - t, l], e[t:, l]) for t in range(max_lag + 1)]
                    for l in range(e.shape[1])]) / den[:, None]
    return rho, CONFIDENCE_Z99 / np.sqrt(N)


def cross_corr(res, inputs, max_lag):
    """Normalized residual/input cross-correlation for lags -max_lag..max_lag.

    ``r[l, j, tau] = sum_k e_l[k + tau] u_j[k] / sqrt(sum e_l^2 sum u_j^2)``,
    so a residual that copies an input delayed by s samples peaks at
    ``tau = s``. Returns ``(r, lags, bound)``.
    """
    e = np.asarray(res.e if hasattr(res, "e") else res, dtype=float)
    u = np.asarray(getattr(inputs, "samples", inputs), dtype=float)
    if e.ndim == 1:
        e = e[:, None]
    if u.ndim == 1:
        u = u[:, None]
    N = e.shape[0]
    if u.shape[0] != N:
        raise DimensionMismatch("residuals and inputs differ in length")
    if N <= max_lag:
        raise InsufficientData(f"N = {N} must exceed max_lag = {max_lag}")
    lags = np.arange(-max_lag, max_lag + 1)
    norm = np.sqrt(np.outer(np.sum(e ** 2, axis=0), np.sum(u ** 2, axis=0)))
    r = np.empty((e.shape[1], u.shape[1], lags.size))
    for i, tau in enumerate(lags):
        if tau >= 0:
            r[:, :, i] = e[tau:].T @ u[:N - tau]
        else:
            r[:, :, i] = e[:N + tau].T @ u[-tau:]
    with np.errstate(invalid="ignore", divide="ignore"):
        r = np.where(norm[:, :, None] > 0, r / norm[:, :, None], 0.0)
    return r, lags, CONFIDENCE_Z99 / np.sqrt(N)


def fraction_inside(corr, bound, axis=-1):
    """Share of correlation values with magnitude within the band."""
    return np.mean(np.abs(corr) <= bound, axis=axis)
