"""Synthetic single-shot homodyne records.

Data come from the steady-state quantum Kalman filter in innovation form,
driven by a binary +/-Omega coherent input, integrated by Euler-Maruyama
at the sampling time (optionally with sub-steps).
"""

import json
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import DimensionMismatch, InsufficientData, NonPositiveDuration
from .model import model_hash, quadrature_select
from .numerics import check_hurwitz, kalman_gain, solve_filter_are

__all__ = [
    "InputSignal",
    "MeasurementRecord",
    "streams",
    "generate_prbs",
    "simulate_homodyne",
    "split_record",
    "save_record",
    "load_record",
]

_INPUT_STREAM, _NOISE_STREAM = 0, 1


def streams(seed):
    """Independent generators ``(inputs, noise)`` derived from one seed."""
    children = np.random.SeedSequence(int(seed)).spawn(2)
    return tuple(np.random.Generator(np.random.PCG64(c)) for c in children)


@dataclass
class InputSignal:
    samples: np.ndarray  # (N, 2m)
    Ts: float
    amplitude: float
    seed: int

    def __len__(self):
        return self.samples.shape[0]


@dataclass
class MeasurementRecord:
    """One homodyne record: inputs ``alpha(k Ts)`` and outputs ``ydot(k Ts)``.

    ``xhat`` and ``noise`` are only filled in by the simulator (filter
    state path and the standard-normal draws) and are never serialized.
    ``start`` is the index of the first sample in the original record.
    """

    quadrature: str
    inputs: InputSignal
    ydot: np.ndarray  # (N, m)
    Ts: float
    seed: int
    start: int = 0
    xhat: Optional[np.ndarray] = None
    noise: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.Ts <= 0:
            raise ValueError("Ts must be positive")
        if self.ydot.shape[0] != self.inputs.samples.shape[0]:
            raise DimensionMismatch("inputs and outputs differ in length")

    def __len__(self):
        return self.ydot.shape[0]

    @property
    def alpha(self):
        return self.inputs.samples

    @property
    def t(self):
        return self.Ts * (self.start + np.arange(len(self)))


def generate_prbs(channels, Ts, duration, amplitude, seed):
    """Binary input with an independent fair +/-amplitude draw per sample and channel."""
    if duration <= 0 or Ts <= 0:
        raise NonPositiveDuration("duration and Ts must be positive")
    N = int(math.floor(duration / Ts + 1e-9))
    if N < 1:
        raise NonPositiveDuration("duration shorter than one sample")
    rng, _ = streams(seed)
    bits = rng.integers(0, 2, size=(N, channels))
    return InputSignal(amplitude * (2.0 * bits - 1.0), float(Ts), float(amplitude), int(seed))


def simulate_homodyne(sys, which, inputs, seed, x0=None, substeps=1, noise=True):
    """Simulate the measured output of one quadrature.

    With ``R = D D^T`` and standard-normal draws ``w``, each step is::

        x[k+1] = x[k] + (A x[k] + B a[k]) Ts + L sqrt(Ts) w[k]
        ydot[k] = C x[k] + D a[k] + R w[k] / sqrt(Ts)

    where ``L`` is the steady-state Kalman gain. With ``substeps = s`` the
    state moves in s Euler-Maruyama steps of ``Ts / s`` and the output noise
    is the summed increment over the sample interval.

    Parameters
    ----------
    sys : StateSpace
    which : {"q", "p"}
    inputs : InputSignal
    seed : int
        Seed of the measurement-noise stream.
    x0 : array_like, optional
        Initial filter state, zero by default.
    substeps : int
    noise : bool
        ``False`` suppresses the noise entirely (testing hook).
    """
    check_hurwitz(sys.A)
    sub = quadrature_select(sys, which)
    C, D = sub.C_meas, sub.D_meas
    A, B = sys.A, sys.B
    alpha = np.asarray(inputs.samples, dtype=float)
    if alpha.shape[1] != B.shape[1]:
        raise DimensionMismatch(f"input has {alpha.shape[1]} channels, B expects {B.shape[1]}")
    Q = solve_filter_are(A, B, C, D)
    L = kalman_gain(Q, B, C, D)
    R = D @ D.T
    Ts = float(inputs.Ts)
    N, d, m = alpha.shape[0], A.shape[0], C.shape[0]
    s = int(substeps)
    if s < 1:
        raise ValueError("substeps must be >= 1")
    h = Ts / s

    _, rng = streams(seed)
    w = rng.standard_normal((N, s, m))
    if not noise:
        w[:] = 0.0

    F = np.eye(d) + h * A
    drive = h * alpha @ B.T  # (N, d)
    kick = math.sqrt(h) * w @ L.T  # (N, s, d)
    x = np.zeros(d) if x0 is None else np.asarray(x0, dtype=float).copy()
    xs = np.empty((N, d))
    for k in range(N):
        xs[k] = x
        for j in range(s):
            x = F @ x + drive[k] + kick[k, j]
    dW = math.sqrt(h) * w.sum(axis=1)  # (N, m)
    ydot = xs @ C.T + alpha @ D.T + dW @ R.T / Ts
    w_out = w[:, 0, :] if s == 1 else dW / math.sqrt(Ts)
    return MeasurementRecord(which, inputs, ydot, Ts, int(seed), 0, xs, w_out)


def _index(t, Ts):
    return int(math.floor(t / Ts + 1e-9))


def split_record(rec, t_burn, t_est, t_val, require_validation=True):
    """Slice a record into estimation and validation parts.

    Slices are contiguous and ordered burn -> estimation -> validation; the
    burn-in is discarded. Boundaries are ``floor(t / Ts)`` sample indices.
    """
    if min(t_burn, t_est, t_val) < 0:
        raise ValueError("durations must be nonnegative")
    b = _index(t_burn, rec.Ts)
    e = _index(t_burn + t_est, rec.Ts)
    v = _index(t_burn + t_est + t_val, rec.Ts)
    if v > len(rec):
        raise InsufficientData(
            f"split needs {v} samples, record has {len(rec)}")
    if e <= b:
        raise InsufficientData("estimation slice is empty")
    if require_validation and v <= e:
        raise InsufficientData("validation slice is empty")
    return _slice(rec, b, e), _slice(rec, e, v)


def _slice(rec, i, j):
    inp = InputSignal(rec.inputs.samples[i:j], rec.inputs.Ts, rec.inputs.amplitude,
                      rec.inputs.seed)
    cut = lambda a: None if a is None else a[i:j]  # noqa: E731
    return MeasurementRecord(rec.quadrature, inp, rec.ydot[i:j], rec.Ts, rec.seed,
                             rec.start + i, cut(rec.xhat), cut(rec.noise))


# -- CSV / sidecar ----------------------------------------------------------

def save_record(rec, path, model=None):
    """Write ``path`` (CSV) and ``path + '.json'`` (metadata sidecar)."""
    k, m = rec.alpha.shape[1], rec.ydot.shape[1]
    header = ",".join(["t"] + [f"a{i + 1}" for i in range(k)]
                      + [f"ydot{i + 1}" for i in range(m)])
    data = np.column_stack([rec.t, rec.alpha, rec.ydot])
    np.savetxt(path, data, delimiter=",", header=header, comments="", fmt="%.17g")
    meta = {
        "quadrature": rec.quadrature,
        "Ts": rec.Ts,
        "Omega": rec.inputs.amplitude,
        "seed": rec.seed,
        "start": rec.start,
        "model_hash": None if model is None else model_hash(model),
    }
    with open(str(path) + ".json", "w") as fh:
        json.dump(meta, fh, indent=1)
        fh.write("\n")


def load_record(path):
    with open(path) as fh:
        header = fh.readline().strip().split(",")
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    with open(str(path) + ".json") as fh:
        meta = json.load(fh)
    k = sum(h.startswith("a") for h in header)
    alpha, ydot = data[:, 1:1 + k], data[:, 1 + k:]
    inp = InputSignal(alpha, meta["Ts"], meta["Omega"], meta["seed"])
    return MeasurementRecord(meta["quadrature"], inp, ydot, meta["Ts"], meta["seed"],
                             meta.get("start", 0))
