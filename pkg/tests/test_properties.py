import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st

from qsysid.model import random_realizable, realizability_residual, similarity_transform
from qsysid.numerics import skew_canonical_factor, solve_lyapunov, symplectic_form
from qsysid.projection import Target, loss, reduced_projection
from qsysid.simulate import InputSignal, MeasurementRecord, split_record
from qsysid.validation import autocorr

SETTINGS = settings(max_examples=40, deadline=None, derandomize=True)
seeds = st.integers(0, 2 ** 32 - 1)


def _hurwitz(rng, d):
    M = rng.standard_normal((d, d))
    return M - (np.max(np.linalg.eigvals(M).real) + rng.uniform(0.1, 3.0)) * np.eye(d)


@SETTINGS
@given(seeds, st.integers(1, 4))
def test_lyapunov_preserves_skew_and_symmetry(seed, n):
    rng = np.random.default_rng(seed)
    A = _hurwitz(rng, 2 * n)
    W = rng.standard_normal((2 * n, 2 * n))
    X = solve_lyapunov(A, W - W.T)
    Y = solve_lyapunov(A, W + W.T)
    scale = 1.0 + np.abs(X).max() + np.abs(Y).max()
    assert np.abs(X + X.T).max() <= 1e-10 * scale
    assert np.abs(Y - Y.T).max() <= 1e-10 * scale


@SETTINGS
@given(seeds, st.integers(1, 3), st.integers(1, 3))
def test_realizability_invariant_under_similarity(seed, n, m):
    rng = np.random.default_rng(seed)
    sys_ = random_realizable(n, m, rng)
    V = rng.standard_normal((2 * n, 2 * n)) + 3 * np.eye(2 * n)
    if np.linalg.cond(V) > 1e6:
        return
    A, B, C = similarity_transform(sys_.A, sys_.B, sys_.C, V)
    r = realizability_residual(A, B, C, sys_.D, V @ symplectic_form(n) @ V.T)
    assert max(r) <= 1e-8 * (1 + np.linalg.norm(A) * np.linalg.norm(V) ** 2)


@SETTINGS
@given(seeds, st.integers(1, 3))
def test_skew_factor_reconstructs(seed, n):
    rng = np.random.default_rng(seed)
    M = rng.standard_normal((2 * n, 2 * n))
    Z = M - M.T
    if abs(np.linalg.det(Z)) < 1e-6:
        return
    V = skew_canonical_factor(Z)
    assert np.allclose(V @ symplectic_form(n) @ V.T, Z, atol=1e-9)


@SETTINGS
@given(seeds, st.floats(0.1, 100.0))
def test_loss_invariant_under_conditioning(seed, t):
    rng = np.random.default_rng(seed)
    tgt = Target(*(rng.standard_normal(s) for s in ((2, 2), (2, 4), (2, 2))))
    A, B, C = (rng.standard_normal(s) for s in ((2, 2), (2, 4), (2, 2)))
    assert np.isclose(loss(A, t * B, C / t, tgt.scaled(t)), loss(A, B, C, tgt), rtol=1e-10)


@settings(max_examples=15, deadline=None, derandomize=True)
@given(seeds, st.integers(1, 3))
def test_reduced_projection_no_worse_than_truth(seed, m):
    rng = np.random.default_rng(seed)
    sys_ = random_realizable(1, m, rng, margin=0.5)
    C, D = sys_.C[0::2], sys_.D[0::2]
    noisy = Target(sys_.A + 0.05 * rng.standard_normal((2, 2)),
                   sys_.B + 0.05 * rng.standard_normal(sys_.B.shape),
                   C + 0.05 * rng.standard_normal(C.shape))
    if np.max(np.linalg.eigvals(noisy.A).real) >= -0.1:
        return
    res = reduced_projection(noisy, D)
    assert res.loss <= loss(sys_.A, sys_.B, C, noisy) + 1e-10
    assert max(res.residuals["I"], res.residuals["II"]) <= 1e-8


@SETTINGS
@given(st.integers(50, 400), st.floats(0.0, 0.5), st.floats(0.01, 0.5), st.floats(0.01, 0.5))
def test_split_partitions_in_order(N, burn, est, val):
    Ts = 0.01
    total = N * Ts
    b, e, v = burn * total, est * total, val * total
    rec = MeasurementRecord("q", InputSignal(np.arange(N, dtype=float)[:, None], Ts, 1.0, 0),
                            np.arange(N, dtype=float)[:, None], Ts, 0)
    try:
        first, second = split_record(rec, b, e, v)
    except Exception:
        return
    assert first.ydot[-1, 0] + 1 == second.ydot[0, 0]
    assert first.start == int(np.floor(b / Ts + 1e-9))


@SETTINGS
@given(seeds, st.integers(60, 500))
def test_autocorr_bounded(seed, N):
    e = np.random.default_rng(seed).standard_normal((N, 2))
    rho, bound = autocorr(e, 50)
    assert np.allclose(rho[:, 0], 1.0)
    assert np.all(np.abs(rho) <= 1.0 + 1e-12)
    assert bound > 0
