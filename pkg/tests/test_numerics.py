import numpy as np
import pytest
import scipy.linalg

from qsysid.errors import (Blowup, DimensionMismatch, NotHurwitz, NotSkew, SingularNoise,
                           SingularZ)
from qsysid.model import quadrature_select, random_realizable
from qsysid.numerics import (integrate_rde, is_hurwitz, kalman_gain, project_psd_rank,
                             riccati_rhs, skew_canonical_factor, solve_filter_are,
                             solve_lyapunov, symplectic_form)


def _hurwitz(rng, d, shift=0.5):
    M = rng.standard_normal((d, d))
    return M - (np.max(np.linalg.eigvals(M).real) + shift) * np.eye(d)


def test_symplectic_form_structure():
    J = symplectic_form(3)
    assert J.shape == (6, 6)
    assert np.allclose(J @ J, -np.eye(6))
    assert np.allclose(J.T, -J)
    assert J[0, 1] == 1 and J[1, 0] == -1


@pytest.mark.parametrize("d", [2, 4, 8, 12, 16])
def test_lyapunov_matches_scipy(rng, d):
    A, W = _hurwitz(rng, d), rng.standard_normal((d, d))
    X = solve_lyapunov(A, W)
    assert np.allclose(X, scipy.linalg.solve_continuous_lyapunov(A, -W), atol=1e-10)
    assert np.linalg.norm(A @ X + X @ A.T + W) <= 1e-9 * max(1.0, np.linalg.norm(X))


def test_lyapunov_symmetric_in_symmetric_out(rng):
    A = _hurwitz(rng, 6)
    W = rng.standard_normal((6, 6))
    X = solve_lyapunov(A, W + W.T)
    assert np.allclose(X, X.T, atol=1e-12)


def test_lyapunov_rejects_unstable_and_mismatched():
    with pytest.raises(NotHurwitz):
        solve_lyapunov(np.eye(2), np.eye(2))
    with pytest.raises(DimensionMismatch):
        solve_lyapunov(-np.eye(2), np.eye(3))


def test_is_hurwitz_boundary():
    assert is_hurwitz(-np.eye(2))
    assert not is_hurwitz(np.array([[0.0, 1.0], [-1.0, 0.0]]))


def test_filter_are_random_realizable_residual(rng):
    # generic realizable systems have a nonzero gain; check the equation itself
    for m in (1, 2, 3):
        sys_ = random_realizable(1, m, rng, margin=0.2)
        sub = quadrature_select(sys_, "p")
        Q = solve_filter_are(sys_.A, sys_.B, sub.C_meas, sub.D_meas)
        assert np.allclose(Q, Q.T)
        assert np.linalg.norm(riccati_rhs(Q, sys_.A, sys_.B, sub.C_meas, sub.D_meas)) < 1e-9
        L = kalman_gain(Q, sys_.B, sub.C_meas, sub.D_meas)
        Ac = sys_.A - L @ np.linalg.solve(sub.D_meas @ sub.D_meas.T, sub.C_meas)
        assert is_hurwitz(Ac)


def test_filter_are_matches_scipy_care(rng):
    A = _hurwitz(rng, 4)
    B = rng.standard_normal((4, 4))
    C = rng.standard_normal((2, 4))
    D = np.hstack([np.eye(2), np.zeros((2, 2))])
    Q = solve_filter_are(A, B, C, D)
    # same equation, scipy's cross-term form on the dual problem
    ref = scipy.linalg.solve_continuous_are(A.T, C.T, B @ B.T, D @ D.T, s=B @ D.T)
    assert np.allclose(Q, ref, atol=1e-8)


def test_filter_are_cavity_identity(cavity):
    for q in "qp":
        sub = quadrature_select(cavity, q)
        Q = solve_filter_are(cavity.A, cavity.B, sub.C_meas, sub.D_meas)
        assert np.allclose(Q, np.eye(2), atol=1e-10)


def test_filter_are_singular_noise(cavity):
    sub = quadrature_select(cavity, "q")
    with pytest.raises(SingularNoise):
        solve_filter_are(cavity.A, cavity.B, sub.C_meas, 0.0 * sub.D_meas)


def test_filter_are_requires_hurwitz():
    A = np.array([[0.0, 1.0], [-1.0, 0.0]])
    with pytest.raises(NotHurwitz):
        solve_filter_are(A, np.zeros((2, 2)), np.zeros((1, 2)), np.array([[1.0, 0.0]]))


def test_rde_converges_to_are(cavity):
    sub = quadrature_select(cavity, "q")
    _, Q = integrate_rde(np.zeros((2, 2)), cavity.A, cavity.B, sub.C_meas, sub.D_meas, 5.0, 1e-3)
    assert np.allclose(Q[-1], np.eye(2), atol=1e-8)
    assert np.all(np.linalg.eigvalsh(Q[1:]) >= -1e-12)


def test_rde_blowup_detected():
    A = np.array([[50.0, 0.0], [0.0, 50.0]])
    with pytest.raises(Blowup):
        integrate_rde(np.eye(2), A, np.eye(2), np.zeros((1, 2)), np.array([[1.0, 0.0]]),
                      10.0, 1e-2)


@pytest.mark.parametrize("n", [1, 2, 3])
def test_skew_canonical_factor(rng, n):
    M = rng.standard_normal((2 * n, 2 * n))
    Z = M - M.T
    V = skew_canonical_factor(Z)
    assert np.allclose(V @ symplectic_form(n) @ V.T, Z, atol=1e-10)


def test_skew_canonical_factor_errors():
    with pytest.raises(NotSkew):
        skew_canonical_factor(np.eye(2))
    with pytest.raises(SingularZ):
        skew_canonical_factor(np.zeros((2, 2)))


def test_project_psd_rank_is_best_approximation(rng):
    M = rng.standard_normal((6, 6))
    M = M + M.T
    P = project_psd_rank(M, 2)
    w = np.linalg.eigvalsh(P)
    assert np.sum(w > 1e-10) <= 2 and np.all(w > -1e-10)
    lam, U = np.linalg.eigh(M)
    keep = np.clip(lam[-2:], 0, None)
    assert np.allclose(P, (U[:, -2:] * keep) @ U[:, -2:].T)
