"""Acceptance checks. Each test prints one PASS/FAIL line; the lines are
repeated in the terminal summary under "acceptance criteria"."""

import numpy as np
import pytest

from conftest import OMEGAS, QUADRATURES, SEEDS, report
from qsysid.errors import NoFeasiblePointFound
from qsysid.model import quadrature_select, random_realizable, realizability_residual
from qsysid.numerics import kalman_gain, solve_filter_are, solve_lyapunov, symplectic_form
from qsysid.projection import (Target, bisection_identify, eliminate, reduced_loss_and_grad,
                               reduced_projection)

RESIDUAL_TOL = 1e-6
DET_TOL = 1e-10


def _median(exp, key, quad, omega):
    return np.median([exp[(quad, omega, s)][key] for s in SEEDS], axis=0)


def test_criterion_01_cavity_realizability(cavity):
    s5, s3, s2 = 2.2361, 1.7321, 1.4142
    A = np.array([[-5.0, 20.0], [-20.0, -5.0]])
    B = np.array([[-s5, 0, -s3, 0, -s2, 0], [0, -s5, 0, -s3, 0, -s2]])
    C = -B.T
    matches = all(np.allclose(np.round(X, 4), Y, atol=1e-12)
                  for X, Y in ((cavity.A, A), (cavity.B, B), (cavity.C, C),
                               (cavity.D, np.eye(6))))
    J = symplectic_form(1)
    r_full = realizability_residual(cavity.A, cavity.B, cavity.C, cavity.D, J)
    r_sub = [realizability_residual(cavity.A, cavity.B, sub.C_meas, sub.D_meas, J)
             for sub in (quadrature_select(cavity, q) for q in "qp")]
    worst = max(max(r) for r in [r_full] + r_sub)
    ok = report(1, matches and worst <= 1e-12,
                f"matrices match to 4 dp: {matches}; max residual {worst:.2e} (tol 1e-12)")
    assert ok


def test_criterion_02_true_model_filter(cavity):
    sub = quadrature_select(cavity, "q")
    Q = solve_filter_are(cavity.A, cavity.B, sub.C_meas, sub.D_meas)
    L = kalman_gain(Q, cavity.B, sub.C_meas, sub.D_meas)
    eq, el = np.abs(Q - np.eye(2)).max(), np.abs(L).max()
    ok = report(2, eq <= 1e-8 and el <= 1e-8,
                f"max|Q - I| = {eq:.2e}, max|L| = {el:.2e} (tol 1e-8)")
    assert ok


def _kron_lyapunov(A, W):
    d = A.shape[0]
    K = np.kron(np.eye(d), A) + np.kron(A, np.eye(d))
    return np.linalg.solve(K, -W.flatten("F")).reshape((d, d), order="F")


def test_criterion_03_lyapunov_oracle():
    rng = np.random.default_rng(3)
    worst_err, worst_skew = 0.0, 0.0
    for k in range(100):
        d = 2 * (1 + k % 4)
        M = rng.standard_normal((d, d))
        A = M - (np.max(np.linalg.eigvals(M).real) + rng.uniform(0.1, 2.0)) * np.eye(d)
        W = rng.standard_normal((d, d))
        X = solve_lyapunov(A, W)
        ref = _kron_lyapunov(A, W)
        worst_err = max(worst_err, np.abs(X - ref).max() / max(1.0, np.abs(ref).max()))
        S = W - W.T
        Xs = solve_lyapunov(A, S)
        worst_skew = max(worst_skew, np.abs(Xs + Xs.T).max() / max(1.0, np.abs(Xs).max()))
    ok = report(3, worst_err <= 1e-10 and worst_skew <= 1e-10,
                f"max rel error {worst_err:.2e}, max skew defect {worst_skew:.2e} "
                f"(100 instances, tol 1e-10)")
    assert ok


def test_criterion_04_fit_and_fpe_trends(cavity_experiment):
    exp = cavity_experiment
    lines, ok = [], True
    for q in QUADRATURES:
        fits = {w: _median(exp, "fit", q, w) for w in OMEGAS}
        hi = np.all(fits[100.0] >= 85.0)
        lo = np.all((fits[10.0] >= 30.0) & (fits[10.0] <= 70.0))
        mono = np.all(np.diff(np.array([fits[w] for w in OMEGAS]), axis=0) > 0)
        fpes = [_median(exp, "fpe", q, w) for w in OMEGAS]
        fpe_ok = all(0.5e6 <= f <= 2.5e6 for f in fpes)
        ok &= bool(hi and lo and mono and fpe_ok)
        lines.append(f"{q}: fit(10)={np.round(fits[10.0], 1).tolist()} "
                     f"fit(50)={np.round(fits[50.0], 1).tolist()} "
                     f"fit(100)={np.round(fits[100.0], 1).tolist()} "
                     f"FPE={[f'{f:.3e}' for f in fpes]}")
    assert report(4, ok, "; ".join(lines))


def test_criterion_05_projection_quality(cavity_experiment):
    exp = cavity_experiment
    ok, parts, worst_res, min_det = True, [], 0.0, np.inf
    for q in QUADRATURES:
        g100 = _median(exp, "gamma", q, 100.0)
        g10 = _median(exp, "gamma", q, 10.0)
        ok &= bool(g100 <= 0.01 and g100 < g10)
        parts.append(f"{q}: median gamma(100)={g100:.3g}, gamma(10)={g10:.3g}")
    for unit in exp.values():
        r = unit["lifted"].residuals
        worst_res = max(worst_res, r["I"], r["II"])
        min_det = min(min_det, abs(r["det_Z"]))
    ok &= worst_res <= RESIDUAL_TOL and min_det > DET_TOL
    parts.append(f"max residual {worst_res:.2e}, min |det Z| {min_det:.3g}")
    assert report(5, ok, "; ".join(parts))


def test_criterion_06_near_realizability(cavity_experiment):
    exp = cavity_experiment
    worst = max(exp[(q, 100.0, s)]["reduced_loss"] for q in QUADRATURES for s in SEEDS)
    ok = report(6, worst <= 0.05, f"max reduced loss at Omega=100: {worst:.3g} (tol 0.05)")
    assert ok


def test_criterion_07_gain_smallness(cavity_experiment):
    exp = cavity_experiment
    worst = max(np.abs(exp[(q, 100.0, s)]["canonical"].L).max()
                for q in QUADRATURES for s in SEEDS)
    ok = report(7, worst <= 0.1, f"max |L| entry at Omega=100: {worst:.3g} (tol 0.1)")
    assert ok


def test_criterion_08_residual_diagnostics(cavity_experiment):
    exp = cavity_experiment
    units = [exp[(q, 100.0, s)] for q in QUADRATURES for s in SEEDS]
    auto = min(u["auto_inside"].min() for u in units)
    cross = min(u["cross_inside"].min() for u in units)
    ok = report(8, auto >= 0.95 and cross >= 0.95,
                f"worst channel inside band: autocorr {auto:.3f}, crosscorr {cross:.3f} "
                f"(tol 0.95)")
    assert ok


def _perturbed_target(rng, m, sigma=0.1):
    # perturbation of a realizable system, redrawn until A_hat keeps a margin
    while True:
        sys_ = random_realizable(1, m, rng, margin=0.5)
        sub = quadrature_select(sys_, "q")
        tgt = Target(sys_.A + sigma * rng.standard_normal(sys_.A.shape),
                     sys_.B + sigma * rng.standard_normal(sys_.B.shape),
                     sub.C_meas + sigma * rng.standard_normal(sub.C_meas.shape))
        if np.max(np.linalg.eigvals(tgt.A).real) < -0.2:
            return tgt, sub.D_meas


def test_criterion_09_solver_cross_validation():
    rng = np.random.default_rng(9)
    agree, worst_res, min_det, count = 0, 0.0, np.inf, 50
    for k in range(count):
        tgt, D = _perturbed_target(rng, 1 + k % 3)
        red = reduced_projection(tgt, D)
        try:
            lifted = bisection_identify(tgt, D, gamma0=1.5 * red.loss, rounds=1,
                                        conditioning=None, fallback=False)
            lifted_ok = lifted.loss <= 1.5 * red.loss * (1 + 1e-6)
        except NoFeasiblePointFound:
            lifted, lifted_ok = None, False
        red_ok = red.loss <= 1.5 * red.loss
        agree += lifted_ok == red_ok
        for out in (red, lifted):
            if out is not None:
                worst_res = max(worst_res, out.residuals["I"], out.residuals["II"])
                min_det = min(min_det, abs(out.residuals["det_Z"]))
    ok = report(9, agree == count and worst_res <= RESIDUAL_TOL and min_det > DET_TOL,
                f"agreement {agree}/{count} at 1.5x reduced loss; max residual "
                f"{worst_res:.2e}; min |det Z| {min_det:.3g}")
    assert ok


def test_criterion_10_gradient_check():
    rng = np.random.default_rng(10)
    worst, h = 0.0, 1e-6
    for k in range(20):
        m = 1 + k % 3
        tgt, D = _perturbed_target(rng, m)
        A = tgt.A + 0.05 * rng.standard_normal(tgt.A.shape)
        B = tgt.B + 0.05 * rng.standard_normal(tgt.B.shape)
        eliminate(A, B, D)  # feasible point: Hurwitz A, invertible Z
        _, gA, gB, _, _ = reduced_loss_and_grad(A, B, tgt, D)
        grad = np.concatenate([gA.ravel(), gB.ravel()])
        theta = np.concatenate([A.ravel(), B.ravel()])
        fd = np.empty_like(theta)
        for i in range(theta.size):
            e = np.zeros_like(theta)
            e[i] = h
            fp = reduced_loss_and_grad((theta + e)[:4].reshape(2, 2),
                                       (theta + e)[4:].reshape(B.shape), tgt, D)[0]
            fm = reduced_loss_and_grad((theta - e)[:4].reshape(2, 2),
                                       (theta - e)[4:].reshape(B.shape), tgt, D)[0]
            fd[i] = (fp - fm) / (2 * h)
        worst = max(worst, np.linalg.norm(grad - fd) / max(np.linalg.norm(fd), 1e-12))
    ok = report(10, worst <= 1e-4, f"max relative error {worst:.2e} over 20 points (tol 1e-4)")
    assert ok


@pytest.mark.parametrize("m", [1, 2, 3])
def test_lifted_not_below_reduced_minimum(m):
    # below the reduced minimum no realizable model exists; the lifted
    # search must not claim one
    rng = np.random.default_rng(90 + m)
    tgt, D = _perturbed_target(rng, m)
    red = reduced_projection(tgt, D)
    with pytest.raises(NoFeasiblePointFound):
        bisection_identify(tgt, D, gamma0=0.5 * red.loss, rounds=1, conditioning=None,
                           fallback=False)
