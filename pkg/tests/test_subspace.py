import numpy as np
import pytest

from qsysid.errors import InsufficientData, LogUndefined, UnstableEstimate
from qsysid.model import markov_parameters, quadrature_select, random_realizable
from qsysid.simulate import (InputSignal, MeasurementRecord, generate_prbs, simulate_homodyne,
                             split_record)
from qsysid.subspace import (HankelConfig, build_hankel, c2d, d2c, n4sid_estimate,
                             relative_energy, remove_feedthrough)


def test_c2d_d2c_roundtrip(rng):
    A = np.array([[-5.0, 20.0], [-20.0, -5.0]])
    B = rng.standard_normal((2, 3))
    Ad, Bd = c2d(A, B, 0.01)
    Ac, Bc = d2c(Ad, Bd, 0.01)
    assert np.allclose(Ac, A, atol=1e-9) and np.allclose(Bc, B, atol=1e-9)


def test_d2c_negative_real_eigenvalue():
    with pytest.raises(LogUndefined):
        d2c(np.diag([-0.5, 0.5]), np.ones((2, 1)), 0.1)


def test_noiseless_identification_recovers_markov_parameters(cavity):
    inp = generate_prbs(6, 0.01, 20.0, 10.0, 1)
    rec = simulate_homodyne(cavity, "q", inp, 1, noise=False)
    sub = quadrature_select(cavity, "q")
    ce = n4sid_estimate(rec, 1, sub.D_meas)
    # Euler conversion inverts the simulator's Euler step exactly
    Ad, Bd = np.eye(2) + 0.01 * cavity.A, 0.01 * cavity.B
    true = markov_parameters(Ad, Bd, sub.C_meas, 10)
    est = markov_parameters(ce.A_d, ce.B_d, ce.C_hat, 10)
    assert np.allclose(est, true, atol=1e-6 * np.abs(true).max())
    assert np.allclose(np.sort_complex(np.linalg.eigvals(ce.A_hat)),
                       np.sort_complex(np.linalg.eigvals(cavity.A)), atol=1e-5)


def test_identified_model_close_at_high_amplitude(cavity_record, cavity):
    est, _ = split_record(cavity_record, 20.0, 30.0, 30.0)
    ce = n4sid_estimate(est, 1, quadrature_select(cavity, "q").D_meas)
    lam = np.sort_complex(np.linalg.eigvals(ce.A_hat))
    assert np.allclose(lam, np.sort_complex(np.linalg.eigvals(cavity.A)), atol=0.5)
    assert ce.stable
    # sampled white noise of intensity R = I has variance R / Ts per sample
    assert np.allclose(ce.innov_cov * est.Ts, np.eye(3), atol=0.1)


def test_order_one_dominates_relative_energy(cavity_record, cavity):
    est, _ = split_record(cavity_record, 20.0, 30.0, 30.0)
    ce = n4sid_estimate(est, 1, quadrature_select(cavity, "q").D_meas)
    score = relative_energy(ce.sing_values)
    assert score[0] - score[1] > 2.0
    assert np.all(np.diff(score[:5]) <= 0)


def test_weightings_agree_on_dynamics(cavity_record, cavity):
    est, _ = split_record(cavity_record, 20.0, 30.0, 30.0)
    D = quadrature_select(cavity, "q").D_meas
    eigs = [np.sort_complex(np.linalg.eigvals(
        n4sid_estimate(est, 1, D, HankelConfig(weighting=w)).A_hat))
        for w in ("moesp", "cva", "n4sid")]
    assert np.allclose(eigs[0], eigs[1], atol=0.5) and np.allclose(eigs[0], eigs[2], atol=0.5)


def test_insufficient_data(cavity):
    rec = simulate_homodyne(cavity, "q", generate_prbs(6, 0.01, 0.2, 1.0, 0), 0)
    with pytest.raises(InsufficientData):
        n4sid_estimate(rec, 1, quadrature_select(cavity, "q").D_meas)


def test_strict_flags_unstable(monkeypatch, cavity):
    import qsysid.subspace as sub_mod
    monkeypatch.setattr(sub_mod, "is_hurwitz", lambda A: False)
    rec = simulate_homodyne(cavity, "q", generate_prbs(6, 0.01, 5.0, 10.0, 0), 0)
    D = quadrature_select(cavity, "q").D_meas
    assert not n4sid_estimate(rec, 1, D).stable
    with pytest.raises(UnstableEstimate) as info:
        n4sid_estimate(rec, 1, D, strict=True)
    assert info.value.estimate is not None


def test_hankel_hand_example():
    x = np.arange(1.0, 6.0)
    Up, Uf, Zp, Zf = build_hankel(x, x, 2)
    assert np.array_equal(Up, [[1, 2], [2, 3]]) and np.array_equal(Uf, [[3, 4], [4, 5]])
    assert np.array_equal(Zp, Up)
    assert build_hankel(np.arange(4.0), np.arange(4.0), 2)[0].shape == (2, 1)


def test_remove_feedthrough_cases(cavity):
    inp = generate_prbs(6, 0.01, 1.0, 1.0, 0)
    D = quadrature_select(cavity, "q").D_meas
    rec = MeasurementRecord("q", inp, inp.samples @ D.T, 0.01, 0)
    assert np.allclose(remove_feedthrough(rec, D), 0.0)
    zero = InputSignal(np.zeros_like(inp.samples), 0.01, 0.0, 0)
    y = np.random.default_rng(0).standard_normal((len(inp), 3))
    assert np.array_equal(remove_feedthrough(MeasurementRecord("q", zero, y, 0.01, 0), D), y)


def test_relative_energy_definition():
    score = relative_energy([10.0, 10.0, 0.1, 0.1])
    assert score[0] - score[1] == pytest.approx(4.0)
    assert np.allclose(relative_energy([2.0, 2.0, 2.0, 2.0]), np.log10(8.0))


def test_d2c_oracles(cavity):
    Ts = 0.01
    Ac, _ = d2c(np.exp(-Ts) * np.eye(2), np.eye(2), Ts)
    assert np.allclose(Ac, -np.eye(2))
    Ad, Bd = c2d(cavity.A, np.eye(2), Ts)
    assert np.allclose(d2c(Ad, Bd, Ts)[0], cavity.A, atol=1e-8)
    Ad, Bd = c2d(-np.eye(2), np.eye(2), Ts)
    assert np.allclose(Bd, (1 - np.exp(-Ts)) * np.eye(2))
    assert np.allclose(d2c(Ad, Bd, Ts)[1], np.eye(2))


def test_random_system_noiseless_markov(rng):
    sys_ = random_realizable(1, 2, rng, margin=1.0)
    sub = quadrature_select(sys_, "q")
    inp = generate_prbs(4, 0.01, 20.0, 10.0, 5)
    rec = simulate_homodyne(sys_, "q", inp, 5, noise=False)
    ce = n4sid_estimate(rec, 1, sub.D_meas)
    true = markov_parameters(np.eye(2) + 0.01 * sys_.A, 0.01 * sys_.B, sub.C_meas, 5)
    assert np.abs(markov_parameters(ce.A_d, ce.B_d, ce.C_hat, 5) - true).max() <= 1e-4


def test_cavity_estimate_similar_to_truth(cavity_record, cavity):
    est, _ = split_record(cavity_record, 20.0, 30.0, 30.0)
    ce = n4sid_estimate(est, 1, quadrature_select(cavity, "q").D_meas)
    lam = np.linalg.eigvals(ce.A_hat)
    true = np.linalg.eigvals(cavity.A)
    assert np.all(np.abs(np.sort_complex(lam) - np.sort_complex(true)) <= 0.05 * np.abs(true))
    # similarity fitted on the observability matrices [C; C A]
    C = quadrature_select(cavity, "q").C_meas
    O_hat = np.vstack([ce.C_hat, ce.C_hat @ ce.A_hat])
    V = np.linalg.lstsq(O_hat, np.vstack([C, C @ cavity.A]), rcond=None)[0]
    A_sim = np.linalg.solve(V, ce.A_hat @ V)
    assert np.abs(A_sim - cavity.A).max() <= 0.1 * np.linalg.norm(cavity.A, 2)


def test_dominance_gap_grows_with_amplitude(cavity):
    D = quadrature_select(cavity, "q").D_meas
    gaps, first = [], []
    for omega in (10.0, 100.0):
        inp = generate_prbs(6, 0.01, 50.0, omega / 0.1, 1)
        est, _ = split_record(simulate_homodyne(cavity, "q", inp, 1), 20.0, 30.0, 0.0,
                              require_validation=False)
        score = relative_energy(n4sid_estimate(est, 1, D).sing_values)
        gaps.append(score[0] - score[1])
        first.append(score[0])
    assert gaps[1] > gaps[0] > 0 and first[1] > first[0]
