import math

import numpy as np
import pytest

from ebnsim import qstate
from ebnsim.errors import DegenerateStateError, InvalidChannelError, NegativeDurationError
from ebnsim.qstate import NoiseChannel

import oracles as O


def _random_bell_diag(rng):
    return rng.dirichlet(np.ones(4))


def _random_rho(rng, rank=4):
    a = rng.normal(size=(4, rank)) + 1j * rng.normal(size=(4, rank))
    r = a @ a.conj().T
    return r / np.trace(r)


# --- fidelity -----------------------------------------------------------------


def test_fidelity_of_phi_plus_is_one():
    assert qstate.fidelity_to_phi_plus(qstate.bell_state(0)) == pytest.approx(1.0, abs=1e-15)


def test_fidelity_of_maximally_mixed_is_quarter():
    s = qstate.PairState.from_rho(np.eye(4) / 4)
    assert qstate.fidelity_to_phi_plus(s) == pytest.approx(0.25, abs=1e-15)


def test_werner_w08_has_fidelity_085():
    w = 0.8
    rho = w * O.bell_diag_rho([1, 0, 0, 0]) + (1 - w) * np.eye(4) / 4
    s = qstate.PairState.from_rho(rho)
    assert qstate.fidelity_to_phi_plus(s) == pytest.approx(0.85, abs=1e-14)
    assert np.allclose(qstate.werner(0.85).rho, rho, atol=1e-14)


def test_bell_states_match_oracle_kets():
    for k in range(4):
        assert np.allclose(qstate.bell_state(k).rho, np.outer(O.BELL[k], O.BELL[k].conj()), atol=1e-15)


# --- noise --------------------------------------------------------------------


def test_zero_duration_is_identity(backend):
    rng = np.random.default_rng(3)
    s = qstate.PairState.from_rho(_random_rho(rng))
    for ch in (NoiseChannel.dephasing(1e6), NoiseChannel.depolarizing(1e6), NoiseChannel.t1t2(100.0, 50.0)):
        assert np.array_equal(qstate.apply_noise(s, "A", ch, 0.0).rho, s.rho)


def test_depolarizing_long_time_limit(backend):
    s = qstate.apply_noise(qstate.bell_state(0), "A", NoiseChannel.depolarizing(1e9), 1e6)
    assert qstate.fidelity_to_phi_plus(s) == pytest.approx(0.25, abs=1e-12)


def test_dephasing_500hz_1ms_matches_lindblad(backend):
    s = qstate.apply_noise(qstate.bell_state(0), "B", NoiseChannel.dephasing(500.0), 1e6)
    pz = (1 - math.exp(-0.5)) / 2
    assert qstate.fidelity_to_phi_plus(s) == pytest.approx(1 - pz, abs=1e-12)
    assert 1 - pz == pytest.approx(0.80327, abs=1e-5)
    ref = O.lindblad_evolve_1q(qstate.bell_state(0).rho, 1, [math.sqrt(500.0 / 2) * O.Z], 1e-3)
    assert np.allclose(s.rho, ref, atol=1e-12)


@pytest.mark.parametrize("qubit", [0, 1])
def test_t1t2_matches_lindblad(backend, qubit):
    rng = np.random.default_rng(11 + qubit)
    rho = _random_rho(rng)
    t1, t2, dt = 1000.0, 700.0, 350.0  # ns
    s = qstate.apply_noise(qstate.PairState.from_rho(rho), qubit, NoiseChannel.t1t2(t1, t2), dt)
    inv_tphi = 1 / t2 - 1 / (2 * t1)
    lower = np.array([[0, 1], [0, 0]], dtype=complex)  # |0><1|
    ops = [math.sqrt(1 / t1) * lower, math.sqrt(inv_tphi / 2) * O.Z]
    ref = O.lindblad_evolve_1q(rho, qubit, ops, dt)
    assert np.allclose(s.rho, ref, atol=1e-12)


def test_depolarizing_matches_lindblad(backend):
    rng = np.random.default_rng(5)
    rho = _random_rho(rng)
    rate = 2e5  # Hz
    s = qstate.apply_noise(qstate.PairState.from_rho(rho), "A", NoiseChannel.depolarizing(rate), 3e3)
    g = rate / 4
    ops = [math.sqrt(g) * P for P in (O.X, O.Y, O.Z)]
    ref = O.lindblad_evolve_1q(rho, 0, ops, 3e3 * 1e-9)
    assert np.allclose(s.rho, ref, atol=1e-12)


def test_invalid_channels_and_durations():
    with pytest.raises(InvalidChannelError):
        NoiseChannel.t1t2(100.0, 250.0)
    with pytest.raises(InvalidChannelError):
        NoiseChannel.depolarize_prob(1.5)
    with pytest.raises(InvalidChannelError):
        NoiseChannel.dephasing(-1.0)
    with pytest.raises(NegativeDurationError):
        qstate.apply_noise(qstate.bell_state(0), "A", NoiseChannel.dephasing(1.0), -1.0)


def test_repair_clips_tiny_negative_and_rejects_large():
    rho = O.bell_diag_rho([1 + 5e-11, -5e-11, 0, 0])
    out = qstate.repair(rho)
    assert np.linalg.eigvalsh(out)[0] >= 0
    with pytest.raises(DegenerateStateError):
        qstate.repair(O.bell_diag_rho([1.1, -0.1, 0, 0]))


# --- swapping -----------------------------------------------------------------


def test_swap_perfect_pairs(backend):
    probs, _ = qstate.swap_outcomes(qstate.bell_state(0), qstate.bell_state(0))
    assert np.allclose(probs, 0.25, atol=1e-15)
    rng = np.random.default_rng(0)
    for _ in range(8):
        out, k, p = qstate.swap(qstate.bell_state(0), qstate.bell_state(0), rng)
        out = qstate.apply_pauli(out, "B", k)
        assert qstate.fidelity_to_phi_plus(out) == pytest.approx(1.0, abs=1e-12)
        assert p == pytest.approx(0.25)


def test_swap_werner_09_composes_to_081333(backend):
    out = qstate.swap_corrected_average(qstate.werner(0.9), qstate.werner(0.9))
    assert np.real(O.BELL[0].conj() @ out @ O.BELL[0]) == pytest.approx(0.81 + 0.01 / 3, abs=1e-12)


def test_swap_with_perfect_pair_preserves_fidelity(backend):
    out = qstate.swap_corrected_average(qstate.werner(1.0), qstate.werner(0.5))
    assert np.real(O.BELL[0].conj() @ out @ O.BELL[0]) == pytest.approx(0.5, abs=1e-12)


def test_swap_per_outcome_matches_dense_oracle(backend):
    rng = np.random.default_rng(21)
    for _ in range(20):
        r1, r2 = _random_rho(rng), _random_rho(rng)
        probs, posts = qstate.swap_outcomes(qstate.PairState(r1), qstate.PairState(r2))
        ref_p, ref_states = O.swap_oracle(r1, r2)
        assert np.allclose(probs, ref_p, atol=1e-12)
        for k in range(4):
            corrected = qstate.apply_pauli(qstate.PairState(posts[k] / probs[k]), "B", k).rho
            assert np.allclose(corrected, ref_states[k], atol=1e-10)


def test_swap_bell_diagonal_xor_composition(backend):
    rng = np.random.default_rng(1)
    for _ in range(200):
        p, q = _random_bell_diag(rng), _random_bell_diag(rng)
        out = qstate.swap_corrected_average(qstate.BellDiag(tuple(p)).to_state(), qstate.BellDiag(tuple(q)).to_state())
        assert np.allclose(O.bell_coeffs(out), O.xor_compose(p, q), atol=1e-10)
        assert np.allclose(out, O.bell_diag_rho(O.xor_compose(p, q)), atol=1e-10)


def test_swap_sampling_follows_born_rule(backend):
    rng = np.random.default_rng(8)
    left, right = qstate.PairState(_random_rho(rng)), qstate.PairState(_random_rho(rng))
    probs, _ = qstate.swap_outcomes(left, right)
    n = 20000
    counts = np.bincount([qstate.swap(left, right, rng)[1] for _ in range(n)], minlength=4)
    sigma = np.sqrt(probs * (1 - probs) / n)
    assert np.all(np.abs(counts / n - probs) < 4 * sigma + 1e-12)


# --- DEJMPS -------------------------------------------------------------------


@pytest.mark.parametrize("f", [0.55, 0.6, 0.65, 0.7, 0.75, 0.8, 0.85, 0.9, 0.95])
def test_dejmps_matches_dense_circuit(f):
    p, rho = qstate.dejmps_outcome(qstate.werner(f), qstate.werner(f))
    ref_p, ref_rho = O.dejmps_oracle(O.werner_rho(f), O.werner_rho(f))
    assert p == pytest.approx(ref_p, abs=1e-10)
    assert np.allclose(rho, ref_rho, atol=1e-10)
    n, coeffs = O.dejmps_recurrence(O.bell_coeffs(O.werner_rho(f)))
    assert p == pytest.approx(n, abs=1e-10)
    assert np.allclose(O.bell_coeffs(rho), coeffs, atol=1e-10)
    assert rho[0, 0].real + rho[3, 3].real > 0
    assert qstate.fidelity_to_phi_plus(qstate.PairState(rho)) > f


def test_dejmps_general_states_match_oracle():
    rng = np.random.default_rng(4)
    for _ in range(10):
        r1, r2 = _random_rho(rng), _random_rho(rng)
        p, rho = qstate.dejmps_outcome(qstate.PairState(r1), qstate.PairState(r2))
        ref_p, ref_rho = O.dejmps_oracle(r1, r2)
        assert p == pytest.approx(ref_p, abs=1e-10)
        assert np.allclose(rho, ref_rho, atol=1e-10)


def test_dejmps_examples():
    p, rho = qstate.dejmps_outcome(qstate.bell_state(0), qstate.bell_state(0))
    assert p == pytest.approx(1.0) and qstate.fidelity_to_phi_plus(qstate.PairState(rho)) == pytest.approx(1.0)
    p, rho = qstate.dejmps_outcome(qstate.werner(0.7), qstate.werner(0.7))
    assert p == pytest.approx(0.68, abs=1e-12)
    assert qstate.fidelity_to_phi_plus(qstate.PairState(rho)) == pytest.approx(0.5 / 0.68, abs=1e-12)
    _, rho = qstate.dejmps_outcome(qstate.werner(0.3), qstate.werner(0.3))
    assert qstate.fidelity_to_phi_plus(qstate.PairState(rho)) < 0.3


def test_dejmps_sampling_rate():
    rng = np.random.default_rng(2)
    n = 20000
    hits = sum(qstate.dejmps(qstate.werner(0.7), qstate.werner(0.7), rng).success for _ in range(n))
    assert abs(hits / n - 0.68) < 4 * math.sqrt(0.68 * 0.32 / n)


# --- teleportation ------------------------------------------------------------


def test_teleport_perfect_pair_is_identity():
    choi = qstate.teleport_channel(qstate.bell_state(0))
    assert np.allclose(choi, np.outer(O.BELL[0], O.BELL[0].conj()), atol=1e-14)


def test_teleport_pauli_channel_example():
    pair = qstate.BellDiag((0.9, 0.1, 0.0, 0.0)).to_state()
    twirl = qstate.pauli_twirl(qstate.teleport_channel(pair))
    assert np.allclose(twirl.p, (0.9, 0.1, 0.0, 0.0), atol=1e-14)


def test_teleport_channel_matches_enumeration_oracle():
    rng = np.random.default_rng(6)
    for _ in range(10):
        rho = _random_rho(rng)
        choi = qstate.teleport_channel(qstate.PairState(rho))
        for _ in range(3):
            psi = qstate.haar_ket(rng)
            out = qstate.apply_channel(choi, np.outer(psi, psi.conj()))
            assert np.allclose(out, O.teleport_oracle(rho, psi), atol=1e-12)


def test_teleport_bell_diagonal_gives_same_pauli_probs():
    rng = np.random.default_rng(7)
    for _ in range(20):
        p = _random_bell_diag(rng)
        twirl = qstate.pauli_twirl(qstate.teleport_channel(qstate.BellDiag(tuple(p)).to_state()))
        assert np.allclose(twirl.p, p, atol=1e-12)


# --- QBER ---------------------------------------------------------------------


def test_qber_sample_extremes():
    rng = np.random.default_rng(0)
    assert all(a == b for a, b in (qstate.qber_sample(qstate.bell_state(0), rng) for _ in range(200)))
    assert all(a != b for a, b in (qstate.qber_sample(qstate.bell_state(2), rng) for _ in range(200)))


def test_qber_error_probability_is_psi_weight():
    assert qstate.error_probability_z(qstate.werner(0.85)) == pytest.approx(0.10, abs=1e-14)
