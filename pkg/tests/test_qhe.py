"""Quantum homomorphic encryption: round trips, statistics, blindness."""
import numpy as np
import pytest

from qhevqa.qhe import (
    QHEError,
    decrypt_keys,
    decrypt_outcome,
    decrypt_state,
    encrypt,
    eval_circuit,
    keygen,
    pad_average_density,
    t_count,
    xx_expectation_sign,
)
from qhevqa.simulator import (
    StateVector,
    apply_circuit,
    expectation,
    fidelity,
    gate,
    measure,
    PauliString,
)


def rand_state(n, rng):
    v = rng.normal(size=2**n) + 1j * rng.normal(size=2**n)
    return StateVector(n, v / np.linalg.norm(v))


def rand_circuit(num_wires, rng, n_gates=8, max_t=3):
    kinds_1q = ["X", "Y", "Z", "H", "P", "Pdagger"]
    circ, t_used = [], 0
    for _ in range(n_gates):
        roll = rng.integers(4)
        if roll == 0 and t_used < max_t:
            circ.append(gate(str(rng.choice(["T", "Tdagger"])), int(rng.integers(num_wires))))
            t_used += 1
        elif roll == 1 and num_wires > 1:
            w = rng.choice(num_wires, 2, replace=False)
            circ.append(gate(str(rng.choice(["CNOT", "CZ"])), int(w[0]), int(w[1])))
        else:
            circ.append(gate(str(rng.choice(kinds_1q)), int(rng.integers(num_wires))))
    return circ


def round_trip(circuit, num_wires, rng, rsp_mode="ideal"):
    client, server = keygen(16, num_wires, circuit, rng, rsp_mode=rsp_mode)
    psi = rand_state(num_wires, rng)
    cs, _frame = encrypt(client, psi, rng)
    out = eval_circuit(cs, circuit, server, rng)
    got = decrypt_state(client, out)
    want = apply_circuit(psi, circuit)
    return fidelity(got, want)


class TestRoundTrip:
    def test_clifford_only(self):
        rng = np.random.default_rng(0)
        circ = [gate("H", 0), gate("CNOT", 0, 1), gate("P", 1), gate("CZ", 1, 0)]
        assert round_trip(circ, 2, rng) == pytest.approx(1.0, abs=1e-11)

    def test_single_t(self):
        rng = np.random.default_rng(1)
        assert round_trip([gate("T", 0)], 1, rng) == pytest.approx(1.0, abs=1e-11)

    def test_single_tdagger(self):
        rng = np.random.default_rng(2)
        assert round_trip([gate("Tdagger", 0)], 1, rng) == pytest.approx(1.0, abs=1e-11)

    def test_random_circuits_ideal(self):
        rng = np.random.default_rng(3)
        for _ in range(10):
            n = int(rng.integers(1, 4))
            circ = rand_circuit(n, rng)
            assert round_trip(circ, n, rng) == pytest.approx(1.0, abs=1e-9)

    def test_random_circuits_faithful(self):
        rng = np.random.default_rng(4)
        circ = rand_circuit(2, rng, n_gates=6, max_t=2)
        assert round_trip(circ, 2, rng, rsp_mode="faithful") == pytest.approx(
            1.0, abs=1e-9
        )

    def test_interleaved_clifford_t(self):
        rng = np.random.default_rng(5)
        circ = [
            gate("H", 0),
            gate("T", 0),
            gate("CNOT", 0, 1),
            gate("Tdagger", 1),
            gate("H", 1),
            gate("T", 0),
            gate("CZ", 0, 1),
        ]
        assert round_trip(circ, 2, rng) == pytest.approx(1.0, abs=1e-10)


class TestKeygenValidation:
    def test_rejects_unevaluable_gate(self):
        rng = np.random.default_rng(6)
        with pytest.raises(QHEError):
            keygen(16, 1, [gate("RX", 0, angle=0.3)], rng)

    def test_rejects_out_of_range_wire(self):
        rng = np.random.default_rng(7)
        with pytest.raises(QHEError):
            keygen(16, 1, [gate("CNOT", 0, 1)], rng)

    def test_rejects_unknown_rsp_mode(self):
        rng = np.random.default_rng(8)
        with pytest.raises(QHEError):
            keygen(16, 1, [gate("T", 0)], rng, rsp_mode="nope")

    def test_budget_matches_t_count(self):
        rng = np.random.default_rng(9)
        circ = [gate("T", 0), gate("H", 0), gate("Tdagger", 0)]
        assert t_count(circ) == 2
        _, server = keygen(16, 1, circ, rng)
        assert server.t_budget == 2

    def test_eval_rejects_budget_overrun(self):
        rng = np.random.default_rng(10)
        client, server = keygen(16, 1, [gate("T", 0)], rng)
        cs, _ = encrypt(client, rand_state(1, rng), rng)
        with pytest.raises(QHEError):
            eval_circuit(cs, [gate("T", 0), gate("T", 0)], server, rng)

    def test_encrypt_rejects_wrong_width(self):
        rng = np.random.default_rng(11)
        client, _ = keygen(16, 2, [], rng)
        with pytest.raises(QHEError):
            encrypt(client, rand_state(1, rng), rng)


class TestDecryption:
    def test_decrypt_keys_matches_frame_at_level_zero(self):
        rng = np.random.default_rng(12)
        client, _ = keygen(16, 3, [], rng)
        cs, frame = encrypt(client, rand_state(3, rng), rng)
        got = decrypt_keys(client, cs)
        assert [(k.a, k.b) for k in got.keys] == [(k.a, k.b) for k in frame.keys]

    def test_outcome_correction_z_basis(self):
        # Measuring the padded wire and XORing off the decrypted X key must
        # reproduce the plaintext Born statistics.
        rng = np.random.default_rng(13)
        circ = [gate("H", 0), gate("T", 0), gate("H", 0)]
        client, server = keygen(16, 1, circ, rng)
        psi = StateVector(1)  # |0>
        hits = 0
        shots = 300
        for _ in range(shots):
            cs, _ = encrypt(client, psi, rng)
            out = eval_circuit(cs, circ, server, rng)
            bit, post = measure(out.register, 0, "Z", rng)
            fixed = decrypt_outcome(client, out, "Z", {0: bit})
            hits += fixed[0]
        want = abs(apply_circuit(psi, circ).amplitudes[1]) ** 2
        assert abs(hits / shots - want) < 0.07

    def test_outcome_correction_rejects_bad_basis(self):
        rng = np.random.default_rng(14)
        client, _ = keygen(16, 1, [], rng)
        cs, _ = encrypt(client, StateVector(1), rng)
        with pytest.raises(QHEError):
            decrypt_outcome(client, cs, "Y", {0: 0})

    def test_xx_expectation_sign(self):
        rng = np.random.default_rng(15)
        client, server = keygen(16, 2, [], rng)
        psi = rand_state(2, rng)
        obs = PauliString(("X", "X"), (0, 1))
        want = expectation(psi, obs)
        for _ in range(10):
            cs, _ = encrypt(client, psi, rng)
            raw = expectation(cs.register, obs)
            sign = xx_expectation_sign(client, cs, (0, 1))
            assert sign * raw == pytest.approx(want, abs=1e-10)

    def test_decrypt_rejects_exhausted_chain(self):
        rng = np.random.default_rng(16)
        client, server = keygen(16, 1, [], rng)
        cs, _ = encrypt(client, StateVector(1), rng)
        bad = type(cs)(cs.register, cs.encrypted_keys, 5)
        with pytest.raises(QHEError):
            decrypt_keys(client, bad)


class TestBlindness:
    def test_pad_average_is_maximally_mixed(self):
        # Averaged over the four pad keys, any wire's reduced state is I/2:
        # the server-side register carries no information about the input.
        rng = np.random.default_rng(17)
        for _ in range(10):
            n = int(rng.integers(1, 4))
            psi = rand_state(n, rng)
            w = int(rng.integers(n))
            rho = pad_average_density(psi, w)
            np.testing.assert_allclose(rho, np.eye(2) / 2, atol=1e-12)

    def test_level_advances_per_gadget(self):
        rng = np.random.default_rng(18)
        circ = [gate("T", 0), gate("H", 0), gate("Tdagger", 0)]
        client, server = keygen(16, 1, circ, rng)
        cs, _ = encrypt(client, rand_state(1, rng), rng)
        out = eval_circuit(cs, circ, server, rng)
        assert out.level == 2
        assert fidelity(
            decrypt_state(client, out),
            apply_circuit(rand_state(1, np.random.default_rng(18)), circ),
        ) >= 0  # level bookkeeping only; state check covered elsewhere

    def test_multi_wire_keys_follow_gadget_level(self):
        # After a gadget fires on one wire the other wires' keys must still
        # decrypt at the new level (they are key-switched alongside).
        rng = np.random.default_rng(19)
        circ = [gate("T", 0), gate("CNOT", 0, 1)]
        client, server = keygen(16, 2, circ, rng)
        psi = rand_state(2, rng)
        cs, _ = encrypt(client, psi, rng)
        out = eval_circuit(cs, circ, server, rng)
        got = decrypt_state(client, out)
        assert fidelity(got, apply_circuit(psi, circ)) == pytest.approx(1.0, abs=1e-10)
