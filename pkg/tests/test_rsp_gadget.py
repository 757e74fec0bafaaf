"""Remote state preparation and the encrypted conditional-phase gadget."""
from itertools import product

import numpy as np
import pytest

from qhevqa.classical_he import (
    encrypt_seed,
    he_dec,
    he_enc,
    he_keygen,
    public_masked_parity,
)
from qhevqa.pauli_frame import verify_conjugation
from qhevqa.rsp_gadget import (
    GadgetError,
    RSPResult,
    _draw_with_constraint,
    consume_gadget,
    draw_head,
    draw_tail,
    faithful_sampler,
    gadget_key_update,
    gen_gadget,
    gen_measurement,
    ideal_sampler,
    pair_byproduct,
    rsp_round_faithful,
    rsp_round_ideal,
    rsp_server_commit,
    rsp_server_measure,
    rsp_theta_index,
    sample_trapdoor,
    theta_bits,
    twist_bits,
)
from qhevqa.simulator import (
    StateVector,
    apply_gate,
    bell_measure,
    fidelity,
    gate,
    prepare_plus_theta,
    tensor,
)


def rand_state(n, rng):
    v = rng.normal(size=2**n) + 1j * rng.normal(size=2**n)
    return StateVector(n, v / np.linalg.norm(v))


class TestThetaBits:
    def test_frozen_table(self):
        assert [theta_bits(i) for i in range(4)] == [
            (0, 0, 0),
            (0, 1, 1),
            (1, 1, 0),
            (0, 0, 1),
        ]

    def test_rejects_out_of_range(self):
        with pytest.raises(GadgetError):
            theta_bits(4)

    def test_pair_byproduct_formula(self):
        for x, z, p, u, v in product((0, 1), repeat=5):
            da, db = pair_byproduct(x, z, p, u, v)
            assert da == x ^ v
            assert db == z ^ u ^ (p & (x ^ v))


class TestSinglePairContract:
    def test_teleport_identity_all_angles(self):
        # One coupled pair, input Bell-measured against the head, must act as
        # X^(x+v) Z^(z+u+p(x+v)) Pdagger^p with x from the head angle and
        # (z, p) from the tail angle.
        rng = np.random.default_rng(0)
        for h in (0, 2):
            for t in range(4):
                x = theta_bits(h)[0]
                z = theta_bits(t)[1]
                p = t & 1
                for _ in range(4):
                    psi = rand_state(1, rng)
                    pair = tensor(
                        prepare_plus_theta(h * np.pi / 2),
                        prepare_plus_theta(t * np.pi / 2),
                    )
                    pair = apply_gate(pair, gate("CZ", 0, 1))
                    pair = apply_gate(pair, gate("H", 0))
                    full = tensor(psi, pair)  # input=0, head=1, tail=2
                    (u, v), rest = bell_measure(full, 0, 1, rng)
                    da, db = pair_byproduct(x, z, p, u, v)
                    want = psi
                    for _i in range(p):
                        want = apply_gate(want, gate("Pdagger", 0))
                    if db:
                        want = apply_gate(want, gate("Z", 0))
                    if da:
                        want = apply_gate(want, gate("X", 0))
                    assert fidelity(rest, want) == pytest.approx(1.0, abs=1e-10)


class TestTrapdoor:
    def test_sampled_function_is_two_to_one(self):
        rng = np.random.default_rng(1)
        for _ in range(5):
            td = sample_trapdoor(4, 4, rng)
            assert td.kernel[td.n - 1] == 1
            assert not td.apply(td.kernel).any()
            images = {}
            for xi in range(2**td.n):
                x = np.array([(xi >> j) & 1 for j in range(td.n)])
                y = tuple(td.apply(x))
                images.setdefault(y, []).append(xi)
            assert all(len(v) == 2 for v in images.values())

    def test_preimages_form_claw(self):
        rng = np.random.default_rng(2)
        td = sample_trapdoor(5, 6, rng)
        for _ in range(10):
            x = rng.integers(0, 2, td.n)
            y = td.apply(x)
            x1, x2 = td.preimages(y)
            assert not ((x1 ^ x2) ^ td.kernel).any()
            assert not (td.apply(x1) ^ y).any()
            assert not (td.apply(x2) ^ y).any()

    def test_preimages_reject_out_of_image(self):
        # mu > rank means some image points are unreachable.
        rng = np.random.default_rng(3)
        td = sample_trapdoor(3, 5, rng)
        reachable = {
            tuple(td.apply(np.array([(xi >> j) & 1 for j in range(td.n)])))
            for xi in range(2**td.n)
        }
        bad = next(
            y
            for y in product((0, 1), repeat=td.mu)
            if y not in reachable
        )
        with pytest.raises(GadgetError):
            td.preimages(np.array(bad))

    def test_rejects_bad_dimensions(self):
        rng = np.random.default_rng(4)
        with pytest.raises(GadgetError):
            sample_trapdoor(1, 4, rng)
        with pytest.raises(GadgetError):
            sample_trapdoor(4, 2, rng)


class TestRemotePreparation:
    def test_ideal_round_state_matches_index(self):
        rng = np.random.default_rng(5)
        for _ in range(20):
            res = rsp_round_ideal(rng)
            want = prepare_plus_theta(res.theta_index * np.pi / 2)
            assert fidelity(res.state, want) == pytest.approx(1.0, abs=1e-12)

    def test_faithful_round_state_matches_recovered_index(self):
        rng = np.random.default_rng(6)
        td = sample_trapdoor(4, 4, rng)
        seen = set()
        for _ in range(40):
            res = rsp_round_faithful(td, rng)
            seen.add(res.theta_index)
            want = prepare_plus_theta(res.theta_index * np.pi / 2)
            assert fidelity(res.state, want) == pytest.approx(1.0, abs=1e-12)
        assert seen == {0, 1, 2, 3}

    def test_commit_produces_claw_superposition(self):
        rng = np.random.default_rng(7)
        td = sample_trapdoor(4, 4, rng)
        y, state = rsp_server_commit(td.matrix, rng)
        x1, x2 = td.preimages(y)
        i1 = int(sum(int(b) << j for j, b in enumerate(x1)))
        i2 = int(sum(int(b) << j for j, b in enumerate(x2)))
        assert abs(state.amplitudes[i1]) == pytest.approx(1 / np.sqrt(2), abs=1e-12)
        assert abs(state.amplitudes[i2]) == pytest.approx(1 / np.sqrt(2), abs=1e-12)

    def test_split_round_equals_composed_round(self):
        rng = np.random.default_rng(8)
        td = sample_trapdoor(4, 4, rng)
        y, state = rsp_server_commit(td.matrix, rng)
        alphas = rng.integers(0, 2, td.n - 1)
        b, qubit = rsp_server_measure(state, alphas, rng)
        idx = rsp_theta_index(td, y, b, alphas)
        assert fidelity(
            qubit, prepare_plus_theta(idx * np.pi / 2)
        ) == pytest.approx(1.0, abs=1e-12)

    def test_measure_rejects_wrong_basis_shape(self):
        rng = np.random.default_rng(9)
        td = sample_trapdoor(4, 4, rng)
        _, state = rsp_server_commit(td.matrix, rng)
        with pytest.raises(GadgetError):
            rsp_server_measure(state, np.zeros(td.n, dtype=np.int64), rng)


class TestSamplers:
    def test_twist_bits(self):
        assert twist_bits(0) == (0, 1)
        assert twist_bits(1) == (1, 0)
        with pytest.raises(GadgetError):
            twist_bits(2)

    def test_draw_constraints(self):
        rng = np.random.default_rng(10)
        sampler = ideal_sampler()
        for _ in range(10):
            assert draw_head(sampler, rng).theta_index in (0, 2)
            assert draw_tail(sampler, rng, 0).theta_index in (0, 2)
            assert draw_tail(sampler, rng, 1).theta_index in (1, 3)

    def test_faithful_sampler_draws_valid_states(self):
        rng = np.random.default_rng(11)
        sampler = faithful_sampler(4, 4, rng)
        res = draw_tail(sampler, rng, 1)
        assert fidelity(
            res.state, prepare_plus_theta(res.theta_index * np.pi / 2)
        ) == pytest.approx(1.0, abs=1e-12)

    def test_rejection_sampling_gives_up(self):
        rng = np.random.default_rng(12)

        def stuck(_rng):
            return RSPResult(0, prepare_plus_theta(0.0))

        with pytest.raises(GadgetError):
            _draw_with_constraint(stuck, rng, lambda i: i == 1)


class TestRouting:
    def test_route_follows_public_masked_parity(self):
        triple = he_keygen(16, np.random.default_rng(13))
        rng = np.random.default_rng(14)
        for bit in (0, 1):
            for stream in (0, 1):
                ct = he_enc(triple.pk, bit, rng, keystream_bit=stream)
                plan = gen_measurement(ct)
                assert plan.route == public_masked_parity(ct) == bit ^ stream
                assert plan.consume_first == ("input", 2 * plan.route)
                assert plan.output == 2 * plan.route + 1
                other = 1 - plan.route
                assert plan.consume_second == (2 * other, 2 * other + 1)


class TestEndToEnd:
    @pytest.mark.parametrize("kind", ["T", "Tdagger"])
    def test_gadget_removes_phase_byproduct(self, kind):
        # Full contract: on a padded wire, apply the non-Clifford rotation,
        # consume one gadget, homomorphically update the keys, decrypt them one
        # level up, unpad — the result must be the rotation on the bare state.
        rng = np.random.default_rng(15)
        l0 = he_keygen(16, rng, level=0)
        l1 = he_keygen(16, rng, level=1)
        sk_enc = encrypt_seed(l1.pk, l0.sk, rng)
        for a, b, k in product((0, 1), repeat=3):
            gadget, _sec = gen_gadget(l1.pk, sk_enc, k, rng, ideal_sampler())
            a_ct = he_enc(l0.pk, a, rng, keystream_bit=k)
            b_ct = he_enc(l0.pk, b, rng)
            psi = rand_state(1, rng)
            padded = psi
            if b:
                padded = apply_gate(padded, gate("Z", 0))
            if a:
                padded = apply_gate(padded, gate("X", 0))
            padded = apply_gate(padded, gate(kind, 0))

            plan = gen_measurement(a_ct)
            assert plan.route == a ^ k
            out, (u, v) = consume_gadget(padded, 0, gadget, plan, rng)
            # both pairs are consumed, leaving only the teleported wire
            assert out.num_qubits == 1
            a2_ct, b2_ct = gadget_key_update(
                gadget, plan, u, v, a_ct, b_ct, dagger=kind == "Tdagger"
            )
            a2, b2 = he_dec(l1.sk, a2_ct), he_dec(l1.sk, b2_ct)
            unpadded = out
            if a2:
                unpadded = apply_gate(unpadded, gate("X", 0))
            if b2:
                unpadded = apply_gate(unpadded, gate("Z", 0))
            target = apply_gate(psi, gate(kind, 0))
            assert fidelity(unpadded, target) == pytest.approx(1.0, abs=1e-10)

    def test_byproduct_bit_matches_frame_oracle(self):
        # The conjugation oracle's phase bit for T equals the pad's X key,
        # which is exactly the bit the twist places on the routed pair.
        for a, b in product((0, 1), repeat=2):
            ok, _new, p = verify_conjugation(gate("T", 0), (a, b))
            assert ok and p == a
