"""Pauli-pad key tracking: machine-derived rules against the matrix oracle."""
from itertools import product

import numpy as np
import pytest

from qhevqa.pauli_frame import (
    CLIFFORD_KINDS,
    FrameError,
    KeyFrame,
    PauliKey,
    _RULE_OVERRIDES,
    apply_rule,
    rule_table,
    t_byproduct,
    update_clifford,
    verify_conjugation,
)
from qhevqa.simulator import StateVector, apply_gate, fidelity, gate


def rand_state(n, rng):
    v = rng.normal(size=2**n) + 1j * rng.normal(size=2**n)
    return StateVector(n, v / np.linalg.norm(v))


def pad_state(state, frame):
    out = state
    for w, key in enumerate(frame.keys):
        if key.b:
            out = apply_gate(out, gate("Z", w))
        if key.a:
            out = apply_gate(out, gate("X", w))
    return out


class TestConjugationOracle:
    def test_exhaustive_single_qubit(self):
        for kind in ("X", "Y", "Z", "H", "P", "Pdagger"):
            for keys in product((0, 1), repeat=2):
                ok, new_keys, p = verify_conjugation(gate(kind, 0), keys)
                assert ok, (kind, keys)
                assert p == 0
                assert rule_table(kind)[keys] == new_keys

    def test_exhaustive_two_qubit(self):
        for kind in ("CNOT", "CZ"):
            for keys in product((0, 1), repeat=4):
                ok, new_keys, p = verify_conjugation(gate(kind, 0, 1), keys)
                assert ok, (kind, keys)
                assert p == 0
                assert rule_table(kind)[keys] == new_keys

    def test_t_byproduct_is_x_key(self):
        for keys in product((0, 1), repeat=2):
            ok, new_keys, p = verify_conjugation(gate("T", 0), keys)
            assert ok and p == keys[0]

    def test_tdagger_byproduct(self):
        for keys in product((0, 1), repeat=2):
            ok, new_keys, p = verify_conjugation(gate("Tdagger", 0), keys)
            assert ok and p == keys[0]

    def test_known_h_rule_swaps(self):
        assert rule_table("H")[(1, 0)] == (0, 1)
        assert rule_table("H")[(0, 1)] == (1, 0)

    def test_known_cnot_rule(self):
        # X on the control copies to the target; Z on the target copies back.
        assert rule_table("CNOT")[(1, 0, 0, 0)] == (1, 0, 1, 0)
        assert rule_table("CNOT")[(0, 0, 0, 1)] == (0, 1, 0, 1)


class TestRuleLinearity:
    def test_rules_are_gf2_linear(self):
        for kind in CLIFFORD_KINDS:
            table = rule_table(kind)
            width = len(next(iter(table)))
            zero = tuple([0] * width)
            assert table[zero] == zero
            for a in table:
                for b in table:
                    s = tuple(x ^ y for x, y in zip(a, b))
                    assert table[s] == tuple(
                        x ^ y for x, y in zip(table[a], table[b])
                    ), kind

    def test_apply_rule_generic_over_xor(self):
        # Evaluating the rule over sets with symmetric difference matches the
        # bit evaluation on every assignment.
        for kind in ("H", "P", "CNOT"):
            width = len(next(iter(rule_table(kind))))
            symbols = [frozenset([i]) for i in range(width)]
            symbolic = apply_rule(kind, tuple(symbols), lambda x, y: x ^ y)
            for bits in product((0, 1), repeat=width):
                want = rule_table(kind)[bits]
                got = tuple(
                    int(sum(bits[i] for i in s) % 2) if s else 0 for s in symbolic
                )
                assert got == want, (kind, bits)


class TestFrameUpdates:
    def test_update_clifford_matches_padded_simulation(self):
        rng = np.random.default_rng(0)
        for kind in CLIFFORD_KINDS:
            wires = (0, 1) if kind in ("CNOT", "CZ") else (0,)
            g = gate(kind, *wires)
            for _ in range(8):
                frame = KeyFrame.random(2, rng)
                psi = rand_state(2, rng)
                lhs = apply_gate(pad_state(psi, frame), g)
                new_frame = update_clifford(frame, g)
                rhs = pad_state(apply_gate(psi, g), new_frame)
                assert fidelity(lhs, rhs) == pytest.approx(1.0, abs=1e-12)

    def test_t_byproduct_padded_simulation(self):
        # T . pad = phase . P^p . pad' . T with (pad', p) from the oracle and
        # p agreeing with the frame-level byproduct helper.
        rng = np.random.default_rng(1)
        for _ in range(8):
            frame = KeyFrame.random(1, rng)
            keys = (frame.keys[0].a, frame.keys[0].b)
            ok, new_keys, p = verify_conjugation(gate("T", 0), keys)
            assert ok and p == t_byproduct(frame, 0)
            psi = rand_state(1, rng)
            lhs = apply_gate(pad_state(psi, frame), gate("T", 0))
            rhs = pad_state(
                apply_gate(psi, gate("T", 0)), KeyFrame([PauliKey(*new_keys)])
            )
            for _i in range(p):
                rhs = apply_gate(rhs, gate("P", 0))
            assert fidelity(lhs, rhs) == pytest.approx(1.0, abs=1e-12)


class TestOverrides:
    def test_override_hook_changes_table(self):
        try:
            broken = dict(rule_table("H"))
            broken[(1, 0)] = (1, 0)
            _RULE_OVERRIDES["H"] = broken
            assert rule_table("H")[(1, 0)] == (1, 0)
        finally:
            _RULE_OVERRIDES.clear()
        assert rule_table("H")[(1, 0)] == (0, 1)

    def test_broken_rule_fails_oracle_comparison(self):
        try:
            broken = dict(rule_table("CNOT"))
            broken[(1, 0, 0, 0)] = (0, 0, 0, 0)
            _RULE_OVERRIDES["CNOT"] = broken
            ok, new_keys, _ = verify_conjugation(gate("CNOT", 0, 1), (1, 0, 0, 0))
            assert ok  # oracle itself is still sound
            assert rule_table("CNOT")[(1, 0, 0, 0)] != new_keys
        finally:
            _RULE_OVERRIDES.clear()


class TestKeyFrame:
    def test_zero_frame(self):
        frame = KeyFrame.zeros(3)
        assert all(k.a == 0 and k.b == 0 for k in frame.keys)

    def test_random_frame_coverage(self):
        rng = np.random.default_rng(2)
        seen = set()
        for _ in range(100):
            frame = KeyFrame.random(1, rng)
            seen.add((frame.keys[0].a, frame.keys[0].b))
        assert seen == {(0, 0), (0, 1), (1, 0), (1, 1)}

    def test_apply_rule_rejects_unknown(self):
        with pytest.raises((FrameError, KeyError)):
            apply_rule("NOPE", (0, 0), lambda x, y: x ^ y)
