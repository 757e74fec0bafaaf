"""Clifford+T approximation of rotations: net, recursion, certification."""
import numpy as np
import pytest

from qhevqa.cli import decompose_report_tallies
from qhevqa.simulator import FIXED_1Q, ROTATION_1Q, apply_circuit, fidelity, gate
from qhevqa.skdecomp import (
    DEFAULT_DEPTH,
    DecompositionError,
    GateSequence,
    build_net,
    decompose_circuit,
    default_net,
    group_commutator_factors,
    ops_unitary,
    simplify_ops,
    sk_decompose,
    trace_distance,
)


class TestTraceDistance:
    def test_zero_on_equal_and_phase(self):
        h = FIXED_1Q["H"]
        assert trace_distance(h, h) == pytest.approx(0.0, abs=1e-7)
        assert trace_distance(h, np.exp(1j * 0.3) * h) == pytest.approx(0.0, abs=1e-7)

    def test_symmetry_and_triangle(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            us = [
                np.linalg.qr(rng.normal(size=(2, 2)) + 1j * rng.normal(size=(2, 2)))[0]
                for _ in range(3)
            ]
            a, b, c = us
            assert trace_distance(a, b) == pytest.approx(trace_distance(b, a), abs=1e-12)
            assert trace_distance(a, c) <= trace_distance(a, b) + trace_distance(b, c) + 1e-9

    def test_rejects_non_unitary(self):
        with pytest.raises(DecompositionError):
            sk_decompose(np.array([[1.0, 1.0], [0.0, 1.0]]), 0, default_net())


class TestSimplify:
    def test_preserves_unitary(self):
        rng = np.random.default_rng(1)
        for _ in range(30):
            ops = tuple(rng.choice(["H", "T", "Tdagger"], size=rng.integers(0, 15)))
            reduced = simplify_ops(ops)
            assert trace_distance(ops_unitary(ops), ops_unitary(reduced)) < 1e-6

    def test_cancellations(self):
        assert simplify_ops(("H", "H")) == ()
        assert simplify_ops(("T", "Tdagger")) == ()
        assert simplify_ops(("T",) * 8) == ()
        assert simplify_ops(("T",) * 7) == ("Tdagger",)
        assert simplify_ops(("H", "T", "Tdagger", "H")) == ()

    def test_idempotent(self):
        rng = np.random.default_rng(2)
        for _ in range(20):
            ops = tuple(rng.choice(["H", "T", "Tdagger"], size=10))
            once = simplify_ops(ops)
            assert simplify_ops(once) == once


class TestGateSequence:
    def test_dagger_inverts(self):
        seq = GateSequence.from_ops(("H", "T", "H", "Tdagger"))
        prod = seq.dagger().unitary @ seq.unitary
        assert trace_distance(prod, np.eye(2)) == pytest.approx(0.0, abs=1e-7)

    def test_add_is_application_order(self):
        a = GateSequence.from_ops(("H",))
        b = GateSequence.from_ops(("T",))
        combined = a + b
        assert combined.ops == ("H", "T")
        np.testing.assert_allclose(
            combined.unitary, FIXED_1Q["T"] @ FIXED_1Q["H"], atol=1e-12
        )

    def test_counts(self):
        seq = GateSequence.from_ops(("T", "H", "T", "Tdagger", "H"))
        assert (seq.t_count, seq.tdg_count, seq.h_count) == (2, 1, 2)


class TestNet:
    def test_small_net_contents(self):
        net = build_net(2)
        as_ops = {s.ops for s in net.sequences}
        assert () in as_ops
        assert ("H",) in as_ops
        assert ("T",) in as_ops
        # no redundant entries: every stored sequence is already reduced
        for s in net.sequences:
            assert simplify_ops(s.ops) == s.ops

    def test_nearest_exact_hits(self):
        net = default_net()
        assert net.nearest(FIXED_1Q["H"]).ops == ("H",)
        assert net.nearest(np.eye(2, dtype=complex)).ops == ()

    def test_rejects_bad_length(self):
        with pytest.raises(DecompositionError):
            build_net(0)


class TestCommutator:
    def test_factors_reconstruct_delta(self):
        rng = np.random.default_rng(3)
        for _ in range(10):
            axis = rng.normal(size=3)
            axis /= np.linalg.norm(axis)
            theta = float(rng.uniform(0.01, 0.5))
            x, y, z = (
                np.array([[0, 1], [1, 0]], dtype=complex),
                np.array([[0, -1j], [1j, 0]]),
                np.array([[1, 0], [0, -1]], dtype=complex),
            )
            h = axis[0] * x + axis[1] * y + axis[2] * z
            delta = (
                np.cos(theta / 2) * np.eye(2) - 1j * np.sin(theta / 2) * h
            )
            v, w = group_commutator_factors(delta)
            recon = v @ w @ v.conj().T @ w.conj().T
            assert trace_distance(recon, delta) < 1e-6


class TestDecompose:
    def test_depth_never_hurts(self):
        rng = np.random.default_rng(4)
        net = default_net()
        for _ in range(5):
            u = ROTATION_1Q["RZ"](float(rng.uniform(0, 2 * np.pi)))
            dists = [
                trace_distance(sk_decompose(u, d, net).unitary, u)
                for d in range(DEFAULT_DEPTH + 1)
            ]
            for lo, hi in zip(dists[1:], dists[:-1]):
                assert lo <= hi + 1e-12

    def test_default_depth_hits_target(self):
        rng = np.random.default_rng(5)
        net = default_net()
        for axis in ("RX", "RY", "RZ"):
            u = ROTATION_1Q[axis](float(rng.uniform(0, 2 * np.pi)))
            seq = sk_decompose(u, DEFAULT_DEPTH, net)
            assert trace_distance(seq.unitary, u) <= 1e-2

    def test_depth_out_of_range(self):
        with pytest.raises(DecompositionError):
            sk_decompose(FIXED_1Q["H"], 9, default_net())

    def test_circuit_rewrite_is_certified_and_counted(self):
        rng = np.random.default_rng(6)
        circ = [
            gate("H", 0),
            gate("RX", 1, angle=1.2),
            gate("CNOT", 0, 1),
            gate("RZ", 0, angle=4.4),
            gate("T", 1),
        ]
        out, t_total = decompose_circuit(circ, eps_target=1e-2)
        assert all(g.kind in ("H", "T", "Tdagger", "CNOT") for g in out)
        assert t_total == sum(1 for g in out if g.kind in ("T", "Tdagger"))
        # end-to-end action agrees on a random state within the two targets
        v = rng.normal(size=4) + 1j * rng.normal(size=4)
        from qhevqa.simulator import StateVector

        psi = StateVector(2, v / np.linalg.norm(v))
        f = fidelity(apply_circuit(psi, circ), apply_circuit(psi, out))
        assert f > 1 - 2 * (1e-2) ** 2 - 1e-6

    def test_unreachable_target_raises(self):
        with pytest.raises(DecompositionError):
            decompose_circuit([gate("RX", 0, angle=0.917)], eps_target=1e-9, max_depth=1)

    def test_zero_rotation_collapses(self):
        out, t_total = decompose_circuit([gate("RZ", 0, angle=0.0)])
        assert out == [] and t_total == 0


class TestReportTallies:
    def test_reference_rotation_tallies_frozen(self):
        # Comparison-depth tallies for the RX(5.57) reference rotation; these
        # are pinned so the reporting path cannot drift silently.
        report = decompose_report_tallies(5.57, "X")
        assert report["T"] == 42
        assert report["Tdagger"] == 43
        assert report["H"] == 68
        assert report["distance"] == pytest.approx(0.0135, abs=2e-3)
