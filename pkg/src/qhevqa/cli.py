"""Command-line entry point: demos, decomposition, training, verification.

Subcommands:

- ``gadget-demo``   direct vs gadget realization of a T gate, shot statistics
- ``decompose``     certified {H, T, Tdagger} synthesis of one rotation
- ``train``         the window-feature classifier in any mode/transport
- ``verify``        the invariant suite with per-property runtimes

Every run writes a manifest (seed, mode, tolerances, paths) so its outputs
can be reproduced exactly; CSV is the canonical record and the SVG plot is a
native line rendering with no plotting dependency.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
import time
from dataclasses import asdict, dataclass
from math import pi

import numpy as np

from .simulator import (
    StateVector,
    apply_gate,
    bell_measure,
    gate,
    prepare_plus_theta,
    tensor,
)

MODES = ("plaintext", "delegated-exact-gates", "delegated-faithful")
TRANSPORTS = ("local", "inproc", "tcp")


@dataclass(frozen=True)
class RunManifest:
    subcommand: str
    seed: int
    mode: str
    eps_target: float
    kappa: int
    dataset: str | None
    out_dir: str | None
    shots: int

    def write(self, path: str) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(asdict(self), fh, indent=2, sort_keys=True)
            fh.write("\n")


def load_config_file(path: str) -> dict[str, str]:
    """Key=value lines; blank lines and #-comments ignored."""
    out: dict[str, str] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected key=value")
            key, value = line.split("=", 1)
            out[key.strip()] = value.strip()
    return out


# --- gadget demo ------------------------------------------------------------

ANALYTIC_P0 = float(np.cos(pi / 8) ** 2)


def _direct_probability_zero() -> float:
    st = StateVector(1)
    for g in ("H", "T", "H"):
        st = apply_gate(st, gate(g, 0))
    return float(abs(st.amplitudes[0]) ** 2)


def _demo_tables():
    """Precomputed padded inputs and the 16 possible pair-resource states.

    The input |+> is padded with X^a Z^b and the T gate applied; the resource
    couples two pairs whose tails carry phase bits (0, 1). Caching these
    (there are only 4 x 16 combinations) keeps the per-shot work to two Bell
    measurements and one Hadamard.
    """
    from .rsp_gadget import assemble_gadget_state, theta_bits

    inputs = {}
    for a in (0, 1):
        for b in (0, 1):
            st = apply_gate(StateVector(1), gate("H", 0))
            if b:
                st = apply_gate(st, gate("Z", 0))
            if a:
                st = apply_gate(st, gate("X", 0))
            inputs[(a, b)] = apply_gate(st, gate("T", 0))

    resources = {}
    for h0 in (0, 2):
        for t0 in (0, 2):
            for h1 in (0, 2):
                for t1 in (1, 3):
                    heads = [prepare_plus_theta(h0 * pi / 2), prepare_plus_theta(h1 * pi / 2)]
                    tails = [prepare_plus_theta(t0 * pi / 2), prepare_plus_theta(t1 * pi / 2)]
                    xs = (theta_bits(h0)[0], theta_bits(h1)[0])
                    zs = (theta_bits(t0)[1], theta_bits(t1)[1])
                    resources[(h0, t0, h1, t1)] = (
                        assemble_gadget_state(heads, tails),
                        xs,
                        zs,
                    )
    return inputs, resources


_DEMO_CACHE: tuple[dict, dict] | None = None


def _gadget_shot(rng: np.random.Generator) -> int:
    """One shot of the gadget circuit with plaintext-tracked pad keys.

    The input |+> is padded with X^a Z^b, the server applies T, and the P^a
    byproduct is removed by teleporting through the coupled-pair resource:
    position j of the resource carries phase bit j, so the pair matching the
    pad bit a is the route. Keys update classically from the preparation bits
    and Bell outcomes; the final Hadamard swaps them; the measured bit is
    corrected by the final X key.
    """
    global _DEMO_CACHE
    if _DEMO_CACHE is None:
        _DEMO_CACHE = _demo_tables()
    inputs, resources = _DEMO_CACHE

    a, b = int(rng.integers(2)), int(rng.integers(2))
    h0, h1 = 2 * int(rng.integers(2)), 2 * int(rng.integers(2))
    t0 = 2 * int(rng.integers(2))
    t1 = 1 + 2 * int(rng.integers(2))
    resource, xs, zs = resources[(h0, t0, h1, t1)]
    full = tensor(inputs[(a, b)], resource)

    from .simulator import measure

    j = a  # route: the pair whose phase bit equals the pad key
    (u, v), full = bell_measure(full, 0, 1 + 2 * j, rng)
    # The spent pair factorizes from the output; discarding it does not
    # change the output wire's statistics, so it is not measured here.
    out_wire = 0 if j == 0 else 2
    a1 = a ^ xs[j] ^ v
    b1 = b ^ zs[j] ^ u ^ (j & (xs[j] ^ v))
    full = apply_gate(full, gate("H", out_wire))
    bit, _ = measure(full, out_wire, "Z", rng)
    return bit ^ b1  # after H the X-type key is the previous Z-type key


def gadget_demo(shots: int, seed: int) -> dict:
    """Shot statistics for the direct and gadget T-gate circuits."""
    if shots < 1:
        raise ValueError("shots must be >= 1")
    rng = np.random.default_rng(seed)
    p1_direct = 1.0 - _direct_probability_zero()
    direct_ones = int(np.count_nonzero(rng.random(shots) < p1_direct))
    gadget_ones = sum(_gadget_shot(rng) for _ in range(shots))
    return {
        "shots": shots,
        "direct": {"0": 1.0 - direct_ones / shots, "1": direct_ones / shots},
        "gadget": {"0": 1.0 - gadget_ones / shots, "1": gadget_ones / shots},
        "analytic": {"0": ANALYTIC_P0, "1": 1.0 - ANALYTIC_P0},
    }


def cmd_gadget_demo(args) -> int:
    t0 = time.perf_counter()
    report = gadget_demo(args.shots, args.seed)
    dt = time.perf_counter() - t0
    print(f"T-gate demo, {args.shots} shots, seed {args.seed}")
    print(f"{'outcome':>8} {'direct':>10} {'gadget':>10} {'analytic':>10}")
    for bit in ("0", "1"):
        print(
            f"{bit:>8} {report['direct'][bit]:>10.4f} "
            f"{report['gadget'][bit]:>10.4f} {report['analytic'][bit]:>10.5f}"
        )
    print(f"elapsed {dt:.3f} s")
    _maybe_write_outputs(args, "gadget-demo", {"report": report})
    return 0


# --- decompose --------------------------------------------------------------


def _format_matrix(m: np.ndarray) -> str:
    rows = []
    for row in m:
        rows.append(
            "  [" + ", ".join(f"{z.real:+.6f}{z.imag:+.6f}j" for z in row) + "]"
        )
    return "\n".join(rows)


def decompose_report_tallies(angle: float, axis: str = "X") -> dict:
    """Gate tallies at the fixed comparison depth, plus achieved distance.

    Gate counts are only comparable between implementations at similar
    accuracy, so the published-reference comparison always uses the same
    recursion depth rather than the requested tolerance.
    """
    from .simulator import ROTATION_1Q
    from .skdecomp import REPORT_DEPTH, default_net, sk_decompose, trace_distance

    u = ROTATION_1Q[f"R{axis.upper()}"](angle)
    seq = sk_decompose(u, REPORT_DEPTH, default_net())
    return {
        "T": seq.t_count,
        "Tdagger": seq.tdg_count,
        "H": seq.h_count,
        "distance": trace_distance(seq.unitary, u),
    }


def cmd_decompose(args) -> int:
    from .simulator import ROTATION_1Q
    from .skdecomp import decompose_circuit, trace_distance

    kind = f"R{args.axis.upper()}"
    if kind not in ROTATION_1Q:
        print(f"error: axis must be one of X, Y, Z, got {args.axis!r}", file=sys.stderr)
        return 1
    target = ROTATION_1Q[kind](args.angle)
    t0 = time.perf_counter()
    try:
        circuit, _ = decompose_circuit([gate(kind, 0, angle=args.angle)], args.epsilon)
    except Exception as exc:  # noqa: BLE001 - report and fail cleanly
        print(f"error: {exc}", file=sys.stderr)
        return 1
    dt = time.perf_counter() - t0
    ops = [g.kind for g in circuit]
    achieved = np.eye(2, dtype=complex)
    for g in circuit:
        achieved = g.matrix() @ achieved
    dist = trace_distance(achieved, target)
    tallies = {
        "T": ops.count("T"),
        "Tdagger": ops.count("Tdagger"),
        "H": ops.count("H"),
    }
    print(f"Output 1: gate sequence ({len(ops)} gates)")
    print("  " + (" ".join(ops) if ops else "(empty — target within tolerance)"))
    print("Output 2: target unitary")
    print(_format_matrix(target))
    print("Output 3: achieved unitary")
    print(_format_matrix(achieved))
    print(f"Output 4: certified distance {dist:.6e} (target eps {args.epsilon:g})")
    print(
        f"tallies (certified sequence): T={tallies['T']} "
        f"Tdagger={tallies['Tdagger']} H={tallies['H']}"
    )
    ref = decompose_report_tallies(args.angle, args.axis)
    print(
        f"comparison depth tallies: T={ref['T']} Tdagger={ref['Tdagger']} "
        f"H={ref['H']} (distance {ref['distance']:.4f})  |  "
        f"published single-rotation reference: T=35 Tdagger=24 H=28"
    )
    print(f"elapsed {dt:.3f} s")
    _maybe_write_outputs(
        args, "decompose", {"sequence": ops, "distance": dist, "tallies": tallies}
    )
    return 0 if dist <= args.epsilon else 1


# --- train ------------------------------------------------------------------


def write_training_svg(path: str, metrics) -> None:
    """Native two-series SVG: loss and test accuracy against the epoch."""
    width, height, margin = 640, 400, 50
    epochs = [m.epoch for m in metrics]
    losses = [m.loss for m in metrics]
    accs = [m.test_acc for m in metrics]
    x_max = max(epochs) if epochs else 1
    y_max = max(1.0, max(losses, default=1.0))

    def sx(x):
        return margin + (width - 2 * margin) * x / x_max

    def sy(y):
        return height - margin - (height - 2 * margin) * y / y_max

    def poly(series, color):
        pts = " ".join(f"{sx(e):.1f},{sy(v):.1f}" for e, v in zip(epochs, series))
        return (
            f'<polyline fill="none" stroke="{color}" stroke-width="1.5" '
            f'points="{pts}"/>'
        )

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">',
        '<rect width="100%" height="100%" fill="white"/>',
        f'<line x1="{margin}" y1="{height - margin}" x2="{width - margin}" '
        f'y2="{height - margin}" stroke="black"/>',
        f'<line x1="{margin}" y1="{margin}" x2="{margin}" '
        f'y2="{height - margin}" stroke="black"/>',
        poly(losses, "#c0392b"),
        poly(accs, "#2471a3"),
        f'<text x="{width / 2:.0f}" y="{height - 12}" text-anchor="middle" '
        'font-size="13">epoch</text>',
        f'<text x="{width - margin}" y="{margin - 10}" text-anchor="end" '
        'font-size="12" fill="#c0392b">loss</text>',
        f'<text x="{width - margin - 60}" y="{margin - 10}" text-anchor="end" '
        'font-size="12" fill="#2471a3">test accuracy</text>',
    ]
    for frac in (0.0, 0.5, 1.0):
        parts.append(
            f'<text x="{margin - 8}" y="{sy(frac * y_max):.0f}" text-anchor="end" '
            f'font-size="11">{frac * y_max:.2f}</text>'
        )
        parts.append(
            f'<text x="{sx(frac * x_max):.0f}" y="{height - margin + 16}" '
            f'text-anchor="middle" font-size="11">{frac * x_max:.0f}</text>'
        )
    parts.append("</svg>")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(parts) + "\n")


def cmd_train(args) -> int:
    from .vqa import TrainConfig, load_digits_csv, train, write_metrics_csv

    if args.dataset is not None and not os.path.exists(args.dataset):
        print(f"error: dataset not found: {args.dataset}", file=sys.stderr)
        return 2
    try:
        dataset = load_digits_csv(args.dataset)
    except Exception as exc:  # noqa: BLE001
        print(f"error: could not load dataset: {exc}", file=sys.stderr)
        return 2
    config = TrainConfig(
        mode=args.mode, seed=args.seed, eps_target=args.epsilon, epochs=args.epochs
    )

    t0 = time.perf_counter()
    if args.transport == "local" or args.mode == "plaintext":
        model, metrics = train(dataset, config)
    elif args.transport == "inproc":
        from .protocol import run_client, serve_inproc

        channel, _session, thread = serve_inproc()
        model, metrics = run_client(channel, dataset, config)
        thread.join(timeout=10)
    else:  # tcp
        from .protocol import TcpServer, connect_tcp, run_client

        server = TcpServer(port=args.port).start()
        try:
            channel = connect_tcp(server.host, server.port)
            model, metrics = run_client(channel, dataset, config)
        finally:
            server.stop()
    dt = time.perf_counter() - t0

    final = metrics[-1]
    print(
        f"trained {config.epochs} epochs in {dt:.1f} s "
        f"(mode {config.mode}, transport {args.transport}, seed {config.seed})"
    )
    print(
        f"final loss {final.loss:.4f}, train acc {final.train_acc:.3f}, "
        f"test acc {final.test_acc:.3f}"
    )

    out_dir = _out_dir(args, "train")
    if out_dir is not None:
        write_metrics_csv(os.path.join(out_dir, "metrics.csv"), metrics)
        write_training_svg(os.path.join(out_dir, "training.svg"), metrics)
        with open(os.path.join(out_dir, "model.json"), "w", encoding="utf-8") as fh:
            json.dump(
                {
                    "theta": model.theta.tolist(),
                    "w": model.w.tolist(),
                    "bias": model.bias,
                    "n": model.n,
                },
                fh,
                indent=2,
            )
            fh.write("\n")
        _manifest(args, "train").write(os.path.join(out_dir, "manifest.json"))
        print(f"artifacts in {out_dir}")
    return 0


# --- verify -----------------------------------------------------------------


def _check_conjugation():
    from itertools import product

    from .pauli_frame import CLIFFORD_KINDS, rule_table, verify_conjugation

    checked = 0
    for kind in CLIFFORD_KINDS + ("T", "Tdagger"):
        wires = (0, 1) if kind in ("CNOT", "CZ") else (0,)
        g = gate(kind, *wires)
        for keys in product((0, 1), repeat=2 * len(wires)):
            ok, new_keys, _p = verify_conjugation(g, keys)
            if not ok:
                return False, f"{kind} pad {keys} has no conjugation rule"
            if kind not in ("T", "Tdagger") and rule_table(kind)[keys] != new_keys:
                return False, f"{kind} stored rule disagrees with oracle at {keys}"
            checked += 1
    return True, f"{checked} (gate, pad) pairs against the matrix oracle"


def _check_pad_mixing():
    from .qhe import pad_average_density
    from .simulator import trace_distance_dm

    rng = np.random.default_rng(0)
    worst = 0.0
    for _ in range(20):
        v = rng.normal(size=4) + 1j * rng.normal(size=4)
        st = StateVector(2, v / np.linalg.norm(v))
        for w in (0, 1):
            dist = trace_distance_dm(pad_average_density(st, w), np.eye(2) / 2)
            worst = max(worst, dist)
    return worst < 1e-12, f"max trace distance to I/2: {worst:.2e}"


def _check_he_roundtrip():
    from .classical_he import he_dec, he_enc, he_keygen, he_not, he_and, he_xor

    rng = np.random.default_rng(1)
    triple = he_keygen(16, rng)
    for _ in range(200):
        bits = [int(rng.integers(2)) for _ in range(3)]
        cts = [he_enc(triple.pk, b, rng) for b in bits]
        ct = he_xor(he_and(cts[0], cts[1]), he_not(cts[2]))
        want = (bits[0] & bits[1]) ^ (1 ^ bits[2])
        if he_dec(triple.sk, ct) != want:
            return False, f"wrong decryption for bits {bits}"
    return True, "200 random AND/XOR/NOT evaluations decrypt correctly"


def _check_qhe_roundtrip():
    from .qhe import encrypt, eval_circuit, decrypt_state, keygen
    from .simulator import apply_circuit, fidelity

    rng = np.random.default_rng(2)
    kinds = ["H", "P", "T", "Tdagger", "CNOT", "CZ", "X", "Z"]
    worst = 1.0
    for _ in range(5):
        n = 3
        circuit = []
        for _ in range(12):
            kind = kinds[rng.integers(len(kinds))]
            wires = rng.choice(n, size=2 if kind in ("CNOT", "CZ") else 1, replace=False)
            circuit.append(gate(kind, *(int(w) for w in wires)))
        v = rng.normal(size=2**n) + 1j * rng.normal(size=2**n)
        st = StateVector(n, v / np.linalg.norm(v))
        ck, ek = keygen(16, n, circuit, rng)
        cs, _ = encrypt(ck, st, rng)
        cs = eval_circuit(cs, circuit, ek, rng)
        worst = min(worst, fidelity(decrypt_state(ck, cs), apply_circuit(st, circuit)))
    return worst >= 1 - 1e-9, f"5 random circuits, worst fidelity 1-{1 - worst:.1e}"


def _check_gadget_contract():
    report = gadget_demo(600, 7)
    dev = abs(report["gadget"]["0"] - ANALYTIC_P0)
    return dev < 0.05, f"600-shot gadget circuit, deviation {dev:.3f} from analytic"


def _check_sk():
    from .simulator import ROTATION_1Q
    from .skdecomp import DEFAULT_DEPTH, default_net, sk_decompose, trace_distance

    rng = np.random.default_rng(3)
    net = default_net()
    worst = 0.0
    for _ in range(5):
        angle = float(rng.uniform(0, 2 * pi))
        u = ROTATION_1Q["RX"](angle)
        seq = sk_decompose(u, DEFAULT_DEPTH, net)
        worst = max(worst, trace_distance(seq.unitary, u))
    return worst <= 1e-2, f"5 random rotations, worst certified distance {worst:.2e}"


def _check_gradients():
    from .vqa import ShadowModel, TrainConfig, gradients
    from .simulator import amplitude_encode

    rng = np.random.default_rng(4)
    base = dict(epochs=1)
    for _ in range(3):
        model = ShadowModel(
            rng.uniform(0, 2 * pi, (2, 4)), rng.uniform(-0.5, 0.5, 5), 0.1, 6
        )
        states = [
            amplitude_encode(np.abs(rng.normal(size=64)) + 1e-3, 6) for _ in range(2)
        ]
        labels = np.array([0.0, 1.0])
        g1 = gradients(states, labels, model, TrainConfig(grad_method="parameter-shift", **base))
        g2 = gradients(states, labels, model, TrainConfig(grad_method="central-difference", **base))
        dev = max(
            float(np.max(np.abs(a - b) / np.maximum(np.abs(b), 1e-2)))
            for a, b in zip(g1, g2)
        )
        if dev > 1e-4:
            return False, f"parameter-shift vs central-difference deviate by {dev:.1e}"
    return True, "3 models, parameter-shift matches central differences"


def _check_protocol():
    from .protocol import (
        KINDS,
        Message,
        PHASES,
        ProtocolError,
        decode_message,
        encode_message,
        reachable_phases,
    )

    rng = np.random.default_rng(5)
    for _ in range(100):
        kind = KINDS[rng.integers(len(KINDS))]
        payload = {"v": float(rng.normal()), "bits": [int(b) for b in rng.integers(0, 2, 4)]}
        frame = encode_message(Message(kind, payload))
        if encode_message(decode_message(frame)) != frame:
            return False, "codec round trip not byte-stable"
    if reachable_phases() != set(PHASES):
        return False, "phase machine does not reach every phase"
    for _ in range(200):
        try:
            decode_message(rng.bytes(int(rng.integers(0, 32))))
        except ProtocolError:
            continue
        except Exception as exc:  # noqa: BLE001
            return False, f"decoder leaked {type(exc).__name__}"
    return True, "codec round trips, fuzz decodes reject cleanly, phases reachable"


VERIFY_CHECKS = (
    ("clifford-conjugation", _check_conjugation),
    ("pad-mixing", _check_pad_mixing),
    ("he-roundtrip", _check_he_roundtrip),
    ("qhe-roundtrip", _check_qhe_roundtrip),
    ("gadget-contract", _check_gadget_contract),
    ("sk-certification", _check_sk),
    ("gradient-check", _check_gradients),
    ("protocol-codec", _check_protocol),
)


def cmd_verify(args) -> int:
    from .pauli_frame import _RULE_OVERRIDES

    if args.negative_control:
        # Corrupt the stored CNOT rule; the conjugation check must notice.
        from .pauli_frame import rule_table

        broken = dict(rule_table("CNOT"))
        broken[(1, 0, 0, 0)] = (0, 0, 0, 0)
        _RULE_OVERRIDES["CNOT"] = broken

    failures = 0
    print(f"{'property':<24} {'result':<6} {'time':>8}  detail")
    try:
        for name, check in VERIFY_CHECKS:
            t0 = time.perf_counter()
            try:
                ok, detail = check()
            except Exception as exc:  # noqa: BLE001 - a crash is a failure
                ok, detail = False, f"raised {type(exc).__name__}: {exc}"
            dt = time.perf_counter() - t0
            status = "pass" if ok else "FAIL"
            if not ok:
                failures += 1
            print(f"{name:<24} {status:<6} {dt:>7.2f}s  {detail}")
    finally:
        _RULE_OVERRIDES.clear()
    if args.negative_control:
        # The run is healthy exactly when the corruption was caught.
        caught = failures > 0
        print(
            "negative control: injected wrong CNOT rule was "
            + ("caught" if caught else "NOT caught")
        )
        return 0 if caught else 1
    return 1 if failures else 0


# --- argument plumbing ------------------------------------------------------


def _out_dir(args, subcommand: str) -> str | None:
    if args.out is None:
        return None
    os.makedirs(args.out, exist_ok=True)
    return args.out


def _manifest(args, subcommand: str) -> RunManifest:
    return RunManifest(
        subcommand=subcommand,
        seed=args.seed,
        mode=getattr(args, "mode", "plaintext"),
        eps_target=args.epsilon,
        kappa=args.kappa,
        dataset=getattr(args, "dataset", None),
        out_dir=args.out,
        shots=getattr(args, "shots", 0),
    )


def _maybe_write_outputs(args, subcommand: str, payload: dict) -> None:
    out_dir = _out_dir(args, subcommand)
    if out_dir is None:
        return
    with open(os.path.join(out_dir, "report.json"), "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
    _manifest(args, subcommand).write(os.path.join(out_dir, "manifest.json"))


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="key=value config file (flags win)")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--shots", type=int, default=2048)
    parser.add_argument("--epsilon", type=float, default=1e-2)
    parser.add_argument("--kappa", type=int, default=16)
    parser.add_argument("--mode", choices=MODES, default="plaintext")
    parser.add_argument("--transport", choices=TRANSPORTS, default="local")
    parser.add_argument("--port", type=int, default=None)
    parser.add_argument("--dataset", default=None)
    parser.add_argument("--out", default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="qhevqa",
        description="Delegated variational quantum computation over "
        "homomorphically padded circuits: demos, synthesis, training, checks.",
    )
    sub = parser.add_subparsers(dest="subcommand", required=True)

    p = sub.add_parser("gadget-demo", help="direct vs gadget T-gate statistics")
    _add_common(p)
    p.set_defaults(func=cmd_gadget_demo)

    p = sub.add_parser("decompose", help="certified H/T synthesis of a rotation")
    _add_common(p)
    p.add_argument("--axis", default="X", help="rotation axis: X, Y or Z")
    p.add_argument("--angle", type=float, default=5.57)
    p.set_defaults(func=cmd_decompose)

    p = sub.add_parser("train", help="train the window-feature classifier")
    _add_common(p)
    p.add_argument("--epochs", type=int, default=20)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("verify", help="run the invariant suite")
    _add_common(p)
    p.add_argument(
        "--negative-control",
        action="store_true",
        help="inject a wrong conjugation rule and require the suite to catch it",
    )
    p.set_defaults(func=cmd_verify)
    return parser


def _apply_config_file(args, argv: list[str]) -> None:
    if not getattr(args, "config", None):
        return
    values = load_config_file(args.config)
    explicit = {a.split("=", 1)[0].lstrip("-").replace("-", "_") for a in argv}
    for key, raw in values.items():
        attr = key.replace("-", "_")
        if not hasattr(args, attr) or attr in explicit:
            continue  # unknown keys ignored; explicit flags win
        current = getattr(args, attr)
        if isinstance(current, bool):
            setattr(args, attr, raw.lower() in ("1", "true", "yes"))
        elif isinstance(current, int):
            setattr(args, attr, int(raw))
        elif isinstance(current, float):
            setattr(args, attr, float(raw))
        else:
            setattr(args, attr, raw)


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    _apply_config_file(args, sys.argv[1:] if argv is None else list(argv))
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
