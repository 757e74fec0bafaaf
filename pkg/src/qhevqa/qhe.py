"""The four-algorithm quantum homomorphic encryption scheme.

Key generation provisions one conditional-phase gadget per non-Clifford gate,
encryption applies a quantum one-time pad and encrypts the pad bits,
evaluation applies Clifford gates directly (updating encrypted pad keys
homomorphically with the machine-derived rules) and consumes one gadget per
T / Tdagger, and decryption strips the final pad using the top secret key of
the level chain.

Because the modeled classical HE hides each bit behind a keystream parity,
the gadget twist for position i must equal the keystream parity of the key
ciphertext that will route it. Key generation therefore takes the public
circuit, plans the key flow symbolically (the same derived rules evaluated
over leaf-token sets), and pins the keystream bits that ``encrypt`` will use
for the initial key leaves.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .classical_he import (
    HECiphertext,
    HEEvalKey,
    HEKeyTriple,
    he_dec,
    he_enc,
    he_keygen,
    he_xor,
    encrypt_seed,
    key_switch,
)
from .pauli_frame import CLIFFORD_KINDS, KeyFrame, PauliKey, apply_rule
from .rsp_gadget import (
    Gadget,
    GadgetSecrets,
    RSPSampler,
    consume_gadget,
    faithful_sampler,
    gadget_key_update,
    gen_gadget,
    gen_measurement,
    ideal_sampler,
)
from .simulator import Gate, StateVector, apply_gate, gate

NON_CLIFFORD = ("T", "Tdagger")
EVAL_KINDS = CLIFFORD_KINDS + NON_CLIFFORD


class QHEError(Exception):
    pass


@dataclass(frozen=True)
class EvalKey:
    """Server-side evaluation material: gadget per T gate plus level chain."""

    gadgets: tuple[Gadget, ...]
    he_evks: tuple[HEEvalKey, ...]
    sk_encryptions: tuple[tuple[HECiphertext, ...], ...]

    @property
    def t_budget(self) -> int:
        return len(self.gadgets)


@dataclass(frozen=True)
class ClientKeys:
    """Client-side bundle: the secret-key chain and the key-flow plan."""

    triples: tuple[HEKeyTriple, ...]
    init_stream_bits: dict[tuple[int, str], int]
    gadget_secrets: tuple[GadgetSecrets, ...]
    num_wires: int

    @property
    def levels(self) -> int:
        return len(self.triples)


@dataclass(frozen=True)
class CipherState:
    """Padded register plus per-wire encrypted pad keys at one level."""

    register: StateVector
    encrypted_keys: tuple[tuple[HECiphertext, HECiphertext], ...]
    level: int

    def __post_init__(self):
        if self.register.num_qubits != len(self.encrypted_keys):
            raise QHEError("one encrypted key pair per register wire required")


def t_count(circuit: list[Gate]) -> int:
    return sum(1 for g in circuit if g.kind in NON_CLIFFORD)


def _check_circuit(circuit: list[Gate], num_wires: int) -> None:
    for g in circuit:
        if g.kind not in EVAL_KINDS:
            raise QHEError(f"gate {g.kind} is not evaluable under the pad (Clifford+T only)")
        for w in g.wires:
            if not 0 <= w < num_wires:
                raise QHEError(f"wire {w} out of range for {num_wires} wires")


def _symbol_xor(a: frozenset, b: frozenset) -> frozenset:
    return a ^ b


def keygen(
    security: int,
    num_wires: int,
    circuit: list[Gate],
    rng: np.random.Generator,
    rsp_mode: str = "ideal",
    rsp_n: int = 4,
    rsp_mu: int = 4,
    gadget_factory=None,
) -> tuple[ClientKeys, EvalKey]:
    """Generate the level chain and one twisted gadget per T / Tdagger.

    The symbolic key-flow pass mirrors evaluation over leaf-token sets so each
    gadget's twist equals the keystream parity its routing ciphertext will
    have at run time, independent of pad values and runtime outcomes.

    ``gadget_factory(index, pk_next, sk_enc, k_bit)`` may replace local gadget
    generation; a remote factory (the wire protocol) provisions the gadget on
    the server and returns ``(None, secrets)``, in which case the returned
    EvalKey carries no gadget states.
    """
    _check_circuit(circuit, num_wires)
    n_gadgets = t_count(circuit)
    triples = tuple(
        he_keygen(security, rng, level=i) for i in range(n_gadgets + 1)
    )
    sk_encs = tuple(
        encrypt_seed(triples[i + 1].pk, triples[i].sk, rng) for i in range(n_gadgets)
    )
    if gadget_factory is None:
        if rsp_mode == "ideal":
            sampler: RSPSampler = ideal_sampler()
        elif rsp_mode == "faithful":
            sampler = faithful_sampler(rsp_n, rsp_mu, rng)
        else:
            raise QHEError(f"unknown rsp mode {rsp_mode!r}")

        def gadget_factory(i, pk_next, sk_enc, k_bit):
            return gen_gadget(pk_next, sk_enc, k_bit, rng, sampler)

    stream_bits: dict = {}
    symbols: list[list[frozenset]] = []
    for w in range(num_wires):
        for comp in ("a", "b"):
            stream_bits[("init", w, comp)] = int(rng.integers(2))
        symbols.append([frozenset([("init", w, "a")]), frozenset([("init", w, "b")])])

    gadgets: list[Gadget] = []
    secrets: list[GadgetSecrets] = []
    for g in circuit:
        if g.kind in CLIFFORD_KINDS:
            if len(g.wires) == 1:
                (w,) = g.wires
                symbols[w] = list(apply_rule(g.kind, tuple(symbols[w]), _symbol_xor))
            else:
                w1, w2 = g.wires
                r = apply_rule(
                    g.kind, (symbols[w1][0], symbols[w1][1], symbols[w2][0], symbols[w2][1]),
                    _symbol_xor,
                )
                symbols[w1], symbols[w2] = [r[0], r[1]], [r[2], r[3]]
            continue
        i = len(gadgets)
        (w,) = g.wires
        k_bit = 0
        for token in symbols[w][0]:
            k_bit ^= stream_bits[token]
        gadget, sec = gadget_factory(i, triples[i + 1].pk, sk_encs[i], k_bit)
        gadgets.append(gadget)
        secrets.append(sec)
        stream_bits[("gx", i)] = sec.x_stream
        stream_bits[("gz", i)] = sec.z_stream
        stream_bits[("ge", i)] = sec.e_stream
        if g.kind == "Tdagger":
            symbols[w][1] = symbols[w][1] ^ symbols[w][0]
        symbols[w][0] = symbols[w][0] ^ frozenset([("gx", i)])
        symbols[w][1] = symbols[w][1] ^ frozenset([("gz", i), ("ge", i)])

    client = ClientKeys(
        triples,
        {k: v for k, v in stream_bits.items() if k[0] == "init"},
        tuple(secrets),
        num_wires,
    )
    server = EvalKey(tuple(gadgets), tuple(t.evk for t in triples), sk_encs)
    return client, server


def encrypt(
    client: ClientKeys, state: StateVector, rng: np.random.Generator
) -> tuple[CipherState, KeyFrame]:
    """Pad the register with fresh keys and attach their encryptions.

    The pad frame is returned for inspection and tests; the protocol-level
    client discards it (decryption only needs the secret-key chain).
    """
    if state.num_qubits != client.num_wires:
        raise QHEError(
            f"state has {state.num_qubits} wires, keys planned for {client.num_wires}"
        )
    pk0 = client.triples[0].pk
    frame = KeyFrame.random(state.num_qubits, rng)
    padded = state
    pairs = []
    for w, key in enumerate(frame.keys):
        if key.b:
            padded = apply_gate(padded, gate("Z", w))
        if key.a:
            padded = apply_gate(padded, gate("X", w))
        a_ct = he_enc(pk0, key.a, rng, keystream_bit=client.init_stream_bits[("init", w, "a")])
        b_ct = he_enc(pk0, key.b, rng, keystream_bit=client.init_stream_bits[("init", w, "b")])
        pairs.append((a_ct, b_ct))
    return CipherState(padded, tuple(pairs), 0), frame


def eval_circuit(
    cs: CipherState,
    circuit: list[Gate],
    ek: EvalKey,
    rng: np.random.Generator,
) -> CipherState:
    """Homomorphically apply a Clifford+T circuit to the cipherstate.

    Runs entirely on public data: gates, ciphertext handles, Bell outcomes,
    and the public masked parity that routes each gadget.
    """
    _check_circuit(circuit, len(cs.encrypted_keys))
    needed = t_count(circuit)
    if cs.level + needed > len(ek.gadgets):
        raise QHEError(
            f"circuit needs {needed} gadgets, {len(ek.gadgets) - cs.level} remain"
        )
    register = cs.register
    keys = list(cs.encrypted_keys)
    level = cs.level
    for g in circuit:
        register = apply_gate(register, g)
        if g.kind in CLIFFORD_KINDS:
            if len(g.wires) == 1:
                (w,) = g.wires
                keys[w] = apply_rule(g.kind, keys[w], he_xor)  # type: ignore[assignment]
            else:
                w1, w2 = g.wires
                r = apply_rule(g.kind, (*keys[w1], *keys[w2]), he_xor)
                keys[w1], keys[w2] = (r[0], r[1]), (r[2], r[3])
            continue
        (w,) = g.wires
        gadget = ek.gadgets[level]
        plan = gen_measurement(keys[w][0])
        register, (u, v) = consume_gadget(register, w, gadget, plan, rng)
        new_a, new_b = gadget_key_update(
            gadget, plan, u, v, keys[w][0], keys[w][1], dagger=g.kind == "Tdagger"
        )
        keys[w] = (new_a, new_b)
        for other in range(len(keys)):
            if other != w:
                keys[other] = (
                    key_switch(keys[other][0], gadget.sk_enc),
                    key_switch(keys[other][1], gadget.sk_enc),
                )
        level += 1
    return CipherState(register, tuple(keys), level)


def decrypt_keys(client: ClientKeys, cs: CipherState) -> KeyFrame:
    if cs.level >= client.levels:
        raise QHEError(f"cipherstate level {cs.level} beyond key chain {client.levels}")
    sk = client.triples[cs.level].sk
    return KeyFrame(
        [PauliKey(he_dec(sk, a), he_dec(sk, b)) for a, b in cs.encrypted_keys]
    )


def decrypt_state(client: ClientKeys, cs: CipherState) -> StateVector:
    """Strip the final pad: apply X^a then Z^b per wire."""
    frame = decrypt_keys(client, cs)
    out = cs.register
    for w, key in enumerate(frame.keys):
        if key.a:
            out = apply_gate(out, gate("X", w))
        if key.b:
            out = apply_gate(out, gate("Z", w))
    return out


def decrypt_outcome(
    client: ClientKeys,
    cs: CipherState,
    basis: str,
    outcomes: dict[int, int],
) -> dict[int, int]:
    """Correct raw measurement bits: Z-basis flips on a, X-basis flips on b."""
    if basis not in ("Z", "X"):
        raise QHEError(f"basis must be 'Z' or 'X', got {basis!r}")
    frame = decrypt_keys(client, cs)
    out = {}
    for w, bit in outcomes.items():
        key = frame.keys[w]
        flip = key.a if basis == "Z" else key.b
        out[w] = bit ^ flip
    return out


def xx_expectation_sign(client: ClientKeys, cs: CipherState, wires: tuple[int, int]) -> int:
    """Sign correcting a server-computed <X x X> on the cipherstate.

    X-basis statistics flip under the Z part of the pad, so the plaintext
    expectation is (-1)^(b1 XOR b2) times the cipher-side value.
    """
    frame = decrypt_keys(client, cs)
    return -1 if frame.keys[wires[0]].b ^ frame.keys[wires[1]].b else 1


def pad_average_density(state: StateVector, wire: int) -> np.ndarray:
    """Average the wire's reduced state over all four pad keys (exact sum)."""
    from .simulator import reduced_density_matrix

    acc = np.zeros((2, 2), dtype=complex)
    for a in (0, 1):
        for b in (0, 1):
            padded = state
            if b:
                padded = apply_gate(padded, gate("Z", wire))
            if a:
                padded = apply_gate(padded, gate("X", wire))
            acc += reduced_density_matrix(padded, [wire])
    return acc / 4.0
