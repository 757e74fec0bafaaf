"""Remote state preparation and the encrypted conditional-phase gadget.

The gadget removes the P byproduct a T gate leaves behind on a padded wire,
conditioned on an encrypted key bit the server never learns. It is built from
two coupled qubit pairs; each pair, when an input is Bell-measured against
its first qubit, teleports the input onto its second qubit while applying

    X^(x XOR v) Z^(z XOR u XOR p AND (x XOR v)) Pdagger^p

where x, z, p are bits baked into the pair's preparation angles and (u, v)
are the Bell outcomes. The pair positions are twisted so that position j
carries phase bit p_j = j XOR k, with k the keystream parity of the key-bit
ciphertext that will route the measurement; the route j is then readable
from the ciphertext's public masked parity, yet equals the secret key bit's
pair exactly.

Preparation angles come either from an ideal sampler or from a faithful
claw-based remote-preparation protocol using a 2-to-1 GF(2) linear function
with a trapdoor (the hidden kernel vector).
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .classical_he import (
    HECiphertext,
    HEPublicKey,
    he_const,
    he_enc,
    he_xor,
    key_switch,
    public_masked_parity,
)
from .simulator import (
    StateVector,
    apply_gate,
    gate,
    bell_measure,
    measure,
    permute_wires,
    prepare_plus_theta,
    remove_wire,
    tensor,
)

PAIR_COUNT = 2
GADGET_QUBITS = 2 * PAIR_COUNT
# Gadget wire layout: pair j occupies wires (2j, 2j+1) = (head, tail).
_HEAD = (0, 2)
_TAIL = (1, 3)


class GadgetError(Exception):
    pass


def theta_bits(theta_index: int) -> tuple[int, int, int]:
    """Map a quarter-turn index (theta = index * pi/2) to (x, z, p) bits.

    x flags a Z-like flip (theta = pi), p flags the conditional-phase bit
    (theta in {pi/2, 3pi/2}), z the Z byproduct (theta in {pi, pi/2}).
    """
    if theta_index not in (0, 1, 2, 3):
        raise GadgetError(f"theta index must be 0..3, got {theta_index}")
    x = 1 if theta_index == 2 else 0
    p = theta_index & 1
    z = 1 if theta_index in (1, 2) else 0
    return x, z, p


def pair_byproduct(x: int, z: int, p: int, u: int, v: int) -> tuple[int, int]:
    """Pauli bits (da, db) accompanying the pair's Pdagger^p action."""
    da = x ^ v
    db = z ^ u ^ (p & da)
    return da, db


# --- GF(2) trapdoor function and remote state preparation ------------------


def _rank_gf2(m: np.ndarray) -> int:
    m = m.copy() % 2
    rank = 0
    for col in range(m.shape[1]):
        pivot = next((r for r in range(rank, m.shape[0]) if m[r, col]), None)
        if pivot is None:
            continue
        m[[rank, pivot]] = m[[pivot, rank]]
        for r in range(m.shape[0]):
            if r != rank and m[r, col]:
                m[r] ^= m[rank]
        rank += 1
    return rank


@dataclass(frozen=True)
class TrapdoorFunction:
    """2-to-1 linear map x -> Ax over GF(2) with hidden kernel {0, t}."""

    matrix: np.ndarray  # shape (mu, n)
    kernel: np.ndarray  # shape (n,), the trapdoor t, with t[n-1] = 1

    @property
    def n(self) -> int:
        return int(self.matrix.shape[1])

    @property
    def mu(self) -> int:
        return int(self.matrix.shape[0])

    def apply(self, x: np.ndarray) -> np.ndarray:
        return (self.matrix @ x) % 2

    def preimages(self, y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Solve Ax = y; the claw is (x, x XOR t)."""
        aug = np.concatenate([self.matrix % 2, (np.asarray(y) % 2)[:, None]], axis=1)
        m = aug.copy()
        pivots = []
        rank = 0
        for col in range(self.n):
            pivot = next((r for r in range(rank, m.shape[0]) if m[r, col]), None)
            if pivot is None:
                continue
            m[[rank, pivot]] = m[[pivot, rank]]
            for r in range(m.shape[0]):
                if r != rank and m[r, col]:
                    m[r] ^= m[rank]
            pivots.append(col)
            rank += 1
        if any(m[r, -1] for r in range(rank, m.shape[0])):
            raise GadgetError("image point has no preimage")
        x = np.zeros(self.n, dtype=np.int64)
        for r, col in enumerate(pivots):
            x[col] = m[r, -1]
        return x, (x ^ self.kernel) % 2


def sample_trapdoor(n: int, mu: int, rng: np.random.Generator) -> TrapdoorFunction:
    """Draw a rank n-1 matrix whose kernel is {0, t} with t's top bit set."""
    if n < 2 or mu < n - 1:
        raise GadgetError(f"need n >= 2 and mu >= n-1, got n={n}, mu={mu}")
    while True:
        t = rng.integers(0, 2, n)
        t[n - 1] = 1
        if not t[: n - 1].any():
            # A kernel supported only on the last position would pin the
            # prepared angle to zero; resample for full angle coverage.
            continue
        a = rng.integers(0, 2, (mu, n))
        for i in range(mu):
            while (a[i] @ t) % 2:
                a[i] = rng.integers(0, 2, n)
        if _rank_gf2(a) == n - 1:
            return TrapdoorFunction(a % 2, t % 2)


@dataclass(frozen=True)
class RSPResult:
    """One remotely prepared qubit: the server-side state and the angle index.

    ``theta_index`` counts quarter turns; only the party holding the trapdoor
    (or the ideal sampler) learns it.
    """

    theta_index: int
    state: StateVector


def rsp_round_ideal(rng: np.random.Generator) -> RSPResult:
    idx = int(rng.integers(4))
    return RSPResult(idx, prepare_plus_theta(idx * np.pi / 2))


def rsp_server_commit(
    matrix: np.ndarray, rng: np.random.Generator
) -> tuple[np.ndarray, StateVector]:
    """Server step 1-2: claw superposition, image measured out.

    Needs only the public matrix. Returns the measured image point y and the
    surviving n-qubit input register (a superposition of the two preimages).
    """
    matrix = np.asarray(matrix) % 2
    mu, n = matrix.shape
    total = n + mu
    amps = np.zeros(2**total, dtype=complex)
    for xi in range(2**n):
        x = np.array([(xi >> j) & 1 for j in range(n)], dtype=np.int64)
        y = (matrix @ x) % 2
        yi = int(sum(int(y[k]) << k for k in range(mu)))
        amps[(yi << n) | xi] = 1.0
    state = StateVector(total, amps / np.linalg.norm(amps))

    y = np.zeros(mu, dtype=np.int64)
    for w in range(total - 1, n - 1, -1):
        bit, state = measure(state, w, "Z", rng)
        state = remove_wire(state, w, bit)
        y[w - n] = bit
    return y, state


def rsp_server_measure(
    state: StateVector, alphas: np.ndarray, rng: np.random.Generator
) -> tuple[np.ndarray, StateVector]:
    """Server step 3: measure all but the last qubit in {|0> +- i^alpha |1>}.

    Returns the outcome bits b and the surviving single qubit, which is
    |+_theta> for the angle only the trapdoor holder can recover.
    """
    n = state.num_qubits
    alphas = np.asarray(alphas, dtype=np.int64)
    if alphas.shape != (n - 1,):
        raise GadgetError(f"need {n - 1} basis bits, got shape {alphas.shape}")
    b = np.zeros(n - 1, dtype=np.int64)
    for w in range(n - 2, -1, -1):
        if alphas[w]:
            state = apply_gate(state, gate("Pdagger", w))
        state = apply_gate(state, gate("H", w))
        b[w], state = measure(state, w, "Z", rng)
        state = remove_wire(state, w, int(b[w]))
    return b, state


def rsp_theta_index(
    td: TrapdoorFunction, y: np.ndarray, b: np.ndarray, alphas: np.ndarray
) -> int:
    """Client-side angle recovery from the round transcript.

        theta = (pi/2) * (-1)^{x_n} sum_j (x_j - x'_j)(2 b_j + alpha_j)

    over the claw (x, x') = preimages of y, outcome bits b_j and basis bits
    alpha_j; returned as the quarter-turn index theta / (pi/2) mod 4.
    """
    x1, x2 = td.preimages(np.asarray(y))
    n = td.n
    s = (-1) ** int(x1[n - 1]) * int(
        sum(
            (int(x1[j]) - int(x2[j])) * (2 * int(b[j]) + int(alphas[j]))
            for j in range(n - 1)
        )
    )
    return s % 4


def rsp_round_faithful(td: TrapdoorFunction, rng: np.random.Generator) -> RSPResult:
    """Claw-based preparation of |+_theta> with trapdoor-recoverable theta.

    Composes the server quantum steps with random basis bits and the
    trapdoor recovery; the wire protocol runs the same pieces across
    messages.
    """
    y, state = rsp_server_commit(td.matrix, rng)
    alphas = rng.integers(0, 2, td.n - 1)
    b, qubit = rsp_server_measure(state, alphas, rng)
    return RSPResult(rsp_theta_index(td, y, b, alphas), qubit)


RSPSampler = Callable[[np.random.Generator], RSPResult]


def ideal_sampler() -> RSPSampler:
    return rsp_round_ideal


def faithful_sampler(n: int, mu: int, rng: np.random.Generator) -> RSPSampler:
    td = sample_trapdoor(n, mu, rng)
    return lambda r: rsp_round_faithful(td, r)


def _draw_with_constraint(
    sampler: RSPSampler, rng: np.random.Generator, accept: Callable[[int], bool]
) -> RSPResult:
    for _ in range(512):
        res = sampler(rng)
        if accept(res.theta_index):
            return res
    raise GadgetError("rejection sampling for preparation angle did not converge")


# --- gadget generation, routing, consumption, key update -------------------


@dataclass(frozen=True)
class Gadget:
    """Server-side gadget: the 4-qubit state plus its correction ciphertexts.

    All ciphertexts live one key level above the wire keys they will update;
    ``sk_enc`` (the encrypted lower secret key) bridges the gap via key
    switching.
    """

    state: StateVector
    x_ct: tuple[HECiphertext, HECiphertext]
    z_ct: tuple[HECiphertext, HECiphertext]
    e_ct: tuple[tuple[HECiphertext, HECiphertext], tuple[HECiphertext, HECiphertext]]
    sk_enc: tuple[HECiphertext, ...]
    level: int


@dataclass(frozen=True)
class GadgetSecrets:
    """Client-side record: preparation bits and leaf-family keystream bits."""

    p: tuple[int, int]
    x: tuple[int, int]
    z: tuple[int, int]
    x_stream: int
    z_stream: int
    e_stream: int


@dataclass(frozen=True)
class MeasurementPlan:
    """Public Bell-measurement routing derived from the key-bit ciphertext."""

    route: int  # pair position j the input teleports through
    consume_first: tuple[str, int]  # (input marker, head of pair j)
    consume_second: tuple[int, int]  # the other pair, measured against itself
    output: int  # gadget wire carrying the result


def gen_gadget(
    pk_next: HEPublicKey,
    sk_enc: tuple[HECiphertext, ...],
    k_bit: int,
    rng: np.random.Generator,
    sampler: RSPSampler,
) -> tuple[Gadget, GadgetSecrets]:
    """Build one conditional-phase gadget twisted by keystream parity ``k_bit``.

    Pair position j gets phase bit p_j = j XOR k_bit, so the position selected
    at runtime by a ciphertext's public masked parity carries exactly the
    encrypted bit's phase. Corrections that the server picks by public runtime
    data (position and flip outcome) are encrypted with shared per-family
    keystream bits, keeping downstream keystream parities choice-independent.
    """
    p = twist_bits(k_bit)
    heads, tails = [], []
    for j in range(PAIR_COUNT):
        heads.append(draw_head(sampler, rng))
        tails.append(draw_tail(sampler, rng, p[j]))
    state = assemble_gadget_state([h.state for h in heads], [t.state for t in tails])
    xs = tuple(theta_bits(h.theta_index)[0] for h in heads)
    zs = tuple(theta_bits(t.theta_index)[1] for t in tails)
    x_ct, z_ct, e_ct, secrets = build_gadget_ciphertexts(pk_next, p, xs, zs, rng)
    gadget = Gadget(state, x_ct, z_ct, e_ct, tuple(sk_enc), pk_next.level)
    return gadget, secrets


def twist_bits(k_bit: int) -> tuple[int, int]:
    if k_bit not in (0, 1):
        raise GadgetError(f"keystream parity must be a bit, got {k_bit}")
    return (k_bit, 1 ^ k_bit)


def draw_head(sampler: RSPSampler, rng: np.random.Generator) -> RSPResult:
    """Pair head: needs theta in {0, pi} (no phase bit)."""
    return _draw_with_constraint(sampler, rng, lambda i: i in (0, 2))


def draw_tail(sampler: RSPSampler, rng: np.random.Generator, p_bit: int) -> RSPResult:
    """Pair tail: its phase bit must equal the pair's twist."""
    return _draw_with_constraint(sampler, rng, lambda i: (i & 1) == p_bit)


def assemble_gadget_state(
    heads: list[StateVector], tails: list[StateVector]
) -> StateVector:
    """Couple each (head, tail) pair: CZ across the pair, then H on the head."""
    state = tensor(tensor(heads[0], tails[0]), tensor(heads[1], tails[1]))
    for j in range(PAIR_COUNT):
        state = apply_gate(state, gate("CZ", _HEAD[j], _TAIL[j]))
        state = apply_gate(state, gate("H", _HEAD[j]))
    return state


def build_gadget_ciphertexts(
    pk_next: HEPublicKey,
    p: tuple[int, int],
    xs: tuple[int, int],
    zs: tuple[int, int],
    rng: np.random.Generator,
) -> tuple[tuple, tuple, tuple, GadgetSecrets]:
    """Encrypt the per-pair correction bits with shared family keystream bits."""
    x_stream = int(rng.integers(2))
    z_stream = int(rng.integers(2))
    e_stream = int(rng.integers(2))
    x_ct = tuple(he_enc(pk_next, xs[j], rng, keystream_bit=x_stream) for j in range(2))
    z_ct = tuple(he_enc(pk_next, zs[j], rng, keystream_bit=z_stream) for j in range(2))
    e_ct = tuple(
        tuple(he_enc(pk_next, p[j] & (xs[j] ^ v), rng, keystream_bit=e_stream) for v in range(2))
        for j in range(2)
    )
    secrets = GadgetSecrets(p, xs, zs, x_stream, z_stream, e_stream)
    return x_ct, z_ct, e_ct, secrets


def gen_measurement(a_ct: HECiphertext) -> MeasurementPlan:
    """Route the input through the pair selected by the public masked parity."""
    j = public_masked_parity(a_ct)
    other = 1 - j
    return MeasurementPlan(
        route=j,
        consume_first=("input", _HEAD[j]),
        consume_second=(_HEAD[other], _TAIL[other]),
        output=_TAIL[j],
    )


def consume_gadget(
    state: StateVector,
    wire: int,
    gadget: Gadget,
    plan: MeasurementPlan,
    rng: np.random.Generator,
) -> tuple[StateVector, tuple[int, int]]:
    """Teleport ``wire`` through the gadget; returns the state and (u, v).

    The input wire position is preserved: the gadget's output qubit is moved
    back to ``wire`` after the spent qubits are measured out.
    """
    state.check_wires([wire])
    n = state.num_qubits
    full = tensor(state, gadget.state)
    # Track current positions of all surviving labels through removals.
    pos = {("reg", w): w for w in range(n)}
    pos.update({("gad", g): n + g for g in range(GADGET_QUBITS)})

    def take(label):
        where = pos.pop(label)
        for k in pos:
            if pos[k] > where:
                pos[k] -= 1
        return where

    def bell(st, la, lb):
        wa, wb = pos[la], pos[lb]
        out, st = bell_measure(st, wa, wb, rng)
        take(la)
        take(lb)
        return out, st

    (u, v), full = bell(full, ("reg", wire), ("gad", plan.consume_first[1]))
    _, full = bell(full, ("gad", plan.consume_second[0]), ("gad", plan.consume_second[1]))
    out_pos = pos[("gad", plan.output)]
    order = list(range(full.num_qubits))
    order.remove(out_pos)
    order.insert(wire, out_pos)
    if order != list(range(full.num_qubits)):
        full = permute_wires(full, order)
    return full, (u, v)


def gadget_key_update(
    gadget: Gadget,
    plan: MeasurementPlan,
    u: int,
    v: int,
    a_ct: HECiphertext,
    b_ct: HECiphertext,
    dagger: bool = False,
) -> tuple[HECiphertext, HECiphertext]:
    """Homomorphic pad-key update after consuming the gadget.

    a' = a XOR x_j XOR v and b' = b XOR z_j XOR u XOR e_{j,v}, with the old
    keys first switched up to the gadget's level. The inverse-rotation variant
    folds the extra Z^a from commuting Tdagger past the pad into b.
    """
    j = plan.route
    if dagger:
        b_ct = he_xor(b_ct, a_ct)
    a_up = key_switch(a_ct, gadget.sk_enc)
    b_up = key_switch(b_ct, gadget.sk_enc)
    a_new = he_xor(he_xor(a_up, gadget.x_ct[j]), he_const(v, gadget.level))
    b_new = he_xor(
        he_xor(he_xor(b_up, gadget.z_ct[j]), he_const(u, gadget.level)),
        gadget.e_ct[j][v],
    )
    return a_new, b_new
