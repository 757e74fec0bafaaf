"""Two-party delegation protocol: framed messages, transports, role machines.

The client (data owner) and server (compute owner) exchange length-prefixed
frames carrying JSON payloads. A session walks a fixed phase order

    handshake -> keygen -> rsp -> evaluating <-> training -> done

with one extra legal edge, evaluating -> rsp, used to top up the server's
gadget queue mid-session. The server performs all quantum actions (remote
state preparation rounds, pair coupling, homomorphic evaluation, measurement)
and only ever sees public structure, ciphertext strings, padded amplitudes,
and model parameters; the client keeps the trapdoors, the key chain, and the
data.

Two transports share the frame codec byte for byte: an in-process queue pair
and localhost TCP (default port 7913; ``QHEVQA_HOST`` / ``QHEVQA_PORT``
override). All server randomness derives from the session seed sent in Hello,
so a run is replayable and transport-independent.

Simulation seam: states crossing the wire (the padded input register, remotely
prepared qubits held server-side) are simulator objects; in TCP mode the input
register is serialized as (re, im) amplitude pairs, which a physical protocol
would of course never do. The classical transcript is real wire traffic in
both modes.
"""
from __future__ import annotations

import json
import os
import socket
import struct
import threading
from dataclasses import dataclass

import numpy as np

from .classical_he import HECiphertext, ct_from_bytes, ct_to_bytes, he_dec
from .pauli_frame import KeyFrame, PauliKey
from .qhe import (
    CipherState,
    ClientKeys,
    EvalKey,
    encrypt,
    eval_circuit,
    keygen,
    t_count,
)
from .rsp_gadget import (
    Gadget,
    GadgetSecrets,
    RSPResult,
    TrapdoorFunction,
    assemble_gadget_state,
    build_gadget_ciphertexts,
    rsp_round_ideal,
    rsp_server_commit,
    rsp_server_measure,
    rsp_theta_index,
    sample_trapdoor,
    theta_bits,
    twist_bits,
)
from .simulator import (
    GATE_KINDS,
    Gate,
    PauliString,
    StateVector,
    apply_circuit,
    apply_gate,
    expectation,
    gate,
    measure,
)

VERSION = 1
MAX_FRAME = 16 * 1024 * 1024
HEADER = struct.Struct("<I")  # little-endian payload length
DEFAULT_HOST = "127.0.0.1"
DEFAULT_PORT = 7913

KINDS = (
    "Hello",
    "Announce",
    "RspCommit",
    "RspBasis",
    "RspOutcome",
    "CoupleInstr",
    "GadgetClassical",
    "EncInput",
    "RunRequest",
    "ShotResults",
    "EncKeysUpdate",
    "ParamUpdate",
    "Done",
    "Error",
)
KIND_CODE = {name: i for i, name in enumerate(KINDS)}


class ProtocolError(Exception):
    def __init__(self, code: str, text: str = ""):
        super().__init__(f"{code}: {text}" if text else code)
        self.code = code
        self.text = text


class ChannelClosed(Exception):
    pass


@dataclass(frozen=True)
class Message:
    kind: str
    payload: dict

    def __post_init__(self):
        if self.kind not in KIND_CODE:
            raise ProtocolError("kind", f"unknown message kind {self.kind!r}")
        if not isinstance(self.payload, dict):
            raise ProtocolError("payload", "payload must be a JSON object")


# --- frame codec ------------------------------------------------------------


def encode_message(msg: Message) -> bytes:
    body = json.dumps(
        msg.payload, sort_keys=True, separators=(",", ":"), ensure_ascii=False
    ).encode("utf-8")
    frame = HEADER.pack(len(body)) + bytes([VERSION, KIND_CODE[msg.kind]]) + body
    if len(frame) > MAX_FRAME:
        raise ProtocolError("oversize", f"frame of {len(frame)} bytes exceeds limit")
    return frame


def decode_message(data: bytes) -> Message:
    if len(data) < HEADER.size + 2:
        raise ProtocolError("framing", "frame shorter than header")
    if len(data) > MAX_FRAME:
        raise ProtocolError("oversize", f"frame of {len(data)} bytes exceeds limit")
    (length,) = HEADER.unpack(data[: HEADER.size])
    if length != len(data) - HEADER.size - 2:
        raise ProtocolError("framing", "length field does not match frame size")
    version, code = data[HEADER.size], data[HEADER.size + 1]
    if version != VERSION:
        raise ProtocolError("version", f"unsupported protocol version {version}")
    if code >= len(KINDS):
        raise ProtocolError("kind", f"unknown message kind code {code}")
    try:
        payload = json.loads(data[HEADER.size + 2 :].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ProtocolError("payload", f"malformed JSON payload: {exc}") from exc
    if not isinstance(payload, dict):
        raise ProtocolError("payload", "payload must be a JSON object")
    return Message(KINDS[code], payload)


# --- transports -------------------------------------------------------------


class Channel:
    """One endpoint of a bidirectional frame pipe."""

    def send(self, msg: Message) -> None:
        self.send_bytes(encode_message(msg))

    def recv(self) -> Message:
        return decode_message(self.recv_bytes())

    def send_bytes(self, data: bytes) -> None:  # pragma: no cover - interface
        raise NotImplementedError

    def recv_bytes(self) -> bytes:  # pragma: no cover - interface
        raise NotImplementedError

    def close(self) -> None:  # pragma: no cover - interface
        raise NotImplementedError


class InProcChannel(Channel):
    _SENTINEL = object()

    def __init__(self, inbox, outbox):
        import queue as _queue

        self._queue_mod = _queue
        self.inbox = inbox
        self.outbox = outbox
        self._closed = False

    def send_bytes(self, data: bytes) -> None:
        if self._closed:
            raise ChannelClosed("channel closed")
        self.outbox.put(data)

    def recv_bytes(self) -> bytes:
        item = self.inbox.get()
        if item is InProcChannel._SENTINEL:
            raise ChannelClosed("peer closed the channel")
        return item

    def close(self) -> None:
        if not self._closed:
            self._closed = True
            self.outbox.put(InProcChannel._SENTINEL)


def make_inproc_pair() -> tuple[InProcChannel, InProcChannel]:
    import queue

    a_to_b: queue.Queue = queue.Queue()
    b_to_a: queue.Queue = queue.Queue()
    return InProcChannel(b_to_a, a_to_b), InProcChannel(a_to_b, b_to_a)


class TcpChannel(Channel):
    def __init__(self, sock: socket.socket):
        self.sock = sock

    def _read_exactly(self, count: int) -> bytes:
        chunks = []
        remaining = count
        while remaining:
            chunk = self.sock.recv(remaining)
            if not chunk:
                raise ChannelClosed("connection closed mid-frame")
            chunks.append(chunk)
            remaining -= len(chunk)
        return b"".join(chunks)

    def send_bytes(self, data: bytes) -> None:
        try:
            self.sock.sendall(data)
        except OSError as exc:
            raise ChannelClosed(str(exc)) from exc

    def recv_bytes(self) -> bytes:
        try:
            header = self._read_exactly(HEADER.size)
            (length,) = HEADER.unpack(header)
            if length > MAX_FRAME - HEADER.size - 2:
                raise ProtocolError("oversize", f"payload of {length} bytes")
            rest = self._read_exactly(length + 2)
        except OSError as exc:
            raise ChannelClosed(str(exc)) from exc
        return header + rest

    def close(self) -> None:
        try:
            self.sock.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        self.sock.close()


def default_endpoint() -> tuple[str, int]:
    host = os.environ.get("QHEVQA_HOST", DEFAULT_HOST)
    port = int(os.environ.get("QHEVQA_PORT", DEFAULT_PORT))
    return host, port


def connect_tcp(host: str | None = None, port: int | None = None) -> TcpChannel:
    env_host, env_port = default_endpoint()
    sock = socket.create_connection((host or env_host, port or env_port))
    sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
    return TcpChannel(sock)


# --- session phase machine --------------------------------------------------

PHASES = ("handshake", "keygen", "rsp", "evaluating", "training", "done")
TRANSITIONS = frozenset(
    {
        ("handshake", "keygen"),
        ("keygen", "rsp"),
        ("rsp", "evaluating"),
        ("evaluating", "training"),
        ("training", "evaluating"),
        ("evaluating", "rsp"),  # gadget top-up mid-session
        ("evaluating", "done"),
        ("training", "done"),
        ("handshake", "done"),  # client may hang up before delegating anything
        ("keygen", "done"),
        ("rsp", "done"),
    }
)


@dataclass
class SessionState:
    role: str  # "client" or "server"
    phase: str = "handshake"
    gadget_budget: int = 0
    key_level: int = 0

    def __post_init__(self):
        if self.role not in ("client", "server"):
            raise ProtocolError("role", f"unknown role {self.role!r}")
        if self.phase not in PHASES:
            raise ProtocolError("phase", f"unknown phase {self.phase!r}")

    def advance(self, new_phase: str) -> None:
        if (self.phase, new_phase) not in TRANSITIONS:
            raise ProtocolError(
                "phase", f"illegal transition {self.phase} -> {new_phase}"
            )
        self.phase = new_phase

    def expect(self, *phases: str) -> None:
        if self.phase not in phases:
            raise ProtocolError(
                "phase", f"message not allowed in phase {self.phase!r}"
            )


def reachable_phases() -> set[str]:
    """Phases reachable from handshake under the transition table."""
    seen = {"handshake"}
    frontier = ["handshake"]
    while frontier:
        here = frontier.pop()
        for src, dst in TRANSITIONS:
            if src == here and dst not in seen:
                seen.add(dst)
                frontier.append(dst)
    return seen


# --- JSON <-> simulator conversions ----------------------------------------


def amps_to_json(state: StateVector) -> list[list[float]]:
    return [[float(a.real), float(a.imag)] for a in state.amplitudes]


def amps_from_json(pairs, num_qubits: int) -> StateVector:
    if len(pairs) != 2**num_qubits:
        raise ProtocolError("payload", "amplitude count does not match wire count")
    try:
        amps = np.array([complex(re, im) for re, im in pairs])
    except (TypeError, ValueError) as exc:
        raise ProtocolError("payload", f"bad amplitude entry: {exc}") from exc
    return StateVector(num_qubits, amps)


def circuit_to_json(circuit: list[Gate]) -> list[dict]:
    out = []
    for g in circuit:
        entry = {"kind": g.kind, "wires": list(g.wires)}
        if g.angle is not None:
            entry["angle"] = float(g.angle)
        out.append(entry)
    return out


def circuit_from_json(entries) -> list[Gate]:
    circuit = []
    try:
        for entry in entries:
            kind = entry["kind"]
            if kind not in GATE_KINDS:
                raise ProtocolError("payload", f"unknown gate kind {kind!r}")
            circuit.append(gate(kind, *entry["wires"], angle=entry.get("angle")))
    except (TypeError, KeyError) as exc:
        raise ProtocolError("payload", f"malformed circuit: {exc}") from exc
    return circuit


def ct_to_hex(ct: HECiphertext) -> str:
    return ct_to_bytes(ct).hex()


def ct_from_hex(text: str) -> HECiphertext:
    try:
        return ct_from_bytes(bytes.fromhex(text))
    except Exception as exc:  # noqa: BLE001 - hex and HE decode errors alike
        raise ProtocolError("payload", f"bad ciphertext encoding: {exc}") from exc


# --- server role ------------------------------------------------------------

ANNOUNCE = {
    "ansatz": "sliding-window-entangler",
    "layout": "windows (v-1, v) for v in 1..n-1, RX/RY rotations + CNOT pair",
    "observables": ["XX"],
    "gate_set": list(GATE_KINDS),
    "version": VERSION,
}


class ServerSession:
    """One server-side session: phase machine plus quantum/HE workloads.

    The session records every received payload in ``audit`` so tests can check
    server blindness: everything visible here is public structure, ciphertext
    strings, or padded quantum data.
    """

    def __init__(self, channel: Channel):
        self.channel = channel
        self.state = SessionState("server")
        self.rng: np.random.Generator | None = None
        self.mode = ""
        self.audit: list[tuple[str, dict]] = []
        self.qubits: dict[int, StateVector] = {}  # prepared RSP outputs
        self.pending: dict[int, StateVector] = {}  # committed, not yet measured
        self._next_qid = 0
        self._partial_state: StateVector | None = None
        self.gadgets: list[Gadget] = []
        self.register: StateVector | None = None
        self.enc_keys: list[tuple[HECiphertext, HECiphertext]] | None = None
        self.params: dict | None = None
        self.closed = False

    # -- plumbing --

    def run(self) -> None:
        try:
            while not self.closed:
                try:
                    msg = self.channel.recv()
                except ChannelClosed:
                    break
                except ProtocolError as exc:
                    self._fail(exc)
                    break
                try:
                    self._dispatch(msg)
                except ProtocolError as exc:
                    self._fail(exc)
                    break
                except Exception as exc:  # noqa: BLE001 - session must not crash
                    self._fail(ProtocolError("internal", str(exc)))
                    break
        finally:
            self.channel.close()

    def _fail(self, exc: ProtocolError) -> None:
        try:
            self.channel.send(Message("Error", {"code": exc.code, "text": exc.text}))
        except (ChannelClosed, OSError):
            pass
        self.closed = True

    def _reply(self, kind: str, payload: dict) -> None:
        self.channel.send(Message(kind, payload))

    def _dispatch(self, msg: Message) -> None:
        self.audit.append((msg.kind, msg.payload))
        handler = getattr(self, f"_on_{msg.kind.lower()}", None)
        if handler is None:
            raise ProtocolError("kind", f"server cannot handle {msg.kind}")
        handler(msg.payload)

    # -- handlers --

    def _on_hello(self, p: dict) -> None:
        self.state.expect("handshake")
        if p.get("version") != VERSION:
            raise ProtocolError("version", f"client version {p.get('version')!r}")
        seed = p.get("session_seed")
        if not isinstance(seed, int) or seed < 0:
            raise ProtocolError("payload", "session_seed must be a non-negative int")
        self.rng = np.random.default_rng(seed)
        self.mode = str(p.get("mode", ""))
        self._reply("Announce", ANNOUNCE)
        self.state.advance("keygen")

    def _on_gadgetclassical(self, p: dict) -> None:
        if "declare" in p:
            self.state.expect("keygen")
            declared = p["declare"]
            if not isinstance(declared, int) or declared < 0:
                raise ProtocolError("payload", "declared gadget count must be >= 0")
            self._reply("GadgetClassical", {"ok": True})
            self.state.advance("rsp")
            return
        self.state.expect("rsp")
        if self._partial_state is None:
            raise ProtocolError("order", "gadget ciphertexts before pair coupling")
        try:
            x_ct = tuple(ct_from_hex(h) for h in p["x_ct"])
            z_ct = tuple(ct_from_hex(h) for h in p["z_ct"])
            e_ct = tuple(tuple(ct_from_hex(h) for h in row) for row in p["e_ct"])
            sk_enc = tuple(ct_from_hex(h) for h in p["sk_enc"])
            level = int(p["level"])
        except (KeyError, TypeError) as exc:
            raise ProtocolError("payload", f"malformed gadget bundle: {exc}") from exc
        if len(x_ct) != 2 or len(z_ct) != 2 or len(e_ct) != 2:
            raise ProtocolError("payload", "gadget needs two of each correction")
        self.gadgets.append(
            Gadget(self._partial_state, x_ct, z_ct, e_ct, sk_enc, level)
        )
        self._partial_state = None
        self.state.gadget_budget = len(self.gadgets)
        self._reply("GadgetClassical", {"ok": True, "budget": len(self.gadgets)})

    def _on_rspbasis(self, p: dict) -> None:
        if self.state.phase == "evaluating":
            self.state.advance("rsp")  # top-up
        self.state.expect("rsp")
        assert self.rng is not None
        if p.get("ideal"):
            # Modeled shortcut: the server draws the angle itself, so this
            # variant is not blind; the claw-based flow below is.
            res: RSPResult = rsp_round_ideal(self.rng)
            qid = self._next_qid
            self._next_qid += 1
            self.qubits[qid] = res.state
            self._reply("RspOutcome", {"qid": qid, "theta_index": res.theta_index})
            return
        if "matrix" in p:
            matrix = np.asarray(p["matrix"], dtype=np.int64)
            if matrix.ndim != 2 or matrix.shape[0] < 1 or matrix.shape[1] < 2:
                raise ProtocolError("payload", "claw matrix must be 2-D")
            y, state = rsp_server_commit(matrix, self.rng)
            qid = self._next_qid
            self._next_qid += 1
            self.pending[qid] = state
            self._reply("RspCommit", {"qid": qid, "y": [int(b) for b in y]})
            return
        if "alphas" in p:
            qid = p.get("qid")
            if qid not in self.pending:
                raise ProtocolError("order", f"no committed round with qid {qid!r}")
            state = self.pending.pop(qid)
            alphas = np.asarray(p["alphas"], dtype=np.int64)
            b, qubit = rsp_server_measure(state, alphas, self.rng)
            self.qubits[qid] = qubit
            self._reply("RspOutcome", {"qid": qid, "b": [int(x) for x in b]})
            return
        raise ProtocolError("payload", "RspBasis needs 'matrix', 'alphas' or 'ideal'")

    def _on_coupleinstr(self, p: dict) -> None:
        self.state.expect("rsp")
        for qid in p.get("discard", ()):
            self.qubits.pop(qid, None)
        if p.get("close"):
            self._reply("CoupleInstr", {"ok": True})
            self.state.advance("evaluating")
            return
        pairs = p.get("pairs")
        if (
            not isinstance(pairs, list)
            or len(pairs) != 2
            or any(len(pair) != 2 for pair in pairs)
        ):
            raise ProtocolError("payload", "need two (head, tail) qubit pairs")
        try:
            heads = [self.qubits.pop(pair[0]) for pair in pairs]
            tails = [self.qubits.pop(pair[1]) for pair in pairs]
        except KeyError as exc:
            raise ProtocolError("order", f"unknown prepared qubit {exc}") from exc
        self._partial_state = assemble_gadget_state(heads, tails)
        self._reply("CoupleInstr", {"ok": True})

    def _on_encinput(self, p: dict) -> None:
        self.state.expect("evaluating")
        try:
            num_wires = int(p["num_wires"])
            amps = p["amps"]
        except (KeyError, TypeError) as exc:
            raise ProtocolError("payload", f"malformed input: {exc}") from exc
        self.register = amps_from_json(amps, num_wires)
        keys = p.get("enc_keys")
        if keys is None:
            self.enc_keys = None
        else:
            if len(keys) != num_wires:
                raise ProtocolError("payload", "one key pair per wire required")
            self.enc_keys = [
                (ct_from_hex(a), ct_from_hex(b)) for a, b in keys
            ]
        self._reply("EncInput", {"ok": True})

    def _on_runrequest(self, p: dict) -> None:
        self.state.expect("evaluating")
        assert self.rng is not None
        if self.register is None:
            raise ProtocolError("order", "RunRequest before EncInput")
        circuit = circuit_from_json(p.get("circuit", ()))
        shots = int(p.get("shots", 1))
        if shots < 1:
            raise ProtocolError("payload", "shots must be >= 1")
        spec = p.get("measure")
        if not isinstance(spec, dict) or spec.get("type") not in ("xx", "bits"):
            raise ProtocolError("payload", "measure must be 'xx' or 'bits'")
        wires = [int(w) for w in spec.get("wires", ())]
        if p.get("use_gadgets"):
            self._run_gadgets(circuit, shots, spec, wires)
        else:
            self._run_plain(circuit, shots, spec, wires)

    def _run_plain(self, circuit, shots, spec, wires) -> None:
        """Compensated-circuit mode: keys stay client-side, no gadgets."""
        values, bits = [], []
        for _ in range(shots):
            out = apply_circuit(self.register, circuit)
            if spec["type"] == "xx":
                values.append(
                    expectation(out, PauliString(("X", "X"), tuple(wires)))
                )
            else:
                row = []
                for w in wires:
                    bit, out = measure(out, w, spec.get("basis", "Z"), self.rng)
                    row.append(bit)
                bits.append(row)
        self._reply("ShotResults", {"values": values, "bits": bits})
        self._reply("EncKeysUpdate", {"enc_keys": None, "level": 0})

    def _run_gadgets(self, circuit, shots, spec, wires) -> None:
        """Full homomorphic mode: consume queued gadgets, return updated keys."""
        if self.enc_keys is None:
            raise ProtocolError("order", "homomorphic run needs encrypted keys")
        needed = t_count(circuit)
        if shots * needed > len(self.gadgets):
            raise ProtocolError(
                "budget",
                f"{shots * needed} gadgets needed, {len(self.gadgets)} queued",
            )
        values, bits, key_rows = [], [], []
        for _ in range(shots):
            run_gadgets, self.gadgets = self.gadgets[:needed], self.gadgets[needed:]
            ek = EvalKey(tuple(run_gadgets), (), ())
            cs = CipherState(self.register.copy(), tuple(self.enc_keys), 0)
            cs = eval_circuit(cs, circuit, ek, self.rng)
            out = cs.register
            if spec["type"] == "xx":
                values.append(
                    expectation(out, PauliString(("X", "X"), tuple(wires)))
                )
            else:
                row = []
                for w in wires:
                    bit, out = measure(out, w, spec.get("basis", "Z"), self.rng)
                    row.append(bit)
                bits.append(row)
            key_rows.append(
                [[ct_to_hex(a), ct_to_hex(b)] for a, b in cs.encrypted_keys]
            )
            final_level = cs.level
        self.state.gadget_budget = len(self.gadgets)
        self.state.key_level = final_level
        self._reply("ShotResults", {"values": values, "bits": bits})
        self._reply("EncKeysUpdate", {"enc_keys": key_rows, "level": final_level})

    def _on_paramupdate(self, p: dict) -> None:
        self.state.expect("evaluating")
        self.state.advance("training")
        self.params = dict(p)
        self._reply("ParamUpdate", {"ok": True})
        self.state.advance("evaluating")

    def _on_done(self, p: dict) -> None:
        self.state.advance("done")
        self._reply("Done", {})
        self.closed = True

    def _on_error(self, p: dict) -> None:
        self.closed = True


def run_server(channel: Channel) -> ServerSession:
    """Service one session on an already-connected channel (blocking)."""
    session = ServerSession(channel)
    session.run()
    return session


def serve_inproc() -> tuple[Channel, ServerSession, threading.Thread]:
    """Spin up a server session on a background thread; returns client end."""
    client_end, server_end = make_inproc_pair()
    session = ServerSession(server_end)
    thread = threading.Thread(target=session.run, daemon=True)
    thread.start()
    return client_end, session, thread


class TcpServer:
    """Localhost listener servicing each connection in its own thread."""

    def __init__(self, host: str | None = None, port: int | None = None):
        env_host, env_port = default_endpoint()
        self.host = host or env_host
        self.listener = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        self.listener.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        self.listener.bind((self.host, env_port if port is None else port))
        self.port = self.listener.getsockname()[1]
        self.sessions: list[ServerSession] = []
        self._threads: list[threading.Thread] = []
        self._accept_thread: threading.Thread | None = None
        self._stopping = False

    def start(self) -> "TcpServer":
        self.listener.listen()
        self._accept_thread = threading.Thread(target=self._accept_loop, daemon=True)
        self._accept_thread.start()
        return self

    def _accept_loop(self) -> None:
        while not self._stopping:
            try:
                sock, _ = self.listener.accept()
            except OSError:
                break
            sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
            session = ServerSession(TcpChannel(sock))
            self.sessions.append(session)
            thread = threading.Thread(target=session.run, daemon=True)
            self._threads.append(thread)
            thread.start()

    def stop(self) -> None:
        self._stopping = True
        self.listener.close()
        if self._accept_thread is not None:
            self._accept_thread.join(timeout=5)
        for thread in self._threads:
            thread.join(timeout=5)


# --- client role ------------------------------------------------------------


class ClientSession:
    """Client-side driver: handshake, gadget provisioning, delegated runs."""

    def __init__(self, channel: Channel):
        self.channel = channel
        self.state = SessionState("client")
        self.announce: dict | None = None
        self._slots: list[tuple] = []  # (pk_next, sk_enc, k_bit) per gadget slot

    # -- plumbing --

    def _ask(self, kind: str, payload: dict, *expected: str) -> Message:
        self.channel.send(Message(kind, payload))
        reply = self.channel.recv()
        if reply.kind == "Error":
            raise ProtocolError(
                reply.payload.get("code", "server"), reply.payload.get("text", "")
            )
        if expected and reply.kind not in expected:
            raise ProtocolError("kind", f"expected {expected}, got {reply.kind}")
        return reply

    def _recv(self, *expected: str) -> Message:
        reply = self.channel.recv()
        if reply.kind == "Error":
            raise ProtocolError(
                reply.payload.get("code", "server"), reply.payload.get("text", "")
            )
        if expected and reply.kind not in expected:
            raise ProtocolError("kind", f"expected {expected}, got {reply.kind}")
        return reply

    # -- phases --

    def hello(self, session_seed: int, mode: str) -> dict:
        self.state.expect("handshake")
        reply = self._ask(
            "Hello",
            {"version": VERSION, "session_seed": int(session_seed), "mode": mode},
            "Announce",
        )
        self.announce = reply.payload
        self.state.advance("keygen")
        return reply.payload

    def open_rsp(self, declared: int = 0) -> None:
        self.state.expect("keygen")
        self._ask("GadgetClassical", {"declare": int(declared)}, "GadgetClassical")
        self.state.advance("rsp")

    def close_rsp(self) -> None:
        self.state.expect("rsp")
        self._ask("CoupleInstr", {"close": True}, "CoupleInstr")
        self.state.advance("evaluating")

    def reopen_rsp(self) -> None:
        self.state.expect("evaluating")
        self.state.advance("rsp")

    # -- remote state preparation --

    def _draw_remote(self, rng, rsp_mode: str, n: int, mu: int, accept):
        """Repeat remote rounds until the recovered angle satisfies ``accept``.

        Returns (qid, theta_index, rejected qids to discard).
        """
        discards = []
        for _ in range(512):
            if rsp_mode == "ideal":
                reply = self._ask("RspBasis", {"ideal": True}, "RspOutcome")
                qid = reply.payload["qid"]
                idx = reply.payload["theta_index"]
            else:
                td: TrapdoorFunction = sample_trapdoor(n, mu, rng)
                commit = self._ask(
                    "RspBasis",
                    {"matrix": [[int(v) for v in row] for row in td.matrix]},
                    "RspCommit",
                )
                qid = commit.payload["qid"]
                y = np.asarray(commit.payload["y"], dtype=np.int64)
                alphas = rng.integers(0, 2, n - 1)
                outcome = self._ask(
                    "RspBasis",
                    {"qid": qid, "alphas": [int(a) for a in alphas]},
                    "RspOutcome",
                )
                b = np.asarray(outcome.payload["b"], dtype=np.int64)
                idx = rsp_theta_index(td, y, b, alphas)
            if accept(idx):
                return qid, idx, discards
            discards.append(qid)
        raise ProtocolError("rsp", "rejection sampling did not converge")

    def provision_gadget(
        self,
        pk_next,
        sk_enc,
        k_bit: int,
        rng: np.random.Generator,
        rsp_mode: str = "ideal",
        rsp_n: int = 4,
        rsp_mu: int = 4,
    ) -> GadgetSecrets:
        """Build one gadget on the server: RSP rounds, coupling, ciphertexts."""
        self.state.expect("rsp")
        p = twist_bits(k_bit)
        pairs, discards, xs, zs = [], [], [], []
        for j in range(2):
            head_qid, head_idx, rejected = self._draw_remote(
                rng, rsp_mode, rsp_n, rsp_mu, lambda i: i in (0, 2)
            )
            discards.extend(rejected)
            tail_qid, tail_idx, rejected = self._draw_remote(
                rng, rsp_mode, rsp_n, rsp_mu, lambda i, pj=p[j]: (i & 1) == pj
            )
            discards.extend(rejected)
            pairs.append([head_qid, tail_qid])
            xs.append(theta_bits(head_idx)[0])
            zs.append(theta_bits(tail_idx)[1])
        self._ask(
            "CoupleInstr", {"pairs": pairs, "discard": discards}, "CoupleInstr"
        )
        x_ct, z_ct, e_ct, secrets = build_gadget_ciphertexts(
            pk_next, p, tuple(xs), tuple(zs), rng
        )
        self._ask(
            "GadgetClassical",
            {
                "x_ct": [ct_to_hex(c) for c in x_ct],
                "z_ct": [ct_to_hex(c) for c in z_ct],
                "e_ct": [[ct_to_hex(c) for c in row] for row in e_ct],
                "sk_enc": [ct_to_hex(c) for c in sk_enc],
                "level": pk_next.level,
            },
            "GadgetClassical",
        )
        return secrets

    def remote_keygen(
        self,
        security: int,
        num_wires: int,
        circuit: list[Gate],
        rng: np.random.Generator,
        rsp_mode: str = "ideal",
        rsp_n: int = 4,
        rsp_mu: int = 4,
    ) -> ClientKeys:
        """Run key generation with gadgets provisioned on the server.

        Must be called in the rsp phase (after ``open_rsp``). Records each
        slot's key material so ``top_up`` can replay provisioning for
        additional runs of the same circuit.
        """
        self._slots = []

        def factory(i, pk_next, sk_enc, k_bit):
            self._slots.append((pk_next, sk_enc, k_bit))
            secrets = self.provision_gadget(
                pk_next, sk_enc, k_bit, rng, rsp_mode, rsp_n, rsp_mu
            )
            return None, secrets

        client_keys, _ = keygen(
            security, num_wires, circuit, rng, gadget_factory=factory
        )
        return client_keys

    def top_up(
        self,
        runs: int,
        rng: np.random.Generator,
        rsp_mode: str = "ideal",
        rsp_n: int = 4,
        rsp_mu: int = 4,
    ) -> None:
        """Provision ``runs`` more gadget sets for the previous circuit."""
        for _ in range(runs):
            for pk_next, sk_enc, k_bit in self._slots:
                self.provision_gadget(
                    pk_next, sk_enc, k_bit, rng, rsp_mode, rsp_n, rsp_mu
                )

    # -- delegated evaluation --

    def send_input(
        self,
        register: StateVector,
        enc_keys: tuple[tuple[HECiphertext, HECiphertext], ...] | None,
    ) -> None:
        self.state.expect("evaluating")
        payload = {
            "num_wires": register.num_qubits,
            "amps": amps_to_json(register),
            "enc_keys": None
            if enc_keys is None
            else [[ct_to_hex(a), ct_to_hex(b)] for a, b in enc_keys],
            "level": 0,
        }
        self._ask("EncInput", payload, "EncInput")

    def request_run(
        self,
        circuit: list[Gate],
        measure_spec: dict,
        use_gadgets: bool,
        shots: int = 1,
    ) -> tuple[dict, dict]:
        self.state.expect("evaluating")
        self.channel.send(
            Message(
                "RunRequest",
                {
                    "circuit": circuit_to_json(circuit),
                    "measure": measure_spec,
                    "use_gadgets": use_gadgets,
                    "shots": shots,
                },
            )
        )
        results = self._recv("ShotResults").payload
        keys = self._recv("EncKeysUpdate").payload
        return results, keys

    def param_update(self, theta, w, bias: float, epoch: int) -> None:
        self.state.expect("evaluating")
        self.state.advance("training")
        self._ask(
            "ParamUpdate",
            {
                "theta": np.asarray(theta, dtype=float).tolist(),
                "w": np.asarray(w, dtype=float).tolist(),
                "b": float(bias),
                "epoch": int(epoch),
            },
            "ParamUpdate",
        )
        self.state.advance("evaluating")

    def done(self) -> None:
        try:
            self._ask("Done", {}, "Done")
        except (ChannelClosed, ProtocolError):
            pass
        self.state.phase = "done"
        self.channel.close()


# --- delegated QHE run over the wire ----------------------------------------


def client_qhe_run(
    session: ClientSession,
    circuit: list[Gate],
    state: StateVector,
    rng: np.random.Generator,
    shots: int = 1,
    measure_wires: tuple[int, ...] = (0,),
    basis: str = "Z",
    security: int = 16,
    rsp_mode: str = "ideal",
    rsp_n: int = 4,
    rsp_mu: int = 4,
) -> list[dict[int, int]]:
    """Full homomorphic delegation of one Clifford+T circuit, multi-shot.

    Provisions shot-many gadget sets, encrypts, delegates, and decrypts each
    shot's raw bits with that run's updated keys. Returns per-shot corrected
    outcome dictionaries keyed by wire.
    """
    session.state.expect("rsp", "evaluating")
    if session.state.phase == "evaluating":
        session.reopen_rsp()
    client_keys = session.remote_keygen(
        security, state.num_qubits, circuit, rng, rsp_mode, rsp_n, rsp_mu
    )
    session.top_up(shots - 1, rng, rsp_mode, rsp_n, rsp_mu)
    session.close_rsp()

    cs, _ = encrypt(client_keys, state, rng)
    session.send_input(cs.register, cs.encrypted_keys)
    results, keys = session.request_run(
        circuit,
        {"type": "bits", "basis": basis, "wires": list(measure_wires)},
        use_gadgets=True,
        shots=shots,
    )
    level = keys["level"]
    sk = client_keys.triples[level].sk
    corrected = []
    for row, key_row in zip(results["bits"], keys["enc_keys"]):
        frame = KeyFrame(
            [PauliKey(he_dec(sk, ct_from_hex(a)), he_dec(sk, ct_from_hex(b))) for a, b in key_row]
        )
        shot = {}
        for w, bit in zip(measure_wires, row):
            key = frame.keys[w]
            flip = key.a if basis == "Z" else key.b
            shot[w] = bit ^ flip
        corrected.append(shot)
    return corrected


# --- delegated training (protocol-level run_client) -------------------------


def make_exact_evaluator(session: ClientSession):
    """Window evaluator routing compensated circuits through the session.

    Matches the in-library compensated-rotation mode value for value: the
    client pads the input and rewrites the circuit, the server only ever sees
    the padded register and angle signs.
    """
    from .vqa import _compensate

    def evaluator(state, circuit, wires, rng):
        frame = KeyFrame.random(state.num_qubits, rng)
        padded = state.copy()
        for w, key in enumerate(frame.keys):
            if key.b:
                padded = apply_gate(padded, gate("Z", w))
            if key.a:
                padded = apply_gate(padded, gate("X", w))
        compensated, final = _compensate(circuit, frame)
        session.send_input(padded, None)
        results, _ = session.request_run(
            compensated, {"type": "xx", "wires": list(wires)}, use_gadgets=False
        )
        raw = results["values"][0]
        sign = -1.0 if final.keys[wires[0]].b ^ final.keys[wires[1]].b else 1.0
        return sign * raw

    return evaluator


def make_faithful_evaluator(
    session: ClientSession,
    eps_target: float = 1e-2,
    security: int = 16,
    rsp_mode: str = "ideal",
):
    """Window evaluator delegating the decomposed circuit homomorphically.

    Each evaluation provisions fresh gadgets (one per T gate) for the exact
    circuit it is about to run, so the server's gadget twists always match
    the key flow. Dramatically slower than the compensated mode; intended for
    demonstrations and spot checks, not full training sweeps.
    """
    from .skdecomp import decompose_circuit

    def evaluator(state, circuit, wires, rng):
        clifford_t, _ = decompose_circuit(circuit, eps_target)
        session.reopen_rsp()
        client_keys = session.remote_keygen(
            security, state.num_qubits, clifford_t, rng, rsp_mode
        )
        session.close_rsp()
        cs, _ = encrypt(client_keys, state, rng)
        session.send_input(cs.register, cs.encrypted_keys)
        results, keys = session.request_run(
            clifford_t, {"type": "xx", "wires": list(wires)}, use_gadgets=True
        )
        sk = client_keys.triples[keys["level"]].sk
        key_row = keys["enc_keys"][0]
        b1 = he_dec(sk, ct_from_hex(key_row[wires[0]][1]))
        b2 = he_dec(sk, ct_from_hex(key_row[wires[1]][1]))
        sign = -1.0 if b1 ^ b2 else 1.0
        return sign * results["values"][0]

    return evaluator


def run_client(channel: Channel, dataset, config):
    """Drive a full delegated training session over an open channel.

    Returns (model, metrics) exactly matching a local run with the same seed:
    the delegated-exact mode routes every window evaluation through the
    server, plaintext mode trains locally but still publishes parameters.
    """
    from .vqa import train

    session = ClientSession(channel)
    session.hello(config.seed, config.mode)
    session.open_rsp(0)
    session.close_rsp()

    if config.mode == "plaintext":
        evaluator = None
    elif config.mode == "delegated-exact-gates":
        evaluator = make_exact_evaluator(session)
    else:
        evaluator = make_faithful_evaluator(session, config.eps_target)

    def publish(model, entry):
        session.param_update(model.theta, model.w, model.bias, entry.epoch)

    try:
        model, metrics = train(
            dataset, config, evaluator=evaluator, epoch_callback=publish
        )
    finally:
        session.done()
    return model, metrics
