"""Variational shadow classifier: sliding two-qubit windows over an
amplitude-encoded register, <X x X> shadow features, sigmoid read-out, and
cross-entropy training by parameter shift or central differences.

Three evaluation modes share one training loop. ``plaintext`` simulates the
windows directly. ``delegated-exact-gates`` runs every window on a one-time-
padded register with client-compensated rotation angles, reading the
expectation off the cipher register and correcting its sign from the pad --
numerically identical to plaintext, demonstrating encryption transparency.
``delegated-faithful`` first rewrites the window into Clifford+T and runs the
full homomorphic evaluation with gadgets.
"""
from __future__ import annotations

import csv
import importlib.resources
import struct
from dataclasses import dataclass
from math import pi

import numpy as np

from .pauli_frame import KeyFrame, update_clifford
from .qhe import encrypt, eval_circuit, keygen, xx_expectation_sign
from .simulator import (
    Gate,
    PauliString,
    StateVector,
    amplitude_encode,
    apply_circuit,
    apply_gate,
    expectation,
    gate,
)
from .skdecomp import DEFAULT_EPS_TARGET, decompose_circuit

MODES = ("plaintext", "delegated-exact-gates", "delegated-faithful")
SHADOW_WIDTH = 2


class VQAError(Exception):
    pass


# --- datasets ---------------------------------------------------------------


@dataclass(frozen=True)
class LabeledDataset:
    samples: tuple[tuple[np.ndarray, int], ...]
    n: int  # encoding width in qubits

    def __post_init__(self):
        for vec, label in self.samples:
            if label not in (0, 1):
                raise VQAError(f"labels must be binary, got {label}")
            if vec.size > 2**self.n or np.linalg.norm(vec) == 0:
                raise VQAError("feature vector too long or zero-norm")

    def __len__(self) -> int:
        return len(self.samples)


def load_digits_csv(path: str | None = None, n: int = 6) -> LabeledDataset:
    """Rows of 2^n-or-fewer comma-separated intensities followed by a label."""
    if path is None:
        ref = importlib.resources.files("qhevqa").joinpath("data/digits_01.csv")
        text = ref.read_text()
    else:
        with open(path, "r", encoding="utf-8") as fh:
            text = fh.read()
    samples = []
    for row in csv.reader(text.strip().splitlines()):
        if not row:
            continue
        values = [float(x) for x in row]
        samples.append((np.array(values[:-1]), int(values[-1])))
    return LabeledDataset(tuple(samples), n)


def load_idx(images_path: str, labels_path: str, n: int = 10) -> LabeledDataset:
    """IDX image/label pair (big-endian, magics 0x803 / 0x801), classes 0/1."""
    with open(images_path, "rb") as fh:
        magic, count, rows, cols = struct.unpack(">IIII", fh.read(16))
        if magic != 0x803:
            raise VQAError(f"bad image magic {magic:#x}")
        pixels = np.frombuffer(fh.read(count * rows * cols), dtype=np.uint8)
        images = pixels.reshape(count, rows * cols).astype(float)
    with open(labels_path, "rb") as fh:
        magic, lcount = struct.unpack(">II", fh.read(8))
        if magic != 0x801:
            raise VQAError(f"bad label magic {magic:#x}")
        labels = np.frombuffer(fh.read(lcount), dtype=np.uint8)
    if count != lcount:
        raise VQAError("image/label counts differ")
    samples = tuple(
        (images[i], int(labels[i])) for i in range(count) if labels[i] in (0, 1)
    )
    return LabeledDataset(samples, n)


# --- model and circuits -----------------------------------------------------


@dataclass
class ShadowModel:
    theta: np.ndarray  # shape (2, 4), radians; row = (window - 1) mod 2
    w: np.ndarray  # length n - SHADOW_WIDTH + 1
    bias: float
    n: int
    n_qsc: int = SHADOW_WIDTH

    def __post_init__(self):
        self.theta = np.asarray(self.theta, dtype=float)
        self.w = np.asarray(self.w, dtype=float)
        if self.theta.shape != (2, 4) or not np.all(np.isfinite(self.theta)):
            raise VQAError("theta must be a finite 2x4 matrix")
        if self.w.shape != (self.n - self.n_qsc + 1,):
            raise VQAError("weight length must be n - n_qsc + 1")

    @property
    def num_windows(self) -> int:
        return self.n - self.n_qsc + 1

    def copy(self) -> "ShadowModel":
        return ShadowModel(self.theta.copy(), self.w.copy(), self.bias, self.n, self.n_qsc)


# Paper-style starting angles usable via TrainConfig.theta_init.
REFERENCE_THETA_INIT = np.array(
    [[5.57, 4.34, 3.85, 6.22], [5.76, 1.40, 5.23, 5.05]]
)


def theta_row(window: int) -> int:
    return (window - 1) % 2


def build_shadow_circuit(model: ShadowModel, v: int) -> list[Gate]:
    """Two-qubit parameterized block on wires (v-1, v), v in 1..n-1."""
    if not 1 <= v < model.n:
        raise VQAError(f"window start {v} out of range 1..{model.n - 1}")
    row = model.theta[theta_row(v)]
    a, b = v - 1, v
    return [
        gate("RX", a, angle=row[0]),
        gate("RY", a, angle=row[1]),
        gate("RX", b, angle=row[2]),
        gate("CNOT", a, b),
        gate("CNOT", b, a),
        gate("RY", b, angle=row[3]),
    ]


def _xx_plaintext(state: StateVector, circuit: list[Gate], wires: tuple[int, int]) -> float:
    out = apply_circuit(state.copy(), circuit)
    return expectation(out, PauliString(("X", "X"), wires))


def _window_observable(circuit: list[Gate], wires: tuple[int, int]) -> np.ndarray:
    """U^dag (X x X) U as a 4x4 matrix, first wire most significant.

    The whole window acts on two wires, so the Heisenberg-picture observable
    collapses every feature evaluation to a 4x4 trace.
    """
    from .simulator import CNOT_MATRIX, CZ_MATRIX, FIXED_1Q

    a, b = wires
    u = np.eye(4, dtype=complex)
    for g in circuit:
        if len(g.wires) == 2:
            m = CNOT_MATRIX if g.kind == "CNOT" else CZ_MATRIX
            if g.wires == (a, b):
                pass
            elif g.wires == (b, a):
                swap = np.array(
                    [[1, 0, 0, 0], [0, 0, 1, 0], [0, 1, 0, 0], [0, 0, 0, 1]],
                    dtype=complex,
                )
                m = swap @ m @ swap
            else:
                raise VQAError("window circuit strays off its two wires")
            u = m @ u
        else:
            m1 = g.matrix()
            u = (np.kron(m1, np.eye(2)) if g.wires == (a,) else np.kron(np.eye(2), m1)) @ u
    xx = np.kron(FIXED_1Q["X"], FIXED_1Q["X"])
    return u.conj().T @ xx @ u


def _xx_plaintext_fast(
    reduced: np.ndarray, observable: np.ndarray
) -> float:
    return float(np.real(np.trace(reduced @ observable)))


def _window_reduced(state: StateVector, wires: tuple[int, int]) -> np.ndarray:
    # reduced_density_matrix packs its first listed wire least significant;
    # list the second window wire first so the first is the matrix MSB.
    from .simulator import reduced_density_matrix

    return reduced_density_matrix(state, [wires[1], wires[0]])


def _compensate(circuit: list[Gate], frame: KeyFrame) -> tuple[list[Gate], KeyFrame]:
    """Rewrite the circuit to act identically under the given pad.

    Rotations get sign-compensated angles (RX flips with the Z key, RY with
    both keys); Cliffords pass through with the tracked key relabeling.
    """
    out = []
    for g in circuit:
        if g.kind == "RX":
            (w,) = g.wires
            out.append(gate("RX", w, angle=g.angle * (-1) ** frame.keys[w].b))
        elif g.kind == "RY":
            (w,) = g.wires
            key = frame.keys[w]
            out.append(gate("RY", w, angle=g.angle * (-1) ** (key.a ^ key.b)))
        elif g.kind == "RZ":
            (w,) = g.wires
            out.append(gate("RZ", w, angle=g.angle * (-1) ** frame.keys[w].a))
        else:
            out.append(g)
            frame = update_clifford(frame, g)
    return out, frame


def _xx_delegated_exact(
    state: StateVector,
    circuit: list[Gate],
    wires: tuple[int, int],
    rng: np.random.Generator,
) -> float:
    frame = KeyFrame.random(state.num_qubits, rng)
    padded = state.copy()
    for w, key in enumerate(frame.keys):
        if key.b:
            padded = apply_gate(padded, gate("Z", w))
        if key.a:
            padded = apply_gate(padded, gate("X", w))
    compensated, final = _compensate(circuit, frame)
    cipher_out = apply_circuit(padded, compensated)
    raw = expectation(cipher_out, PauliString(("X", "X"), wires))
    sign = -1.0 if final.keys[wires[0]].b ^ final.keys[wires[1]].b else 1.0
    return sign * raw


def _xx_delegated_faithful(
    state: StateVector,
    circuit: list[Gate],
    wires: tuple[int, int],
    rng: np.random.Generator,
    eps_target: float,
) -> float:
    clifford_t, _ = decompose_circuit(circuit, eps_target)
    client, ek = keygen(16, state.num_qubits, clifford_t, rng)
    cs, _ = encrypt(client, state, rng)
    cs = eval_circuit(cs, clifford_t, ek, rng)
    raw = expectation(cs.register, PauliString(("X", "X"), wires))
    return xx_expectation_sign(client, cs, wires) * raw


def shadow_features(
    state: StateVector,
    model: ShadowModel,
    mode: str = "plaintext",
    rng: np.random.Generator | None = None,
    eps_target: float = DEFAULT_EPS_TARGET,
    evaluator=None,
) -> np.ndarray:
    """One <X x X> per sliding window position, each on a fresh input copy.

    ``evaluator(state, circuit, wires, rng)`` optionally replaces the built-in
    delegated evaluation (e.g. to route the circuit run over a wire protocol).
    """
    if state.num_qubits != model.n:
        raise VQAError(f"state width {state.num_qubits} != model width {model.n}")
    if mode not in MODES:
        raise VQAError(f"unknown mode {mode!r}")
    if mode != "plaintext" and rng is None:
        raise VQAError("delegated modes need an rng for pad keys")
    out = np.empty(model.num_windows)
    for v in range(1, model.n):
        circuit = build_shadow_circuit(model, v)
        wires = (v - 1, v)
        if evaluator is not None and mode != "plaintext":
            out[v - 1] = evaluator(state, circuit, wires, rng)
        elif mode == "plaintext":
            out[v - 1] = _xx_plaintext_fast(
                _window_reduced(state, wires), _window_observable(circuit, wires)
            )
        elif mode == "delegated-exact-gates":
            out[v - 1] = _xx_delegated_exact(state, circuit, wires, rng)
        else:
            out[v - 1] = _xx_delegated_faithful(state, circuit, wires, rng, eps_target)
    return out


def _reduced_stack(states: list[StateVector], n: int) -> list[np.ndarray]:
    """Per window, the stacked 2-qubit reduced states of every sample."""
    return [
        np.stack([_window_reduced(s, (v - 1, v)) for s in states]) for v in range(1, n)
    ]


def _features_from_reduced(red: list[np.ndarray], model: ShadowModel) -> np.ndarray:
    cols = []
    for v in range(1, model.n):
        obs = _window_observable(build_shadow_circuit(model, v), (v - 1, v))
        cols.append(np.real(np.einsum("nij,ji->n", red[v - 1], obs)))
    return np.stack(cols, axis=1)


# --- read-out, loss, gradients ----------------------------------------------


def predict(o: np.ndarray, w: np.ndarray, bias: float) -> float:
    if len(o) != len(w):
        raise VQAError("feature/weight length mismatch")
    return float(1.0 / (1.0 + np.exp(-(np.dot(w, o) + bias))))


_CLAMP = 1e-12


def cross_entropy(y_hat: np.ndarray, y: np.ndarray) -> float:
    clamped = np.clip(y_hat, _CLAMP, 1.0 - _CLAMP)
    return float(-np.mean(y * np.log(clamped) + (1 - y) * np.log(1 - clamped)))


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.01
    epochs: int = 20
    batch_size: int = 2
    grad_method: str = "parameter-shift"  # or "central-difference"
    alpha: float = pi / 2
    fd_step: float = 1e-5
    mode: str = "plaintext"
    seed: int = 0
    test_fraction: float = 0.25
    eps_target: float = DEFAULT_EPS_TARGET
    theta_init: np.ndarray | None = None

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise VQAError("learning rate must be positive")
        if self.epochs < 1:
            raise VQAError("epochs must be >= 1")
        if self.mode not in MODES:
            raise VQAError(f"unknown mode {self.mode!r}")
        if self.grad_method not in ("parameter-shift", "central-difference"):
            raise VQAError(f"unknown gradient method {self.grad_method!r}")


def _batch_features(states, model, config, rng, red=None, evaluator=None) -> np.ndarray:
    if config.mode == "plaintext":
        if red is None:
            red = _reduced_stack(states, model.n)
        return _features_from_reduced(red, model)
    return np.stack(
        [
            shadow_features(s, model, config.mode, rng, config.eps_target, evaluator)
            for s in states
        ]
    )


def gradients(
    states: list[StateVector],
    labels: np.ndarray,
    model: ShadowModel,
    config: TrainConfig,
    rng: np.random.Generator | None = None,
    red: list[np.ndarray] | None = None,
    evaluator=None,
) -> tuple[np.ndarray, np.ndarray, float]:
    """(d theta, d w, d bias) of the batch cross-entropy.

    Head gradients are analytic through the sigmoid; angle gradients shift
    each parameter by +-alpha (exact for half-turn generators) or by a small
    central-difference step, re-evaluating only the windows the row feeds.
    ``red`` optionally carries precomputed per-window reduced states for the
    plaintext fast path.
    """
    if config.mode == "plaintext" and red is None:
        red = _reduced_stack(states, model.n)
    feats = _batch_features(states, model, config, rng, red, evaluator)
    y_hat = np.array([predict(o, model.w, model.bias) for o in feats])
    resid = y_hat - labels  # d loss / d logit, up to the 1/N average
    d_w = feats.T @ resid / len(states)
    d_b = float(np.mean(resid))

    if config.grad_method == "parameter-shift":
        shift, denom = config.alpha, 2.0 * np.sin(config.alpha)
    else:
        shift, denom = config.fd_step, 2.0 * config.fd_step
    d_theta = np.zeros((2, 4))
    scale = denom * len(states)
    for r in range(2):
        windows = [v for v in range(1, model.n) if theta_row(v) == r]
        for c in range(4):
            for sgn in (+1, -1):
                shifted = model.copy()
                shifted.theta[r, c] += sgn * shift
                for v in windows:
                    circuit = build_shadow_circuit(shifted, v)
                    wires = (v - 1, v)
                    # d o_v / d theta_rc feeds the chain rule directly:
                    # dC/dtheta = mean(resid * w_v * do_v).
                    if config.mode == "plaintext":
                        obs = _window_observable(circuit, wires)
                        vals = np.real(np.einsum("nij,ji->n", red[v - 1], obs))
                        d_theta[r, c] += sgn * model.w[v - 1] * float(
                            np.dot(resid, vals)
                        ) / scale
                        continue
                    for m, state in enumerate(states):
                        if evaluator is not None:
                            val = evaluator(state, circuit, wires, rng)
                        elif config.mode == "delegated-exact-gates":
                            val = _xx_delegated_exact(state, circuit, wires, rng)
                        else:
                            val = _xx_delegated_faithful(
                                state, circuit, wires, rng, config.eps_target
                            )
                        d_theta[r, c] += sgn * resid[m] * model.w[v - 1] * val / scale
    return d_theta, d_w, d_b


@dataclass(frozen=True)
class EpochMetrics:
    epoch: int
    loss: float
    train_acc: float
    test_acc: float


def _evaluate(states, labels, model, config, rng, red=None, evaluator=None) -> tuple[float, float]:
    feats = _batch_features(states, model, config, rng, red, evaluator)
    y_hat = np.array([predict(o, model.w, model.bias) for o in feats])
    loss = cross_entropy(y_hat, labels)
    acc = float(np.mean((y_hat >= 0.5).astype(int) == labels))
    return loss, acc


def train(
    dataset: LabeledDataset, config: TrainConfig, evaluator=None, epoch_callback=None
) -> tuple[ShadowModel, list[EpochMetrics]]:
    """Minibatch gradient descent; deterministic given (seed, mode).

    ``epoch_callback(model, metrics_entry)`` fires after each epoch (e.g. to
    publish updated parameters to the other protocol party).
    """
    if len(dataset) == 0:
        raise VQAError("empty dataset")
    seq = np.random.SeedSequence(config.seed)
    data_rng, init_rng, eval_rng = (np.random.default_rng(s) for s in seq.spawn(3))

    states = [amplitude_encode(vec, dataset.n) for vec, _ in dataset.samples]
    labels = np.array([label for _, label in dataset.samples], dtype=float)
    order = data_rng.permutation(len(dataset))
    n_test = max(1, int(len(dataset) * config.test_fraction))
    test_idx, train_idx = order[:n_test], order[n_test:]

    theta0 = (
        np.array(config.theta_init, dtype=float)
        if config.theta_init is not None
        else init_rng.uniform(0.0, 2 * pi, (2, 4))
    )
    n_feats = dataset.n - SHADOW_WIDTH + 1
    model = ShadowModel(
        theta0,
        init_rng.uniform(-0.01, 0.01, n_feats),
        float(init_rng.uniform(-0.01, 0.01)),
        dataset.n,
    )

    red_all = _reduced_stack(states, dataset.n) if config.mode == "plaintext" else None

    def red_rows(idx):
        if red_all is None:
            return None
        return [r[idx] for r in red_all]

    metrics: list[EpochMetrics] = []
    for epoch in range(1, config.epochs + 1):
        shuffled = data_rng.permutation(train_idx)
        for start in range(0, len(shuffled), config.batch_size):
            batch = shuffled[start : start + config.batch_size]
            d_theta, d_w, d_b = gradients(
                [states[i] for i in batch],
                labels[batch],
                model,
                config,
                eval_rng,
                red_rows(batch),
                evaluator,
            )
            model.theta -= config.learning_rate * d_theta
            model.w -= config.learning_rate * d_w
            model.bias -= config.learning_rate * d_b
        train_loss, train_acc = _evaluate(
            [states[i] for i in train_idx],
            labels[train_idx],
            model,
            config,
            eval_rng,
            red_rows(train_idx),
            evaluator,
        )
        _, test_acc = _evaluate(
            [states[i] for i in test_idx],
            labels[test_idx],
            model,
            config,
            eval_rng,
            red_rows(test_idx),
            evaluator,
        )
        if not np.isfinite(train_loss):
            raise VQAError(f"training diverged at epoch {epoch}")
        metrics.append(EpochMetrics(epoch, train_loss, train_acc, test_acc))
        if epoch_callback is not None:
            epoch_callback(model, metrics[-1])
    return model, metrics


def write_metrics_csv(path: str, metrics: list[EpochMetrics]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "loss", "train_acc", "test_acc"])
        for m in metrics:
            writer.writerow(
                [m.epoch, f"{m.loss:.10f}", f"{m.train_acc:.10f}", f"{m.test_acc:.10f}"]
            )
