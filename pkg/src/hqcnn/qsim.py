"""Dense density-matrix simulation of small qubit registers.

States are 2^n x 2^n complex matrices with qubit 0 as the most significant
bit of the basis index. All operations return new states; inputs are never
mutated, so values can be shared freely across concurrent simulations.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

MAX_QUBITS = 12

# Structural tolerances: 1e-10 for algebraic identities (trace, Hermiticity),
# 1e-9 where an eigensolver is involved (positivity, Kraus completeness).
ATOL_STRUCT = 1e-10
ATOL_PSD = 1e-9


class CapacityError(ValueError):
    """Qubit count outside the supported 1..12 range."""


_I2 = np.eye(2, dtype=complex)
_X = np.array([[0, 1], [1, 0]], dtype=complex)
_Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
_Z = np.array([[1, 0], [0, -1]], dtype=complex)
_H = np.array([[1, 1], [1, -1]], dtype=complex) / math.sqrt(2)
_SX = 0.5 * np.array([[1 + 1j, 1 - 1j], [1 - 1j, 1 + 1j]])
# Control is the first qubit (most significant bit).
_CX = np.array([[1, 0, 0, 0], [0, 1, 0, 0], [0, 0, 0, 1], [0, 0, 1, 0]], dtype=complex)
_SWAP = np.array([[1, 0, 0, 0], [0, 0, 1, 0], [0, 1, 0, 0], [0, 0, 0, 1]], dtype=complex)
# Echoed cross-resonance, fixed as (X (x) I - Y (x) X)/sqrt(2); equivalent to
# CX up to single-qubit rotations, which is the only property relied upon.
_ECR = (np.kron(_X, _I2) - np.kron(_Y, _X)) / math.sqrt(2)

PAULIS = {"X": _X, "Y": _Y, "Z": _Z}


def _rx(t: float) -> np.ndarray:
    c, s = math.cos(t / 2), math.sin(t / 2)
    return np.array([[c, -1j * s], [-1j * s, c]])


def _ry(t: float) -> np.ndarray:
    c, s = math.cos(t / 2), math.sin(t / 2)
    return np.array([[c, -s], [s, c]], dtype=complex)


def _rz(t: float) -> np.ndarray:
    return np.array([[np.exp(-1j * t / 2), 0], [0, np.exp(1j * t / 2)]])


def _controlled(u: np.ndarray) -> np.ndarray:
    m = np.eye(4, dtype=complex)
    m[2:, 2:] = u
    return m


_FIXED_GATES = {"X": _X, "H": _H, "SX": _SX, "CX": _CX, "SWAP": _SWAP, "ECR": _ECR}
_ROTATIONS = {
    "RX": _rx,
    "RY": _ry,
    "RZ": _rz,
    "CRZ": lambda t: _controlled(_rz(t)),
    "CRX": lambda t: _controlled(_rx(t)),
}

GATE_ARITY = {
    "RX": 1, "RY": 1, "RZ": 1, "SX": 1, "X": 1, "H": 1,
    "CX": 2, "ECR": 2, "SWAP": 2, "CRZ": 2, "CRX": 2,
}


def gate_matrix(name: str, params: tuple[float, ...] = ()) -> np.ndarray:
    if name in _FIXED_GATES:
        if params:
            raise ValueError(f"{name} takes no parameters")
        return _FIXED_GATES[name]
    if name in _ROTATIONS:
        if len(params) != 1:
            raise ValueError(f"{name} takes exactly one angle")
        return _ROTATIONS[name](params[0])
    raise ValueError(f"unknown gate {name!r}")


@dataclass(frozen=True)
class GateUnitary:
    """A named gate with bound rotation angles."""

    name: str
    params: tuple[float, ...] = ()

    @property
    def arity(self) -> int:
        return GATE_ARITY[self.name]

    @property
    def matrix(self) -> np.ndarray:
        return gate_matrix(self.name, self.params)


@dataclass
class DensityMatrix:
    num_qubits: int
    data: np.ndarray

    def copy(self) -> "DensityMatrix":
        return DensityMatrix(self.num_qubits, self.data.copy())

    @property
    def dim(self) -> int:
        return 1 << self.num_qubits

    def validate(self) -> None:
        """Raise if the state is not a valid density matrix."""
        rho = self.data
        if rho.shape != (self.dim, self.dim):
            raise ValueError(f"shape {rho.shape} does not match {self.num_qubits} qubits")
        if np.max(np.abs(rho - rho.conj().T)) > ATOL_STRUCT:
            raise ValueError("state is not Hermitian")
        if abs(np.trace(rho).real - 1.0) > ATOL_STRUCT:
            raise ValueError(f"trace {np.trace(rho).real} != 1")
        if np.linalg.eigvalsh(rho).min() < -ATOL_PSD:
            raise ValueError("state has a negative eigenvalue")


def new_zero_state(n: int) -> DensityMatrix:
    if not 1 <= n <= MAX_QUBITS:
        raise CapacityError(f"qubit count must be in 1..{MAX_QUBITS}, got {n}")
    rho = np.zeros((1 << n, 1 << n), dtype=complex)
    rho[0, 0] = 1.0
    return DensityMatrix(n, rho)


def _check_targets(n: int, targets: tuple[int, ...], arity: int) -> None:
    if len(targets) != arity:
        raise ValueError(f"expected {arity} target(s), got {len(targets)}")
    if len(set(targets)) != len(targets):
        raise ValueError(f"duplicate targets {targets}")
    for q in targets:
        if not 0 <= q < n:
            raise ValueError(f"qubit {q} out of range for {n} qubits")


def _contract(tensor: np.ndarray, m: np.ndarray, axes: tuple[int, ...]) -> np.ndarray:
    """Contract matrix m onto the given tensor axes, keeping axis order."""
    k = len(axes)
    mt = m.reshape((2,) * (2 * k))
    out = np.tensordot(mt, tensor, axes=(tuple(range(k, 2 * k)), axes))
    return np.moveaxis(out, range(k), axes)


def apply_matrix(rho: DensityMatrix, u: np.ndarray, targets: tuple[int, ...]) -> DensityMatrix:
    """rho -> U rho U† with U acting on the given qubits."""
    n = rho.num_qubits
    k = len(targets)
    _check_targets(n, tuple(targets), k)
    t = rho.data.reshape((2,) * (2 * n))
    t = _contract(t, u, tuple(targets))
    t = _contract(t, u.conj(), tuple(q + n for q in targets))
    return DensityMatrix(n, t.reshape(rho.dim, rho.dim))


def apply_gate(rho: DensityMatrix, gate: GateUnitary, targets: tuple[int, ...]) -> DensityMatrix:
    _check_targets(rho.num_qubits, tuple(targets), gate.arity)
    return apply_matrix(rho, gate.matrix, tuple(targets))


# ---------------------------------------------------------------------------
# Channels


def _choi_from_superop(s: np.ndarray, dim: int) -> np.ndarray:
    """Choi matrix of a superoperator given in the kron(K, conj(K)) layout."""
    # s[(r', c'), (r, c)] = sum_K K[r', r] conj(K[c', c]); reshuffle to
    # choi[(r, r'), (c, c')] so that choi = sum_K vec(K) vec(K)†.
    t = s.reshape(dim, dim, dim, dim)  # [r', c', r, c]
    choi = np.transpose(t, (2, 0, 3, 1)).reshape(dim * dim, dim * dim)
    return choi


def _kraus_from_choi(choi: np.ndarray, dim: int) -> tuple[np.ndarray, ...]:
    vals, vecs = np.linalg.eigh(choi)
    ops = []
    for lam, v in zip(vals, vecs.T):
        if lam < -ATOL_PSD:
            raise ValueError(f"channel is not completely positive (eigenvalue {lam})")
        if lam > ATOL_PSD:
            ops.append(math.sqrt(lam) * v.reshape(dim, dim))
    return tuple(ops)


@dataclass(frozen=True)
class ChannelAction:
    """A CPTP map (Kraus set or single-qubit affine action) or a classical
    readout confusion matrix.

    kind "kraus":    data = tuple of Kraus operators
    kind "affine1q": data = (p_reset, dephase_factor); the map sends
                     rho11 -> (1-p_reset) rho11, rho01 -> dephase * rho01
                     with ground-state fixed point
    kind "confusion": data = 2x2 row-stochastic matrix, rows = true bit
    """

    kind: str
    data: tuple

    def __post_init__(self):
        if self.kind == "kraus":
            ops = self.data
            d = ops[0].shape[0]
            acc = sum(k.conj().T @ k for k in ops)
            if np.max(np.abs(acc - np.eye(d))) > ATOL_PSD:
                raise ValueError("Kraus operators do not satisfy completeness")
        elif self.kind == "affine1q":
            p_reset, dephase = self.data
            if not 0.0 <= p_reset <= 1.0:
                raise ValueError(f"p_reset {p_reset} outside [0, 1]")
            # CPTP requires the coherence decay to be at least as fast as
            # sqrt of the population decay: dephase <= sqrt(1 - p_reset).
            if dephase < 0 or dephase > math.sqrt(max(0.0, 1.0 - p_reset)) + 1e-12:
                raise ValueError(
                    f"affine action with p_reset={p_reset}, dephase={dephase} is not CPTP"
                )
        elif self.kind == "confusion":
            m = np.asarray(self.data[0], dtype=float)
            if m.shape != (2, 2) or np.any(m < -1e-12) or np.any(m > 1 + 1e-12):
                raise ValueError("confusion matrix entries must be probabilities")
            if np.max(np.abs(m.sum(axis=1) - 1.0)) > 1e-9:
                raise ValueError("confusion matrix rows must sum to 1")
        else:
            raise ValueError(f"unknown channel kind {self.kind!r}")

    @property
    def arity(self) -> int:
        if self.kind == "kraus":
            return int(round(math.log2(self.data[0].shape[0])))
        if self.kind == "affine1q":
            return 1
        raise ValueError("confusion acts on outcome distributions, not states")

    def superoperator(self) -> np.ndarray:
        """Return the map as a matrix in the kron(K, conj(K)) layout."""
        if self.kind == "kraus":
            d = self.data[0].shape[0]
            s = np.zeros((d * d, d * d), dtype=complex)
            for k in self.data:
                s += np.kron(k, k.conj())
            return s
        if self.kind == "affine1q":
            p_reset, dephase = self.data
            s = np.zeros((4, 4), dtype=complex)
            # basis order (r', c') over {00, 01, 10, 11}
            s[0, 0] = 1.0
            s[0, 3] = p_reset
            s[3, 3] = 1.0 - p_reset
            s[1, 1] = dephase
            s[2, 2] = dephase
            return s
        raise ValueError("confusion has no quantum superoperator")

    def kraus_ops(self) -> tuple[np.ndarray, ...]:
        if self.kind == "kraus":
            return self.data
        if self.kind == "affine1q":
            return _kraus_from_choi(_choi_from_superop(self.superoperator(), 2), 2)
        raise ValueError("confusion has no Kraus form")

    def choi(self) -> np.ndarray:
        d = 1 << self.arity
        return _choi_from_superop(self.superoperator(), d)


def apply_channel(rho: DensityMatrix, channel: ChannelAction, targets: tuple[int, ...]) -> DensityMatrix:
    """rho -> sum_K K rho K† on the target qubits."""
    targets = tuple(targets)
    _check_targets(rho.num_qubits, targets, channel.arity)
    out = np.zeros_like(rho.data)
    for k in channel.kraus_ops():
        out += apply_matrix(rho, k, targets).data
    return DensityMatrix(rho.num_qubits, out)


# ---------------------------------------------------------------------------
# Readout


def partial_trace(rho: DensityMatrix, keep: tuple[int, ...]) -> DensityMatrix:
    """Trace out every qubit not listed in keep (ascending order kept)."""
    n = rho.num_qubits
    keep = tuple(sorted(keep))
    _check_targets(n, keep, len(keep))
    letters = "abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ"
    row = list(letters[:n])
    col = list(letters[n:2 * n])
    for q in range(n):
        if q not in keep:
            col[q] = row[q]
    out_idx = "".join(row[q] for q in keep) + "".join(col[q] for q in keep)
    spec = "".join(row) + "".join(col) + "->" + out_idx
    k = len(keep)
    t = np.einsum(spec, rho.data.reshape((2,) * (2 * n)))
    return DensityMatrix(k, t.reshape(1 << k, 1 << k))


def reduced_state(rho: DensityMatrix, qubit: int) -> DensityMatrix:
    """Single-qubit reduced state (partial trace over all other qubits)."""
    return partial_trace(rho, (qubit,))


def expectation(rho: DensityMatrix, basis: str, qubit: int) -> float:
    """Tr(rho P_qubit) for P in {X, Y, Z}."""
    if basis not in PAULIS:
        raise ValueError(f"basis must be X, Y, or Z, got {basis!r}")
    red = reduced_state(rho, qubit)
    return float(np.trace(red.data @ PAULIS[basis]).real)


def shot_estimate(exact: float, shots: int | None, rng: np.random.Generator) -> float:
    """Binomial shot-noise emulation of an expectation value in [-1, 1].

    shots=None (or inf) is the infinite-shot mode and returns the input.
    """
    if exact < -1.0 - 1e-6 or exact > 1.0 + 1e-6:
        raise ValueError(f"expectation {exact} outside [-1, 1]")
    exact = min(1.0, max(-1.0, exact))
    if shots is None or shots == math.inf:
        return exact
    if shots < 1:
        raise ValueError("shot count must be >= 1")
    k = rng.binomial(int(shots), (1.0 + exact) / 2.0)
    return 2.0 * k / shots - 1.0


def pure_state_fidelity(a: DensityMatrix, b: DensityMatrix) -> float:
    """Tr(rho sigma); equals the fidelity when at least one state is pure."""
    return float(np.trace(a.data @ b.data).real)
