"""Execution engine for logical and transpiled circuits.

A circuit is compiled once into a program of superoperator steps; parameter
values are bound per evaluation. The state is a density matrix kept in block
factors: initially every qubit is its own 2x2 factor, two-qubit steps merge
factors lazily, and a qubit is traced out as soon as nothing later touches
it. This is algebraically exact and keeps the hot factors small even for
ten-qubit routed circuits. `dense=True` forces a single full factor, which
is the reference path used for cross-checking.

Gradients use the two-term parameter-shift rule per parameterized rotation,
restarting from a checkpoint taken just before the shifted step.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import qsim
from .transpile import READ, Angle, Instruction, LogicalCircuit, PhysicalCircuit

# Gate set the logical executor accepts directly; controlled rotations are
# pre-lowered so every trainable angle sits on a plain rotation.
_LOGICAL_EXEC_BASIS = frozenset({"RY", "RZ", "RX", "SX", "X", "H", "CX", "SWAP", "ECR"})

SU = "su"        # constant superoperator
PHASE = "phase"  # virtual RZ, possibly parameterized
ROT = "rot"      # parameterized plain rotation (RY/RX on the logical path)


@dataclass
class Step:
    kind: str
    qubits: tuple[int, ...]
    sup: np.ndarray | None = None          # SU
    angle: Angle | None = None             # PHASE / ROT
    gate: str = ""                         # ROT
    bases: tuple[str, ...] = ()            # READ
    confusion: tuple[float, float] | None = None  # READ (p01, p10)


@dataclass
class Program:
    positions: tuple[int, ...]
    steps: list[Step]
    death: dict[int, int]
    param_steps: list[tuple[int, dict[int, float]]]
    n_features: int


def _unitary_sup(u: np.ndarray) -> np.ndarray:
    return np.kron(u, u.conj())


def _compose_channels(base: np.ndarray, channels, qubits: tuple[int, ...]) -> np.ndarray:
    """Fold attached channel actions into a gate superoperator."""
    sup = base
    m = len(qubits)
    for action, targets in channels:
        csup = action.superoperator()
        if len(targets) == m and tuple(targets) == tuple(qubits):
            full = csup
        elif len(targets) == 1 and m == 2:
            # embed the 1-qubit channel at the right slot of the pair
            eye = np.eye(4, dtype=complex)
            if targets[0] == qubits[0]:
                full = _interleave_kron(csup, eye)
            elif targets[0] == qubits[1]:
                full = _interleave_kron(eye, csup)
            else:
                raise ValueError(f"channel target {targets} not in {qubits}")
        else:
            raise ValueError(f"channel targets {targets} incompatible with {qubits}")
        sup = full @ sup
    return sup


def _interleave_kron(sup_a: np.ndarray, sup_b: np.ndarray) -> np.ndarray:
    """Tensor two 1-qubit superops into the (r1 r2, c1 c2) index layout."""
    a = sup_a.reshape(2, 2, 2, 2)  # [r1', c1', r1, c1]
    b = sup_b.reshape(2, 2, 2, 2)  # [r2', c2', r2, c2]
    t = np.einsum("acik,bdjl->abcdijkl", a, b)
    return t.reshape(16, 16)


def _phase_matrix(angle_value: float) -> np.ndarray:
    e = np.exp(-1j * angle_value)
    return np.array([[1.0 + 0j, e], [np.conj(e), 1.0 + 0j]])


def _compile(instructions, channels_per_ins, readout_lookup) -> Program:
    steps: list[Step] = []
    for ins, channels in zip(instructions, channels_per_ins):
        if ins.gate == READ:
            steps.append(
                Step(READ, ins.qubits, bases=ins.bases, confusion=readout_lookup(ins.qubits[0]))
            )
            continue
        angle = ins.angle
        if ins.gate == "RZ":
            if channels:
                raise ValueError("RZ is virtual and cannot carry noise")
            steps.append(Step(PHASE, ins.qubits, angle=angle))
            continue
        if ins.gate in ("RY", "RX") and angle is not None and not angle.is_const:
            if channels:
                raise ValueError("parameterized rotations must be noise-free here")
            steps.append(Step(ROT, ins.qubits, angle=angle, gate=ins.gate))
            continue
        params = () if angle is None else (angle.bind(),)
        u = qsim.gate_matrix(ins.gate, params)
        sup = _compose_channels(_unitary_sup(u), channels, ins.qubits)
        steps.append(Step(SU, ins.qubits, sup=sup))

    steps = _fuse_single_qubit(steps)

    death: dict[int, int] = {}
    for t, step in enumerate(steps):
        for q in step.qubits:
            death[q] = t
    param_steps = []
    for t, step in enumerate(steps):
        if step.kind in (PHASE, ROT) and step.angle is not None:
            coeffs = step.angle.theta_coeffs()
            if coeffs:
                param_steps.append((t, coeffs))
    n_features = sum(len(s.bases) for s in steps if s.kind == READ)
    return Program(tuple(sorted(death)), steps, death, param_steps, n_features)


def _fuse_single_qubit(steps: list[Step]) -> list[Step]:
    """Compose runs of adjacent constant 1-qubit superops per qubit."""
    out: list[Step] = []
    open_su: dict[int, int] = {}
    for step in steps:
        if step.kind == SU and len(step.qubits) == 1:
            q = step.qubits[0]
            if q in open_su:
                prev = out[open_su[q]]
                out[open_su[q]] = Step(SU, prev.qubits, sup=step.sup @ prev.sup)
                continue
            open_su[q] = len(out)
            out.append(step)
        else:
            for q in step.qubits:
                open_su.pop(q, None)
            out.append(step)
    return out


def compile_logical(circuit: LogicalCircuit) -> Program:
    from .transpile import _decompose_instructions

    lowered = _decompose_instructions(circuit.instructions, _LOGICAL_EXEC_BASIS)
    return _compile(lowered, [()] * len(lowered), lambda q: None)


def compile_physical(pc: PhysicalCircuit) -> Program:
    def readout(q: int):
        cal = pc.profile.qubits[q]
        return (cal.readout_p01, cal.readout_p10)

    return _compile(pc.instructions, pc.channels, readout)


# ---------------------------------------------------------------------------
# Factored state

class _Factored:
    __slots__ = ("positions", "rhos", "loc")

    def __init__(self):
        self.positions: list[list[int]] = []
        self.rhos: list[np.ndarray] = []
        self.loc: dict[int, int] = {}

    def copy(self) -> "_Factored":
        c = _Factored()
        c.positions = [list(p) for p in self.positions]
        c.rhos = [r.copy() for r in self.rhos]
        c.loc = dict(self.loc)
        return c

    def materialize(self, qubits) -> int:
        """Ensure all qubits live in one factor; return its index."""
        for q in qubits:
            if q not in self.loc:
                self.positions.append([q])
                self.rhos.append(np.array([[1.0 + 0j, 0.0], [0.0, 0.0]]))
                self.loc[q] = len(self.rhos) - 1
        target = self.loc[qubits[0]]
        for q in qubits[1:]:
            b = self.loc[q]
            if b == target:
                continue
            a = target
            self.rhos[a] = np.kron(self.rhos[a], self.rhos[b])
            self.positions[a].extend(self.positions[b])
            for p in self.positions[b]:
                self.loc[p] = a
            self.positions.pop(b)
            self.rhos.pop(b)
            for p, f in self.loc.items():
                if f > b:
                    self.loc[p] = f - 1
            if target > b:
                target -= 1
        return target

    def apply_sup(self, qubits: tuple[int, ...], sup: np.ndarray) -> None:
        f = self.materialize(qubits)
        rho = self.rhos[f]
        pos = self.positions[f]
        k = len(pos)
        axes = [pos.index(q) for q in qubits]
        m = len(axes)
        t = rho.reshape((2,) * (2 * k))
        front = axes + [k + a for a in axes]
        rest = [i for i in range(2 * k) if i not in front]
        t = np.transpose(t, front + rest)
        mat = t.reshape(1 << (2 * m), -1)
        mat = sup @ mat
        t = mat.reshape((2,) * (2 * k))
        inv = np.argsort(front + rest)
        t = np.transpose(t, inv)
        self.rhos[f] = t.reshape(1 << k, 1 << k)

    def apply_phase(self, qubit: int, angle_value: float) -> None:
        if qubit not in self.loc:
            return  # phase on |0><0| is a no-op
        f = self.loc[qubit]
        rho = self.rhos[f]
        pos = self.positions[f]
        k = len(pos)
        a = pos.index(qubit)
        t = np.moveaxis(rho.reshape((2,) * (2 * k)), (a, k + a), (0, 1))
        t = t.reshape(2, 2, -1)
        t = t * _phase_matrix(angle_value)[:, :, None]
        t = t.reshape((2, 2) + (2,) * (2 * k - 2))
        t = np.moveaxis(t, (0, 1), (a, k + a))
        self.rhos[f] = np.ascontiguousarray(t).reshape(1 << k, 1 << k)

    def reduced(self, qubit: int) -> np.ndarray:
        if qubit not in self.loc:
            return np.array([[1.0 + 0j, 0.0], [0.0, 0.0]])
        f = self.loc[qubit]
        rho = self.rhos[f]
        pos = self.positions[f]
        k = len(pos)
        a = pos.index(qubit)
        t = np.moveaxis(rho.reshape((2,) * (2 * k)), (a, k + a), (0, 1))
        m = 1 << (k - 1)
        return np.einsum("abmm->ab", t.reshape(2, 2, m, m))

    def trace_out(self, qubit: int) -> None:
        f = self.loc.pop(qubit)
        pos = self.positions[f]
        k = len(pos)
        a = pos.index(qubit)
        if k == 1:
            self.positions.pop(f)
            self.rhos.pop(f)
            for q, g in self.loc.items():
                if g > f:
                    self.loc[q] = g - 1
            return
        t = self.rhos[f].reshape((2,) * (2 * k))
        t = np.trace(t, axis1=a, axis2=k + a)
        pos.pop(a)
        self.rhos[f] = t.reshape(1 << (k - 1), 1 << (k - 1))

    def full_density_matrix(self, order=None) -> qsim.DensityMatrix:
        """Compose all live factors into one dense state (test helper)."""
        if order is None:
            order = sorted(self.loc)
        state = _Factored()
        state.positions = [list(p) for p in self.positions]
        state.rhos = [r for r in self.rhos]
        state.loc = dict(self.loc)
        fid = state.materialize(tuple(order))
        pos = state.positions[fid]
        rho = state.rhos[fid]
        k = len(pos)
        perm = [pos.index(q) for q in order]
        t = rho.reshape((2,) * (2 * k))
        t = np.transpose(t, perm + [k + p for p in perm])
        return qsim.DensityMatrix(k, t.reshape(1 << k, 1 << k))


# ---------------------------------------------------------------------------
# Evaluation

def _read_features(state, step: Step, shots, rng, out: list) -> None:
    red = state.reduced(step.qubits[0])
    for basis in step.bases:
        e = float(np.trace(red @ qsim.PAULIS[basis]).real)
        e = min(1.0, max(-1.0, e))
        if step.confusion is not None:
            p01, p10 = step.confusion
            p1 = (1.0 - e) / 2.0
            p1 = p1 * (1.0 - p01) + (1.0 - p1) * p10
            e = 1.0 - 2.0 * p1
        if shots is not None:
            e = qsim.shot_estimate(e, shots, rng)
        out.append(e)


def _exec_step(state, step: Step, theta, x, shots, rng, feats, shift: float = 0.0) -> None:
    if step.kind == SU:
        state.apply_sup(step.qubits, step.sup)
    elif step.kind == PHASE:
        state.apply_phase(step.qubits[0], step.angle.bind(theta, x) + shift)
    elif step.kind == ROT:
        u = qsim.gate_matrix(step.gate, (step.angle.bind(theta, x) + shift,))
        state.apply_sup(step.qubits, _unitary_sup(u))
    elif step.kind == READ:
        _read_features(state, step, shots, rng, feats)
    else:  # pragma: no cover
        raise ValueError(f"unknown step kind {step.kind}")


def _run_tail(program, state, feats, start, theta, x, shots, rng, trace, shift_at=-1, shift=0.0):
    steps = program.steps
    death = program.death
    for t in range(start, len(steps)):
        step = steps[t]
        _exec_step(state, step, theta, x, shots, rng, feats,
                   shift if t == shift_at else 0.0)
        if trace:
            for q in step.qubits:
                if death[q] == t and q in state.loc:
                    state.trace_out(q)
    return feats


def run(program: Program, theta=None, x=None, shots: int | None = None,
        rng: np.random.Generator | None = None, dense: bool = False) -> np.ndarray:
    """Evaluate the program, returning the feature vector in site order."""
    if shots is not None and rng is None:
        raise ValueError("shots mode needs an rng")
    state = _Factored()
    if dense and program.positions:
        state.materialize(program.positions)
    feats: list[float] = []
    _run_tail(program, state, feats, 0, theta, x, shots, rng, trace=not dense)
    return np.asarray(feats)


def run_with_gradient(program: Program, theta, x=None, shots: int | None = None,
                      rng: np.random.Generator | None = None):
    """Feature vector plus the Jacobian d features / d theta.

    For every parameterized rotation occurrence j with angle
    c0 + sum_k c_k theta_k, the two-term rule gives
        d f / d theta_k += c_k * (f(occ_j + pi/2) - f(occ_j - pi/2)) / 2,
    evaluated by restarting from a checkpoint taken just before step j.
    """
    if shots is not None and rng is None:
        raise ValueError("shots mode needs an rng")
    steps = program.steps
    param_at = {t for t, _ in program.param_steps}
    snaps: dict[int, tuple] = {}
    state = _Factored()
    feats: list[float] = []
    for t, step in enumerate(steps):
        if t in param_at:
            snaps[t] = (state.copy(), len(feats))
        _exec_step(state, step, theta, x, shots, rng, feats)
        for q in step.qubits:
            if program.death[q] == t and q in state.loc:
                state.trace_out(q)
    features = np.asarray(feats)

    jac = np.zeros((program.n_features, len(theta)))
    for t, coeffs in program.param_steps:
        shifted = []
        for sign in (1.0, -1.0):
            snap_state, n_feats = snaps[t]
            s = snap_state.copy()
            f = list(feats[:n_feats])
            _run_tail(program, s, f, t, theta, x, shots, rng, trace=True,
                      shift_at=t, shift=sign * math.pi / 2)
            shifted.append(np.asarray(f))
        diff = (shifted[0] - shifted[1]) / 2.0
        for k, c in coeffs.items():
            jac[:, k] += c * diff
    return features, jac
