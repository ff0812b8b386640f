"""Lowering logical circuits onto a device: basis decomposition, error-aware
layout on the coupling map, greedy SWAP routing, light optimization, and
channel attachment per physical gate.

Rotation angles are affine expressions over named parameter slots
(("theta", k) for trainable angles, ("x", i) for encoded inputs), so a
circuit is transpiled once and rebound per evaluation.
"""

from __future__ import annotations

import json
import math
from collections import deque
from dataclasses import dataclass, field, replace

import numpy as np

from . import noise as noise_mod
from . import qsim

READ = "READ"

PI = math.pi


@dataclass(frozen=True)
class Angle:
    """const + sum(coeff * slot) with slot keys ("theta", k) or ("x", i)."""

    const: float = 0.0
    terms: tuple[tuple[tuple[str, int], float], ...] = ()

    @staticmethod
    def of(value: float) -> "Angle":
        return Angle(const=float(value))

    @staticmethod
    def slot(kind: str, index: int, coeff: float = 1.0) -> "Angle":
        return Angle(terms=(((kind, index), float(coeff)),))

    def shifted(self, delta: float) -> "Angle":
        return Angle(self.const + delta, self.terms)

    def scaled(self, factor: float) -> "Angle":
        terms = tuple((k, c * factor) for k, c in self.terms if c * factor != 0.0)
        return Angle(self.const * factor, terms)

    def plus(self, other: "Angle") -> "Angle":
        acc = dict(self.terms)
        for k, c in other.terms:
            acc[k] = acc.get(k, 0.0) + c
        terms = tuple(sorted((k, c) for k, c in acc.items() if c != 0.0))
        return Angle(self.const + other.const, terms)

    @property
    def is_const(self) -> bool:
        return not self.terms

    @property
    def is_zero(self) -> bool:
        return self.const == 0.0 and not self.terms

    def bind(self, theta=None, x=None) -> float:
        value = self.const
        for (kind, idx), coeff in self.terms:
            source = theta if kind == "theta" else x
            if source is None:
                raise ValueError(f"unbound parameter slot ({kind}, {idx})")
            value += coeff * float(source[idx])
        return value

    def theta_coeffs(self) -> dict[int, float]:
        return {idx: c for (kind, idx), c in self.terms if kind == "theta"}


@dataclass(frozen=True)
class Instruction:
    gate: str
    qubits: tuple[int, ...]
    angle: Angle | None = None
    bases: tuple[str, ...] = ()  # READ markers only

    def __post_init__(self):
        if self.gate == READ:
            if len(self.qubits) != 1 or not self.bases:
                raise ValueError("READ takes one qubit and at least one basis")
        else:
            if qsim.GATE_ARITY[self.gate] != len(self.qubits):
                raise ValueError(f"{self.gate} arity mismatch on {self.qubits}")
        if len(set(self.qubits)) != len(self.qubits):
            raise ValueError(f"duplicate qubits {self.qubits}")


def gate(name: str, *qubits: int, angle: Angle | float | None = None) -> Instruction:
    if isinstance(angle, (int, float)):
        angle = Angle.of(angle)
    return Instruction(name, tuple(qubits), angle)


def read(qubit: int, bases: tuple[str, ...]) -> Instruction:
    return Instruction(READ, (qubit,), None, tuple(bases))


@dataclass
class LogicalCircuit:
    num_qubits: int
    instructions: list[Instruction]

    def __post_init__(self):
        for ins in self.instructions:
            for q in ins.qubits:
                if not 0 <= q < self.num_qubits:
                    raise ValueError(f"qubit {q} out of range in {ins}")

    @property
    def sites(self) -> list[tuple[int, int, tuple[str, ...]]]:
        """(qubit, position, bases) for every READ marker, in order."""
        return [
            (ins.qubits[0], pos, ins.bases)
            for pos, ins in enumerate(self.instructions)
            if ins.gate == READ
        ]

    def to_json(self) -> str:
        doc = {
            "num_qubits": self.num_qubits,
            "instructions": [
                {
                    "gate": ins.gate,
                    "qubits": list(ins.qubits),
                    **({"bases": list(ins.bases)} if ins.gate == READ else {}),
                    **(
                        {"params": [ins.angle.bind()]}
                        if ins.angle is not None
                        else {}
                    ),
                }
                for ins in self.instructions
            ],
        }
        return json.dumps(doc, indent=2)

    @staticmethod
    def from_json(document: str | dict) -> "LogicalCircuit":
        if isinstance(document, str):
            document = json.loads(document)
        instructions = []
        for ins in document["instructions"]:
            name = str(ins["gate"])
            qubits = tuple(int(q) for q in ins["qubits"])
            if name == READ:
                instructions.append(read(qubits[0], tuple(ins["bases"])))
            else:
                params = ins.get("params", [])
                angle = Angle.of(float(params[0])) if params else None
                instructions.append(Instruction(name, qubits, angle))
        return LogicalCircuit(int(document["num_qubits"]), instructions)


@dataclass
class PhysicalCircuit:
    profile: noise_mod.NoiseProfile
    initial_layout: tuple[int, ...]  # logical index -> physical qubit
    final_layout: tuple[int, ...]
    instructions: list[Instruction]
    channels: list[tuple]  # per instruction: ((ChannelAction, qubits), ...)

    @property
    def sites(self) -> list[tuple[int, int, tuple[str, ...]]]:
        return [
            (ins.qubits[0], pos, ins.bases)
            for pos, ins in enumerate(self.instructions)
            if ins.gate == READ
        ]

    def used_qubits(self) -> tuple[int, ...]:
        used = set()
        for ins in self.instructions:
            used.update(ins.qubits)
        return tuple(sorted(used))

    def used_edges(self) -> tuple[tuple[int, int], ...]:
        edges = {
            tuple(sorted(ins.qubits))
            for ins in self.instructions
            if len(ins.qubits) == 2
        }
        return tuple(sorted(edges))


class TranspileError(ValueError):
    pass


# ---------------------------------------------------------------------------
# Basis decomposition

def _rule_ry(q, a):
    # RY(t) ~ RZ(pi) . SX . RZ(t+pi) . SX up to global phase (circuit order
    # is first-applied-first below).
    return [
        gate("SX", q),
        Instruction("RZ", (q,), a.shifted(PI)),
        gate("SX", q),
        gate("RZ", q, angle=PI),
    ]


def _rule_h(q):
    return [gate("RZ", q, angle=PI / 2), gate("SX", q), gate("RZ", q, angle=PI / 2)]


def _rule_rx(q, a):
    return [*_rule_h(q), Instruction("RZ", (q,), a), *_rule_h(q)]


def _rule_crz(c, t, a):
    return [
        Instruction("RZ", (t,), a.scaled(0.5)),
        gate("CX", c, t),
        Instruction("RZ", (t,), a.scaled(-0.5)),
        gate("CX", c, t),
    ]


def _rule_crx(c, t, a):
    return [gate("H", t), *_rule_crz(c, t, a), gate("H", t)]


def _rule_swap(a, b):
    return [gate("CX", a, b), gate("CX", b, a), gate("CX", a, b)]


def _rule_cx_to_ecr(c, t):
    # CX ~ RX(-pi/2)_t . X_c . ECR . RZ(-pi/2)_c up to global phase, with
    # RX(-pi/2) ~ RZ(pi) . SX . RZ(pi).
    return [
        gate("RZ", c, angle=-PI / 2),
        gate("ECR", c, t),
        gate("X", c),
        gate("RZ", t, angle=PI),
        gate("SX", t),
        gate("RZ", t, angle=PI),
    ]


def _rule_ecr_to_cx(c, t):
    # ECR ~ X_c . RX(pi/2)_t . CX . RZ(pi/2)_c with RX(pi/2) ~ SX.
    return [gate("RZ", c, angle=PI / 2), gate("CX", c, t), gate("SX", t), gate("X", c)]


def _expand(ins: Instruction, basis: frozenset[str]) -> list[Instruction] | None:
    """One decomposition step, or None if the gate is already acceptable."""
    if ins.gate in basis or ins.gate == READ:
        return None
    q = ins.qubits
    a = ins.angle
    if ins.gate == "RY":
        return _rule_ry(q[0], a)
    if ins.gate == "H":
        return _rule_h(q[0])
    if ins.gate == "RX":
        return _rule_rx(q[0], a)
    if ins.gate == "CRZ":
        return _rule_crz(q[0], q[1], a)
    if ins.gate == "CRX":
        return _rule_crx(q[0], q[1], a)
    if ins.gate == "SWAP":
        return _rule_swap(q[0], q[1])
    if ins.gate == "CX" and "ECR" in basis:
        return _rule_cx_to_ecr(q[0], q[1])
    if ins.gate == "ECR" and "CX" in basis:
        return _rule_ecr_to_cx(q[0], q[1])
    raise TranspileError(f"no decomposition rule for {ins.gate} into {sorted(basis)}")


def _decompose_instructions(instructions, basis: frozenset[str]) -> list[Instruction]:
    out = list(instructions)
    changed = True
    while changed:
        changed = False
        next_out = []
        for ins in out:
            expansion = _expand(ins, basis)
            if expansion is None:
                next_out.append(ins)
            else:
                next_out.extend(expansion)
                changed = True
        out = next_out
    return out


def decompose_to_basis(circuit: LogicalCircuit, basis: frozenset[str]) -> LogicalCircuit:
    if frozenset(basis) not in noise_mod.ALLOWED_BASIS_SETS:
        raise TranspileError(f"unsupported basis {sorted(basis)}")
    return LogicalCircuit(
        circuit.num_qubits, _decompose_instructions(circuit.instructions, frozenset(basis))
    )


# ---------------------------------------------------------------------------
# Layout and routing

def _adjacency(n: int, edges) -> list[list[int]]:
    adj = [[] for _ in range(n)]
    for a, b in edges:
        adj[a].append(b)
        adj[b].append(a)
    return [sorted(set(nbrs)) for nbrs in adj]


def choose_layout(circuit: LogicalCircuit, profile: noise_mod.NoiseProfile) -> tuple[int, ...]:
    """Map logical qubit i to the i-th node of the connected simple path
    that minimizes the summed two-qubit gate error along consecutive pairs.

    All simple paths of the required length are enumerated depth-first from
    ascending start nodes; ties keep the first path found.
    """
    k = circuit.num_qubits
    n = profile.num_qubits
    if k > n:
        raise TranspileError(f"circuit needs {k} qubits, device has {n}")
    adj = _adjacency(n, profile.edges())
    twoq = profile.twoq_gate

    def edge_error(a: int, b: int) -> float:
        return profile.gate_cal(twoq, (a, b)).error

    if k == 1:
        return (0,)

    best_path: tuple[int, ...] | None = None
    best_cost = math.inf
    path = []
    visited = [False] * n

    def extend(cost: float):
        nonlocal best_path, best_cost
        if len(path) == k:
            if cost < best_cost:
                best_cost = cost
                best_path = tuple(path)
            return
        if cost >= best_cost:
            return
        v = path[-1]
        for w in adj[v]:
            if not visited[w]:
                visited[w] = True
                path.append(w)
                extend(cost + edge_error(v, w))
                path.pop()
                visited[w] = False

    for start in range(n):
        visited[start] = True
        path.append(start)
        extend(0.0)
        path.pop()
        visited[start] = False

    if best_path is None:
        raise TranspileError(f"no connected path of {k} qubits on the device")
    return best_path


def _bfs_path(adj, src: int, dst: int) -> list[int]:
    parent = {src: None}
    queue = deque([src])
    while queue:
        v = queue.popleft()
        if v == dst:
            break
        for w in adj[v]:
            if w not in parent:
                parent[w] = v
                queue.append(w)
    if dst not in parent:
        raise TranspileError(f"no path between physical qubits {src} and {dst}")
    rev = []
    node = dst
    while node is not None:
        rev.append(node)
        node = parent[node]
    return rev[::-1]


def route(circuit: LogicalCircuit, layout: tuple[int, ...], coupling_map):
    """Insert SWAPs so every 2-qubit instruction lands on a coupling edge.

    The control is moved greedily along the shortest coupling-map path until
    adjacent to the target; the logical->physical map is updated as SWAPs are
    inserted. Returns (physical instructions, final layout).
    """
    edges = {tuple(sorted(e)) for e in coupling_map}
    n_device = max((max(e) for e in edges), default=max(layout)) + 1
    adj = _adjacency(n_device, edges)
    pos = list(layout)  # logical -> physical
    out: list[Instruction] = []
    for ins in circuit.instructions:
        if len(ins.qubits) == 2:
            a, b = ins.qubits
            pa, pb = pos[a], pos[b]
            if tuple(sorted((pa, pb))) not in edges:
                path = _bfs_path(adj, pa, pb)
                for step in path[1:-1]:
                    out.append(gate("SWAP", pos[a], step))
                    # exchange whatever logical qubits live on the two nodes
                    for logical, phys in enumerate(pos):
                        if phys == step:
                            pos[logical] = pos[a]
                            break
                    pos[a] = step
                pa, pb = pos[a], pos[b]
            out.append(replace(ins, qubits=(pa, pb)))
        else:
            out.append(replace(ins, qubits=(pos[ins.qubits[0]],)))
    return out, tuple(pos)


# ---------------------------------------------------------------------------
# Light optimization and noise attachment

def _optimize_light(instructions: list[Instruction]) -> list[Instruction]:
    """Merge adjacent RZs per qubit and drop structurally-zero rotations.

    READ markers act as barriers on their qubit: a pending RZ may not be
    merged across a mid-circuit readout.
    """
    out: list[Instruction] = []
    pending: dict[int, int] = {}  # qubit -> index in out of an open RZ
    for ins in instructions:
        if ins.gate == "RZ":
            q = ins.qubits[0]
            if q in pending:
                prev = out[pending[q]]
                out[pending[q]] = replace(prev, angle=prev.angle.plus(ins.angle))
            else:
                pending[q] = len(out)
                out.append(ins)
        else:
            for q in ins.qubits:
                pending.pop(q, None)
            out.append(ins)
    return [
        ins
        for ins in out
        if not (ins.gate == "RZ" and ins.angle.is_zero)
    ]


def attach_noise(instructions: list[Instruction], profile: noise_mod.NoiseProfile):
    """Per-instruction channel sequences from the profile calibration."""
    cache: dict[tuple, tuple] = {}
    channels = []
    for ins in instructions:
        if ins.gate in (READ, "RZ"):
            channels.append(())
            continue
        key = (ins.gate, ins.qubits)
        if key not in cache:
            cache[key] = noise_mod.gate_noise(profile, ins.gate, ins.qubits)
        channels.append(cache[key])
    return channels


def transpile(circuit: LogicalCircuit, profile: noise_mod.NoiseProfile) -> PhysicalCircuit:
    """Full lowering pipeline: basis decomposition, layout, routing, light
    optimization (RZ merging, zero-rotation elimination), noise attachment."""
    basis = frozenset(profile.basis_gates)
    lowered = decompose_to_basis(circuit, basis)
    layout = choose_layout(lowered, profile)
    routed, final_layout = route(lowered, layout, profile.edges())
    routed = _decompose_instructions(routed, basis)  # lower inserted SWAPs
    routed = _optimize_light(routed)
    channels = attach_noise(routed, profile)
    return PhysicalCircuit(
        profile=profile,
        initial_layout=layout,
        final_layout=final_layout,
        instructions=routed,
        channels=channels,
    )


# ---------------------------------------------------------------------------
# Debug helpers

def circuit_unitary(instructions, num_qubits: int, theta=None, x=None) -> np.ndarray:
    """Compose the unitary of a gate-only instruction list (test oracle)."""
    dim = 1 << num_qubits
    u = np.eye(dim, dtype=complex)
    for ins in instructions:
        if ins.gate == READ:
            raise ValueError("circuit_unitary cannot process READ markers")
        params = () if ins.angle is None else (ins.angle.bind(theta, x),)
        g = qsim.gate_matrix(ins.gate, params)
        k = len(ins.qubits)
        gt = g.reshape((2,) * (2 * k))
        t = u.reshape((2,) * num_qubits + (dim,))
        t = np.tensordot(gt, t, axes=(tuple(range(k, 2 * k)), ins.qubits))
        t = np.moveaxis(t, range(k), ins.qubits)
        u = t.reshape(dim, dim)
    return u


def format_physical(pc: PhysicalCircuit) -> str:
    """Human-readable listing of a physical circuit and attached channels."""
    lines = [
        f"profile: {pc.profile.name}",
        f"layout:  {list(pc.initial_layout)} -> {list(pc.final_layout)}",
    ]
    for pos, (ins, chans) in enumerate(zip(pc.instructions, pc.channels)):
        if ins.gate == READ:
            lines.append(f"{pos:4d}  READ q{ins.qubits[0]} bases={','.join(ins.bases)}")
            continue
        angle = ""
        if ins.angle is not None:
            if ins.angle.is_const:
                angle = f"({ins.angle.const:+.6f})"
            else:
                angle = f"({ins.angle.const:+.4f} + {dict(ins.angle.terms)})"
        qubits = ",".join(f"q{q}" for q in ins.qubits)
        suffix = ""
        if chans:
            parts = []
            for action, targets in chans:
                tgt = ",".join(f"q{q}" for q in targets)
                parts.append(f"{action.kind}[{tgt}]")
            suffix = "   noise: " + " ".join(parts)
        lines.append(f"{pos:4d}  {ins.gate}{angle} {qubits}{suffix}")
    return "\n".join(lines)
