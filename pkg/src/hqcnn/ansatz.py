"""Hierarchical convolution/pooling circuit construction.

Each layer convolves adjacent active-qubit pairs (two RY rotations and a CX)
and pools them (CRZ then CRX, control = the lower-indexed qubit of the pair,
which becomes trash). Active qubits halve per layer until one remains. The
four angles of a layer are shared across all of its pairs.

Readout sites: the first trash qubit of every layer except the last, read
immediately after that layer's pooling, plus the surviving qubit at the end.
The "qcnn" baseline reads only the final qubit. Bases are {Z} for "hqcnn-ez"
and the baseline, {X, Y, Z} per site for "hqcnn-em".
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import engine
from .transpile import Angle, Instruction, LogicalCircuit, PhysicalCircuit, gate, read

VARIANTS = ("qcnn", "hqcnn-ez", "hqcnn-em")

MIN_QUBITS = 2
MAX_QUBITS = 12


@dataclass(frozen=True)
class LayerSpec:
    active: tuple[int, ...]
    pairs: tuple[tuple[int, int], ...]   # (trash, survivor)
    passthrough: int | None              # odd trailing qubit, if any


@dataclass(frozen=True)
class HqcnnSpec:
    n: int
    variant: str
    layers: tuple[LayerSpec, ...]

    @property
    def n_layers(self) -> int:
        return len(self.layers)

    @property
    def n_params(self) -> int:
        return 4 * len(self.layers)

    @property
    def final_qubit(self) -> int:
        last = self.layers[-1]
        survivors = [s for _, s in last.pairs]
        if last.passthrough is not None:
            survivors.append(last.passthrough)
        return survivors[0]


@dataclass(frozen=True)
class MeasurementPlan:
    """Ordered readout sites (qubit, circuit position, bases), shallow to
    deep, with the final-qubit site last."""

    sites: tuple[tuple[int, int, tuple[str, ...]], ...]

    @property
    def n_features(self) -> int:
        return sum(len(bases) for _, _, bases in self.sites)

    @property
    def feature_labels(self) -> tuple[str, ...]:
        labels = []
        for idx, (_, _, bases) in enumerate(self.sites):
            for b in bases:
                labels.append(f"<{b}>_{idx}")
        return tuple(labels)


@dataclass
class ParameterTable:
    """Flat vector of shared angles plus parameter index -> instruction
    positions where each angle is bound."""

    values: np.ndarray
    occurrences: dict[int, tuple[int, ...]]

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)


def feature_count(n: int, variant: str) -> int:
    m = math.ceil(math.log2(n))
    return {"qcnn": 1, "hqcnn-ez": m, "hqcnn-em": 3 * m}[variant]


def site_bases(variant: str) -> tuple[str, ...]:
    return ("X", "Y", "Z") if variant == "hqcnn-em" else ("Z",)


def build_encoding(features) -> list[Instruction]:
    """RY(x_i) on qubit i; inputs are soft-clamped to [0, pi]."""
    out = []
    for i, value in enumerate(np.asarray(features, dtype=float)):
        out.append(gate("RY", i, angle=min(math.pi, max(0.0, float(value)))))
    return out


def _symbolic_encoding(n: int) -> list[Instruction]:
    return [Instruction("RY", (i,), Angle.slot("x", i)) for i in range(n)]


def build_layers(n: int, variant: str) -> tuple[HqcnnSpec, LogicalCircuit, MeasurementPlan]:
    """Construct the layer structure, the symbolic circuit skeleton (no
    encoding; angles reference the shared parameter table), and the
    measurement plan."""
    if not MIN_QUBITS <= n <= MAX_QUBITS:
        raise ValueError(f"qubit count must be in {MIN_QUBITS}..{MAX_QUBITS}, got {n}")
    if variant not in VARIANTS:
        raise ValueError(f"variant must be one of {VARIANTS}, got {variant!r}")

    layers = []
    active = list(range(n))
    while len(active) > 1:
        pairs = tuple(
            (active[2 * i], active[2 * i + 1]) for i in range(len(active) // 2)
        )
        passthrough = active[-1] if len(active) % 2 == 1 else None
        layers.append(LayerSpec(tuple(active), pairs, passthrough))
        active = [s for _, s in pairs] + ([passthrough] if passthrough is not None else [])
    spec = HqcnnSpec(n, variant, tuple(layers))

    bases = site_bases(variant)
    instructions: list[Instruction] = []
    for ell, layer in enumerate(spec.layers):
        base = 4 * ell
        for trash, survivor in layer.pairs:
            instructions.append(Instruction("RY", (trash,), Angle.slot("theta", base)))
            instructions.append(Instruction("RY", (survivor,), Angle.slot("theta", base + 1)))
            instructions.append(gate("CX", trash, survivor))
        for trash, survivor in layer.pairs:
            instructions.append(Instruction("CRZ", (trash, survivor), Angle.slot("theta", base + 2)))
            instructions.append(Instruction("CRX", (trash, survivor), Angle.slot("theta", base + 3)))
        if ell < spec.n_layers - 1:
            first_trash = layer.pairs[0][0]
            if variant != "qcnn":
                instructions.append(read(first_trash, bases))
    instructions.append(read(spec.final_qubit, bases if variant != "qcnn" else ("Z",)))

    skeleton = LogicalCircuit(n, instructions)
    plan = MeasurementPlan(tuple(skeleton.sites))
    expected = feature_count(n, variant)
    assert plan.n_features == expected, (plan.n_features, expected)
    return spec, skeleton, plan


def symbolic_circuit(spec: HqcnnSpec) -> LogicalCircuit:
    """Encoding plus layers, with angles referencing ("x", i) input slots and
    ("theta", k) table entries; transpile once, bind per evaluation."""
    _, skeleton, _ = build_layers(spec.n, spec.variant)
    return LogicalCircuit(spec.n, _symbolic_encoding(spec.n) + skeleton.instructions)


def occurrence_map(circuit: LogicalCircuit) -> dict[int, tuple[int, ...]]:
    occ: dict[int, list[int]] = {}
    for pos, ins in enumerate(circuit.instructions):
        if ins.angle is None:
            continue
        for k in ins.angle.theta_coeffs():
            occ.setdefault(k, []).append(pos)
    return {k: tuple(v) for k, v in occ.items()}


def bind(spec: HqcnnSpec, table: ParameterTable, features) -> LogicalCircuit:
    """Fully concrete circuit: encoding plus layers with angles substituted."""
    if len(table.values) != spec.n_params:
        raise ValueError(f"table has {len(table.values)} angles, spec needs {spec.n_params}")
    features = np.asarray(features, dtype=float)
    if features.shape != (spec.n,):
        raise ValueError(f"feature vector must have length {spec.n}")
    symbolic = symbolic_circuit(spec)
    bound = []
    for ins in symbolic.instructions:
        if ins.angle is None or ins.angle.is_const:
            bound.append(ins)
        else:
            value = ins.angle.bind(theta=table.values, x=features)
            bound.append(Instruction(ins.gate, ins.qubits, Angle.of(value), ins.bases))
    return LogicalCircuit(spec.n, bound)


def extract_features(
    circuit: PhysicalCircuit | LogicalCircuit,
    plan: MeasurementPlan,
    theta=None,
    x=None,
    shots: int | None = None,
    rng: np.random.Generator | None = None,
) -> np.ndarray:
    """Simulate and read the plan's expectation values in site order.

    Mid-circuit sites take the reduced state of the trash qubit at the site
    position; readout confusion (for transpiled circuits) and binomial shot
    noise are applied per basis value. shots=None is the exact mode.
    """
    if isinstance(circuit, PhysicalCircuit):
        program = engine.compile_physical(circuit)
    else:
        program = engine.compile_logical(circuit)
    if program.n_features != plan.n_features:
        raise ValueError(
            f"plan expects {plan.n_features} features, circuit provides {program.n_features}"
        )
    return engine.run(program, theta=theta, x=x, shots=shots, rng=rng)
