"""Device calibration records, profile synthesis, and per-gate noise channels.

A NoiseProfile mirrors what a backend snapshot exposes: per-qubit coherence
and readout numbers plus per-gate average errors and durations. Profiles are
either loaded from JSON documents or synthesized by sampling published
per-metric (mean, std) statistics onto a coupling map.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .qsim import ChannelAction

US_TO_NS = 1000.0

ALLOWED_BASIS_SETS = (
    frozenset({"RZ", "SX", "X", "CX"}),
    frozenset({"RZ", "SX", "X", "ECR"}),
)

# Metric keys for a stats document, one (mean, std) pair each.
STAT_KEYS = (
    "t1_us",
    "t2_us",
    "freq_ghz",
    "anharm_ghz",
    "readout_p01",        # P(read 0 | prepared 1)
    "readout_p10",        # P(read 1 | prepared 0)
    "readout_length_ns",
    "sx_error",
    "x_error",
    "sq_gate_length_ns",
    "twoq_error",
    "twoq_length_ns",
)


class ProfileError(ValueError):
    """Raised for documents or parameters that violate profile invariants."""


def _clamp(x: float, lo: float, hi: float) -> float:
    return min(hi, max(lo, x))


@dataclass(frozen=True)
class QubitCalibration:
    t1_us: float
    t2_us: float
    freq_ghz: float = 0.0
    anharm_ghz: float = 0.0
    readout_p01: float = 0.0
    readout_p10: float = 0.0
    readout_duration_ns: float = 0.0

    def __post_init__(self):
        if self.t1_us <= 0:
            raise ProfileError(f"T1 must be positive, got {self.t1_us}")
        if not 0 < self.t2_us <= 2 * self.t1_us:
            raise ProfileError(f"T2 {self.t2_us} outside (0, 2*T1={2 * self.t1_us}]")
        for name in ("readout_p01", "readout_p10"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise ProfileError(f"{name} {p} outside [0, 1]")
        if self.readout_duration_ns < 0:
            raise ProfileError("readout duration must be >= 0")


@dataclass(frozen=True)
class GateCalibration:
    gate: str
    qubits: tuple[int, ...]
    error: float
    duration_ns: float

    def __post_init__(self):
        if not 0.0 <= self.error < 1.0:
            raise ProfileError(f"gate error {self.error} outside [0, 1)")
        if self.duration_ns < 0:
            raise ProfileError("gate duration must be >= 0")
        if self.gate == "RZ" and (self.error != 0.0 or self.duration_ns != 0.0):
            raise ProfileError("RZ is virtual and must have zero error and duration")


def _gate_key(gate: str, qubits: tuple[int, ...]) -> tuple:
    # Two-qubit calibrations are per undirected edge.
    return (gate, tuple(sorted(qubits)))


@dataclass(frozen=True)
class NoiseProfile:
    name: str
    basis_gates: frozenset[str]
    coupling_map: tuple[tuple[int, int], ...]
    qubits: tuple[QubitCalibration, ...]
    gates: tuple[GateCalibration, ...]
    _index: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        if frozenset(self.basis_gates) not in ALLOWED_BASIS_SETS:
            raise ProfileError(f"unsupported basis gate set {sorted(self.basis_gates)}")
        n = len(self.qubits)
        for a, b in self.coupling_map:
            if not (0 <= a < n and 0 <= b < n and a != b):
                raise ProfileError(f"coupling edge ({a}, {b}) invalid for {n} qubits")
        index = {}
        for g in self.gates:
            for q in g.qubits:
                if not 0 <= q < n:
                    raise ProfileError(f"gate {g.gate} references qubit {q} of {n}")
            index[_gate_key(g.gate, g.qubits)] = g
        edges = {tuple(sorted(e)) for e in self.coupling_map}
        twoq = "ECR" if "ECR" in self.basis_gates else "CX"
        for e in edges:
            if (twoq, e) not in index:
                raise ProfileError(f"coupling edge {e} has no {twoq} calibration")
        for g in self.gates:
            if len(g.qubits) == 2 and tuple(sorted(g.qubits)) not in edges:
                raise ProfileError(f"2-qubit gate on {g.qubits} is not a coupling edge")
        object.__setattr__(self, "_index", index)

    @property
    def num_qubits(self) -> int:
        return len(self.qubits)

    @property
    def twoq_gate(self) -> str:
        return "ECR" if "ECR" in self.basis_gates else "CX"

    def edges(self) -> set[tuple[int, int]]:
        return {tuple(sorted(e)) for e in self.coupling_map}

    def gate_cal(self, gate: str, qubits: tuple[int, ...]) -> GateCalibration:
        try:
            return self._index[_gate_key(gate, tuple(qubits))]
        except KeyError:
            raise ProfileError(f"no calibration for {gate} on {qubits}") from None

    def to_json(self) -> str:
        doc = {
            "name": self.name,
            "basis_gates": sorted(self.basis_gates),
            "coupling_map": [list(e) for e in self.coupling_map],
            "qubits": [
                {
                    "t1_us": q.t1_us,
                    "t2_us": q.t2_us,
                    "freq_ghz": q.freq_ghz,
                    "anharm_ghz": q.anharm_ghz,
                    "readout": {
                        "p01": q.readout_p01,
                        "p10": q.readout_p10,
                        "duration_ns": q.readout_duration_ns,
                    },
                }
                for q in self.qubits
            ],
            "gates": [
                {
                    "name": g.gate,
                    "qubits": list(g.qubits),
                    "error": g.error,
                    "duration_ns": g.duration_ns,
                }
                for g in self.gates
            ],
        }
        return json.dumps(doc, indent=2)


def load_profile(document: str | dict) -> NoiseProfile:
    """Parse and validate a profile JSON document (text or parsed dict)."""
    if isinstance(document, str):
        try:
            document = json.loads(document)
        except json.JSONDecodeError as e:
            raise ProfileError(f"profile document is not valid JSON: {e}") from None
    try:
        qubits = tuple(
            QubitCalibration(
                t1_us=float(q["t1_us"]),
                t2_us=float(q["t2_us"]),
                freq_ghz=float(q.get("freq_ghz", 0.0)),
                anharm_ghz=float(q.get("anharm_ghz", 0.0)),
                readout_p01=float(q["readout"]["p01"]),
                readout_p10=float(q["readout"]["p10"]),
                readout_duration_ns=float(q["readout"].get("duration_ns", 0.0)),
            )
            for q in document["qubits"]
        )
        gates = tuple(
            GateCalibration(
                gate=str(g["name"]),
                qubits=tuple(int(x) for x in g["qubits"]),
                error=float(g["error"]),
                duration_ns=float(g["duration_ns"]),
            )
            for g in document["gates"]
        )
        return NoiseProfile(
            name=str(document.get("name", "unnamed")),
            basis_gates=frozenset(str(b) for b in document["basis_gates"]),
            coupling_map=tuple(tuple(int(x) for x in e) for e in document["coupling_map"]),
            qubits=qubits,
            gates=gates,
        )
    except KeyError as e:
        raise ProfileError(f"profile document is missing key {e}") from None


@dataclass(frozen=True)
class ProfileStats:
    """Per-metric (mean, std) pairs plus the two-qubit gate kind."""

    metrics: dict[str, tuple[float, float]]
    twoq_gate: str = "CX"
    name: str = "synthesized"

    def __post_init__(self):
        for key in STAT_KEYS:
            if key not in self.metrics:
                raise ProfileError(f"stats document is missing metric {key!r}")
            mean, std = self.metrics[key]
            if std < 0:
                raise ProfileError(f"std for {key} must be >= 0, got {std}")
        if self.twoq_gate not in ("CX", "ECR"):
            raise ProfileError(f"two-qubit gate must be CX or ECR, got {self.twoq_gate}")

    def mean(self, key: str) -> float:
        return self.metrics[key][0]

    def std(self, key: str) -> float:
        return self.metrics[key][1]


def load_stats(document: str | dict) -> ProfileStats:
    if isinstance(document, str):
        document = json.loads(document)
    metrics = {k: (float(v["mean"]), float(v["std"])) for k, v in document["metrics"].items()}
    return ProfileStats(
        metrics=metrics,
        twoq_gate=str(document.get("twoq_gate", "CX")),
        name=str(document.get("name", "synthesized")),
    )


def load_topology(document: str | dict) -> tuple[int, tuple[tuple[int, int], ...]]:
    """Parse {"num_qubits": N, "edges": [[i, j], ...]}."""
    if isinstance(document, str):
        document = json.loads(document)
    n = int(document["num_qubits"])
    edges = tuple(tuple(int(x) for x in e) for e in document["edges"])
    return n, edges


def _connected(n: int, edges) -> bool:
    adj = {i: set() for i in range(n)}
    for a, b in edges:
        adj[a].add(b)
        adj[b].add(a)
    seen, stack = {0}, [0]
    while stack:
        v = stack.pop()
        for w in adj[v]:
            if w not in seen:
                seen.add(w)
                stack.append(w)
    return len(seen) == n


def synth_profile(
    stats: ProfileStats,
    n_qubits: int,
    topology,
    seed: int,
    name: str | None = None,
) -> NoiseProfile:
    """Draw a profile from per-metric Normal(mean, std) statistics.

    Out-of-range draws are projected back to validity: T2 is capped at 2*T1,
    probabilities at [0, 1], errors and durations at >= 0. Deterministic for
    a fixed seed.
    """
    edges = tuple(tuple(sorted((int(a), int(b)))) for a, b in topology)
    for a, b in edges:
        if not (0 <= a < n_qubits and 0 <= b < n_qubits and a != b):
            raise ProfileError(f"topology edge ({a}, {b}) invalid for {n_qubits} qubits")
    if not _connected(n_qubits, edges):
        raise ProfileError("topology must be connected")

    rng = np.random.default_rng(seed)

    def draw(key: str) -> float:
        mean, std = stats.metrics[key]
        return float(rng.normal(mean, std)) if std > 0 else mean

    qubits = []
    gates = []
    for q in range(n_qubits):
        t1 = max(draw("t1_us"), 1e-3)
        t2 = _clamp(draw("t2_us"), 1e-3, 2 * t1)
        cal = QubitCalibration(
            t1_us=t1,
            t2_us=t2,
            freq_ghz=draw("freq_ghz"),
            anharm_ghz=draw("anharm_ghz"),
            readout_p01=_clamp(draw("readout_p01"), 0.0, 1.0),
            readout_p10=_clamp(draw("readout_p10"), 0.0, 1.0),
            readout_duration_ns=max(draw("readout_length_ns"), 0.0),
        )
        qubits.append(cal)
        gates.append(GateCalibration("RZ", (q,), 0.0, 0.0))
        gates.append(
            GateCalibration(
                "SX", (q,),
                _clamp(draw("sx_error"), 0.0, 1.0 - 1e-9),
                max(draw("sq_gate_length_ns"), 0.0),
            )
        )
        gates.append(
            GateCalibration(
                "X", (q,),
                _clamp(draw("x_error"), 0.0, 1.0 - 1e-9),
                max(draw("sq_gate_length_ns"), 0.0),
            )
        )
    for a, b in edges:
        gates.append(
            GateCalibration(
                stats.twoq_gate, (a, b),
                _clamp(draw("twoq_error"), 0.0, 1.0 - 1e-9),
                max(draw("twoq_length_ns"), 0.0),
            )
        )
    basis = frozenset({"RZ", "SX", "X", stats.twoq_gate})
    return NoiseProfile(
        name=name or stats.name,
        basis_gates=basis,
        coupling_map=edges,
        qubits=tuple(qubits),
        gates=tuple(gates),
    )


# ---------------------------------------------------------------------------
# Channel constructors


def thermal_relaxation_action(t1_us: float, t2_us: float, duration_ns: float) -> ChannelAction:
    """Amplitude damping plus dephasing over the gate duration.

    Zero excited-state thermal population: the fixed point is the ground
    state. CPTP is guaranteed by the T2 <= 2*T1 precondition.
    """
    if t1_us <= 0 or not 0 < t2_us <= 2 * t1_us:
        raise ProfileError(f"need 0 < T2 <= 2*T1, got T1={t1_us}, T2={t2_us}")
    if duration_ns < 0:
        raise ProfileError("duration must be >= 0")
    gamma1 = duration_ns / (t1_us * US_TO_NS)
    gamma2 = duration_ns / (t2_us * US_TO_NS)
    return ChannelAction("affine1q", (1.0 - math.exp(-gamma1), math.exp(-gamma2)))


def depolarizing_action(p: float, arity: int) -> ChannelAction:
    """rho -> (1-p) rho + p I/2^arity on the target qubits (Pauli Kraus set)."""
    if not 0.0 <= p <= 1.0:
        raise ProfileError(f"depolarizing probability {p} outside [0, 1]")
    if arity not in (1, 2):
        raise ProfileError("depolarizing supports arity 1 or 2")
    from .qsim import PAULIS

    singles = [np.eye(2, dtype=complex), PAULIS["X"], PAULIS["Y"], PAULIS["Z"]]
    n_paulis = 4 ** arity
    ops = []
    for idx in range(n_paulis):
        if arity == 1:
            m = singles[idx]
        else:
            m = np.kron(singles[idx // 4], singles[idx % 4])
        weight = 1.0 - p + p / n_paulis if idx == 0 else p / n_paulis
        if weight > 0:
            ops.append(math.sqrt(weight) * m)
    return ChannelAction("kraus", tuple(ops))


def _thermal_process_fidelity(gamma1: float, gamma2: float) -> float:
    # (1/4) sum_ij <i| E(|i><j|) |j> for the single-qubit relaxation map.
    return (1.0 + math.exp(-gamma1) + 2.0 * math.exp(-gamma2)) / 4.0


def average_gate_error_depolarizing(p: float, arity: int) -> float:
    """Average gate infidelity of the depolarizing channel, e = p (d-1)/d."""
    d = 2 ** arity
    return p * (d - 1) / d


def gate_noise(profile: NoiseProfile, gate: str, qubits: tuple[int, ...]):
    """Channel sequence modeling one physical gate instance.

    Thermal relaxation over the gate duration on each involved qubit,
    followed by a depolarizing channel calibrated so that the composed
    average gate error matches the reported one:
        e_reported = e_thermal + (1 - e_thermal) * e_dep,
    with e_dep(p) = p (d-1)/d as the calibration convention and a floor at
    p = 0 when relaxation alone exceeds the report.

    Returns a tuple of (ChannelAction, target qubits) pairs; RZ yields ().
    """
    qubits = tuple(qubits)
    if gate == "RZ":
        return ()
    cal = profile.gate_cal(gate, qubits)
    arity = len(qubits)
    d = 2 ** arity
    actions = []
    f_pro = 1.0
    for q in qubits:
        qc = profile.qubits[q]
        if cal.duration_ns > 0:
            actions.append((thermal_relaxation_action(qc.t1_us, qc.t2_us, cal.duration_ns), (q,)))
        g1 = cal.duration_ns / (qc.t1_us * US_TO_NS)
        g2 = cal.duration_ns / (qc.t2_us * US_TO_NS)
        f_pro *= _thermal_process_fidelity(g1, g2)
    e_thermal = 1.0 - (d * f_pro + 1.0) / (d + 1.0)
    e_dep = max(0.0, (cal.error - e_thermal) / (1.0 - e_thermal))
    p_dep = _clamp(e_dep * d / (d - 1), 0.0, 1.0)
    if p_dep > 0:
        actions.append((depolarizing_action(p_dep, arity), qubits))
    return tuple(actions)


def readout_confusion(p01: float, p10: float) -> ChannelAction:
    """2x2 row-stochastic confusion matrix; rows indexed by the true bit."""
    if not (0.0 <= p01 <= 1.0 and 0.0 <= p10 <= 1.0):
        raise ProfileError("confusion probabilities must lie in [0, 1]")
    m = np.array([[1.0 - p10, p10], [p01, 1.0 - p01]])
    return ChannelAction("confusion", (m,))


def apply_confusion(probs, confusion: ChannelAction) -> np.ndarray:
    """Map a true outcome distribution through the confusion matrix."""
    if confusion.kind != "confusion":
        raise ValueError("apply_confusion needs a confusion action")
    p = np.asarray(probs, dtype=float)
    if p.shape != (2,) or p.min() < -1e-9 or abs(p.sum() - 1.0) > 1e-9:
        raise ValueError(f"{probs} is not a distribution over two outcomes")
    return p @ confusion.data[0]


def confused_expectation(exact: float, p01: float, p10: float) -> float:
    """Z-type expectation after pushing the implied outcome distribution
    through the confusion matrix (outcome +1 <-> bit 0)."""
    p1 = (1.0 - exact) / 2.0
    p1_read = p1 * (1.0 - p01) + (1.0 - p1) * p10
    return 1.0 - 2.0 * p1_read
