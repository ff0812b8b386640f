"""End-to-end differentiable hybrid pipeline.

Quantum features are extracted by the engine (transpiled under a profile, or
logical when noiseless), fed to a single-hidden-layer classical head, and
both parameter groups are trained jointly: parameter-shift gradients for the
circuit angles, analytic backpropagation for the head, one ADAM update over
the concatenated vector. Noisy training evaluates gradients in the same
noise-and-shots mode as forward passes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import ansatz, engine
from .ansatz import HqcnnSpec, MeasurementPlan
from .noise import NoiseProfile
from .transpile import PhysicalCircuit, transpile

BCE_CLIP = 1e-7


# ---------------------------------------------------------------------------
# Classical head

@dataclass
class ClassicalHead:
    w1: np.ndarray  # (3m, m)
    b1: np.ndarray  # (3m,)
    w2: np.ndarray  # (3m,)
    b2: float
    activation: str  # "sigmoid" for classification, "tanh" for regression

    def copy(self) -> "ClassicalHead":
        return ClassicalHead(self.w1.copy(), self.b1.copy(), self.w2.copy(),
                             self.b2, self.activation)

    @property
    def n_inputs(self) -> int:
        return self.w1.shape[1]


def init_head(n_inputs: int, activation: str, rng: np.random.Generator) -> ClassicalHead:
    hidden = 3 * n_inputs
    bound1 = 1.0 / math.sqrt(n_inputs)
    bound2 = 1.0 / math.sqrt(hidden)
    return ClassicalHead(
        w1=rng.uniform(-bound1, bound1, size=(hidden, n_inputs)),
        b1=rng.uniform(-bound1, bound1, size=hidden),
        w2=rng.uniform(-bound2, bound2, size=hidden),
        b2=float(rng.uniform(-bound2, bound2)),
        activation=activation,
    )


def head_forward(head: ClassicalHead, f: np.ndarray):
    z1 = head.w1 @ f + head.b1
    h = np.maximum(z1, 0.0)
    z2 = float(head.w2 @ h + head.b2)
    if head.activation == "sigmoid":
        yhat = 1.0 / (1.0 + math.exp(-z2))
    else:
        yhat = math.tanh(z2)
    return yhat, (f, z1, h, yhat)


def head_logit(head: ClassicalHead, f: np.ndarray) -> float:
    """Pre-activation output (attribution operates in this margin space)."""
    h = np.maximum(head.w1 @ f + head.b1, 0.0)
    return float(head.w2 @ h + head.b2)


@dataclass
class HeadGrads:
    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: float


def head_backward(head: ClassicalHead, cache, upstream: float):
    """Gradients of the head for upstream = dLoss/dyhat; also dLoss/dfeatures."""
    f, z1, h, yhat = cache
    if head.activation == "sigmoid":
        dz2 = upstream * yhat * (1.0 - yhat)
    else:
        dz2 = upstream * (1.0 - yhat * yhat)
    dh = dz2 * head.w2
    dz1 = dh * (z1 > 0.0)
    grads = HeadGrads(
        w1=np.outer(dz1, f),
        b1=dz1,
        w2=dz2 * h,
        b2=dz2,
    )
    dfeat = head.w1.T @ dz1
    return grads, dfeat


# ---------------------------------------------------------------------------
# Losses

def loss(kind: str, yhat, y):
    """Mean loss and its elementwise derivative d(mean loss)/d(yhat_i)."""
    yhat = np.atleast_1d(np.asarray(yhat, dtype=float))
    y = np.atleast_1d(np.asarray(y, dtype=float))
    if yhat.shape != y.shape:
        raise ValueError("prediction/label length mismatch")
    m = len(y)
    if kind == "bce":
        p = np.clip(yhat, BCE_CLIP, 1.0 - BCE_CLIP)
        value = float(-np.mean(y * np.log(p) + (1.0 - y) * np.log(1.0 - p)))
        grad = (p - y) / (p * (1.0 - p)) / m
    elif kind == "mse":
        value = float(np.mean((y - yhat) ** 2))
        grad = 2.0 * (yhat - y) / m
    else:
        raise ValueError(f"loss kind must be 'bce' or 'mse', got {kind!r}")
    return value, grad


# ---------------------------------------------------------------------------
# Hybrid model

@dataclass
class HybridModel:
    spec: HqcnnSpec
    plan: MeasurementPlan
    theta: np.ndarray
    head: ClassicalHead | None
    task: str  # "classification" | "regression"
    profile: NoiseProfile | None = None
    shots: int | None = None
    _program: engine.Program | None = field(default=None, repr=False, compare=False)
    _physical: PhysicalCircuit | None = field(default=None, repr=False, compare=False)

    @property
    def occurrences(self) -> dict[int, tuple[int, ...]]:
        return ansatz.occurrence_map(ansatz.symbolic_circuit(self.spec))

    def program(self) -> engine.Program:
        if self._program is None:
            symbolic = ansatz.symbolic_circuit(self.spec)
            if self.profile is not None:
                self._physical = transpile(symbolic, self.profile)
                self._program = engine.compile_physical(self._physical)
            else:
                self._program = engine.compile_logical(symbolic)
        return self._program

    def copy_params(self):
        return self.theta.copy(), None if self.head is None else self.head.copy()


def build_model(
    n: int,
    variant: str,
    task: str,
    profile: NoiseProfile | None = None,
    shots: int | None = None,
    rng: np.random.Generator | None = None,
) -> HybridModel:
    """Fresh model with Uniform(-pi, pi) circuit angles and a head sized to
    the measurement plan (the qcnn baseline carries no head)."""
    if task not in ("classification", "regression"):
        raise ValueError(f"unknown task {task!r}")
    rng = rng if rng is not None else np.random.default_rng()
    spec, _, plan = ansatz.build_layers(n, variant)
    theta = rng.uniform(-math.pi, math.pi, size=spec.n_params)
    head = None
    if variant != "qcnn":
        activation = "sigmoid" if task == "classification" else "tanh"
        head = init_head(plan.n_features, activation, rng)
    return HybridModel(spec, plan, theta, head, task, profile, shots)


def _readout_to_prediction(model: HybridModel, features: np.ndarray):
    if model.head is not None:
        return head_forward(model.head, features)
    z = float(features[-1])
    if model.task == "classification":
        return (1.0 - z) / 2.0, None
    return z, None


def forward(model: HybridModel, x, rng: np.random.Generator | None = None) -> float:
    """Prediction for one input vector (values clamped to [0, pi])."""
    xb = np.clip(np.asarray(x, dtype=float), 0.0, math.pi)
    features = engine.run(model.program(), theta=model.theta, x=xb,
                          shots=model.shots, rng=rng)
    yhat, _ = _readout_to_prediction(model, features)
    return yhat


def predict_batch(model: HybridModel, X, rng: np.random.Generator | None = None) -> np.ndarray:
    return np.array([forward(model, row, rng) for row in np.asarray(X, dtype=float)])


def quantum_grad(model: HybridModel, x, dloss_dfeatures,
                 rng: np.random.Generator | None = None) -> np.ndarray:
    """Parameter-shift gradient of the loss w.r.t. the circuit angles for
    one sample, with the given per-feature upstream derivatives."""
    xb = np.clip(np.asarray(x, dtype=float), 0.0, math.pi)
    _, jac = engine.run_with_gradient(model.program(), model.theta, x=xb,
                                      shots=model.shots, rng=rng)
    return jac.T @ np.asarray(dloss_dfeatures, dtype=float)


def _sample_loss_and_grads(model: HybridModel, x, y: float, kind: str,
                           rng: np.random.Generator | None):
    xb = np.clip(np.asarray(x, dtype=float), 0.0, math.pi)
    features, jac = engine.run_with_gradient(model.program(), model.theta, x=xb,
                                             shots=model.shots, rng=rng)
    yhat, cache = _readout_to_prediction(model, features)
    value, dyhat = loss(kind, [yhat], [y])
    upstream = float(dyhat[0])
    if model.head is not None:
        hgrads, dfeat = head_backward(model.head, cache, upstream)
    else:
        hgrads = None
        dfeat = np.zeros(len(features))
        dfeat[-1] = upstream * (-0.5 if model.task == "classification" else 1.0)
    dtheta = jac.T @ dfeat
    return value, dtheta, hgrads


# ---------------------------------------------------------------------------
# ADAM over the packed parameter vector

@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0
    lr: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def adam_init(n_params: int, lr: float = 0.01) -> AdamState:
    return AdamState(m=np.zeros(n_params), v=np.zeros(n_params), lr=lr)


def adam_step(state: AdamState, params: np.ndarray, grads: np.ndarray) -> np.ndarray:
    """Standard bias-corrected ADAM update; returns the new parameters."""
    if params.shape != grads.shape or params.shape != state.m.shape:
        raise ValueError("parameter/gradient/state size mismatch")
    state.t += 1
    state.m = state.beta1 * state.m + (1.0 - state.beta1) * grads
    state.v = state.beta2 * state.v + (1.0 - state.beta2) * grads ** 2
    m_hat = state.m / (1.0 - state.beta1 ** state.t)
    v_hat = state.v / (1.0 - state.beta2 ** state.t)
    return params - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)


def pack_params(model: HybridModel) -> np.ndarray:
    parts = [model.theta]
    if model.head is not None:
        h = model.head
        parts += [h.w1.ravel(), h.b1, h.w2, np.array([h.b2])]
    return np.concatenate(parts)


def unpack_params(model: HybridModel, vector: np.ndarray) -> None:
    p = len(model.theta)
    model.theta = vector[:p].copy()
    if model.head is not None:
        h = model.head
        hidden, m = h.w1.shape
        i = p
        h.w1 = vector[i:i + hidden * m].reshape(hidden, m).copy()
        i += hidden * m
        h.b1 = vector[i:i + hidden].copy()
        i += hidden
        h.w2 = vector[i:i + hidden].copy()
        i += hidden
        h.b2 = float(vector[i])


def _pack_grads(model: HybridModel, dtheta: np.ndarray, hgrads: HeadGrads | None) -> np.ndarray:
    parts = [dtheta]
    if model.head is not None:
        parts += [hgrads.w1.ravel(), hgrads.b1, hgrads.w2, np.array([hgrads.b2])]
    return np.concatenate(parts)


# ---------------------------------------------------------------------------
# Training loop

@dataclass
class FitResult:
    train_losses: list[float]
    val_losses: list[float]
    best_epoch: int | None
    best_theta: np.ndarray
    best_head: ClassicalHead | None


def fit(
    model: HybridModel,
    train_X,
    train_y,
    val_X=None,
    val_y=None,
    epochs: int = 30,
    batch_size: int = 10,
    seed: int = 0,
    learning_rate: float = 0.01,
) -> FitResult:
    """Mini-batch ADAM over the joint parameter vector.

    Per-epoch mean train loss and full validation loss are recorded; the
    snapshot at the epoch of minimum validation loss (first occurrence, or
    train loss when no validation split is given) is returned. Deterministic
    per seed; in shots mode the same rng drives shuffling and shot noise.
    """
    train_X = np.asarray(train_X, dtype=float)
    train_y = np.asarray(train_y, dtype=float)
    if len(train_X) == 0:
        raise ValueError("empty training split")
    if val_X is not None:
        val_X = np.asarray(val_X, dtype=float)
        val_y = np.asarray(val_y, dtype=float)
        if len(val_X) == 0:
            raise ValueError("empty validation split")
    kind = "bce" if model.task == "classification" else "mse"
    rng = np.random.default_rng(seed)
    params = pack_params(model)
    adam = adam_init(len(params), lr=learning_rate)

    train_losses: list[float] = []
    val_losses: list[float] = []
    best = (math.inf, None, params.copy())  # (selection loss, epoch, params)

    for epoch in range(epochs):
        order = rng.permutation(len(train_X))
        epoch_losses = []
        for start in range(0, len(order), batch_size):
            batch = order[start:start + batch_size]
            grad_sum = np.zeros_like(params)
            for idx in batch:
                value, dtheta, hgrads = _sample_loss_and_grads(
                    model, train_X[idx], float(train_y[idx]), kind, rng
                )
                epoch_losses.append(value)
                grad_sum += _pack_grads(model, dtheta, hgrads)
            params = adam_step(adam, params, grad_sum / len(batch))
            unpack_params(model, params)
        train_losses.append(float(np.mean(epoch_losses)))
        if val_X is not None:
            preds = predict_batch(model, val_X, rng)
            val_value, _ = loss(kind, preds, val_y)
            val_losses.append(val_value)
            selection = val_value
        else:
            selection = train_losses[-1]
        if selection < best[0]:
            best = (selection, epoch, params.copy())

    best_theta, best_head = _snapshot_params(model, best[2])
    return FitResult(train_losses, val_losses, best[1], best_theta, best_head)


def _snapshot_params(model: HybridModel, vector: np.ndarray):
    saved_theta, saved_head = model.theta, model.head
    model.theta = saved_theta.copy()
    model.head = None if saved_head is None else saved_head.copy()
    unpack_params(model, vector)
    theta, head = model.theta, model.head
    model.theta, model.head = saved_theta, saved_head
    return theta, head


def restore(model: HybridModel, result: FitResult) -> None:
    """Load the best-epoch snapshot into the model."""
    model.theta = result.best_theta.copy()
    if model.head is not None:
        model.head = result.best_head.copy()
