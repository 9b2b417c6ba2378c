"""Elman RNN: parameters, forward pass with state capture, BPTT, Adam, training."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Iterator

import numpy as np

__all__ = [
    "ACTIVATIONS",
    "LOSSES",
    "PARAM_NAMES",
    "RnnParams",
    "SequenceBatch",
    "HiddenTrace",
    "AdamState",
    "TrainConfig",
    "TrainResult",
    "init_irnn",
    "init_standard",
    "forward",
    "loss_and_output_grad",
    "bptt_gradients",
    "global_norm",
    "adam_step",
    "train",
    "evaluate",
    "params_to_dict",
    "params_from_dict",
    "save_params",
    "load_params",
]

ACTIVATIONS = ("relu", "tanh")
LOSSES = ("cross_entropy_final", "cross_entropy_per_step", "squared_error")
PARAM_NAMES = ("w_out", "w_hid", "w_in", "b_out", "b_hid")
MODEL_FORMAT_VERSION = 1


@dataclass(frozen=True)
class RnnParams:
    """Weights of ``f_t = w_out h_t + b_out``, ``h_t = act(w_hid h_{t-1} + w_in x_t + b_hid)``.

    ``hid_factors``, when set, is a pair ``(left, right)`` with
    ``w_hid == left @ right``; the forward pass then uses the two thin products
    instead of ``w_hid`` (low-rank baseline).
    """

    w_out: np.ndarray
    w_hid: np.ndarray
    w_in: np.ndarray
    b_out: np.ndarray
    b_hid: np.ndarray
    activation: str = "relu"
    hid_factors: tuple[np.ndarray, np.ndarray] | None = None

    def __post_init__(self):
        for name in PARAM_NAMES:
            arr = np.asarray(getattr(self, name), dtype=np.float64)
            object.__setattr__(self, name, arr)
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        m = self.w_hid.shape[0]
        d_y = self.w_out.shape[0]
        if self.w_hid.shape != (m, m):
            raise ValueError(f"w_hid must be square, got {self.w_hid.shape}")
        if self.w_out.ndim != 2 or self.w_out.shape[1] != m:
            raise ValueError(f"w_out shape {self.w_out.shape} inconsistent with m={m}")
        if self.w_in.ndim != 2 or self.w_in.shape[0] != m:
            raise ValueError(f"w_in shape {self.w_in.shape} inconsistent with m={m}")
        if self.b_out.shape != (d_y,) or self.b_hid.shape != (m,):
            raise ValueError("bias shapes inconsistent with weights")
        for name in PARAM_NAMES:
            if not np.all(np.isfinite(getattr(self, name))):
                raise ValueError(f"{name} contains non-finite entries")

    @property
    def m(self) -> int:
        return self.w_hid.shape[0]

    @property
    def d_x(self) -> int:
        return self.w_in.shape[1]

    @property
    def d_y(self) -> int:
        return self.w_out.shape[0]

    def arrays(self) -> dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in PARAM_NAMES}

    def with_arrays(self, **arrays) -> "RnnParams":
        return replace(self, **arrays)

    def parameter_count(self) -> int:
        return sum(getattr(self, name).size for name in PARAM_NAMES)


@dataclass(frozen=True)
class SequenceBatch:
    """``inputs`` of shape (n, T, d_x) and targets.

    Targets are either integer labels of shape (n,) (sequence-final
    classification), integer labels of shape (n, T), or real targets of
    shape (n, T, d_y).
    """

    inputs: np.ndarray
    targets: np.ndarray

    def __post_init__(self):
        x = np.asarray(self.inputs, dtype=np.float64)
        if x.ndim != 3:
            raise ValueError(f"inputs must be (n, T, d_x), got {x.shape}")
        if not np.all(np.isfinite(x)):
            raise ValueError("inputs contain non-finite entries")
        y = np.asarray(self.targets)
        if y.shape[0] != x.shape[0]:
            raise ValueError("inputs and targets disagree on n")
        object.__setattr__(self, "inputs", x)
        object.__setattr__(self, "targets", y)

    @property
    def n(self) -> int:
        return self.inputs.shape[0]

    @property
    def steps(self) -> int:
        return self.inputs.shape[1]

    @property
    def d_x(self) -> int:
        return self.inputs.shape[2]

    @property
    def input_radius(self) -> float:
        """Empirical R_x: largest per-step Euclidean input norm."""
        if self.inputs.size == 0:
            return 0.0
        return float(np.sqrt(np.max(np.sum(self.inputs**2, axis=2))))

    def subset(self, index) -> "SequenceBatch":
        return SequenceBatch(self.inputs[index], self.targets[index])

    def __len__(self) -> int:
        return self.n


@dataclass(frozen=True)
class HiddenTrace:
    states: np.ndarray
    preactivations: np.ndarray


def _uniform(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    bound = 1.0 / math.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


def init_irnn(m: int, d_x: int, d_y: int, seed: int) -> RnnParams:
    """ReLU RNN with identity recurrence and zero biases."""
    if min(m, d_x, d_y) < 1:
        raise ValueError("dimensions must be >= 1")
    rng = np.random.default_rng(seed)
    w_in = _uniform(rng, (m, d_x), d_x)
    w_out = _uniform(rng, (d_y, m), m)
    return RnnParams(
        w_out=w_out,
        w_hid=np.eye(m),
        w_in=w_in,
        b_out=np.zeros(d_y),
        b_hid=np.zeros(m),
        activation="relu",
    )


def init_standard(m: int, d_x: int, d_y: int, seed: int, activation: str = "tanh") -> RnnParams:
    """All weights uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)), zero biases."""
    if min(m, d_x, d_y) < 1:
        raise ValueError("dimensions must be >= 1")
    rng = np.random.default_rng(seed)
    w_in = _uniform(rng, (m, d_x), d_x)
    w_hid = _uniform(rng, (m, m), m)
    w_out = _uniform(rng, (d_y, m), m)
    return RnnParams(w_out, w_hid, w_in, np.zeros(d_y), np.zeros(m), activation)


def _activate(z: np.ndarray, activation: str) -> np.ndarray:
    if activation == "relu":
        return np.maximum(z, 0.0)
    return np.tanh(z)


def _activation_grad(z: np.ndarray, h: np.ndarray, activation: str) -> np.ndarray:
    if activation == "relu":
        return (z > 0.0).astype(np.float64)
    return 1.0 - h * h


def _hidden_product(params: RnnParams, h: np.ndarray) -> np.ndarray:
    if params.hid_factors is not None:
        left, right = params.hid_factors
        return (h @ right.T) @ left.T
    return h @ params.w_hid.T


def forward(params: RnnParams, inputs) -> tuple[np.ndarray, HiddenTrace]:
    """Run the recurrence from ``h_0 = 0``.

    ``inputs`` is an (n, T, d_x) array or a ``SequenceBatch``. Returns outputs
    of shape (n, T, d_y) and the hidden trace.
    """
    x = inputs.inputs if isinstance(inputs, SequenceBatch) else np.asarray(inputs, dtype=np.float64)
    if x.ndim != 3 or x.shape[2] != params.d_x:
        raise ValueError(f"inputs of shape {x.shape} do not match d_x={params.d_x}")
    n, steps, _ = x.shape
    m = params.m
    states = np.empty((n, steps, m))
    pre = np.empty((n, steps, m))
    drive = (x.reshape(n * steps, -1) @ params.w_in.T).reshape(n, steps, m) + params.b_hid
    h = np.zeros((n, m))
    for t in range(steps):
        z = _hidden_product(params, h) + drive[:, t]
        h = _activate(z, params.activation)
        pre[:, t] = z
        states[:, t] = h
    outputs = (states.reshape(n * steps, m) @ params.w_out.T).reshape(n, steps, -1) + params.b_out
    return outputs, HiddenTrace(states, pre)


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def loss_and_output_grad(outputs: np.ndarray, targets: np.ndarray, loss: str) -> tuple[float, np.ndarray]:
    """Mean loss and its gradient with respect to ``outputs`` (n, T, d_y).

    ``cross_entropy_final`` scores only the last step against labels (n,);
    ``cross_entropy_per_step`` averages over all (n, T) labels;
    ``squared_error`` is the mean over (n, T) of ``0.5 * ||f_t - y_t||^2``.
    """
    n, steps, d_y = outputs.shape
    grad = np.zeros_like(outputs)
    if loss == "cross_entropy_final":
        labels = np.asarray(targets, dtype=np.intp)
        logp = _log_softmax(outputs[:, -1])
        value = -float(np.mean(logp[np.arange(n), labels]))
        probs = np.exp(logp)
        probs[np.arange(n), labels] -= 1.0
        grad[:, -1] = probs / n
    elif loss == "cross_entropy_per_step":
        labels = np.asarray(targets, dtype=np.intp)
        logp = _log_softmax(outputs)
        ii, tt = np.meshgrid(np.arange(n), np.arange(steps), indexing="ij")
        value = -float(np.mean(logp[ii, tt, labels]))
        probs = np.exp(logp)
        probs[ii, tt, labels] -= 1.0
        grad = probs / (n * steps)
    elif loss == "squared_error":
        diff = outputs - np.asarray(targets, dtype=np.float64)
        value = 0.5 * float(np.sum(diff * diff)) / (n * steps)
        grad = diff / (n * steps)
    else:
        raise ValueError(f"unknown loss {loss!r}; expected one of {LOSSES}")
    return value, grad


def bptt_gradients(params: RnnParams, batch: SequenceBatch, loss: str = "cross_entropy_final",
                   trace: tuple[np.ndarray, HiddenTrace] | None = None) -> tuple[float, dict[str, np.ndarray]]:
    """Mean loss and exact gradients with respect to every array of ``params``.

    Reverse-mode unrolling through all T steps. The ReLU derivative at 0 is 0.
    A precomputed ``(outputs, trace)`` pair from ``forward`` may be passed in.
    """
    if loss not in LOSSES:
        raise ValueError(f"unknown loss {loss!r}; expected one of {LOSSES}")
    if params.hid_factors is not None:
        raise ValueError("gradients of factored recurrent weights are not supported")
    outputs, tr = trace if trace is not None else forward(params, batch)
    value, d_out = loss_and_output_grad(outputs, batch.targets, loss)
    x = batch.inputs
    n, steps, _ = x.shape
    states = tr.states

    m = params.m
    flat_states = states.reshape(n * steps, m)
    flat_out = d_out.reshape(n * steps, -1)
    g_w_out = flat_out.T @ flat_states
    g_b_out = flat_out.sum(axis=0)
    d_h_all = (flat_out @ params.w_out).reshape(n, steps, m)

    d_pre = np.empty_like(states)
    carry = np.zeros((n, m))
    for t in range(steps - 1, -1, -1):
        d_h = d_h_all[:, t] + carry
        d_z = d_h * _activation_grad(tr.preactivations[:, t], states[:, t], params.activation)
        d_pre[:, t] = d_z
        carry = d_z @ params.w_hid

    flat_pre = d_pre[:, 1:].reshape(n * (steps - 1), m)
    g_w_hid = flat_pre.T @ states[:, :-1].reshape(n * (steps - 1), m)
    flat_dz = d_pre.reshape(n * steps, m)
    g_w_in = flat_dz.T @ x.reshape(n * steps, -1)
    g_b_hid = flat_dz.sum(axis=0)
    grads = {"w_out": g_w_out, "w_hid": g_w_hid, "w_in": g_w_in, "b_out": g_b_out, "b_hid": g_b_hid}
    return value, grads


def global_norm(grads: dict[str, np.ndarray]) -> float:
    return math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    clip_norm: float | None = 1.0
    step: int = 0
    first: dict[str, np.ndarray] = field(default_factory=dict)
    second: dict[str, np.ndarray] = field(default_factory=dict)


def adam_update(state: AdamState, arrays: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
    """One Adam step on a dict of arrays, with global-norm clipping applied first."""
    if state.clip_norm is not None:
        norm = global_norm(grads)
        if norm > state.clip_norm:
            scale = state.clip_norm / norm
            grads = {k: g * scale for k, g in grads.items()}
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    corr1 = 1.0 - b1**state.step
    corr2 = 1.0 - b2**state.step
    updated = {}
    for name, value in arrays.items():
        g = grads[name]
        m1 = state.first.get(name)
        m2 = state.second.get(name)
        if m1 is None:
            m1 = np.zeros_like(value)
            m2 = np.zeros_like(value)
        m1 = b1 * m1 + (1.0 - b1) * g
        m2 = b2 * m2 + (1.0 - b2) * g * g
        state.first[name] = m1
        state.second[name] = m2
        updated[name] = value - state.lr * (m1 / corr1) / (np.sqrt(m2 / corr2) + state.eps)
    return updated


def adam_step(state: AdamState, params: RnnParams, grads: dict[str, np.ndarray]) -> RnnParams:
    return params.with_arrays(**adam_update(state, params.arrays(), grads))


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 10
    batch_size: int = 120
    lr: float = 1e-3
    lr_decay: float = 0.95
    decay_step: int = 10
    clip: float | None = 1.0
    seed: int = 0
    loss: str = "cross_entropy_final"

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size < 1 or self.decay_step < 1:
            raise ValueError("epochs >= 0, batch_size >= 1 and decay_step >= 1 are required")
        if self.lr < 0:
            raise ValueError("learning rate must be non-negative")
        if self.loss not in LOSSES:
            raise ValueError(f"unknown loss {self.loss!r}")


@dataclass
class TrainResult:
    params: RnnParams
    loss_history: list[float]


StepHook = Callable[[RnnParams, int], RnnParams]


def _minibatches(n: int, batch_size: int, rng: np.random.Generator) -> Iterator[np.ndarray]:
    order = rng.permutation(n)
    for start in range(0, n, batch_size):
        yield order[start : start + batch_size]


def train(params: RnnParams, dataset: SequenceBatch, config: TrainConfig,
          after_step: StepHook | None = None) -> TrainResult:
    """Mini-batch Adam with step-decayed learning rate.

    The learning rate is multiplied by ``lr_decay`` every ``decay_step``
    epochs. Shuffling comes from a generator seeded with ``config.seed``, so
    runs are reproducible. ``after_step(params, step)`` may rewrite the
    parameters after every optimizer step (used for masking).
    """
    if dataset.n == 0:
        raise ValueError("cannot train on an empty dataset")
    rng = np.random.default_rng(config.seed)
    state = AdamState(lr=config.lr, clip_norm=config.clip)
    history = []
    for epoch in range(config.epochs):
        state.lr = config.lr * config.lr_decay ** (epoch // config.decay_step)
        total, count = 0.0, 0
        for idx in _minibatches(dataset.n, config.batch_size, rng):
            batch = dataset.subset(idx)
            value, grads = bptt_gradients(params, batch, config.loss)
            params = adam_step(state, params, grads)
            if after_step is not None:
                params = after_step(params, state.step)
            total += value * len(idx)
            count += len(idx)
        history.append(total / count)
    return TrainResult(params, history)


def evaluate(params: RnnParams, dataset: SequenceBatch, batch_size: int = 1000) -> dict[str, float]:
    """Accuracy of the final-step argmax (ties go to the lowest class) and mean cross entropy."""
    correct = 0
    loss_sum = 0.0
    for start in range(0, dataset.n, batch_size):
        batch = dataset.subset(slice(start, start + batch_size))
        outputs, _ = forward(params, batch)
        final = outputs[:, -1]
        labels = np.asarray(batch.targets, dtype=np.intp)
        correct += int(np.sum(np.argmax(final, axis=1) == labels))
        logp = _log_softmax(final)
        loss_sum += -float(np.sum(logp[np.arange(batch.n), labels]))
    n = max(dataset.n, 1)
    return {"accuracy": correct / n, "loss": loss_sum / n}


def params_to_dict(params: RnnParams) -> dict:
    out = {
        "version": MODEL_FORMAT_VERSION,
        "dims": {"m": params.m, "d_x": params.d_x, "d_y": params.d_y},
        "activation": params.activation,
    }
    for name in PARAM_NAMES:
        out[name] = getattr(params, name).tolist()
    if params.hid_factors is not None:
        out["hid_factors"] = [f.tolist() for f in params.hid_factors]
    return out


def params_from_dict(data: dict) -> RnnParams:
    if data.get("version") != MODEL_FORMAT_VERSION:
        raise ValueError(f"unsupported model format version {data.get('version')!r}")
    dims = data["dims"]
    m, d_x, d_y = dims["m"], dims["d_x"], dims["d_y"]
    arrays = {name: np.array(data[name], dtype=np.float64) for name in PARAM_NAMES}
    for name, shape in {"w_out": (d_y, m), "w_hid": (m, m), "w_in": (m, d_x)}.items():
        arrays[name] = arrays[name].reshape(shape)
    factors = None
    if "hid_factors" in data:
        left, right = (np.array(f, dtype=np.float64) for f in data["hid_factors"])
        factors = (left.reshape(m, -1), right.reshape(-1, m))
    return RnnParams(activation=data["activation"], hid_factors=factors, **arrays)


def save_params(params: RnnParams, path) -> None:
    Path(path).write_text(json.dumps(params_to_dict(params)))


def load_params(path) -> RnnParams:
    return params_from_dict(json.loads(Path(path).read_text()))
