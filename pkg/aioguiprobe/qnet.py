"""
From-scratch MLP for Q(s, a, g): rectifier hidden layers, identity output,
mean-squared TD loss with hand-written backprop, and Adam.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from aioguiprobe.app.app_model import ActionSpec, GuiState
from aioguiprobe.encoder import GuiEncoder
from aioguiprobe.util import ValidationError


HIDDEN_SIZES = (256, 128)


@dataclass
class MlpParams:
    weights: List[np.ndarray]  # weights[i] has shape (fan_in, fan_out)
    biases: List[np.ndarray]

    @property
    def layer_sizes(self) -> List[int]:
        return [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]

    @property
    def input_dim(self) -> int:
        return int(self.weights[0].shape[0])

    def arrays(self) -> List[np.ndarray]:
        return [a for pair in zip(self.weights, self.biases) for a in pair]

    def copy(self) -> MlpParams:
        return MlpParams([w.copy() for w in self.weights], [b.copy() for b in self.biases])

    def zeros_like(self) -> MlpParams:
        return MlpParams([np.zeros_like(w) for w in self.weights], [np.zeros_like(b) for b in self.biases])

    def same_shape(self, other: MlpParams) -> bool:
        return len(self.weights) == len(other.weights) and all(
            a.shape == b.shape for a, b in zip(self.arrays(), other.arrays())
        )

    def equals(self, other: MlpParams) -> bool:
        return self.same_shape(other) and all(np.array_equal(a, b) for a, b in zip(self.arrays(), other.arrays()))

    def is_finite(self) -> bool:
        return all(np.isfinite(a).all() for a in self.arrays())


@dataclass
class AdamState:
    m: MlpParams
    v: MlpParams
    step: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @staticmethod
    def for_params(params: MlpParams, lr: float = 1e-3) -> AdamState:
        return AdamState(params.zeros_like(), params.zeros_like(), lr=lr)


@dataclass
class Batch:
    inputs: np.ndarray  # (batch, input_dim)
    td_targets: np.ndarray  # (batch,)

    def __post_init__(self) -> None:
        self.inputs = np.atleast_2d(np.asarray(self.inputs, dtype=np.float64))
        self.td_targets = np.asarray(self.td_targets, dtype=np.float64).reshape(-1)
        if len(self.inputs) != len(self.td_targets):
            raise ValidationError("Batch inputs and targets differ in length")
        if len(self.inputs) == 0:
            raise ValidationError("Batch must not be empty")


def init_params(input_dim: int, seed: int, hidden: Sequence[int] = HIDDEN_SIZES) -> MlpParams:
    """Glorot-uniform weights, zero biases"""
    if input_dim < 1:
        raise ValidationError("input_dim must be >= 1")
    rng = np.random.default_rng(seed)
    sizes = [input_dim, *hidden, 1]
    weights = []
    biases = []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return MlpParams(weights, biases)


def _forward_layers(params: MlpParams, inputs: np.ndarray) -> Tuple[List[np.ndarray], List[np.ndarray]]:
    activations = [inputs]
    pre_activations = []
    x = inputs
    last = len(params.weights) - 1
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        z = x @ w + b
        pre_activations.append(z)
        x = z if i == last else np.maximum(z, 0.0)
        activations.append(x)
    return activations, pre_activations


def forward_batch(params: MlpParams, inputs: np.ndarray) -> np.ndarray:
    inputs = np.atleast_2d(np.asarray(inputs, dtype=np.float64))
    if inputs.shape[1] != params.input_dim:
        raise ValidationError(f"Input has {inputs.shape[1]} features, the network expects {params.input_dim}")
    activations, _ = _forward_layers(params, inputs)
    return activations[-1][:, 0]


def forward(params: MlpParams, x: np.ndarray) -> float:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ValidationError("forward expects a single input vector")
    return float(forward_batch(params, x[None, :])[0])


def argmax_lowest(values: np.ndarray) -> int:
    """np.argmax already breaks ties by the lowest index"""
    return int(np.argmax(values))


def double_q_values(
    candidate_inputs: np.ndarray,
    segments: Sequence[int],
    params_pred: MlpParams,
    params_target: MlpParams,
) -> np.ndarray:
    """For each segment of candidate rows: Q'(argmax_a Q(.; θ); θ')"""
    q_pred = forward_batch(params_pred, candidate_inputs)
    q_target = forward_batch(params_target, candidate_inputs)
    ret = np.empty(len(segments), dtype=np.float64)
    start = 0
    for i, size in enumerate(segments):
        if size < 1:
            raise ValidationError("Empty candidate set for a non-terminal transition")
        best = start + argmax_lowest(q_pred[start : start + size])
        ret[i] = q_target[best]
        start += size
    return ret


def td_target(
    r: float,
    d: bool,
    gamma: float,
    next_state: GuiState,
    candidate_actions: Sequence[ActionSpec],
    goal: int,
    params_pred: MlpParams,
    params_target: MlpParams,
    encoder: GuiEncoder,
) -> float:
    """r + γ(1-d) Q'(s', argmax_a Q(s', a, g; θ), g; θ')"""
    if not 0 < gamma < 1:
        raise ValidationError(f"gamma must be in (0, 1), got {gamma}")
    if d:
        return float(r)
    if not candidate_actions:
        raise ValidationError("Empty candidate set for a non-terminal transition")
    inputs = encoder.candidate_matrix(next_state, candidate_actions, goal)
    (value,) = double_q_values(inputs, [len(candidate_actions)], params_pred, params_target)
    return float(r + gamma * value)


def loss_and_grads(params: MlpParams, batch: Batch) -> Tuple[float, MlpParams]:
    activations, pre_activations = _forward_layers(params, batch.inputs)
    q = activations[-1][:, 0]
    error = q - batch.td_targets
    n = len(error)
    loss = float(np.mean(error**2))

    grads = params.zeros_like()
    delta = (2.0 / n) * error[:, None]
    for i in reversed(range(len(params.weights))):
        grads.weights[i] = activations[i].T @ delta
        grads.biases[i] = delta.sum(axis=0)
        if i > 0:
            delta = (delta @ params.weights[i].T) * (pre_activations[i - 1] > 0)
    return loss, grads


def adam_step(params: MlpParams, state: AdamState, grads: MlpParams) -> MlpParams:
    """Returns updated parameters; moments in `state` are advanced in place"""
    if not (params.same_shape(grads) and params.same_shape(state.m)):
        raise ValidationError("Parameter, gradient and moment shapes disagree")
    state.step += 1
    correction1 = 1.0 - state.beta1**state.step
    correction2 = 1.0 - state.beta2**state.step
    updated = params.copy()
    for p, g, m, v in zip(updated.arrays(), grads.arrays(), state.m.arrays(), state.v.arrays()):
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        p -= state.lr * (m / correction1) / (np.sqrt(v / correction2) + state.eps)
    return updated


def sync_target(pred: MlpParams, target: Optional[MlpParams] = None) -> MlpParams:
    """Copies the prediction network into the target network"""
    if target is None or not target.same_shape(pred):
        return pred.copy()
    for dst, src in zip(target.arrays(), pred.arrays()):
        np.copyto(dst, src)
    return target
