"""Desk-scale differentiable models with exact per-example gradients.

Two architectures: multinomial logistic regression ("logreg", one parameter
group) and a one-hidden-layer tanh MLP ("mlp1", two groups). Each trainable
layer is one parameter group carrying its own clipping norm and noise
multiplier; a group's flat vector is the weight matrix (row-major) followed
by the bias.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .data import Dataset
from .errors import NumericalError, ParameterError, StructuralError
from .numerics import RandomStream, gaussian_vector

ARCHITECTURES = ("logreg", "mlp1")


@dataclass
class ParameterGroup:
    """One trainable layer: weight (out x in), bias (out,), privacy knobs."""

    group_id: int
    weight: np.ndarray
    bias: np.ndarray
    clip_norm: float
    noise_multiplier: float
    stage_tag: str

    def __post_init__(self):
        if self.clip_norm <= 0.0:
            raise ParameterError(f"group {self.group_id}: clip_norm must be > 0")
        if self.noise_multiplier <= 0.0:
            raise ParameterError(f"group {self.group_id}: noise_multiplier must be > 0")
        if self.weight.ndim != 2 or self.bias.shape != (self.weight.shape[0],):
            raise StructuralError(f"group {self.group_id}: weight/bias shapes disagree")

    @property
    def size(self) -> int:
        return self.weight.size + self.bias.size

    def flat(self) -> np.ndarray:
        return np.concatenate([self.weight.ravel(), self.bias])

    def set_flat(self, values: np.ndarray) -> None:
        if values.shape != (self.size,):
            raise StructuralError(
                f"group {self.group_id}: expected {self.size} values, got {values.shape}"
            )
        w = self.weight.size
        self.weight = values[:w].reshape(self.weight.shape).copy()
        self.bias = values[w:].copy()


@dataclass
class ModelState:
    groups: list[ParameterGroup]
    architecture: str
    input_dim: int
    hidden_dim: int
    num_classes: int

    def __post_init__(self):
        expected = 1 if self.architecture == "logreg" else 2
        if len(self.groups) != expected:
            raise StructuralError(
                f"{self.architecture} needs {expected} group(s), got {len(self.groups)}"
            )

    def group(self, group_id: int) -> ParameterGroup:
        for g in self.groups:
            if g.group_id == group_id:
                return g
        raise StructuralError(f"no parameter group with id {group_id}")


@dataclass(frozen=True)
class PerExampleGradient:
    group_id: int
    flat: np.ndarray


class EvalResult(NamedTuple):
    loss: float
    accuracy: float


def _broadcast(name: str, value, count: int) -> list[float]:
    if np.isscalar(value):
        values = [float(value)] * count
    else:
        values = [float(v) for v in value]
        if len(values) != count:
            raise ParameterError(f"{name}: expected {count} values, got {len(values)}")
    return values


def init_model(
    stream: RandomStream,
    architecture: str,
    input_dim: int,
    hidden_dim: int,
    num_classes: int,
    clip_norms,
    noise_multipliers,
) -> ModelState:
    """Weights ~ N(0, 1/fan_in), biases zero; deterministic given the stream."""
    if architecture not in ARCHITECTURES:
        raise ParameterError(f"unknown architecture {architecture!r}")
    if input_dim < 1 or num_classes < 2:
        raise ParameterError("input_dim must be >= 1 and num_classes >= 2")
    if architecture == "mlp1" and hidden_dim < 1:
        raise ParameterError("mlp1 requires hidden_dim >= 1")
    if architecture == "logreg":
        shapes = [(num_classes, input_dim)]
        stages = ["classifier"]
    else:
        shapes = [(hidden_dim, input_dim), (num_classes, hidden_dim)]
        stages = ["hidden", "classifier"]
    clips = _broadcast("clip_norms", clip_norms, len(shapes))
    sigmas = _broadcast("noise_multipliers", noise_multipliers, len(shapes))
    groups = []
    for gid, (out_dim, in_dim) in enumerate(shapes):
        scale = 1.0 / np.sqrt(in_dim)
        init_stream = stream.at(step_index=0, group_index=gid, purpose="init")
        weight = gaussian_vector(init_stream, out_dim * in_dim, scale).reshape(out_dim, in_dim)
        groups.append(
            ParameterGroup(
                group_id=gid,
                weight=weight,
                bias=np.zeros(out_dim),
                clip_norm=clips[gid],
                noise_multiplier=sigmas[gid],
                stage_tag=stages[gid],
            )
        )
    return ModelState(
        groups=groups,
        architecture=architecture,
        input_dim=input_dim,
        hidden_dim=hidden_dim if architecture == "mlp1" else 0,
        num_classes=num_classes,
    )


def _forward(model: ModelState, x: np.ndarray):
    """Batch forward pass; returns (hidden activations or None, logits)."""
    if x.shape[1] != model.input_dim:
        raise StructuralError(
            f"features have dim {x.shape[1]}, model expects {model.input_dim}"
        )
    if model.architecture == "logreg":
        g = model.groups[0]
        return None, x @ g.weight.T + g.bias
    g1, g2 = model.groups
    hidden = np.tanh(x @ g1.weight.T + g1.bias)
    return hidden, hidden @ g2.weight.T + g2.bias


def _softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    expd = np.exp(shifted)
    return expd / expd.sum(axis=1, keepdims=True)


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def _output_deltas(model: ModelState, x: np.ndarray, labels: np.ndarray):
    """softmax(logits) - onehot for a batch, plus the hidden activations."""
    hidden, logits = _forward(model, x)
    finite_rows = np.isfinite(logits).all(axis=1)
    if not finite_rows.all():
        row = int(np.flatnonzero(~finite_rows)[0])
        err = NumericalError(f"non-finite activations for batch row {row}")
        err.row = row
        raise err
    deltas = _softmax(logits)
    deltas[np.arange(x.shape[0]), labels] -= 1.0
    return hidden, deltas


def per_example_grads(model: ModelState, features: np.ndarray, label: int) -> list[PerExampleGradient]:
    """Exact cross-entropy gradient for one example, one entry per group."""
    x = np.asarray(features, dtype=float)
    if x.shape != (model.input_dim,):
        raise StructuralError(f"example has shape {x.shape}, expected ({model.input_dim},)")
    if not 0 <= label < model.num_classes:
        raise ParameterError(f"label {label} outside [0, {model.num_classes})")
    hidden, delta = _output_deltas(model, x[None, :], np.array([label]))
    delta = delta[0]
    if model.architecture == "logreg":
        flat = np.concatenate([np.outer(delta, x).ravel(), delta])
        return [PerExampleGradient(0, flat)]
    g2 = model.groups[1]
    h = hidden[0]
    delta_hidden = (g2.weight.T @ delta) * (1.0 - h * h)
    flat1 = np.concatenate([np.outer(delta_hidden, x).ravel(), delta_hidden])
    flat2 = np.concatenate([np.outer(delta, h).ravel(), delta])
    return [PerExampleGradient(0, flat1), PerExampleGradient(1, flat2)]


def _clipped_layer_sum(deltas: np.ndarray, inputs: np.ndarray, clip_norm: float) -> np.ndarray:
    """Clipped sum of per-example gradients for one dense layer.

    The per-example gradient is [vec(outer(delta, input)), delta], whose norm
    is ||delta|| * sqrt(||input||^2 + 1); clipping is a per-example rescale, so
    the whole clipped sum reduces to two products with the scaled deltas.
    """
    sq_norms = (deltas * deltas).sum(axis=1) * ((inputs * inputs).sum(axis=1) + 1.0)
    norms = np.sqrt(sq_norms)
    factors = 1.0 / np.maximum(1.0, norms / clip_norm)
    scaled = deltas * factors[:, None]
    return np.concatenate([(scaled.T @ inputs).ravel(), scaled.sum(axis=0)])


def clipped_group_sums(
    model: ModelState, data: Dataset, indices: np.ndarray
) -> list[np.ndarray]:
    """Per-group sums of norm-clipped per-example gradients over `indices`."""
    indices = np.asarray(indices, dtype=np.int64)
    if indices.size == 0:
        return [np.zeros(g.size) for g in model.groups]
    x = data.features[indices]
    labels = data.labels[indices]
    try:
        hidden, deltas = _output_deltas(model, x, labels)
    except NumericalError as exc:
        row = getattr(exc, "row", None)
        example = int(indices[row]) if row is not None else "unknown"
        raise NumericalError(f"non-finite activations for example {example}") from exc
    if model.architecture == "logreg":
        g = model.groups[0]
        return [_clipped_layer_sum(deltas, x, g.clip_norm)]
    g1, g2 = model.groups
    delta_hidden = (deltas @ g2.weight) * (1.0 - hidden * hidden)
    return [
        _clipped_layer_sum(delta_hidden, x, g1.clip_norm),
        _clipped_layer_sum(deltas, hidden, g2.clip_norm),
    ]


def evaluate(model: ModelState, data: Dataset) -> EvalResult:
    """Mean cross-entropy and top-1 accuracy (ties go to the lowest class)."""
    _, logits = _forward(model, data.features)
    if not np.all(np.isfinite(logits)):
        raise NumericalError("non-finite activations during evaluation")
    log_probs = _log_softmax(logits)
    n = len(data)
    loss = -float(log_probs[np.arange(n), data.labels].mean())
    predictions = np.argmax(logits, axis=1)
    accuracy = float((predictions == data.labels).mean())
    return EvalResult(loss=loss, accuracy=accuracy)


def batch_loss(model: ModelState, data: Dataset, indices: np.ndarray | None = None) -> float:
    """Summed cross-entropy over the given examples (all of them by default)."""
    if indices is None:
        indices = np.arange(len(data))
    x = data.features[np.asarray(indices, dtype=np.int64)]
    labels = data.labels[np.asarray(indices, dtype=np.int64)]
    _, logits = _forward(model, x)
    log_probs = _log_softmax(logits)
    return -float(log_probs[np.arange(x.shape[0]), labels].sum())
