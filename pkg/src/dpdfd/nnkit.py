"""Minimal dense-network kernel: forward, exact hand-derived backward,
softmax cross-entropy, and plain SGD steps.

Everything is float64 and functional: models are never mutated, a step
returns a new model. Determinism holds bit-for-bit for a fixed
(seed, model, batch) on one platform and backend.
"""

import json
import math
import os
from dataclasses import dataclass

import numpy as np

from .backend import log_softmax_rows, softmax_rows
from .errors import DimensionError, NumericalError, ValidationError

ACTIVATIONS = ("relu", "tanh", "identity")


def _as_array(x, name, ndim=None):
    arr = np.ascontiguousarray(x, dtype=np.float64)
    if ndim is not None and arr.ndim != ndim:
        raise DimensionError(f"{name} must be {ndim}-d, got shape {arr.shape}")
    return arr


def check_finite(arr, name):
    """Public-boundary guard: reject NaN/Inf carriers early."""
    if not np.all(np.isfinite(arr)):
        raise ValidationError(f"{name} contains non-finite values")


@dataclass(frozen=True)
class Layer:
    """One dense layer: weight is (out, in), bias is (out,)."""

    weight: np.ndarray
    bias: np.ndarray
    activation: str

    def __post_init__(self):
        object.__setattr__(self, "weight", _as_array(self.weight, "weight", 2))
        object.__setattr__(self, "bias", _as_array(self.bias, "bias", 1))
        if self.activation not in ACTIVATIONS:
            raise ValidationError(f"unknown activation {self.activation!r}")
        if self.bias.shape[0] != self.weight.shape[0]:
            raise DimensionError(
                f"bias length {self.bias.shape[0]} != weight rows {self.weight.shape[0]}"
            )
        check_finite(self.weight, "weight")
        check_finite(self.bias, "bias")

    @property
    def in_dim(self):
        return self.weight.shape[1]

    @property
    def out_dim(self):
        return self.weight.shape[0]


@dataclass(frozen=True)
class MlpModel:
    """Ordered dense layers; consecutive dimensions must chain."""

    layers: tuple

    def __post_init__(self):
        layers = tuple(self.layers)
        if not layers:
            raise ValidationError("model needs at least one layer")
        for a, b in zip(layers, layers[1:]):
            if a.out_dim != b.in_dim:
                raise DimensionError(
                    f"layer output {a.out_dim} does not chain into input {b.in_dim}"
                )
        object.__setattr__(self, "layers", layers)

    @property
    def input_dim(self):
        return self.layers[0].in_dim

    @property
    def output_dim(self):
        return self.layers[-1].out_dim


@dataclass(frozen=True)
class ForwardTrace:
    """Per-layer pre/post activations kept for the backward pass."""

    inputs: np.ndarray
    pre_activations: tuple
    post_activations: tuple

    @property
    def logits(self):
        return self.post_activations[-1]

    @property
    def features(self):
        """Input to the final layer (the backbone output)."""
        if len(self.post_activations) == 1:
            return self.inputs
        return self.post_activations[-2]


def _activate(pre, kind):
    if kind == "relu":
        return np.maximum(pre, 0.0)
    if kind == "tanh":
        return np.tanh(pre)
    return pre


def _activation_grad(pre, post, kind):
    if kind == "relu":
        return (pre > 0.0).astype(np.float64)
    if kind == "tanh":
        return 1.0 - post * post
    return np.ones_like(pre)


def init_mlp(dims, activations, seed):
    """Build an MLP with uniform +-sqrt(6/(fan_in+fan_out)) weights, zero bias."""
    if len(dims) < 2 or len(activations) != len(dims) - 1:
        raise ValidationError("dims/activations lengths do not form a layer stack")
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(int(seed))))
    layers = []
    for fan_in, fan_out, act in zip(dims[:-1], dims[1:], activations):
        limit = math.sqrt(6.0 / (fan_in + fan_out))
        weight = rng.uniform(-limit, limit, size=(fan_out, fan_in))
        layers.append(Layer(weight, np.zeros(fan_out), act))
    return MlpModel(tuple(layers))


def forward(model, batch):
    """Run the batch through the model, keeping the full trace."""
    x = _as_array(batch, "batch", 2)
    if x.shape[1] != model.input_dim:
        raise DimensionError(
            f"batch width {x.shape[1]} != model input dim {model.input_dim}"
        )
    check_finite(x, "batch")
    pres, posts = [], []
    h = x
    for layer in model.layers:
        pre = h @ layer.weight.T + layer.bias
        post = _activate(pre, layer.activation)
        pres.append(pre)
        posts.append(post)
        h = post
    return ForwardTrace(x, tuple(pres), tuple(posts))


def _check_trace(model, trace):
    if len(trace.pre_activations) != len(model.layers):
        raise ValidationError("trace length does not match the model")
    for pre, layer in zip(trace.pre_activations, model.layers):
        if pre.shape[1] != layer.out_dim:
            raise ValidationError("trace widths do not match the model")


def backward(model, trace, logit_grad, feature_grad=None):
    """Exact gradients of <logit_grad, logits> (+ <feature_grad, features>).

    Returns (param_grads, input_grad) where param_grads is one
    (weight_grad, bias_grad) pair per layer. feature_grad, when given,
    is injected at the input of the final layer, which lets a loss term
    defined on backbone features share one pass.
    """
    _check_trace(model, trace)
    g = _as_array(logit_grad, "logit_grad", 2)
    if g.shape != trace.logits.shape:
        raise DimensionError(
            f"logit_grad shape {g.shape} != logits shape {trace.logits.shape}"
        )
    if feature_grad is not None:
        feature_grad = _as_array(feature_grad, "feature_grad", 2)
        if feature_grad.shape != trace.features.shape:
            raise DimensionError("feature_grad shape does not match features")

    n_layers = len(model.layers)
    param_grads = [None] * n_layers
    delta = g
    for idx in range(n_layers - 1, -1, -1):
        layer = model.layers[idx]
        pre = trace.pre_activations[idx]
        post = trace.post_activations[idx]
        delta = delta * _activation_grad(pre, post, layer.activation)
        layer_in = trace.inputs if idx == 0 else trace.post_activations[idx - 1]
        param_grads[idx] = (delta.T @ layer_in, delta.sum(axis=0))
        delta = delta @ layer.weight
        if feature_grad is not None and idx == n_layers - 1:
            delta = delta + feature_grad
    return param_grads, delta


def softmax_cross_entropy(logits, target_probs):
    """Mean cross-entropy against fixed probability rows.

    loss = mean_i -sum_c target[i,c] * log softmax(logits)[i,c]
    grad = (softmax(logits) - target) / batch
    """
    z = _as_array(logits, "logits", 2)
    t = _as_array(target_probs, "target_probs", 2)
    if z.shape != t.shape:
        raise DimensionError(f"logits {z.shape} vs targets {t.shape}")
    if np.any(t < -1e-12):
        raise ValidationError("target rows must be nonnegative")
    if np.any(np.abs(t.sum(axis=1) - 1.0) > 1e-6):
        raise ValidationError("target rows must sum to 1")
    b = z.shape[0]
    logp = log_softmax_rows(z)
    loss = float(-(t * logp).sum() / b)
    grad = (softmax_rows(z) - t) / b
    return loss, grad


def sgd_step(model, param_grads, lr):
    """p <- p - lr * grad for every parameter; returns a new model."""
    if lr < 0:
        raise ValidationError("learning rate must be nonnegative")
    if len(param_grads) != len(model.layers):
        raise ValidationError("one gradient pair per layer required")
    new_layers = []
    for layer, (gw, gb) in zip(model.layers, param_grads):
        gw = _as_array(gw, "weight grad", 2)
        gb = _as_array(gb, "bias grad", 1)
        if gw.shape != layer.weight.shape or gb.shape != layer.bias.shape:
            raise DimensionError("gradient shapes do not match the layer")
        weight = layer.weight - lr * gw
        bias = layer.bias - lr * gb
        if not (np.all(np.isfinite(weight)) and np.all(np.isfinite(bias))):
            raise NumericalError("parameter update overflowed to non-finite values")
        new_layers.append(Layer(weight, bias, layer.activation))
    return MlpModel(tuple(new_layers))


def predict_labels(model, inputs):
    return np.asarray(forward(model, inputs).logits.argmax(axis=1))


def accuracy(model, inputs, labels):
    labels = np.asarray(labels)
    return float((predict_labels(model, inputs) == labels).mean())


CHECKPOINT_FORMAT = "dpdfd-mlp-v1"


def save_model(model, path):
    """Write a self-describing JSON checkpoint; round-trips bit-exactly."""
    doc = {
        "format": CHECKPOINT_FORMAT,
        "input_dim": model.input_dim,
        "output_dim": model.output_dim,
        "layers": [
            {
                "activation": layer.activation,
                "out_dim": layer.out_dim,
                "in_dim": layer.in_dim,
                "weight": layer.weight.ravel().tolist(),
                "bias": layer.bias.tolist(),
            }
            for layer in model.layers
        ],
    }
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh)


def load_model(path):
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except FileNotFoundError:
        raise ValidationError(f"checkpoint not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ValidationError(f"checkpoint {path} is not valid JSON: {exc}") from None
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise ValidationError(f"unrecognized checkpoint format in {path}")
    layers = []
    for spec in doc["layers"]:
        weight = np.array(spec["weight"], dtype=np.float64).reshape(
            spec["out_dim"], spec["in_dim"]
        )
        layers.append(Layer(weight, np.array(spec["bias"]), spec["activation"]))
    return MlpModel(tuple(layers))


def require_finite_loss(value, context):
    if not math.isfinite(value):
        raise NumericalError(f"non-finite loss during {context}: {value}")
    return value
