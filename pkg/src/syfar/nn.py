"""Dense feed-forward network with hand-written reverse-mode gradients.

All arithmetic is float64. A :class:`Model` caches the activations of its
most recent :meth:`Model.forward` call; :meth:`Model.backward` consumes that
cache, accumulates parameter gradients and returns the input gradient.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

from .exceptions import ConfigError, ShapeError, StateError, SyfarError
from .validation import check_labels, check_matrix

ACTIVATIONS = ("relu", "identity")
CHECKPOINT_FORMAT = "syfar-checkpoint"
CHECKPOINT_VERSION = 1


@dataclass
class Layer:
    weight: np.ndarray  # (out, in)
    bias: np.ndarray  # (out,)
    activation: str = "relu"
    grad_weight: np.ndarray | None = field(default=None, repr=False)
    grad_bias: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        self.weight = np.array(self.weight, dtype=np.float64, ndmin=2)
        self.bias = np.array(self.bias, dtype=np.float64).reshape(-1)
        if self.activation not in ACTIVATIONS:
            raise ConfigError(f"unknown activation {self.activation!r}")
        if self.bias.shape[0] != self.weight.shape[0]:
            raise ShapeError(
                f"bias length {self.bias.shape[0]} != weight rows {self.weight.shape[0]}"
            )

    @property
    def in_features(self) -> int:
        return self.weight.shape[1]

    @property
    def out_features(self) -> int:
        return self.weight.shape[0]


class Model:
    """Stack of dense layers ending in ``num_classes`` logits."""

    def __init__(self, layers):
        self.layers = list(layers)
        if not self.layers:
            raise ShapeError("a model needs at least one layer")
        for prev, nxt in zip(self.layers, self.layers[1:]):
            if prev.out_features != nxt.in_features:
                raise ShapeError(
                    f"layer widths do not compose: {prev.out_features} -> {nxt.in_features}"
                )
        self._cache = None

    @classmethod
    def initialize(cls, input_dim, hidden_sizes, num_classes, seed=0):
        """He-initialised ReLU MLP with an identity output layer."""
        rng = np.random.default_rng(seed)
        sizes = [int(input_dim), *map(int, hidden_sizes), int(num_classes)]
        layers = []
        for i, (fan_in, fan_out) in enumerate(zip(sizes, sizes[1:])):
            last = i == len(sizes) - 2
            w = rng.standard_normal((fan_out, fan_in)) * np.sqrt(2.0 / fan_in)
            layers.append(Layer(w, np.zeros(fan_out), "identity" if last else "relu"))
        return cls(layers)

    @property
    def input_dim(self) -> int:
        return self.layers[0].in_features

    @property
    def num_classes(self) -> int:
        return self.layers[-1].out_features

    def copy(self) -> "Model":
        return Model([Layer(l.weight.copy(), l.bias.copy(), l.activation) for l in self.layers])

    def parameters(self):
        for layer in self.layers:
            yield layer.weight
            yield layer.bias

    def gradients(self):
        for layer in self.layers:
            yield layer.grad_weight
            yield layer.grad_bias

    def forward(self, inputs) -> np.ndarray:
        x = check_matrix(inputs, "inputs")
        if x.shape[1] != self.input_dim:
            raise ShapeError(f"inputs have width {x.shape[1]}, model expects {self.input_dim}")
        acts = [x]
        pre = []
        for layer in self.layers:
            z = acts[-1] @ layer.weight.T + layer.bias
            pre.append(z)
            acts.append(np.maximum(z, 0.0) if layer.activation == "relu" else z)
        self._cache = (acts, pre)
        return acts[-1]

    __call__ = forward

    def predict_proba(self, inputs) -> np.ndarray:
        return softmax(self.forward(inputs))

    def backward(self, grad_logits, accumulate=True) -> np.ndarray:
        """Back-propagate ``d loss / d logits`` through the last forward pass.

        Parameter gradients are added to ``grad_weight``/``grad_bias`` when
        ``accumulate`` is true; the gradient w.r.t. the inputs is returned.
        """
        if self._cache is None:
            raise StateError("backward called before forward")
        acts, pre = self._cache
        g = check_matrix(grad_logits, "grad_logits", finite=False)
        if g.shape != acts[-1].shape:
            raise ShapeError(f"grad shape {g.shape} != logits shape {acts[-1].shape}")
        for idx in range(len(self.layers) - 1, -1, -1):
            layer = self.layers[idx]
            if layer.activation == "relu":
                g = g * (pre[idx] > 0)
            if accumulate:
                gw = g.T @ acts[idx]
                gb = g.sum(axis=0)
                if layer.grad_weight is None:
                    layer.grad_weight, layer.grad_bias = gw, gb
                else:
                    layer.grad_weight = layer.grad_weight + gw
                    layer.grad_bias = layer.grad_bias + gb
            g = g @ layer.weight
        return g

    def zero_grad(self):
        for layer in self.layers:
            layer.grad_weight = None
            layer.grad_bias = None

    def has_gradients(self) -> bool:
        return all(l.grad_weight is not None for l in self.layers)

    # -- checkpoints -----------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "format": CHECKPOINT_FORMAT,
            "version": CHECKPOINT_VERSION,
            "num_classes": self.num_classes,
            "layers": [
                {
                    "activation": l.activation,
                    "shape": list(l.weight.shape),
                    "weight": l.weight.ravel().tolist(),
                    "bias": l.bias.tolist(),
                }
                for l in self.layers
            ],
        }

    @classmethod
    def from_dict(cls, d) -> "Model":
        if d.get("format") != CHECKPOINT_FORMAT:
            raise SyfarError(f"not a checkpoint: format={d.get('format')!r}")
        if d.get("version") != CHECKPOINT_VERSION:
            raise SyfarError(f"unsupported checkpoint version {d.get('version')!r}")
        layers = []
        for rec in d["layers"]:
            w = np.array(rec["weight"], dtype=np.float64).reshape(rec["shape"])
            layers.append(Layer(w, np.array(rec["bias"], dtype=np.float64), rec["activation"]))
        model = cls(layers)
        if model.num_classes != d["num_classes"]:
            raise ShapeError("checkpoint num_classes does not match final layer")
        return model

    def to_json(self) -> str:
        # float repr is shortest round-trip, so the text is bit-exact
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_json(cls, text) -> "Model":
        return cls.from_dict(json.loads(text))

    def digest(self) -> str:
        return hashlib.sha256(self.to_json().encode()).hexdigest()


def save_checkpoint(model: Model, path):
    from .io import atomic_write_text

    atomic_write_text(path, model.to_json() + "\n")


def load_checkpoint(path) -> Model:
    with open(path, encoding="utf-8") as fh:
        return Model.from_json(fh.read())


def softmax(logits) -> np.ndarray:
    z = check_matrix(logits, "logits")
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def log_softmax(logits) -> np.ndarray:
    z = check_matrix(logits, "logits")
    z = z - z.max(axis=1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


def cross_entropy(logits, labels):
    """Mean cross-entropy and its gradient w.r.t. the logits.

    Returns ``(loss, grad)`` where ``grad`` has the logits' shape.
    """
    z = check_matrix(logits, "logits")
    y = check_labels(labels, z.shape[1], z.shape[0])
    b = z.shape[0]
    logp = log_softmax(z)
    rows = np.arange(b)
    loss = -logp[rows, y].mean()
    grad = np.exp(logp)
    grad[rows, y] -= 1.0
    return float(loss), grad / b


def per_sample_cross_entropy(logits, labels) -> np.ndarray:
    z = check_matrix(logits, "logits")
    y = check_labels(labels, z.shape[1], z.shape[0])
    return -log_softmax(z)[np.arange(z.shape[0]), y]


def softmax_backward(probs, grad_probs) -> np.ndarray:
    """Chain ``d loss / d p`` through ``p = softmax(z)`` to ``d loss / d z``."""
    return probs * (grad_probs - np.sum(grad_probs * probs, axis=1, keepdims=True))


def sgd_step(model: Model, learning_rate: float) -> Model:
    """In-place ``theta <- theta - lr * grad``; clears gradients afterwards."""
    if learning_rate < 0:
        raise ConfigError("learning_rate must be non-negative")
    if not model.has_gradients():
        raise StateError("sgd_step called without populated gradients")
    for layer in model.layers:
        layer.weight = layer.weight - learning_rate * layer.grad_weight
        layer.bias = layer.bias - learning_rate * layer.grad_bias
    model.zero_grad()
    return model
