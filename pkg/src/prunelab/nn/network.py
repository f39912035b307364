"""Network assembly, initialization, and the SGD update.

A network is described by a `NetworkSpec`: an input shape plus an ordered
list of layer descriptions.  Input channel/feature counts are inferred by
shape propagation, so specs stay free of redundant bookkeeping.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import ConfigError, NumericError, ShapeError
from .layers import Conv2D, Dense, Layer, MaxPool2D, ReLU, SoftmaxCrossEntropy

_LAYER_KINDS = ("conv", "relu", "maxpool", "dense")


@dataclass
class NetworkSpec:
    """Declarative description of a feed-forward classifier."""

    input_shape: tuple[int, int, int]
    layers: list[dict] = field(default_factory=list)

    def validate(self) -> None:
        if len(self.input_shape) != 3 or any(int(d) <= 0 for d in self.input_shape):
            raise ConfigError(f"input_shape must be (C, H, W) positive, got {self.input_shape}")
        for i, spec in enumerate(self.layers):
            kind = spec.get("kind")
            if kind not in _LAYER_KINDS:
                raise ConfigError(f"layers[{i}]: unknown kind {kind!r}")
            if kind == "conv" and ("out_channels" not in spec or "kernel" not in spec):
                raise ConfigError(f"layers[{i}]: conv needs out_channels and kernel")
            if kind == "maxpool" and "kernel" not in spec:
                raise ConfigError(f"layers[{i}]: maxpool needs kernel")
            if kind == "dense" and "out_features" not in spec:
                raise ConfigError(f"layers[{i}]: dense needs out_features")
        if not self.layers or self.layers[-1].get("kind") != "dense":
            raise ConfigError("a network must end with a dense layer producing class logits")


@dataclass
class SgdConfig:
    lr: float = 0.01
    weight_decay: float = 0.0


class Network:
    """Sequential net with an explicit backward pass and stateful gradients."""

    def __init__(self, layers: list[Layer], input_shape: tuple[int, int, int]):
        self.layers = layers
        self.input_shape = input_shape
        self.head = SoftmaxCrossEntropy()

    # -- construction ------------------------------------------------------

    @classmethod
    def build(cls, spec: NetworkSpec, seed: int, dtype=np.float32) -> "Network":
        spec.validate()
        rng = np.random.default_rng(seed)
        layers: list[Layer] = []
        shape = tuple(int(d) for d in spec.input_shape)
        n_conv = n_pool = n_relu = n_dense = 0
        for item in spec.layers:
            kind = item["kind"]
            if kind == "conv":
                n_conv += 1
                layer = Conv2D(
                    f"conv{n_conv}",
                    in_channels=shape[0],
                    out_channels=int(item["out_channels"]),
                    kernel=int(item["kernel"]),
                    stride=int(item.get("stride", 1)),
                    pad=int(item.get("pad", 0)),
                    dtype=dtype,
                )
                _he_uniform(layer.weights, fan_in=int(np.prod(layer.weights.shape[1:])), rng=rng)
            elif kind == "relu":
                n_relu += 1
                layer = ReLU(f"relu{n_relu}")
            elif kind == "maxpool":
                n_pool += 1
                layer = MaxPool2D(f"pool{n_pool}", int(item["kernel"]), item.get("stride"))
            else:
                n_dense += 1
                flat = int(np.prod(shape))
                layer = Dense(f"fc{n_dense}", flat, int(item["out_features"]), dtype=dtype)
                _he_uniform(layer.weights, fan_in=flat, rng=rng)
            shape = layer.output_shape(shape)
            layers.append(layer)
        return cls(layers, tuple(int(d) for d in spec.input_shape))

    # -- inference / training ----------------------------------------------

    def forward(self, x: np.ndarray, check: bool = True) -> np.ndarray:
        if x.shape[1:] != self.input_shape:
            raise ShapeError(f"expected input shape {self.input_shape}, got {x.shape[1:]}")
        for layer in self.layers:
            x = layer.forward(x)
            if check and not np.all(np.isfinite(x)):
                raise NumericError(f"non-finite activation leaving layer {layer.name}")
        return x

    def loss(self, x: np.ndarray, labels: np.ndarray) -> tuple[float, np.ndarray]:
        logits = self.forward(x)
        return self.head.forward(logits, labels), logits

    def backward(self) -> None:
        grad = self.head.backward()
        for layer in reversed(self.layers):
            grad = layer.backward(grad)

    def predict(self, x: np.ndarray) -> np.ndarray:
        return self.forward(x).argmax(axis=1)

    def sgd_step(
        self,
        cfg: SgdConfig,
        extra_decay: dict[str, np.ndarray] | None = None,
        masks: dict[str, np.ndarray] | None = None,
        bias_masks: dict[str, np.ndarray] | None = None,
    ) -> None:
        """One SGD update over all parameters.

        `extra_decay[name]` adds a per-entry decay coefficient to the weights
        of the named layer; `masks[name]` / `bias_masks[name]` pin pruned
        entries (mask False) to exactly zero after the step.  Plain weight
        decay applies to weight matrices only, never biases.
        """
        extra_decay = extra_decay or {}
        masks = masks or {}
        bias_masks = bias_masks or {}
        for layer in self.layers:
            p = layer.params()
            if not p:
                continue
            g = layer.grads()
            w, gw = p["weights"], g["weights"]
            decay = cfg.weight_decay * w
            if layer.name in extra_decay:
                decay = decay + extra_decay[layer.name] * w
            w -= cfg.lr * (gw + decay)
            if layer.name in masks:
                w[~masks[layer.name]] = 0
            p["bias"] -= cfg.lr * g["bias"]
            if layer.name in bias_masks:
                p["bias"][~bias_masks[layer.name]] = 0

    # -- bookkeeping ---------------------------------------------------------

    def param_layers(self) -> list[Layer]:
        return [l for l in self.layers if l.params()]

    def layer_flops(self) -> dict[str, int]:
        """Multiply-add count x2 per weighted layer, from shape propagation."""
        flops: dict[str, int] = {}
        shape = self.input_shape
        for layer in self.layers:
            out = layer.output_shape(shape)
            if isinstance(layer, Conv2D):
                patch = int(np.prod(layer.weights.shape[1:]))
                flops[layer.name] = 2 * layer.out_channels * patch * out[1] * out[2]
            elif isinstance(layer, Dense):
                flops[layer.name] = 2 * layer.in_features * layer.out_features
            shape = out
        return flops

    def param_count(self) -> int:
        return sum(int(a.size) for l in self.layers for a in l.params().values())

    def get_state(self) -> dict[str, np.ndarray]:
        return {
            f"{l.name}.{k}": v.copy() for l in self.layers for k, v in l.params().items()
        }

    def set_state(self, state: dict[str, np.ndarray]) -> None:
        for l in self.layers:
            for k, v in l.params().items():
                src = state[f"{l.name}.{k}"]
                if src.shape != v.shape:
                    raise ShapeError(f"state mismatch for {l.name}.{k}: {src.shape} vs {v.shape}")
                v[...] = src


def _he_uniform(w: np.ndarray, fan_in: int, rng: np.random.Generator) -> None:
    limit = float(np.sqrt(6.0 / fan_in))
    w[...] = rng.uniform(-limit, limit, size=w.shape).astype(w.dtype)
