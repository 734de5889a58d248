"""Affine/ReLU chains shared by node transforms and prediction heads."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .fixed import FixedFormat


@dataclass
class MlpParams:
    """Float weights; ``activations[k]`` applies ReLU after layer ``k``."""

    weights: list
    biases: list
    activations: list

    def __post_init__(self):
        self.weights = [np.asarray(w, dtype=np.float64) for w in self.weights]
        self.biases = [np.asarray(b, dtype=np.float64).reshape(-1) for b in self.biases]
        self.activations = [bool(a) for a in self.activations]
        if not (len(self.weights) == len(self.biases) == len(self.activations)):
            raise ConfigError("weights, biases and activations must have equal length")
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2 or b.shape != (w.shape[0],):
                raise ConfigError(f"layer {k}: weight {w.shape} / bias {b.shape} mismatch")
            if k and w.shape[1] != self.weights[k - 1].shape[0]:
                raise ConfigError(f"layer {k} expects {w.shape[1]} inputs, "
                                  f"previous layer gives {self.weights[k - 1].shape[0]}")

    @classmethod
    def chain(cls, weights, biases, final_activation=False) -> "MlpParams":
        """Hidden layers get ReLU; the last one only if ``final_activation``."""
        acts = [True] * (len(weights) - 1) + [final_activation]
        return cls(list(weights), list(biases), acts)

    @property
    def in_dim(self) -> int:
        return self.weights[0].shape[1]

    @property
    def out_dim(self) -> int:
        return self.weights[-1].shape[0]

    def quantized(self, fmt: FixedFormat) -> "QuantizedMlp":
        return QuantizedMlp(fmt, [fmt.quantize(w) for w in self.weights],
                            [fmt.quantize(b) for b in self.biases], list(self.activations))

    def forward(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        for w, b, act in zip(self.weights, self.biases, self.activations):
            x = x @ w.T + b
            if act:
                x = np.maximum(x, 0.0)
        return x


@dataclass
class QuantizedMlp:
    fmt: FixedFormat
    weights: list
    biases: list
    activations: list

    @property
    def in_dim(self) -> int:
        return self.weights[0].shape[1]

    @property
    def out_dim(self) -> int:
        return self.weights[-1].shape[0]


def mlp_forward(x: np.ndarray, p: QuantizedMlp) -> np.ndarray:
    """Fixed-point forward pass over raw values."""
    x = np.asarray(x, dtype=np.int64)
    if x.shape[-1] != p.in_dim:
        raise ConfigError(f"MLP expects {p.in_dim} inputs, got {x.shape[-1]}")
    for w, b, act in zip(p.weights, p.biases, p.activations):
        x = p.fmt.matvec(w, x, b)
        if act:
            x = np.maximum(x, 0)
    return x
