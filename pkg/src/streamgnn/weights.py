"""Weights file: a text manifest of named tensors, then little-endian f32 payloads.

::

    gnnweights 1
    config {"kind": "GIN", ...}
    tensor encoder.weight 100 9
    tensor encoder.bias 100
    end
    <raw float32 data, tensors in manifest order>
"""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .errors import ConfigError
from .kernels import ModelConfig

MAGIC = "gnnweights 1"
_CONFIG_KEYS = ("kind", "in_dim", "edge_dim", "num_layers", "embed_dim", "heads", "head_dim",
                "eps", "avg_log_degree", "head_hidden", "num_tasks", "task", "edge_activation",
                "gin_eps_form", "laplacian")


def config_dict(cfg: ModelConfig) -> dict:
    d = {k: getattr(cfg, k) for k in _CONFIG_KEYS}
    d["eps"] = [float(v) for v in d["eps"]]
    d["head_hidden"] = list(d["head_hidden"])
    return d


def config_from_dict(d: dict) -> ModelConfig:
    unknown = sorted(set(d) - set(_CONFIG_KEYS))
    if unknown:
        raise ConfigError(f"unknown config keys {unknown}")
    if "kind" not in d or "in_dim" not in d:
        raise ConfigError("config needs at least 'kind' and 'in_dim'")
    return ModelConfig.default(d["kind"], d["in_dim"], d.get("edge_dim", 0),
                               **{k: v for k, v in d.items() if k not in ("kind", "in_dim", "edge_dim")})


def save_weights(cfg: ModelConfig, path) -> None:
    cfg.validate()
    lines = [MAGIC, "config " + json.dumps(config_dict(cfg), sort_keys=True)]
    names = list(cfg.weight_shapes())
    for name in names:
        lines.append("tensor " + " ".join([name, *map(str, np.shape(cfg.weights[name]))]))
    lines.append("end")
    payload = b"".join(np.asarray(cfg.weights[n], dtype="<f4").tobytes() for n in names)
    Path(path).write_bytes(("\n".join(lines) + "\n").encode() + payload)


def load_weights(path) -> ModelConfig:
    """Read a weights file back into a validated config (values widened from f32)."""
    data = Path(path).read_bytes()
    pos = 0
    header = []
    while True:
        nl = data.find(b"\n", pos)
        if nl < 0:
            raise ConfigError(f"{path}: manifest has no 'end' line")
        line = data[pos:nl].decode("utf-8", errors="replace").strip()
        pos = nl + 1
        if line == "end":
            break
        header.append(line)
    if not header or header[0] != MAGIC:
        raise ConfigError(f"{path}: not a weights file")
    cfg = None
    tensors = []
    for line in header[1:]:
        key, _, rest = line.partition(" ")
        if key == "config":
            try:
                cfg = config_from_dict(json.loads(rest))
            except ValueError as exc:
                raise ConfigError(f"{path}: bad config line: {exc}") from exc
        elif key == "tensor":
            parts = rest.split()
            try:
                tensors.append((parts[0], tuple(int(v) for v in parts[1:])))
            except (IndexError, ValueError) as exc:
                raise ConfigError(f"{path}: bad tensor line {line!r}") from exc
        elif line:
            raise ConfigError(f"{path}: unexpected manifest line {line!r}")
    if cfg is None:
        raise ConfigError(f"{path}: missing config line")
    weights = {}
    for name, shape in tensors:
        count = int(np.prod(shape, dtype=np.int64))
        end = pos + 4 * count
        if end > len(data):
            raise ConfigError(f"malformed weights: payload ends inside {name!r}")
        weights[name] = np.frombuffer(data[pos:end], dtype="<f4").astype(np.float64).reshape(shape)
        pos = end
    if pos != len(data):
        raise ConfigError(f"malformed weights: {len(data) - pos} trailing bytes")
    cfg.weights = weights
    cfg.validate()
    return cfg
