"""Whole-model inference over one graph."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .engine import (GraphContext, MessageBufferPair, global_mean_pool, head_forward,
                     run_layer_gather_first, run_layer_merged)
from .errors import ConfigError
from .fixed import FixedFormat, Q16_16
from .graph import Graph, add_virtual_node, coo_to_csc, coo_to_csr
from .kernels import CompiledModel, ModelConfig, compile_model
from .mlp import mlp_forward


@dataclass
class InferenceResult:
    raw: np.ndarray
    fmt: FixedFormat
    embeddings: np.ndarray
    ctx: GraphContext
    flips: int = 0
    message_bytes: int = 0

    @property
    def values(self) -> np.ndarray:
        return self.fmt.dequantize(self.raw)


def prepare_graph(g: Graph, cfg: ModelConfig, fmt: FixedFormat, eigvec=None) -> GraphContext:
    """Augment with a virtual node / attach the eigenvector as the model needs."""
    if g.num_nodes == 0:
        from .errors import EmptyGraphError
        raise EmptyGraphError("graph has no nodes")
    if g.node_dim != cfg.in_dim:
        raise ConfigError(f"graph has {g.node_dim} node features, model expects {cfg.in_dim}")
    if g.edge_dim != cfg.edge_dim and cfg.kind in ("GIN", "GIN-VN"):
        raise ConfigError(f"graph has {g.edge_dim} edge features, model expects {cfg.edge_dim}")
    if cfg.kind == "GIN-VN":
        return GraphContext(add_virtual_node(g), fmt, num_real=g.num_nodes, vn_index=g.num_nodes)
    if cfg.kind == "DGN":
        if eigvec is None:
            from .oracle import laplacian_eigenvectors
            eigvec = laplacian_eigenvectors(g, 1, variant=cfg.laplacian)[1][:, 0]
        return GraphContext(g, fmt, eigvec=eigvec)
    return GraphContext(g, fmt)


def readout(x: np.ndarray, model: CompiledModel, ctx: GraphContext, task: str) -> np.ndarray:
    if task == "graph":
        return head_forward(global_mean_pool(x, model.fmt, ctx.num_real), model.head)
    return np.stack([mlp_forward(x[i], model.head) for i in range(ctx.num_real)])


def run_model(g: Graph, cfg: ModelConfig | CompiledModel, fmt: FixedFormat = Q16_16,
              path: str = "merged", eigvec=None, task: str | None = None) -> InferenceResult:
    """Encode, run every layer, then pool + head (graph task) or per-node head."""
    model = cfg if isinstance(cfg, CompiledModel) else compile_model(cfg, fmt)
    fmt = model.fmt
    task = task or model.cfg.task
    ctx = prepare_graph(g, model.cfg, fmt, eigvec)
    graph = ctx.graph
    x = fmt.quantize(graph.node_features)
    stages = [model.encoder, *model.layers]
    flips = nbytes = 0
    if path == "merged":
        csr = coo_to_csr(graph)
        msgs = MessageBufferPair(graph.num_nodes)
        for s, kernel in enumerate(stages):
            nxt = stages[s + 1] if s + 1 < len(stages) else None
            x = run_layer_merged(x, msgs, csr, kernel, ctx, next_kernel=nxt,
                                 scatter=nxt is not None, prime=s == 0)
            nbytes = max(nbytes, msgs.nbytes)
        flips = msgs.flips
    elif path == "gather":
        csc = coo_to_csc(graph)
        for kernel in stages:
            x = run_layer_gather_first(x, csc, kernel, ctx)
    else:
        raise ConfigError(f"unknown execution path {path!r}")
    return InferenceResult(readout(x, model, ctx, task), fmt, x, ctx, flips, nbytes)
