from __future__ import annotations

import numpy as np
import pytest

from streamgnn.engine import (AggState, GraphContext, LayerKernel, MessageBufferPair,
                              global_mean_pool, head_forward, run_layer_gather_first,
                              run_layer_merged)
from streamgnn.errors import ConfigError, EmptyGraphError
from streamgnn.fixed import Q16_16
from streamgnn.fixtures import random_graph
from streamgnn.graph import Graph, coo_to_csc, coo_to_csr
from streamgnn.kernels import KINDS, ModelConfig, compile_model, init_weights
from streamgnn.mlp import MlpParams
from streamgnn.model import run_model


class SumIdentity(LayerKernel):
    """phi = x, A = sum, gamma = identity."""

    def __init__(self, d):
        self.in_dim = self.out_dim = d

    def state_fields(self):
        return {"sum": (self.in_dim, 0)}

    def accumulate(self, row, dst, src, edge, p_src, p_dst, ctx, pass_no=0):
        row["sum"] += p_src

    def finalize(self, row, i, x_i, ctx):
        return row["sum"].copy()

    def update(self, x_i, m_i, i, ctx):
        return x_i.copy()


class SumInto(SumIdentity):
    """gamma(x, m) = m."""

    def update(self, x_i, m_i, i, ctx):
        return m_i


def _setup(g):
    return GraphContext(g), coo_to_csr(g), coo_to_csc(g), MessageBufferPair(g.num_nodes)


def test_single_node_identity():
    g = Graph(1, [], np.zeros((1, 2)))
    ctx, csr, _, msgs = _setup(g)
    x = np.array([[5, -7]])
    k = SumIdentity(2)
    out = run_layer_merged(x, msgs, csr, k, ctx)
    assert out.tolist() == x.tolist()
    assert msgs.read.arrays["sum"].tolist() == [[0, 0]]


def test_two_cycle_messages():
    g = Graph(2, [(0, 1), (1, 0)])
    ctx, csr, _, msgs = _setup(g)
    x = np.array([[1, 2], [30, 40]])
    run_layer_merged(x, msgs, csr, SumIdentity(2), ctx)
    # after the flip the freshly written buffer holds the aggregated messages
    assert msgs.read.arrays["sum"].tolist() == [[30, 40], [1, 2]]
    assert msgs.flips == 1


def test_star_gather_first():
    g = Graph(4, [(1, 0), (2, 0), (3, 0)])
    ctx, _, csc, _ = _setup(g)
    x = np.array([[0], [1], [2], [4]])
    out = run_layer_gather_first(x, csc, SumInto(1), ctx)
    assert out[:, 0].tolist() == [7, 0, 0, 0]


def test_empty_edges_zero_state():
    g = Graph(3, [])
    ctx, _, csc, _ = _setup(g)
    out = run_layer_gather_first(np.ones((3, 2), dtype=np.int64), csc, SumInto(2), ctx)
    assert not out.any()


def test_dimension_mismatch():
    g = Graph(2, [(0, 1)])
    ctx, csr, csc, msgs = _setup(g)
    with pytest.raises(ConfigError):
        run_layer_merged(np.zeros((2, 3), dtype=np.int64), msgs, csr, SumIdentity(2), ctx)
    with pytest.raises(ConfigError):
        run_layer_gather_first(np.zeros((3, 2), dtype=np.int64), csc, SumIdentity(2), ctx)


def test_multi_layer_merged_matches_gather(rng):
    g = random_graph(rng, 30, 120)
    ctx, csr, csc, msgs = _setup(g)
    x = Q16_16.quantize(rng.uniform(-1, 1, (30, 3)))
    k = SumInto(3)
    a = b = x
    # prime layer 0 with a scatter of the inputs, then alternate
    run_layer_merged(a, msgs, csr, SumIdentity(3), ctx, next_kernel=k, prime=True)
    for _ in range(3):
        a = run_layer_merged(a, msgs, csr, k, ctx)
        b = run_layer_gather_first(b, csc, k, ctx)
        assert np.array_equal(a, b)
    assert msgs.flips == 3


@pytest.mark.parametrize("kind", KINDS)
def test_kernels_merged_equals_gather(kind, rng):
    cfg = init_weights(ModelConfig.default(kind, 3, 2, num_layers=2, embed_dim=8, heads=2,
                                           head_dim=4, head_hidden=()), rng)
    cm = compile_model(cfg)
    g = random_graph(rng, 30, 120, 3, 2)
    ev = rng.uniform(-1, 1, 30) if kind == "DGN" else None
    a = run_model(g, cm, eigvec=ev, task="node")
    b = run_model(g, cm, eigvec=ev, task="node", path="gather")
    assert np.array_equal(a.raw, b.raw)
    assert np.array_equal(a.embeddings, b.embeddings)
    assert a.flips == cfg.num_layers


def test_message_state_is_per_node():
    msgs = MessageBufferPair(10)
    msgs.reset_write(SumIdentity(4))
    assert msgs.write.nbytes == 10 * 4 * 8
    assert AggState(5, {"a": (2, 0), "b": (1, 3)}).arrays["b"].tolist() == [[3]] * 5


def test_pool():
    assert global_mean_pool(np.array([[7, 8]])).tolist() == [7, 8]
    assert global_mean_pool(np.array([[1], [3]])).tolist() == [2]
    x = np.array([[1], [3], [1000]])
    assert global_mean_pool(x, num_real=2).tolist() == [2]
    with pytest.raises(EmptyGraphError):
        global_mean_pool(np.zeros((0, 3), dtype=np.int64))


def test_pool_matches_float(rng):
    v = rng.uniform(-4, 4, (37, 6))
    raw = Q16_16.quantize(v)
    got = Q16_16.dequantize(global_mean_pool(raw))
    assert np.abs(got - v.mean(0)).max() <= 2.0 ** -8


def test_head_forward_examples(rng):
    v = Q16_16.quantize(rng.uniform(-1, 1, 5))
    ident = MlpParams([np.eye(5)], [np.zeros(5)], [False]).quantized(Q16_16)
    assert np.array_equal(head_forward(v, ident), v)
    zero = MlpParams([np.zeros((3, 5))], [np.array([0.5, -1.0, 2.0])], [False]).quantized(Q16_16)
    assert Q16_16.dequantize(head_forward(v, zero)).tolist() == [0.5, -1.0, 2.0]


def test_pna_head_matches_float(rng):
    p = MlpParams.chain([rng.uniform(-0.5, 0.5, (40, 80)), rng.uniform(-0.5, 0.5, (20, 40)),
                         rng.uniform(-0.5, 0.5, (1, 20))],
                        [rng.uniform(-0.5, 0.5, 40), rng.uniform(-0.5, 0.5, 20), rng.uniform(-0.5, 0.5, 1)])
    x = rng.uniform(-1, 1, 80)
    qp = MlpParams([Q16_16.dequantize(Q16_16.quantize(w)) for w in p.weights],
                   [Q16_16.dequantize(Q16_16.quantize(b)) for b in p.biases], p.activations)
    got = Q16_16.dequantize(head_forward(Q16_16.quantize(x), p.quantized(Q16_16)))
    assert np.abs(got - qp.forward(Q16_16.dequantize(Q16_16.quantize(x)))).max() <= 2.0 ** -8


def test_head_dim_mismatch():
    with pytest.raises(ConfigError):
        MlpParams([np.zeros((3, 4)), np.zeros((2, 5))], [np.zeros(3), np.zeros(2)], [True, False])
