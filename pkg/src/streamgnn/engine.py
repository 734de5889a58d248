"""Per-layer message-passing executor.

Two equivalent layer schedules are provided:

* ``run_layer_merged`` walks nodes in id order over CSR slices.  Each node's
  transform reads its fully aggregated message from the read-role buffer,
  then the node scatters its outgoing message straight into the receivers'
  running accumulators in the write-role buffer.  Message state is O(N).
* ``run_layer_gather_first`` walks nodes over CSC slices, aggregating
  incoming messages before the transform, with no scatter.

Aggregation state is integer and every reduction (sum, max, min, count) is
exact, so both schedules agree bit for bit regardless of visit order.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, EmptyGraphError
from .fixed import FixedFormat, Q16_16
from .graph import CscAdjacency, CsrAdjacency, Graph, coo_to_csc, coo_to_csr
from .mlp import QuantizedMlp, mlp_forward

SELF_LOOP = -1


@dataclass
class GraphContext:
    """Read-only per-graph data visible to kernels, plus visit counters."""

    graph: Graph
    fmt: FixedFormat = Q16_16
    num_real: int | None = None
    vn_index: int | None = None
    eigvec: np.ndarray | None = None
    edge_visits: int = 0
    node_visits: int = 0
    cache: dict = field(default_factory=dict)

    def __post_init__(self):
        g = self.graph
        if self.num_real is None:
            self.num_real = g.num_nodes if self.vn_index is None else g.num_nodes - 1
        self.in_degree = np.bincount(g.dst, minlength=g.num_nodes).astype(np.int64)
        self.out_degree = np.bincount(g.src, minlength=g.num_nodes).astype(np.int64)
        self.edge_features = self.fmt.quantize(g.edge_features)
        if self.eigvec is not None:
            v = np.asarray(self.eigvec, dtype=np.float64).reshape(-1)
            if len(v) != g.num_nodes:
                raise ConfigError(f"eigenvector length {len(v)} != {g.num_nodes} nodes")
            self.eigvec_raw = self.fmt.quantize(v)

    @property
    def num_nodes(self) -> int:
        return self.graph.num_nodes


class AggState:
    """Rows of integer aggregation accumulators, one row per node."""

    def __init__(self, n: int, fields: dict):
        self.fields = dict(fields)
        self.arrays = {name: np.full((n, width), init, dtype=np.int64)
                       for name, (width, init) in self.fields.items()}
        self.n = n

    def row(self, i: int) -> dict:
        return {name: a[i] for name, a in self.arrays.items()}

    def commit(self, i: int, row: dict) -> None:
        # rows are views; nothing to write back
        pass

    @property
    def nbytes(self) -> int:
        return sum(a.nbytes for a in self.arrays.values())


class MessageBufferPair:
    """Two alternating message buffers; ``parity`` selects the write role."""

    def __init__(self, n: int):
        self.n = n
        self.buffers = [AggState(n, {}), AggState(n, {})]
        self.parity = 0
        self.flips = 0

    @property
    def read(self) -> AggState:
        return self.buffers[1 - self.parity]

    @property
    def write(self) -> AggState:
        return self.buffers[self.parity]

    def reset_write(self, kernel: "LayerKernel") -> AggState:
        self.buffers[self.parity] = AggState(self.n, kernel.state_fields())
        return self.write

    def reset_read(self, kernel: "LayerKernel") -> AggState:
        self.buffers[1 - self.parity] = AggState(self.n, kernel.state_fields())
        return self.read

    def flip(self) -> None:
        self.parity ^= 1
        self.flips += 1

    @property
    def nbytes(self) -> int:
        return sum(b.nbytes for b in self.buffers)


class LayerKernel:
    """Message function, aggregator and node transform of one layer.

    ``payload`` is the sender-side part of the message function, computed
    once per sending node.  ``accumulate`` finishes the message for one edge
    and folds it into the receiver's accumulator row.  ``finalize`` turns
    an accumulator row into the aggregated message and ``update`` is the node
    transform.  An empty row (no incoming edges) must finalize to the
    kernel's zero message.
    """

    in_dim = 0
    out_dim = 0
    self_loops = False
    passes = 1
    receiver_dependent = False

    def state_fields(self) -> dict:
        return {}

    def payload(self, x_i, i, ctx):
        return x_i

    def accumulate(self, row, dst, src, edge, p_src, p_dst, ctx, pass_no=0):
        raise NotImplementedError

    def finalize(self, row, i, x_i, ctx):
        return None

    def update(self, x_i, m_i, i, ctx):
        raise NotImplementedError


def _check_dims(x: np.ndarray, kernel: LayerKernel, n: int) -> None:
    if x.ndim != 2 or x.shape[0] != n:
        raise ConfigError(f"embedding buffer shape {x.shape} does not match {n} nodes")
    if kernel.in_dim and x.shape[1] != kernel.in_dim:
        raise ConfigError(f"{type(kernel).__name__} expects width {kernel.in_dim}, "
                          f"buffer has {x.shape[1]}")


def _scatter_node(write, adj, i, p_i, kernel, ctx, payloads=None, pass_no=0):
    nbrs, eids = adj.neighbors(i)
    for j, e in zip(nbrs.tolist(), eids.tolist()):
        row = write.row(j)
        kernel.accumulate(row, j, i, e, p_i, None if payloads is None else payloads[j],
                          ctx, pass_no)
        write.commit(j, row)
        ctx.edge_visits += 1
    if kernel.self_loops:
        row = write.row(i)
        kernel.accumulate(row, i, i, SELF_LOOP, p_i, p_i, ctx, pass_no)
        write.commit(i, row)
        ctx.edge_visits += 1


def scatter_pass(x: np.ndarray, msgs: MessageBufferPair, adj: CsrAdjacency,
                 kernel: LayerKernel, ctx: GraphContext) -> None:
    """Scatter ``x`` through ``kernel`` into a fresh write buffer, then flip."""
    write = msgs.reset_write(kernel)
    _scatter_all(x, write, adj, kernel, ctx)
    msgs.flip()


def _scatter_all(x, write, adj, kernel, ctx):
    payloads = [kernel.payload(x[i], i, ctx) for i in range(adj.num_nodes)]
    for pass_no in range(kernel.passes):
        for i in range(adj.num_nodes):
            _scatter_node(write, adj, i, payloads[i], kernel, ctx, payloads, pass_no)


def run_layer_merged(x: np.ndarray, msgs: MessageBufferPair, adj: CsrAdjacency,
                     kernel: LayerKernel, ctx: GraphContext,
                     next_kernel: LayerKernel | None = None, scatter: bool = True,
                     prime: bool = False) -> np.ndarray:
    """One layer with merged scatter-gather.

    Node ``i`` is transformed with its message from the read-role buffer and
    then dispatches ``next_kernel``'s message (``kernel`` if not given) to
    its out-neighbours.  Kernels whose messages depend on the receiver's
    state defer the scatter until every node of the layer is transformed.

    With ``prime`` the stage reads no messages and scatters into the
    read-role buffer without flipping (the input encoder seeding layer 0).
    """
    n = adj.num_nodes
    _check_dims(x, kernel, n)
    nk = kernel if next_kernel is None else next_kernel
    read = msgs.read
    if not read.fields and kernel.state_fields():
        # never written: layer 0 reads the zero-state
        read = AggState(n, kernel.state_fields())
    if prime:
        write = msgs.reset_read(nk) if scatter else None
        read = AggState(n, kernel.state_fields())
    else:
        write = msgs.reset_write(nk) if scatter else None
    deferred = nk.receiver_dependent or nk.passes > 1
    out = np.zeros((n, kernel.out_dim), dtype=np.int64)
    for i in range(n):
        m_i = kernel.finalize(read.row(i), i, x[i], ctx)
        x_new = kernel.update(x[i], m_i, i, ctx)
        ctx.node_visits += 1
        out[i] = x_new
        if scatter and not deferred:
            _scatter_node(write, adj, i, nk.payload(x_new, i, ctx), nk, ctx)
    if scatter and deferred:
        _scatter_all(out, write, adj, nk, ctx)
    if not prime:
        msgs.flip()
    return out


def run_layer_gather_first(x: np.ndarray, adj: CscAdjacency, kernel: LayerKernel,
                           ctx: GraphContext) -> np.ndarray:
    """One layer that aggregates incoming messages before each transform."""
    n = adj.num_nodes
    _check_dims(x, kernel, n)
    state = AggState(n, kernel.state_fields())
    out = np.zeros((n, kernel.out_dim), dtype=np.int64)
    for i in range(n):
        row = state.row(i)
        nbrs, eids = adj.neighbors(i)
        p_i = kernel.payload(x[i], i, ctx)
        p_nbrs = [kernel.payload(x[j], j, ctx) for j in nbrs.tolist()]
        for pass_no in range(kernel.passes):
            for j, e, p_j in zip(nbrs.tolist(), eids.tolist(), p_nbrs):
                kernel.accumulate(row, i, j, e, p_j, p_i, ctx, pass_no)
                ctx.edge_visits += 1
            if kernel.self_loops:
                kernel.accumulate(row, i, i, SELF_LOOP, p_i, p_i, ctx, pass_no)
                ctx.edge_visits += 1
        m_i = kernel.finalize(row, i, x[i], ctx)
        out[i] = kernel.update(x[i], m_i, i, ctx)
        ctx.node_visits += 1
    return out


def global_mean_pool(x: np.ndarray, fmt: FixedFormat = Q16_16, num_real: int | None = None) -> np.ndarray:
    """Component-wise mean of the first ``num_real`` rows (sum, then one divide)."""
    n = x.shape[0] if num_real is None else num_real
    if n < 1:
        raise EmptyGraphError("cannot pool an empty graph")
    total = np.asarray(x[:n], dtype=np.int64).sum(axis=0)
    return fmt.div_int(total, n)


def head_forward(v: np.ndarray, head: QuantizedMlp) -> np.ndarray:
    return mlp_forward(v, head)


def make_context(g: Graph, fmt: FixedFormat = Q16_16, **kw) -> tuple[GraphContext, CsrAdjacency, CscAdjacency]:
    return GraphContext(g, fmt, **kw), coo_to_csr(g), coo_to_csc(g)
