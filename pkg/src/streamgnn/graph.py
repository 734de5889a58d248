"""Graph containers, COO -> CSR/CSC conversion and graph file formats."""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import MalformedGraphError


def _frozen(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Graph:
    """Raw COO graph: ordered ``(src, dst)`` edge list plus feature matrices."""

    num_nodes: int
    edges: np.ndarray
    node_features: np.ndarray
    edge_features: np.ndarray

    def __init__(self, num_nodes, edges, node_features=None, edge_features=None):
        n = int(num_nodes)
        e = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
        if n < 0:
            raise MalformedGraphError(f"negative node count {n}")
        if e.size and (e.min() < 0 or e.max() >= n):
            bad = e[(e < 0).any(1) | (e >= n).any(1)][0]
            raise MalformedGraphError(f"edge {tuple(bad)} references a node outside [0, {n})")
        nf = np.zeros((n, 0)) if node_features is None else np.asarray(node_features, dtype=np.float64)
        if nf.ndim == 1:
            nf = nf.reshape(n, -1) if n else nf.reshape(0, 0)
        ef = np.zeros((len(e), 0)) if edge_features is None else np.asarray(edge_features, dtype=np.float64)
        if ef.ndim != 2:
            if ef.size % max(len(e), 1):
                raise MalformedGraphError(f"{ef.size} edge feature values for {len(e)} edges")
            ef = ef.reshape(len(e), ef.size // len(e) if len(e) else 0)
        if nf.shape[0] != n:
            raise MalformedGraphError(f"{nf.shape[0]} node feature rows for {n} nodes")
        if ef.shape[0] != len(e):
            raise MalformedGraphError(f"{ef.shape[0]} edge feature rows for {len(e)} edges")
        object.__setattr__(self, "num_nodes", n)
        object.__setattr__(self, "edges", _frozen(e.copy()))
        object.__setattr__(self, "node_features", _frozen(nf.copy()))
        object.__setattr__(self, "edge_features", _frozen(ef.copy()))

    @property
    def num_edges(self) -> int:
        return len(self.edges)

    @property
    def src(self) -> np.ndarray:
        return self.edges[:, 0]

    @property
    def dst(self) -> np.ndarray:
        return self.edges[:, 1]

    @property
    def node_dim(self) -> int:
        return self.node_features.shape[1]

    @property
    def edge_dim(self) -> int:
        return self.edge_features.shape[1]

    def permuted(self, perm) -> "Graph":
        """Relabel node ``i`` as ``perm[i]``; edge order is kept."""
        perm = np.asarray(perm, dtype=np.int64)
        inv = np.empty_like(perm)
        inv[perm] = np.arange(len(perm))
        return Graph(self.num_nodes, perm[self.edges] if self.num_edges else self.edges,
                     self.node_features[inv], self.edge_features)

    def reversed(self) -> "Graph":
        return Graph(self.num_nodes, self.edges[:, ::-1], self.node_features, self.edge_features)


@dataclass(frozen=True, eq=False)
class _Compressed:
    degree_table: np.ndarray
    neighbor_table: np.ndarray
    edge_index_table: np.ndarray

    @property
    def num_nodes(self) -> int:
        return len(self.degree_table)

    @property
    def num_edges(self) -> int:
        return len(self.neighbor_table)

    @property
    def offsets(self) -> np.ndarray:
        off = np.zeros(self.num_nodes + 1, dtype=np.int64)
        np.cumsum(self.degree_table, out=off[1:])
        return off

    def neighbors(self, i: int) -> tuple[np.ndarray, np.ndarray]:
        off = self._off
        return (self.neighbor_table[off[i]:off[i + 1]],
                self.edge_index_table[off[i]:off[i + 1]])

    @property
    def _off(self) -> np.ndarray:
        try:
            return self.__dict__["_off_cache"]
        except KeyError:
            off = _frozen(self.offsets)
            object.__setattr__(self, "_off_cache", off)
            return off


class CsrAdjacency(_Compressed):
    """Out-neighbour slices: ``neighbors(i)`` lists destinations of ``i``."""

    def to_coo(self) -> np.ndarray:
        src = np.repeat(np.arange(self.num_nodes), self.degree_table)
        return np.stack([src, self.neighbor_table], 1)


class CscAdjacency(_Compressed):
    """In-neighbour slices: ``neighbors(i)`` lists sources pointing at ``i``."""

    def to_coo(self) -> np.ndarray:
        dst = np.repeat(np.arange(self.num_nodes), self.degree_table)
        return np.stack([self.neighbor_table, dst], 1)


def _compress(n: int, keys: np.ndarray, vals: np.ndarray):
    degrees = np.bincount(keys, minlength=n).astype(np.int64)
    order = np.argsort(keys, kind="stable")
    return (_frozen(degrees), _frozen(vals[order].astype(np.int64)),
            _frozen(order.astype(np.int64)))


def _check(g: Graph) -> None:
    if not isinstance(g, Graph):
        raise MalformedGraphError("expected a Graph")
    e = g.edges
    if e.size and (e.min() < 0 or e.max() >= g.num_nodes):
        raise MalformedGraphError("node id out of range")


def coo_to_csr(g: Graph) -> CsrAdjacency:
    _check(g)
    return CsrAdjacency(*_compress(g.num_nodes, g.src, g.dst))


def coo_to_csc(g: Graph) -> CscAdjacency:
    _check(g)
    return CscAdjacency(*_compress(g.num_nodes, g.dst, g.src))


def add_virtual_node(g: Graph) -> Graph:
    """Append node ``N`` joined both ways to every real node.

    New edges ``(N, i), (i, N)`` for ``i`` ascending follow the original
    edges; the virtual node and its edges get zero features.
    """
    n = g.num_nodes
    if n < 1:
        raise MalformedGraphError("virtual node needs at least one real node")
    ids = np.arange(n)
    vn_edges = np.empty((2 * n, 2), dtype=np.int64)
    vn_edges[0::2, 0] = n
    vn_edges[0::2, 1] = ids
    vn_edges[1::2, 0] = ids
    vn_edges[1::2, 1] = n
    edges = np.concatenate([g.edges, vn_edges])
    nf = np.vstack([g.node_features, np.zeros((1, g.node_dim))])
    ef = np.vstack([g.edge_features, np.zeros((2 * n, g.edge_dim))])
    return Graph(n + 1, edges, nf, ef)


# --------------------------------------------------------------------------
# file formats

_BIN_MAGIC = b"SGB1"


def write_graph(g: Graph, path, binary: bool | None = None) -> None:
    path = Path(path)
    if binary is None:
        binary = path.suffix == ".bin"
    if binary:
        with open(path, "wb") as f:
            f.write(_BIN_MAGIC)
            f.write(struct.pack("<4I", g.num_nodes, g.num_edges, g.node_dim, g.edge_dim))
            f.write(g.node_features.astype("<f4").tobytes())
            rec = np.dtype([("src", "<i4"), ("dst", "<i4"), ("feat", "<f4", (g.edge_dim,))])
            arr = np.zeros(g.num_edges, dtype=rec)
            arr["src"] = g.src
            arr["dst"] = g.dst
            if g.edge_dim:
                arr["feat"] = g.edge_features
            f.write(arr.tobytes())
        return
    lines = [f"{g.num_nodes} {g.num_edges} {g.node_dim} {g.edge_dim}"]
    # zero-width feature rows would be blank lines, so they are left out
    for row in (g.node_features if g.node_dim else ()):
        lines.append(" ".join(repr(float(v)) for v in row))
    for (s, d), feat in zip(g.edges, g.edge_features):
        lines.append(" ".join([str(int(s)), str(int(d))] + [repr(float(v)) for v in feat]))
    path.write_text("\n".join(lines) + "\n")


def read_graph(path) -> Graph:
    path = Path(path)
    data = path.read_bytes()
    try:
        if data[:4] == _BIN_MAGIC:
            return _read_binary(data)
        return _read_text(data.decode())
    except MalformedGraphError:
        raise
    except (ValueError, IndexError, struct.error, UnicodeDecodeError) as exc:
        raise MalformedGraphError(f"{path}: {exc}") from exc


def _read_binary(data: bytes) -> Graph:
    n, e, d_in, d_e = struct.unpack_from("<4I", data, 4)
    off = 20
    nf = np.frombuffer(data, dtype="<f4", count=n * d_in, offset=off).reshape(n, d_in)
    off += 4 * n * d_in
    rec = np.dtype([("src", "<i4"), ("dst", "<i4"), ("feat", "<f4", (d_e,))])
    if len(data) - off != rec.itemsize * e:
        raise MalformedGraphError("binary graph payload length mismatch")
    arr = np.frombuffer(data, dtype=rec, count=e, offset=off)
    edges = np.stack([arr["src"], arr["dst"]], 1)
    return Graph(n, edges, nf.astype(np.float64), arr["feat"].reshape(e, d_e).astype(np.float64))


def _read_text(text: str) -> Graph:
    rows = [ln.split() for ln in text.splitlines() if ln.strip()]
    if not rows or len(rows[0]) != 4:
        raise MalformedGraphError("header must be 'N E d_in d_e'")
    n, e, d_in, d_e = (int(v) for v in rows[0])
    nl = n if d_in else 0
    if len(rows) != 1 + nl + e:
        raise MalformedGraphError(f"expected {1 + nl + e} non-empty lines, found {len(rows)}")
    nf = np.array([[float(v) for v in r] for r in rows[1:1 + nl]], dtype=np.float64).reshape(n, d_in)
    edges = np.zeros((e, 2), dtype=np.int64)
    ef = np.zeros((e, d_e))
    for k, r in enumerate(rows[1 + nl:]):
        if len(r) != 2 + d_e:
            raise MalformedGraphError(f"edge line {k} has {len(r)} fields, expected {2 + d_e}")
        edges[k] = int(r[0]), int(r[1])
        ef[k] = [float(v) for v in r[2:]]
    return Graph(n, edges, nf, ef)
