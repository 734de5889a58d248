"""Out-of-core execution with a simulated external memory.

Embeddings and message accumulators live in an :class:`ExternalStore`
instead of host arrays.  Embedding rows are Q8.8 values packed eight to a
128-bit word; accumulator rows keep the engine's exact 64-bit integer state
so the result matches the in-core engine bit for bit.  Nodes are walked in
id order and their degrees come through a bounded prefetch queue, which is
also how the neighbour-table offsets are recovered (running sum of degrees).
"""
from __future__ import annotations

import json
import math
import zlib
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .engine import SELF_LOOP, AggState, GraphContext, LayerKernel
from .errors import ConfigError, StoreError
from .fixed import Q8_8, FixedFormat
from .graph import Graph, coo_to_csr
from .kernels import CompiledModel, ModelConfig, compile_model
from .mlp import mlp_forward
from .model import prepare_graph

WORD_BYTES = 16
LANES = 8
DEFAULT_READ_LATENCY = 32
DEFAULT_PREFETCH_CAPACITY = 64
STORE_MAGIC = b"SGSTORE1"


# ----------------------------------------------------------------------------
# 128-bit word codec


def _lanes(values) -> np.ndarray:
    v = np.asarray(values, dtype=np.int64).reshape(-1)
    if len(v) and (v.min() < -(1 << 15) or v.max() >= 1 << 15):
        raise ValueError("packed lanes hold 16-bit two's-complement values")
    return v


def pack_words(values) -> int:
    """Pack up to eight 16-bit raw values; lane i occupies bits [16i, 16i+16)."""
    v = _lanes(values)
    if len(v) > LANES:
        raise ValueError(f"a word holds at most {LANES} values")
    buf = np.zeros(LANES, dtype="<i2")
    buf[:len(v)] = v
    return int.from_bytes(buf.tobytes(), "little")


def unpack_words(word: int, length: int = LANES) -> np.ndarray:
    if not 0 <= length <= LANES:
        raise ValueError("length must be within one word")
    raw = np.frombuffer(int(word).to_bytes(WORD_BYTES, "little"), dtype="<i2")
    return raw[:length].astype(np.int64)


@dataclass(frozen=True)
class PackedVector:
    words: tuple
    length: int


def pack_vector(values) -> PackedVector:
    v = _lanes(values)
    return PackedVector(tuple(pack_words(v[k:k + LANES]) for k in range(0, len(v), LANES)), len(v))


def unpack_vector(p: PackedVector) -> np.ndarray:
    out = [unpack_words(w) for w in p.words]
    return (np.concatenate(out) if out else np.zeros(0, dtype=np.int64))[:p.length]


def pack_rows(raw: np.ndarray) -> bytes:
    """Bulk form: rows of raw values to word-aligned little-endian bytes."""
    raw = np.atleast_2d(np.asarray(raw, dtype=np.int64))
    words = math.ceil(raw.shape[1] / LANES)
    buf = np.zeros((raw.shape[0], words * LANES), dtype="<i2")
    _lanes(raw)
    buf[:, :raw.shape[1]] = raw
    return buf.tobytes()


def unpack_rows(data: bytes, width: int) -> np.ndarray:
    words = math.ceil(width / LANES)
    arr = np.frombuffer(data, dtype="<i2").reshape(-1, words * LANES)
    return arr[:, :width].astype(np.int64)


def words_per_row(width: int) -> int:
    return math.ceil(width / LANES)


# ----------------------------------------------------------------------------
# external store


@dataclass
class AccessLog:
    reads: int = 0
    writes: int = 0
    words_read: int = 0
    words_written: int = 0
    cycles: int = 0
    per_region: dict = field(default_factory=dict)

    def record(self, region: str, kind: str, words: int, latency: int) -> None:
        if kind == "read":
            self.reads += 1
            self.words_read += words
            self.cycles += latency + words
        else:
            self.writes += 1
            self.words_written += words
            self.cycles += words
        r = self.per_region.setdefault(region, {"reads": 0, "writes": 0, "words": 0})
        r["reads" if kind == "read" else "writes"] += 1
        r["words"] += words

    def summary(self) -> dict:
        return {"reads": self.reads, "writes": self.writes, "words_read": self.words_read,
                "words_written": self.words_written, "cycles": self.cycles}


@dataclass
class Region:
    offset: int
    length: int
    crc32: int | None = None  # None: scratch region, not covered by checksums


class ExternalStore:
    """Byte-addressed memory split into named, word-aligned regions.

    Reads pay ``read_latency`` cycles plus one cycle per word; writes are
    posted and pay one cycle per word.
    """

    def __init__(self, read_latency: int = DEFAULT_READ_LATENCY):
        self.data = bytearray()
        self.regions: dict[str, Region] = {}
        self.meta: dict = {}
        self.read_latency = read_latency
        self.log = AccessLog()

    # layout ---------------------------------------------------------
    def allocate(self, name: str, nbytes: int, fill: bytes | None = None) -> Region:
        nbytes = math.ceil(nbytes / WORD_BYTES) * WORD_BYTES
        reg = self.regions.get(name)
        if reg is None or reg.length < nbytes:
            reg = Region(len(self.data), nbytes)
            self.data.extend(bytes(nbytes))
            self.regions[name] = reg
        if fill is not None:
            self.data[reg.offset:reg.offset + len(fill)] = fill
        return reg

    def _span(self, name: str, offset: int, nbytes: int) -> slice:
        reg = self.regions.get(name)
        if reg is None:
            raise StoreError(f"no region {name!r}")
        if offset < 0 or offset + nbytes > reg.length:
            raise StoreError(f"access [{offset}, {offset + nbytes}) outside region {name!r}")
        return slice(reg.offset + offset, reg.offset + offset + nbytes)

    # logged access --------------------------------------------------
    def read(self, name: str, offset: int, nbytes: int) -> bytes:
        self.log.record(name, "read", math.ceil(nbytes / WORD_BYTES), self.read_latency)
        return bytes(self.data[self._span(name, offset, nbytes)])

    def write(self, name: str, offset: int, payload: bytes) -> None:
        self.log.record(name, "write", math.ceil(len(payload) / WORD_BYTES), 0)
        self.data[self._span(name, offset, len(payload))] = payload

    # bulk (unlogged) staging ----------------------------------------
    def put(self, name: str, payload: bytes) -> Region:
        return self.allocate(name, len(payload), payload)

    def get(self, name: str) -> bytes:
        reg = self.regions[name]
        return bytes(self.data[reg.offset:reg.offset + reg.length])

    # persistence ----------------------------------------------------
    def checksum(self, name: str) -> int:
        return zlib.crc32(self.get(name))

    def seal(self, names=None) -> None:
        for name in (self.regions if names is None else names):
            self.regions[name].crc32 = self.checksum(name)

    def verify(self) -> None:
        for name, reg in self.regions.items():
            if reg.crc32 is not None and self.checksum(name) != reg.crc32:
                raise StoreError(f"checksum mismatch in region {name!r}")

    def save(self, path) -> None:
        self.seal([k for k, r in self.regions.items() if r.crc32 is not None])
        manifest = {"meta": self.meta, "read_latency": self.read_latency,
                    "regions": {k: [r.offset, r.length, r.crc32] for k, r in self.regions.items()}}
        head = json.dumps(manifest, sort_keys=True).encode()
        with open(path, "wb") as f:
            f.write(STORE_MAGIC + len(head).to_bytes(8, "little") + head)
            f.write(self.data)

    @classmethod
    def load(cls, path) -> "ExternalStore":
        raw = Path(path).read_bytes()
        if raw[:8] != STORE_MAGIC:
            raise StoreError(f"{path}: not a store file")
        n = int.from_bytes(raw[8:16], "little")
        try:
            manifest = json.loads(raw[16:16 + n])
        except ValueError as exc:
            raise StoreError(f"{path}: unreadable manifest") from exc
        st = cls(manifest.get("read_latency", DEFAULT_READ_LATENCY))
        st.meta = manifest["meta"]
        st.data = bytearray(raw[16 + n:])
        for name, (off, length, crc) in manifest["regions"].items():
            if off + length > len(st.data):
                raise StoreError(f"{path}: region {name!r} truncated")
            st.regions[name] = Region(off, length, crc)
        st.verify()
        return st

    # typed helpers --------------------------------------------------
    def read_int32(self, name: str, index: int, count: int = 1) -> np.ndarray:
        return np.frombuffer(self.read(name, 4 * index, 4 * count), dtype="<i4").astype(np.int64)


class EmbeddingRegion:
    """N rows of packed Q8.8 values, ``ceil(d/8)`` words per row."""

    def __init__(self, store: ExternalStore, name: str, n: int, width: int):
        self.store, self.name, self.n, self.width = store, name, n, width
        self.row_bytes = words_per_row(width) * WORD_BYTES
        store.allocate(name, n * self.row_bytes)

    def read_row(self, i: int) -> np.ndarray:
        return unpack_rows(self.store.read(self.name, i * self.row_bytes, self.row_bytes), self.width)[0]

    def write_row(self, i: int, raw) -> None:
        self.store.write(self.name, i * self.row_bytes, pack_rows(np.asarray(raw).reshape(1, -1)))


class StoreAggState(AggState):
    """Accumulator rows held in the store as little-endian int64 words."""

    def __init__(self, store: ExternalStore, name: str, n: int, fields: dict):
        self.store, self.name, self.n = store, name, n
        self.fields = dict(fields)
        self.width = sum(w for w, _ in self.fields.values())
        self.row_bytes = math.ceil(8 * self.width / WORD_BYTES) * WORD_BYTES
        init = np.zeros(self.row_bytes // 8, dtype="<i8")
        k = 0
        for w, v in self.fields.values():
            init[k:k + w] = v
            k += w
        store.allocate(name, n * self.row_bytes, init.tobytes() * n)

    def row(self, i: int) -> dict:
        if not self.width:
            return {}
        raw = np.frombuffer(self.store.read(self.name, i * self.row_bytes, self.row_bytes),
                            dtype="<i8").astype(np.int64)
        out, k = {}, 0
        for name, (w, _) in self.fields.items():
            out[name] = raw[k:k + w].copy()
            k += w
        return out

    def commit(self, i: int, row: dict) -> None:
        if not self.width:
            return
        buf = np.zeros(self.row_bytes // 8, dtype="<i8")
        k = 0
        for name, (w, _) in self.fields.items():
            buf[k:k + w] = row[name]
            k += w
        self.store.write(self.name, i * self.row_bytes, buf.tobytes())

    @property
    def nbytes(self) -> int:
        return self.n * self.row_bytes


# ----------------------------------------------------------------------------
# degree prefetch


class PrefetchBuffer:
    """Bounded FIFO of ``(node, degree)`` for consecutive node ids."""

    def __init__(self, capacity: int = DEFAULT_PREFETCH_CAPACITY, num_nodes: int = 0):
        if capacity < 1:
            raise ConfigError("prefetch capacity must be at least 1")
        self.capacity = capacity
        self.num_nodes = num_nodes
        self.entries: deque = deque()
        self.next_node = 0
        self.issued = 0

    def full(self) -> bool:
        return len(self.entries) >= self.capacity

    def exhausted(self) -> bool:
        return self.next_node >= self.num_nodes

    def pop(self) -> tuple[int, int]:
        return self.entries.popleft()


def prefetch_step(store: ExternalStore, buf: PrefetchBuffer, region: str = "degree") -> PrefetchBuffer:
    """Fetch the next consecutive node's degree into the buffer."""
    if buf.full():
        raise ConfigError("prefetch buffer is full")
    if buf.exhausted():
        return buf
    i = buf.next_node
    buf.entries.append((i, int(store.read_int32(region, i)[0])))
    buf.next_node += 1
    buf.issued += 1
    return buf


def refill(store: ExternalStore, buf: PrefetchBuffer, region: str = "degree") -> PrefetchBuffer:
    while not buf.full() and not buf.exhausted():
        prefetch_step(store, buf, region)
    return buf


def walk_nodes(store: ExternalStore, n: int, capacity: int, region: str = "degree"):
    """Yield ``(node, degree, neighbour offset)`` in id order via the prefetcher."""
    buf = refill(store, PrefetchBuffer(capacity, n), region)
    offset = 0
    while buf.entries:
        i, deg = buf.pop()
        refill(store, buf, region)
        yield i, deg, offset
        offset += deg


# ----------------------------------------------------------------------------
# staging and execution


def stage_graph(g: Graph, cfg: ModelConfig, store: ExternalStore | None = None,
                fmt: FixedFormat = Q8_8, eigvec=None) -> ExternalStore:
    """Write a graph (already prepared for ``cfg``) into the store's regions."""
    store = store or ExternalStore()
    ctx = prepare_graph(g, cfg, fmt, eigvec)
    h = ctx.graph
    csr = coo_to_csr(h)
    store.meta = {"num_nodes": h.num_nodes, "num_edges": h.num_edges, "node_dim": h.node_dim,
                  "edge_dim": h.edge_dim, "num_real": ctx.num_real, "vn_index": ctx.vn_index,
                  "kind": cfg.kind, "format": fmt.name}
    store.put("degree", np.asarray(csr.degree_table, dtype="<i4").tobytes())
    store.put("neighbor", np.asarray(csr.neighbor_table, dtype="<i4").tobytes())
    store.put("edge_index", np.asarray(csr.edge_index_table, dtype="<i4").tobytes())
    store.put("coo", np.asarray(np.stack([h.src, h.dst], 1), dtype="<i4").tobytes())
    store.put("edge_features", np.asarray(h.edge_features, dtype="<f8").tobytes())
    store.put("features", pack_rows(fmt.quantize(h.node_features)))
    if ctx.eigvec is not None:
        store.put("eigvec", np.asarray(ctx.eigvec, dtype="<f8").tobytes())
    store.seal()
    return store


def _graph_from_store(store: ExternalStore) -> tuple[Graph, dict]:
    m = store.meta
    n, e = m["num_nodes"], m["num_edges"]
    coo = np.frombuffer(store.get("coo"), dtype="<i4")[:2 * e].reshape(e, 2)
    ef = np.frombuffer(store.get("edge_features"), dtype="<f8")[:e * m["edge_dim"]]
    g = Graph(n, coo.astype(np.int64), np.zeros((n, 0)), ef.astype(np.float64).reshape(e, m["edge_dim"]))
    return g, m


@dataclass
class OutOfCoreResult:
    raw: np.ndarray
    fmt: FixedFormat
    log: AccessLog
    prefetch_issued: int = 0

    @property
    def values(self) -> np.ndarray:
        return self.fmt.dequantize(self.raw)


def _scatter_from_store(store, write, nk, ctx, i, p_i, deg, offset, payloads=None, pass_no=0):
    if deg:
        nbrs = store.read_int32("neighbor", offset, deg)
        eids = store.read_int32("edge_index", offset, deg)
        for j, e in zip(nbrs.tolist(), eids.tolist()):
            row = write.row(j)
            nk.accumulate(row, j, i, e, p_i, None if payloads is None else payloads[j], ctx, pass_no)
            write.commit(j, row)
            ctx.edge_visits += 1
    if nk.self_loops:
        row = write.row(i)
        nk.accumulate(row, i, i, SELF_LOOP, p_i, p_i, ctx, pass_no)
        write.commit(i, row)
        ctx.edge_visits += 1


def run_model_out_of_core(store: ExternalStore, cfg: ModelConfig | CompiledModel,
                          capacity: int = DEFAULT_PREFETCH_CAPACITY, task: str | None = None,
                          fmt: FixedFormat = Q8_8) -> OutOfCoreResult:
    """Merged scatter-gather over store-resident buffers.

    Kernels that need every node's payload before scattering (attention)
    are not supported here because that state would have to sit on chip.
    """
    model = cfg if isinstance(cfg, CompiledModel) else compile_model(cfg, fmt)
    fmt = model.fmt
    if fmt.total_bits > 16:
        raise ConfigError("out-of-core embeddings are packed as 16-bit values")
    task = task or model.cfg.task
    if store.regions.get("degree") is None:
        raise StoreError("store holds no staged graph")
    store.verify()
    g, meta = _graph_from_store(store)
    if meta["kind"] != model.cfg.kind:
        raise ConfigError(f"store was staged for {meta['kind']}, model is {model.cfg.kind}")
    eig = np.frombuffer(store.get("eigvec"), dtype="<f8")[:g.num_nodes] if "eigvec" in store.regions else None
    ctx = GraphContext(g, fmt, num_real=meta["num_real"], vn_index=meta["vn_index"], eigvec=eig)
    n = g.num_nodes
    stages: list[LayerKernel] = [model.encoder, *model.layers]
    for k in stages:
        if k.receiver_dependent or k.passes > 1:
            raise ConfigError(f"{type(k).__name__} cannot run out of core")
    x = EmbeddingRegion(store, "features", n, meta["node_dim"])
    issued = 0
    read = AggState(n, stages[0].state_fields())
    for s, kernel in enumerate(stages):
        nk = stages[s + 1] if s + 1 < len(stages) else None
        out = EmbeddingRegion(store, f"emb{s % 2}", n, kernel.out_dim)
        write = StoreAggState(store, f"msg{s % 2}", n, nk.state_fields()) if nk else None
        walker = walk_nodes(store, n, capacity)
        for i, deg, offset in walker:
            x_i = x.read_row(i)
            m_i = kernel.finalize(read.row(i), i, x_i, ctx)
            x_new = kernel.update(x_i, m_i, i, ctx)
            ctx.node_visits += 1
            out.write_row(i, x_new)
            if nk is not None:
                _scatter_from_store(store, write, nk, ctx, i, nk.payload(x_new, i, ctx), deg, offset)
        issued += n
        x, read = out, write
    head_rows = [x.read_row(i) for i in range(ctx.num_real)]
    if task == "graph":
        total = np.sum(head_rows, axis=0, dtype=np.int64)
        raw = mlp_forward(fmt.div_int(total, ctx.num_real), model.head)
    else:
        raw = np.stack([mlp_forward(r, model.head) for r in head_rows])
    return OutOfCoreResult(raw, fmt, store.log, issued)


# ----------------------------------------------------------------------------
# latency model of the degree fetch path


@dataclass
class PrefetchSim:
    stall_cycles: int
    stalled_nodes: int
    total_cycles: int
    capacity: int
    prefetch: bool


def simulate_degree_fetch(mp_costs, arrivals=None, capacity: int = DEFAULT_PREFETCH_CAPACITY,
                          latency: int = DEFAULT_READ_LATENCY, prefetch: bool = True) -> PrefetchSim:
    """MP-PE stall cycles caused by waiting for degree reads.

    ``arrivals[i]`` is when node i is ready for message passing (default:
    all ready at 0).  With prefetch, one degree read issues per cycle
    while the buffer has a free slot; a slot frees when the MP PE takes
    the entry.  Without prefetch the MP PE issues the read itself when it
    reaches the node.
    """
    mp = [int(c) for c in mp_costs]
    n = len(mp)
    arrivals = [0] * n if arrivals is None else [int(a) for a in arrivals]
    stall = stalled = 0
    t = 0
    taken: list[int] = []
    last_issue = -1
    for i in range(n):
        want = max(t, arrivals[i])
        if prefetch:
            issue = last_issue + 1
            if i >= capacity:
                issue = max(issue, taken[i - capacity])
            last_issue = issue
            ready = issue + latency
        else:
            ready = want + latency
        start = max(want, ready)
        if start > want:
            stall += start - want
            stalled += 1
        taken.append(start)
        t = start + mp[i]
    return PrefetchSim(stall, stalled, t, capacity, prefetch)


def capacity_knee(mp_costs, arrivals=None, latency: int = DEFAULT_READ_LATENCY,
                  max_capacity: int = 256) -> int | None:
    """Smallest prefetch capacity with zero degree-fetch stalls (None if none up to the cap)."""
    for c in range(1, max_capacity + 1):
        if simulate_degree_fetch(mp_costs, arrivals, c, latency).stall_cycles == 0:
            return c
    return None


def degree_fetch_for_graph(g: Graph, cm=None, capacity: int = DEFAULT_PREFETCH_CAPACITY,
                           latency: int = DEFAULT_READ_LATENCY, prefetch: bool = True) -> PrefetchSim:
    """Degree-fetch stalls under the streaming schedule's NE completion times."""
    from .sim import CostModel, schedule
    cm = cm or CostModel()
    ne, mp = cm.costs(g)
    tr = schedule(ne, mp, "streaming", cm.fifo_depth)
    arrivals = [e for _, e, _ in sorted(tr.ne_intervals, key=lambda iv: iv[2])]
    return simulate_degree_fetch(mp, arrivals, capacity, latency, prefetch)
