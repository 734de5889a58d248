"""Model-specific layer kernels: GCN, GIN (+ virtual node), GAT, PNA, DGN."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .engine import SELF_LOOP, AggState, GraphContext, LayerKernel, run_layer_gather_first
from .errors import ConfigError
from .fixed import FixedFormat, Q16_16
from .graph import CscAdjacency
from .mlp import MlpParams, QuantizedMlp, mlp_forward

KINDS = ("GCN", "GIN", "GIN-VN", "GAT", "PNA", "DGN")
LEAKY_SLOPE = 0.2
# rows of the directional matrix whose |delta phi| sum is below this are zeroed
BDX_DEGENERATE = 2.0 ** -12


@dataclass
class ModelConfig:
    kind: str
    in_dim: int
    edge_dim: int = 0
    num_layers: int = 5
    embed_dim: int = 100
    heads: int = 4
    head_dim: int = 16
    eps: list = field(default_factory=list)
    avg_log_degree: float = math.log(3.0)
    head_hidden: tuple = ()
    num_tasks: int = 1
    task: str = "graph"
    edge_activation: bool = True
    gin_eps_form: str = "reference"
    laplacian: str = "normalized"
    weights: dict = field(default_factory=dict)

    def __post_init__(self):
        self.kind = self.kind.upper()
        if self.kind not in KINDS:
            raise ConfigError(f"unsupported model kind {self.kind!r}; choose from {KINDS}")
        if not self.eps:
            self.eps = [0.0] * self.num_layers
        if len(self.eps) != self.num_layers:
            raise ConfigError("eps needs one value per layer")
        if self.avg_log_degree <= 0:
            raise ConfigError("average log-degree must be positive")
        if self.task not in ("graph", "node"):
            raise ConfigError(f"unknown task {self.task!r}")
        if self.gin_eps_form not in ("reference", "message"):
            raise ConfigError(f"unknown GIN eps form {self.gin_eps_form!r}")
        self.head_hidden = tuple(self.head_hidden)

    @classmethod
    def default(cls, kind: str, in_dim: int, edge_dim: int = 0, **kw) -> "ModelConfig":
        """Layer counts, widths and heads used for the molecular benchmarks."""
        kind = kind.upper()
        presets = {
            "GCN": dict(num_layers=5, embed_dim=100),
            "GIN": dict(num_layers=5, embed_dim=100),
            "GIN-VN": dict(num_layers=5, embed_dim=100),
            "GAT": dict(num_layers=5, heads=4, head_dim=16, embed_dim=64),
            "PNA": dict(num_layers=4, embed_dim=80, head_hidden=(40, 20)),
            "DGN": dict(num_layers=4, embed_dim=100, head_hidden=(50, 25)),
        }
        if kind not in presets:
            raise ConfigError(f"unsupported model kind {kind!r}")
        args = dict(presets[kind])
        args.update(kw)
        return cls(kind, in_dim, edge_dim, **args)

    # dimensions -------------------------------------------------------
    @property
    def hidden_dim(self) -> int:
        return self.heads * self.head_dim if self.kind == "GAT" else self.embed_dim

    @property
    def final_dim(self) -> int:
        return self.head_dim if self.kind == "GAT" else self.embed_dim

    def layer_dims(self, layer: int) -> tuple[int, int]:
        last = layer == self.num_layers - 1
        return self.hidden_dim, (self.final_dim if last else self.hidden_dim)

    def weight_shapes(self) -> dict:
        d = self.hidden_dim
        shapes = {"encoder.weight": (d, self.in_dim), "encoder.bias": (d,)}
        for l in range(self.num_layers):
            p = f"layers.{l}."
            din, dout = self.layer_dims(l)
            if self.kind == "GCN":
                shapes[p + "weight"] = (dout, din)
                shapes[p + "bias"] = (dout,)
            elif self.kind in ("GIN", "GIN-VN"):
                if self.edge_dim:
                    shapes[p + "edge.weight"] = (d, self.edge_dim)
                    shapes[p + "edge.bias"] = (d,)
                mlps = ["mlp", "vn_mlp"] if self.kind == "GIN-VN" else ["mlp"]
                for m in mlps:
                    shapes[p + m + ".0.weight"] = (2 * d, d)
                    shapes[p + m + ".0.bias"] = (2 * d,)
                    shapes[p + m + ".1.weight"] = (d, 2 * d)
                    shapes[p + m + ".1.bias"] = (d,)
            elif self.kind == "GAT":
                hf = self.heads * self.head_dim
                shapes[p + "weight"] = (hf, din)
                shapes[p + "att_src"] = (self.heads, self.head_dim)
                shapes[p + "att_dst"] = (self.heads, self.head_dim)
                shapes[p + "bias"] = (dout,)
            elif self.kind == "PNA":
                shapes[p + "weight"] = (d, 12 * d)
                shapes[p + "bias"] = (d,)
            elif self.kind == "DGN":
                shapes[p + "weight"] = (d, 2 * d)
                shapes[p + "bias"] = (d,)
        dims = [self.final_dim, *self.head_hidden, self.num_tasks]
        for k in range(len(dims) - 1):
            shapes[f"head.{k}.weight"] = (dims[k + 1], dims[k])
            shapes[f"head.{k}.bias"] = (dims[k + 1],)
        return shapes

    def validate(self) -> None:
        shapes = self.weight_shapes()
        missing = sorted(set(shapes) - set(self.weights))
        if missing:
            raise ConfigError(f"malformed weights: missing {missing[:4]}")
        for name, shape in shapes.items():
            got = np.shape(self.weights[name])
            if tuple(got) != tuple(shape):
                raise ConfigError(f"malformed weights: {name} has shape {got}, expected {shape}")

    # parameter views ---------------------------------------------------
    def w(self, name: str) -> np.ndarray:
        return np.asarray(self.weights[name], dtype=np.float64)

    def mlp(self, prefix: str, n: int, final_activation=False) -> MlpParams:
        return MlpParams.chain([self.w(f"{prefix}.{k}.weight") for k in range(n)],
                               [self.w(f"{prefix}.{k}.bias") for k in range(n)], final_activation)

    def head(self) -> MlpParams:
        return self.mlp("head", len(self.head_hidden) + 1)

    def layer_activation(self, layer: int) -> bool:
        if self.kind in ("PNA", "DGN"):
            return True
        return layer != self.num_layers - 1


def init_weights(cfg: ModelConfig, rng: np.random.Generator) -> ModelConfig:
    """Uniform weights inside [-1, 1], shrunk by 1/sqrt(fan_in) per tensor."""
    weights = {}
    for name, shape in cfg.weight_shapes().items():
        if name.endswith("bias"):
            fan_in = cfg.weight_shapes()[name[:-4] + "weight"][1]
        else:
            fan_in = shape[-1]
        bound = min(1.0, 1.0 / math.sqrt(max(fan_in, 1)))
        weights[name] = rng.uniform(-bound, bound, size=shape)
    cfg.weights = weights
    return cfg


# --------------------------------------------------------------------------
# kernels


class EncoderKernel(LayerKernel):
    """Input embedding stage: linear map of raw features, no aggregation."""

    def __init__(self, weight, bias, fmt: FixedFormat):
        self.w, self.b, self.fmt = fmt.quantize(weight), fmt.quantize(bias), fmt
        self.out_dim, self.in_dim = self.w.shape

    def accumulate(self, row, dst, src, edge, p_src, p_dst, ctx, pass_no=0):
        pass

    def update(self, x_i, m_i, i, ctx):
        return self.fmt.matvec(self.w, x_i, self.b)


def _inv_sqrt_degree(ctx: GraphContext) -> np.ndarray:
    key = "gcn_inv_sqrt"
    if key not in ctx.cache:
        ctx.cache[key] = ctx.fmt.quantize(1.0 / np.sqrt(ctx.in_degree + 1.0))
    return ctx.cache[key]


class GCNKernel(LayerKernel):
    self_loops = True

    def __init__(self, weight, bias, activation: bool, fmt: FixedFormat):
        self.w, self.b, self.fmt, self.act = fmt.quantize(weight), fmt.quantize(bias), fmt, activation
        self.out_dim, self.in_dim = self.w.shape

    def state_fields(self):
        return {"sum": (self.in_dim, 0)}

    def payload(self, x_i, i, ctx):
        return self.fmt.mul(x_i, _inv_sqrt_degree(ctx)[i])

    def accumulate(self, row, dst, src, edge, p_src, p_dst, ctx, pass_no=0):
        row["sum"] += p_src

    def finalize(self, row, i, x_i, ctx):
        return self.fmt.mul(self.fmt.saturate(row["sum"]), _inv_sqrt_degree(ctx)[i])

    def update(self, x_i, m_i, i, ctx):
        y = self.fmt.matvec(self.w, m_i, self.b)
        return np.maximum(y, 0) if self.act else y


def gcn_layer_kernel(cfg: ModelConfig, layer: int, fmt: FixedFormat = Q16_16) -> GCNKernel:
    p = f"layers.{layer}."
    return GCNKernel(cfg.w(p + "weight"), cfg.w(p + "bias"), cfg.layer_activation(layer), fmt)


class GINKernel(LayerKernel):
    def __init__(self, mlp: QuantizedMlp, eps: float, activation: bool, fmt: FixedFormat,
                 edge_weight=None, edge_bias=None, vn_mlp: QuantizedMlp | None = None,
                 edge_activation=True, eps_form="reference"):
        self.mlp, self.vn_mlp, self.fmt, self.act = mlp, vn_mlp, fmt, activation
        self.eps = int(fmt.quantize(eps))
        self.one_plus_eps = int(fmt.quantize(1.0 + eps))
        self.ew = None if edge_weight is None else fmt.quantize(edge_weight)
        self.eb = None if edge_bias is None else fmt.quantize(edge_bias)
        self.edge_activation = edge_activation
        self.eps_form = eps_form
        self.in_dim = mlp.in_dim
        self.out_dim = mlp.out_dim

    def state_fields(self):
        return {"sum": (self.in_dim, 0)}

    def edge_embedding(self, edge, ctx):
        if self.ew is None or edge == SELF_LOOP:
            return 0
        return self.fmt.matvec(self.ew, ctx.edge_features[edge], self.eb)

    def accumulate(self, row, dst, src, edge, p_src, p_dst, ctx, pass_no=0):
        msg = self.fmt.add(p_src, self.edge_embedding(edge, ctx))
        if self.edge_activation:
            msg = np.maximum(msg, 0)
        row["sum"] += msg

    def finalize(self, row, i, x_i, ctx):
        return self.fmt.saturate(row["sum"])

    def update(self, x_i, m_i, i, ctx):
        f = self.fmt
        if self.eps_form == "reference":
            h = f.add(f.mul(x_i, self.one_plus_eps), m_i)
        else:
            h = f.add(x_i, f.mul(m_i, self.eps))
        mlp = self.vn_mlp if (self.vn_mlp is not None and i == ctx.vn_index) else self.mlp
        y = mlp_forward(h, mlp)
        return np.maximum(y, 0) if self.act else y


def gin_layer_kernel(cfg: ModelConfig, layer: int, fmt: FixedFormat = Q16_16) -> GINKernel:
    p = f"layers.{layer}."
    ew = cfg.w(p + "edge.weight") if cfg.edge_dim else None
    eb = cfg.w(p + "edge.bias") if cfg.edge_dim else None
    vn = cfg.mlp(p + "vn_mlp", 2).quantized(fmt) if cfg.kind == "GIN-VN" else None
    return GINKernel(cfg.mlp(p + "mlp", 2).quantized(fmt), cfg.eps[layer],
                     cfg.layer_activation(layer), fmt, ew, eb, vn,
                     cfg.edge_activation, cfg.gin_eps_form)


def gin_vn_step(x: np.ndarray, vn_state: np.ndarray, kernel: GINKernel, ctx: GraphContext,
                adj: CscAdjacency) -> tuple[np.ndarray, np.ndarray]:
    """One GIN layer over an augmented graph whose last node is the virtual node.

    The virtual node is an ordinary participant in message passing; only
    its transform differs (``kernel.vn_mlp``).
    """
    if ctx.vn_index != x.shape[0] or adj.num_nodes != x.shape[0] + 1:
        raise ConfigError("context/adjacency must describe the graph plus one virtual node")
    out = run_layer_gather_first(np.vstack([x, vn_state[None, :]]), adj, kernel, ctx)
    return out[:-1], out[-1]


# ---- GAT


def _leaky(z: np.ndarray, fmt: FixedFormat) -> np.ndarray:
    return np.where(z >= 0, z, fmt.mul(z, fmt.quantize(LEAKY_SLOPE)))


def gat_attention(s_dst: int, t_candidates, fmt: FixedFormat = Q16_16) -> np.ndarray:
    """Softmax over LeakyReLU(s_dst + t_j) for one head.

    ``s_dst`` is the receiver's score ``a_dst . W x_i`` and ``t_candidates``
    the senders' scores ``a_src . W x_j`` (include the receiver itself for
    self-attention).  Returns raw coefficients in candidate order.
    """
    t = np.asarray(t_candidates, dtype=np.int64).reshape(-1)
    if t.size == 0:
        return t
    logits = _leaky(fmt.add(s_dst, t), fmt)
    p = fmt.exp(fmt.sub(logits, logits.max()))
    return fmt.div(p, p.sum())


def _block_rows(att: np.ndarray) -> np.ndarray:
    heads, f = att.shape
    blk = np.zeros((heads, heads * f), dtype=att.dtype)
    for h in range(heads):
        blk[h, h * f:(h + 1) * f] = att[h]
    return blk


def gat_scores(x, weight, att_src, att_dst, fmt: FixedFormat = Q16_16):
    """Raw projection ``W x`` plus per-head receiver (s) and sender (t) scores.

    ``att_src``/``att_dst`` are raw ``(heads, f)`` arrays.
    """
    proj = fmt.matvec(weight, x)
    return proj, fmt.matvec(_block_rows(att_dst), proj), fmt.matvec(_block_rows(att_src), proj)


class GATKernel(LayerKernel):
    self_loops = True
    passes = 2
    receiver_dependent = True

    def __init__(self, weight, att_src, att_dst, bias, concat: bool, activation: bool, fmt: FixedFormat):
        self.fmt = fmt
        self.w = fmt.quantize(weight)
        self.a_src, self.a_dst = fmt.quantize(att_src), fmt.quantize(att_dst)
        self.b = fmt.quantize(bias)
        self.heads, self.f = self.a_src.shape
        self.concat, self.act = concat, activation
        self.in_dim = self.w.shape[1]
        self.out_dim = self.heads * self.f if concat else self.f
        self.src_blk = _block_rows(self.a_src)
        self.dst_blk = _block_rows(self.a_dst)

    def state_fields(self):
        return {"max": (self.heads, self.fmt.raw_min),
                "num": (self.heads * self.f, 0),
                "den": (self.heads, 0)}

    def payload(self, x_i, i, ctx):
        f = self.fmt
        proj = f.matvec(self.w, x_i)
        return proj, f.matvec(self.dst_blk, proj), f.matvec(self.src_blk, proj)

    def accumulate(self, row, dst, src, edge, p_src, p_dst, ctx, pass_no=0):
        f = self.fmt
        proj, _, t = p_src
        logit = _leaky(f.add(p_dst[1], t), f)
        if pass_no == 0:
            np.maximum(row["max"], logit, out=row["max"])
            return
        p = f.exp(f.sub(logit, row["max"]))
        row["den"] += p
        row["num"] += f.mul(np.repeat(p, self.f), proj)

    def finalize(self, row, i, x_i, ctx):
        f = self.fmt
        den = f.saturate(row["den"])
        return f.div(f.saturate(row["num"]), np.repeat(den, self.f))

    def update(self, x_i, m_i, i, ctx):
        f = self.fmt
        if self.concat:
            y = f.add(m_i, self.b)
        else:
            y = f.add(f.div_int(m_i.reshape(self.heads, self.f).sum(0), self.heads), self.b)
        return np.maximum(y, 0) if self.act else y


def gat_layer_kernel(cfg: ModelConfig, layer: int, fmt: FixedFormat = Q16_16) -> GATKernel:
    p = f"layers.{layer}."
    last = layer == cfg.num_layers - 1
    return GATKernel(cfg.w(p + "weight"), cfg.w(p + "att_src"), cfg.w(p + "att_dst"),
                     cfg.w(p + "bias"), not last, cfg.layer_activation(layer), fmt)


# ---- PNA


def _scaler_table(ctx: GraphContext, avg_log_degree: float):
    key = ("pna_scalers", avg_log_degree)
    if key not in ctx.cache:
        logd = np.log(np.arange(int(ctx.in_degree.max(initial=0)) + 2) + 1.0)
        with np.errstate(divide="ignore"):
            amp = ctx.fmt.quantize(logd / avg_log_degree)
            att = ctx.fmt.quantize(np.where(logd > 0, avg_log_degree / np.where(logd > 0, logd, 1), 0))
        ctx.cache[key] = (amp, att)
    return ctx.cache[key]


def _pna_fields(d: int, fmt: FixedFormat) -> dict:
    return {"sum": (d, 0), "sumsq": (d, 0), "max": (d, fmt.raw_min),
            "min": (d, fmt.raw_max), "count": (1, 0)}


def _pna_accumulate(row, x, fmt):
    row["sum"] += x
    row["sumsq"] += fmt.mul(x, x)
    np.maximum(row["max"], x, out=row["max"])
    np.minimum(row["min"], x, out=row["min"])
    row["count"] += 1


def _pna_finalize(row, amp: int, att: int, fmt: FixedFormat) -> np.ndarray:
    d = len(row["sum"])
    c = int(row["count"][0])
    if c == 0:
        return np.zeros(12 * d, dtype=np.int64)
    mean = fmt.div_int(row["sum"], c)
    ex2 = fmt.div_int(row["sumsq"], c)
    var = np.maximum(fmt.sub(ex2, fmt.mul(mean, mean)), 0)
    std = fmt.sqrt(var)
    agg = np.concatenate([mean, std, row["max"], row["min"]])
    return np.concatenate([agg, fmt.mul(agg, amp), fmt.mul(agg, att)])


def pna_aggregate(messages, degree: int, avg_log_degree: float, fmt: FixedFormat = Q16_16) -> np.ndarray:
    """Raw 12*d aggregate: scalers (1, amplify, attenuate) x (mean, std, max, min)."""
    if avg_log_degree <= 0:
        raise ConfigError("average log-degree must be positive")
    msgs = np.asarray(messages, dtype=np.int64)
    d = msgs.shape[-1]
    state = AggState(1, _pna_fields(d, fmt))
    row = state.row(0)
    for m in msgs.reshape(-1, d):
        _pna_accumulate(row, m, fmt)
    logd = math.log(degree + 1)
    amp = int(fmt.quantize(logd / avg_log_degree))
    att = int(fmt.quantize(avg_log_degree / logd)) if logd > 0 else 0
    return _pna_finalize(row, amp, att, fmt)


class PNAKernel(LayerKernel):
    def __init__(self, weight, bias, avg_log_degree: float, fmt: FixedFormat):
        if avg_log_degree <= 0:
            raise ConfigError("average log-degree must be positive")
        self.w, self.b, self.fmt = fmt.quantize(weight), fmt.quantize(bias), fmt
        self.avg_log_degree = avg_log_degree
        self.out_dim = self.in_dim = self.w.shape[0]

    def state_fields(self):
        return _pna_fields(self.in_dim, self.fmt)

    def accumulate(self, row, dst, src, edge, p_src, p_dst, ctx, pass_no=0):
        _pna_accumulate(row, p_src, self.fmt)

    def finalize(self, row, i, x_i, ctx):
        amp, att = _scaler_table(ctx, self.avg_log_degree)
        c = int(row["count"][0])
        return _pna_finalize(row, int(amp[c]), int(att[c]), self.fmt)

    def update(self, x_i, m_i, i, ctx):
        f = self.fmt
        return f.add(x_i, np.maximum(f.matvec(self.w, m_i, self.b), 0))


def pna_layer_kernel(cfg: ModelConfig, layer: int, fmt: FixedFormat = Q16_16) -> PNAKernel:
    p = f"layers.{layer}."
    return PNAKernel(cfg.w(p + "weight"), cfg.w(p + "bias"), cfg.avg_log_degree, fmt)


# ---- DGN


@dataclass
class DirectionalMatrix:
    """Directional-derivative weights along an eigenvector.

    Entry (i, j), for an edge j -> i, is ``(phi_j - phi_i) / sum_k |phi_k - phi_i|``
    and the diagonal is minus the row sum.  ``weights`` follows CSC slot
    order (``receivers``/``senders`` give the coordinates) when built by
    :func:`build_bdx`; kernels only need ``weight(i, j)``, which uses the
    O(N) denominators.
    """

    fmt: FixedFormat
    phi: np.ndarray
    denominator: np.ndarray
    degenerate: np.ndarray
    receivers: np.ndarray | None = None
    senders: np.ndarray | None = None
    weights: np.ndarray | None = None
    diagonal: np.ndarray | None = None

    def weight(self, i: int, j: int) -> int:
        if self.degenerate[i]:
            return 0
        return int(self.fmt.div(self.phi[j] - self.phi[i], self.denominator[i]))

    def dense(self) -> np.ndarray:
        n = len(self.phi)
        out = np.diag(self.fmt.dequantize(self.diagonal))
        np.add.at(out, (self.receivers, self.senders), self.fmt.dequantize(self.weights))
        return out


def _bdx_core(adj: CscAdjacency, phi_raw: np.ndarray, fmt: FixedFormat) -> DirectionalMatrix:
    n = adj.num_nodes
    recv = np.repeat(np.arange(n), adj.degree_table)
    delta = np.abs(phi_raw[adj.neighbor_table] - phi_raw[recv])
    den = np.zeros(n, dtype=np.int64)
    np.add.at(den, recv, delta)
    degenerate = fmt.dequantize(den) < BDX_DEGENERATE
    return DirectionalMatrix(fmt, phi_raw, den, degenerate)


def build_bdx(adj: CscAdjacency, phi, fmt: FixedFormat = Q16_16) -> DirectionalMatrix:
    phi_raw = fmt.quantize(np.asarray(phi, dtype=np.float64).reshape(-1))
    if len(phi_raw) != adj.num_nodes:
        raise ConfigError("eigenvector length must equal the node count")
    m = _bdx_core(adj, phi_raw, fmt)
    recv = np.repeat(np.arange(adj.num_nodes), adj.degree_table)
    send = np.asarray(adj.neighbor_table)
    weights = np.array([m.weight(int(i), int(j)) for i, j in zip(recv, send)], dtype=np.int64)
    diag = -np.bincount(recv, weights=weights, minlength=adj.num_nodes).astype(np.int64)
    m.receivers, m.senders, m.weights, m.diagonal = recv, send, weights, diag
    return m


def _bdx_for(ctx: GraphContext) -> DirectionalMatrix:
    if "bdx" not in ctx.cache:
        if getattr(ctx, "eigvec_raw", None) is None:
            raise ConfigError("DGN needs an eigenvector for every graph")
        from .graph import coo_to_csc
        ctx.cache["bdx"] = _bdx_core(coo_to_csc(ctx.graph), ctx.eigvec_raw, ctx.fmt)
    return ctx.cache["bdx"]


class DGNKernel(LayerKernel):
    def __init__(self, weight, bias, fmt: FixedFormat):
        self.w, self.b, self.fmt = fmt.quantize(weight), fmt.quantize(bias), fmt
        self.out_dim = self.in_dim = self.w.shape[0]

    def state_fields(self):
        d = self.in_dim
        return {"sum": (d, 0), "count": (1, 0), "dsum": (d, 0), "bsum": (1, 0)}

    def accumulate(self, row, dst, src, edge, p_src, p_dst, ctx, pass_no=0):
        w = _bdx_for(ctx).weight(dst, src)
        row["sum"] += p_src
        row["count"] += 1
        row["dsum"] += self.fmt.mul(p_src, w)
        row["bsum"] += w

    def finalize(self, row, i, x_i, ctx):
        f = self.fmt
        d = self.in_dim
        c = int(row["count"][0])
        if c == 0:
            return np.zeros(2 * d, dtype=np.int64)
        mean = f.div_int(row["sum"], c)
        diag = -int(row["bsum"][0])
        directional = np.abs(f.add(f.saturate(row["dsum"]), f.mul(x_i, diag)))
        return np.concatenate([mean, directional])

    def update(self, x_i, m_i, i, ctx):
        f = self.fmt
        return f.add(x_i, np.maximum(f.matvec(self.w, m_i, self.b), 0))


def dgn_layer_kernel(cfg: ModelConfig, layer: int, fmt: FixedFormat = Q16_16) -> DGNKernel:
    p = f"layers.{layer}."
    return DGNKernel(cfg.w(p + "weight"), cfg.w(p + "bias"), fmt)


_FACTORIES = {"GCN": gcn_layer_kernel, "GIN": gin_layer_kernel, "GIN-VN": gin_layer_kernel,
              "GAT": gat_layer_kernel, "PNA": pna_layer_kernel, "DGN": dgn_layer_kernel}


def layer_kernel(cfg: ModelConfig, layer: int, fmt: FixedFormat = Q16_16) -> LayerKernel:
    return _FACTORIES[cfg.kind](cfg, layer, fmt)


@dataclass
class CompiledModel:
    cfg: ModelConfig
    fmt: FixedFormat
    encoder: EncoderKernel
    layers: list
    head: QuantizedMlp


def compile_model(cfg: ModelConfig, fmt: FixedFormat = Q16_16) -> CompiledModel:
    """Quantise weights once and build every stage's kernel."""
    cfg.validate()
    enc = EncoderKernel(cfg.w("encoder.weight"), cfg.w("encoder.bias"), fmt)
    layers = [layer_kernel(cfg, l, fmt) for l in range(cfg.num_layers)]
    return CompiledModel(cfg, fmt, enc, layers, cfg.head().quantized(fmt))
