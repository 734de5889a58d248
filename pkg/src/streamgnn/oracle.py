"""Dense floating-point reference models and the spectral helper for DGN.

Every model is written in matrix form over a dense count-adjacency
``C[i, j] = #edges j -> i`` so it shares no code path with the streaming
engine.  Matrix products accumulate over ascending node ids.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, EmptyGraphError
from .graph import Graph, add_virtual_node
from .kernels import BDX_DEGENERATE, LEAKY_SLOPE, ModelConfig


def in_count_matrix(g: Graph) -> np.ndarray:
    c = np.zeros((g.num_nodes, g.num_nodes))
    np.add.at(c, (g.dst, g.src), 1.0)
    return c


def _relu(x):
    return np.maximum(x, 0.0)


def _gcn(x, c, w, b, act):
    dh = c.sum(1) + 1.0
    norm = 1.0 / np.sqrt(dh)
    a_hat = (c + np.eye(len(c))) * norm[:, None] * norm[None, :]
    y = (a_hat @ x) @ w.T + b
    return _relu(y) if act else y


def _gin(g, x, cfg, l, act, vn_index):
    p = f"layers.{l}."
    if cfg.edge_dim:
        e = g.edge_features @ cfg.w(p + "edge.weight").T + cfg.w(p + "edge.bias")
    else:
        e = np.zeros((g.num_edges, x.shape[1]))
    msg = x[g.src] + e
    if cfg.edge_activation:
        msg = _relu(msg)
    incidence = np.zeros((g.num_nodes, g.num_edges))
    incidence[g.dst, np.arange(g.num_edges)] = 1.0
    m = incidence @ msg
    eps = cfg.eps[l]
    h = (1.0 + eps) * x + m if cfg.gin_eps_form == "reference" else x + eps * m
    y = cfg.mlp(p + "mlp", 2).forward(h)
    if vn_index is not None:
        y[vn_index] = cfg.mlp(p + "vn_mlp", 2).forward(h[vn_index])
    return _relu(y) if act else y


def _gat(x, c, cfg, l, act):
    p = f"layers.{l}."
    w, a_src, a_dst = cfg.w(p + "weight"), cfg.w(p + "att_src"), cfg.w(p + "att_dst")
    heads, f = a_src.shape
    proj = x @ w.T
    counts = c + np.eye(len(c))
    outs = []
    for h in range(heads):
        ph = proj[:, h * f:(h + 1) * f]
        z = (ph @ a_dst[h])[:, None] + (ph @ a_src[h])[None, :]
        z = np.where(z >= 0, z, LEAKY_SLOPE * z)
        z = np.where(counts > 0, z, -np.inf)
        wts = counts * np.exp(z - z.max(1, keepdims=True))
        outs.append((wts / wts.sum(1, keepdims=True)) @ ph)
    last = l == cfg.num_layers - 1
    y = (np.mean(outs, axis=0) if last else np.concatenate(outs, 1)) + cfg.w(p + "bias")
    return _relu(y) if act else y


def _masked_extremes(x, c):
    mask = (c > 0)[:, :, None]
    mx = np.where(mask, x[None], -np.inf).max(1)
    mn = np.where(mask, x[None], np.inf).min(1)
    return mx, mn


def _pna(x, c, cfg, l):
    p = f"layers.{l}."
    deg = c.sum(1)
    has = deg > 0
    safe = np.where(has, deg, 1.0)[:, None]
    mean = (c @ x) / safe
    std = np.sqrt(np.maximum((c @ (x * x)) / safe - mean ** 2, 0.0))
    mx, mn = _masked_extremes(x, c)
    agg = np.concatenate([mean, std, mx, mn], 1)
    agg[~has] = 0.0
    logd = np.log(deg + 1.0)
    dt = cfg.avg_log_degree
    amp = (logd / dt)[:, None]
    att = np.where(has, dt / np.where(has, logd, 1.0), 0.0)[:, None]
    out = np.concatenate([agg, agg * amp, agg * att], 1)
    return x + _relu(out @ cfg.w(p + "weight").T + cfg.w(p + "bias"))


def directional_matrix(c: np.ndarray, phi: np.ndarray) -> np.ndarray:
    diff = phi[None, :] - phi[:, None]
    den = (c * np.abs(diff)).sum(1)
    ok = den >= BDX_DEGENERATE
    b = np.where(ok[:, None], c * diff / np.where(ok, den, 1.0)[:, None], 0.0)
    b[np.diag_indices_from(b)] -= b.sum(1)
    return b


def _dgn(x, c, b, cfg, l):
    p = f"layers.{l}."
    deg = c.sum(1)
    mean = (c @ x) / np.where(deg > 0, deg, 1.0)[:, None]
    y = np.concatenate([mean, np.abs(b @ x)], 1)
    return x + _relu(y @ cfg.w(p + "weight").T + cfg.w(p + "bias"))


def reference_forward(g: Graph, cfg: ModelConfig, eigvec=None, task: str | None = None,
                      return_embeddings: bool = False):
    """Full-precision forward pass mirroring the engine's model definitions."""
    cfg.validate()
    task = task or cfg.task
    if g.num_nodes == 0:
        raise EmptyGraphError("graph has no nodes")
    n_real = g.num_nodes
    vn_index = None
    if cfg.kind == "GIN-VN":
        g = add_virtual_node(g)
        vn_index = n_real
    c = in_count_matrix(g)
    x = g.node_features @ cfg.w("encoder.weight").T + cfg.w("encoder.bias")
    if cfg.kind == "DGN":
        if eigvec is None:
            eigvec = laplacian_eigenvectors(g, 1, variant=cfg.laplacian)[1][:, 0]
        bdx = directional_matrix(c, np.asarray(eigvec, dtype=np.float64))
    for l in range(cfg.num_layers):
        act = cfg.layer_activation(l)
        if cfg.kind == "GCN":
            x = _gcn(x, c, cfg.w(f"layers.{l}.weight"), cfg.w(f"layers.{l}.bias"), act)
        elif cfg.kind in ("GIN", "GIN-VN"):
            x = _gin(g, x, cfg, l, act, vn_index)
        elif cfg.kind == "GAT":
            x = _gat(x, c, cfg, l, act)
        elif cfg.kind == "PNA":
            x = _pna(x, c, cfg, l)
        elif cfg.kind == "DGN":
            x = _dgn(x, c, bdx, cfg, l)
    head = cfg.head()
    out = head.forward(x[:n_real].mean(0)) if task == "graph" else head.forward(x[:n_real])
    return (out, x) if return_embeddings else out


# --------------------------------------------------------------------------
# spectral utility


def laplacian(g: Graph, variant: str = "normalized") -> np.ndarray:
    """Laplacian of the symmetrised simple graph (self-loops dropped)."""
    a = np.zeros((g.num_nodes, g.num_nodes))
    a[g.src, g.dst] = 1.0
    a = np.maximum(a, a.T)
    np.fill_diagonal(a, 0.0)
    deg = a.sum(1)
    if variant == "combinatorial":
        return np.diag(deg) - a
    if variant != "normalized":
        raise ConfigError(f"unknown Laplacian variant {variant!r}")
    inv = np.where(deg > 0, 1.0 / np.sqrt(np.where(deg > 0, deg, 1.0)), 0.0)
    return np.diag((deg > 0).astype(float)) - inv[:, None] * a * inv[None, :]


def _round_robin(m: int):
    """Yield m-1 rounds of m/2 disjoint pairs covering every pair once."""
    players = list(range(m))
    for _ in range(m - 1):
        yield [(players[k], players[m - 1 - k]) for k in range(m // 2)]
        players = [players[0], players[-1], *players[1:-1]]


def jacobi_eigh(a: np.ndarray, tol: float = 1e-10, max_sweeps: int = 60):
    """Symmetric eigendecomposition by cyclic Jacobi rotations.

    Each sweep visits every (p, q) pair once, in round-robin order so that
    the rotations of a round touch disjoint index pairs and can be applied
    together.  Stops when the off-diagonal Frobenius norm drops below
    ``tol``.  Returns ``(eigenvalues, eigenvectors)`` unsorted.
    """
    a = np.array(a, dtype=np.float64)
    n = len(a)
    v = np.eye(n)
    if n < 2:
        return np.diag(a).copy(), v
    m = n + (n % 2)
    rounds = []
    for pairs in _round_robin(m):
        pq = np.array([(min(p, q), max(p, q)) for p, q in pairs if max(p, q) < n])
        rounds.append((pq[:, 0], pq[:, 1]))

    def off_norm():
        return np.sqrt(max((a * a).sum() - (np.diag(a) ** 2).sum(), 0.0))

    for _ in range(max_sweeps):
        if off_norm() < tol:
            break
        for p, q in rounds:
            apq = a[p, q]
            active = np.abs(apq) > 1e-30
            if not active.any():
                continue
            p, q, apq = p[active], q[active], apq[active]
            theta = (a[q, q] - a[p, p]) / (2.0 * apq)
            t = np.where(theta >= 0, 1.0, -1.0) / (np.abs(theta) + np.sqrt(theta * theta + 1.0))
            c = 1.0 / np.sqrt(t * t + 1.0)
            s = t * c
            cp, cq = a[:, p].copy(), a[:, q].copy()
            a[:, p] = cp * c - cq * s
            a[:, q] = cp * s + cq * c
            rp, rq = a[p, :].copy(), a[q, :].copy()
            a[p, :] = c[:, None] * rp - s[:, None] * rq
            a[q, :] = s[:, None] * rp + c[:, None] * rq
            a[p, q] = 0.0
            a[q, p] = 0.0
            vp, vq = v[:, p].copy(), v[:, q].copy()
            v[:, p] = vp * c - vq * s
            v[:, q] = vp * s + vq * c
    return np.diag(a).copy(), v


def laplacian_eigenvectors(g: Graph, k: int = 1, variant: str = "normalized", zero_tol: float = 1e-8):
    """The ``k`` eigenpairs after the zero eigenvalues, ascending.

    Returns ``(eigenvalues[k], vectors[N, k])``; each vector's first
    component with magnitude above 1e-8 is made positive.
    """
    lap = laplacian(g, variant)
    vals, vecs = jacobi_eigh(lap)
    order = np.argsort(vals, kind="stable")
    vals, vecs = vals[order], vecs[:, order]
    keep = np.flatnonzero(vals > zero_tol)[:k]
    vals, vecs = vals[keep], vecs[:, keep].copy()
    for col in range(vecs.shape[1]):
        nz = np.flatnonzero(np.abs(vecs[:, col]) > 1e-8)
        if len(nz) and vecs[nz[0], col] < 0:
            vecs[:, col] *= -1.0
    if vecs.shape[1] < k:
        # not enough non-trivial eigenpairs (e.g. an edgeless graph)
        pad = k - vecs.shape[1]
        vals = np.concatenate([vals, np.zeros(pad)])
        vecs = np.hstack([vecs, np.zeros((g.num_nodes, pad))])
    return vals, vecs


def write_eigvecs(path, vectors) -> None:
    """One vector per line."""
    vectors = np.atleast_2d(np.asarray(vectors, dtype=np.float64))
    Path(path).write_text("".join(" ".join(repr(float(x)) for x in row) + "\n" for row in vectors))


def read_eigvecs(path) -> np.ndarray:
    rows = [ln.split() for ln in Path(path).read_text().splitlines() if ln.strip()]
    return np.array([[float(x) for x in r] for r in rows])


# --------------------------------------------------------------------------


@dataclass
class CompareReport:
    passed: bool
    max_abs_error: float
    rel_error: float
    argmax_agreement: float
    tol: float

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return (f"{status} rel_linf={self.rel_error:.6e} max_abs={self.max_abs_error:.6e} "
                f"argmax={self.argmax_agreement:.4f} tol={self.tol:.1e}")


def compare(engine_out, oracle_out, tol: float = 1e-2, scale: float | None = None) -> CompareReport:
    """Relative L-inf check: ``max|e - o| / scale`` with ``scale = max|o|`` by default.

    Passing requires the relative error within ``tol`` and full argmax
    agreement (per row for 2-D outputs).
    """
    e = np.asarray(engine_out, dtype=np.float64)
    o = np.asarray(oracle_out, dtype=np.float64)
    if e.shape != o.shape:
        raise ValueError(f"shape mismatch: engine {e.shape} vs oracle {o.shape}")
    err = float(np.abs(e - o).max()) if e.size else 0.0
    denom = float(np.abs(o).max()) if scale is None and o.size else (scale or 0.0)
    rel = err / denom if denom > 0 else (0.0 if err == 0 else np.inf)
    if e.ndim >= 2:
        agree = float(np.mean(e.argmax(-1) == o.argmax(-1))) if e.size else 1.0
    else:
        agree = float(e.argmax() == o.argmax()) if e.size else 1.0
    return CompareReport(rel <= tol and agree == 1.0, err, rel, agree, tol)
