"""Cycle-approximate model of the two-PE (node embedding / message passing) pipeline.

Three schedules are modelled over a per-node cost table:

* ``none``: NE_i then MP_i, strictly one after the other.
* ``fixed``: lock-step stages; step k runs NE_k alongside MP_{k-1} and lasts
  as long as the slower of the two.
* ``streaming``: the NE PE pushes finished nodes into a bounded FIFO and
  moves on; the MP PE pops in order.  NE stalls while the FIFO is full.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, ParameterError
from .graph import Graph, add_virtual_node

STRATEGIES = ("none", "fixed", "streaming")

# calibration of the default cost model (see README, "Pipeline simulator")
DEFAULT_ALPHA = 1.0
DEFAULT_D_HIDDEN = 100
DEFAULT_BETA = 3.6
DEFAULT_DIM = 100
DEFAULT_PARALLEL = 10
DEFAULT_FIFO_DEPTH = 10


@dataclass(frozen=True)
class CostModel:
    """Per-node cycle costs.

    NE is a transform pipelined over the hidden elements, so its cost does
    not depend on the node.  MP cost grows with the number of outgoing
    messages, each ``dim`` wide and processed ``parallel`` lanes at a time.
    """

    alpha: float = DEFAULT_ALPHA
    d_hidden: int = DEFAULT_D_HIDDEN
    beta: float = DEFAULT_BETA
    dim: int = DEFAULT_DIM
    parallel: int = DEFAULT_PARALLEL
    fifo_depth: int = DEFAULT_FIFO_DEPTH

    def __post_init__(self):
        if self.fifo_depth < 1:
            raise ConfigError("fifo_depth must be at least 1")
        if self.parallel < 1 or self.dim < 1 or self.d_hidden < 1:
            raise ConfigError("dim, d_hidden and parallel must be positive")
        if self.alpha <= 0 or self.beta < 0:
            raise ConfigError("alpha must be positive and beta non-negative")

    def ne_cost(self, degree: int = 0) -> int:
        return max(1, int(round(self.alpha * self.d_hidden)))

    def mp_cost(self, degree: int) -> int:
        return max(1, int(round(self.beta * degree * math.ceil(self.dim / self.parallel))))

    def costs(self, g: Graph) -> tuple[np.ndarray, np.ndarray]:
        deg = np.bincount(g.src, minlength=g.num_nodes)
        ne = np.array([self.ne_cost(int(d)) for d in deg], dtype=np.int64)
        mp = np.array([self.mp_cost(int(d)) for d in deg], dtype=np.int64)
        return ne, mp


@dataclass
class SimTrace:
    strategy: str
    order: list
    ne_intervals: list = field(default_factory=list)
    mp_intervals: list = field(default_factory=list)
    total_cycles: int = 0
    max_fifo_occupancy: int = 0
    step_durations: list = field(default_factory=list)

    @staticmethod
    def _busy(intervals) -> int:
        return sum(e - s for s, e, _ in intervals)

    @property
    def idle_cycles(self) -> dict:
        return {"ne": self.total_cycles - self._busy(self.ne_intervals),
                "mp": self.total_cycles - self._busy(self.mp_intervals)}

    @property
    def busy_cycles(self) -> dict:
        return {"ne": self._busy(self.ne_intervals), "mp": self._busy(self.mp_intervals)}

    def interval(self, pe: str, node: int) -> tuple[int, int]:
        for s, e, v in (self.ne_intervals if pe == "ne" else self.mp_intervals):
            if v == node:
                return s, e
        raise KeyError(node)

    def exposed_mp_cycles(self, node: int) -> int:
        """MP cycles spent on ``node`` after the NE PE has run out of work."""
        _, mp_end = self.interval("mp", node)
        ne_end = max(e for _, e, _ in self.ne_intervals)
        return max(0, mp_end - ne_end)


def _check(ne, mp):
    ne = np.asarray(ne, dtype=np.int64)
    mp = np.asarray(mp, dtype=np.int64)
    if ne.shape != mp.shape or ne.ndim != 1:
        raise ConfigError("ne and mp cost tables must be 1-D and equally long")
    if len(ne) and (ne.min() < 1 or mp.min() < 1):
        raise ConfigError("every cost must be at least one cycle")
    return ne.tolist(), mp.tolist()


def schedule(ne, mp, strategy: str, fifo_depth: int = DEFAULT_FIFO_DEPTH,
             order=None) -> SimTrace:
    """Simulate cost tables (indexed by node id) in ``order`` (default: ascending id)."""
    if strategy not in STRATEGIES:
        raise ConfigError(f"unknown strategy {strategy!r}")
    if fifo_depth < 1:
        raise ConfigError("fifo_depth must be at least 1")
    ne, mp = _check(ne, mp)
    order = list(range(len(ne))) if order is None else [int(v) for v in order]
    if sorted(order) != list(range(len(ne))):
        raise ConfigError("order must be a permutation of the node ids")
    tr = SimTrace(strategy, order)
    if strategy == "none":
        t = 0
        for v in order:
            tr.ne_intervals.append((t, t + ne[v], v))
            t += ne[v]
            tr.mp_intervals.append((t, t + mp[v], v))
            t += mp[v]
        tr.total_cycles = t
        tr.max_fifo_occupancy = 1 if order else 0
    elif strategy == "fixed":
        t = 0
        for k in range(len(order) + 1):
            a = ne[order[k]] if k < len(order) else 0
            b = mp[order[k - 1]] if k > 0 else 0
            if k < len(order):
                tr.ne_intervals.append((t, t + a, order[k]))
            if k > 0:
                tr.mp_intervals.append((t, t + b, order[k - 1]))
            tr.step_durations.append(max(a, b))
            t += max(a, b)
        tr.total_cycles = t
        tr.max_fifo_occupancy = 1 if order else 0
    else:
        _streaming(tr, ne, mp, fifo_depth)
    return tr


def _streaming(tr: SimTrace, ne, mp, depth: int) -> None:
    order = tr.order
    t_ne = 0
    mp_end = 0
    pops: list[int] = []
    pushes: list[int] = []
    for k, v in enumerate(order):
        done = t_ne + ne[v]
        tr.ne_intervals.append((t_ne, done, v))
        # a slot frees when the node `depth` places ahead leaves the FIFO
        push = max(done, pops[k - depth]) if k >= depth else done
        pushes.append(push)
        start = max(push, mp_end)
        pops.append(start)
        mp_end = start + mp[v]
        tr.mp_intervals.append((start, mp_end, v))
        t_ne = push
    tr.total_cycles = mp_end
    # occupancy: pushed, not yet popped; pops before pushes at equal times
    events = sorted([(t, 0) for t in pops] + [(t, 1) for t in pushes])
    occ = peak = 0
    for _, kind in events:
        occ += 1 if kind else -1
        peak = max(peak, occ)
    tr.max_fifo_occupancy = peak


def unbounded_streaming_total(ne, mp, order=None) -> int:
    """Closed form of the streaming makespan with an unbounded FIFO."""
    ne, mp = _check(ne, mp)
    order = list(range(len(ne))) if order is None else list(order)
    best = 0
    ready = 0
    tail = sum(mp[v] for v in order)
    for v in order:
        ready += ne[v]
        best = max(best, ready + tail)
        tail -= mp[v]
    return best


def simulate(g: Graph, cm: CostModel, strategy: str, order=None) -> SimTrace:
    ne, mp = cm.costs(g)
    return schedule(ne, mp, strategy, cm.fifo_depth, order)


def vn_order(n_total: int, vn: int, vn_position: str) -> list:
    rest = [v for v in range(n_total) if v != vn]
    if vn_position == "first":
        return [vn, *rest]
    if vn_position == "last":
        return [*rest, vn]
    raise ConfigError(f"vn_position must be 'first' or 'last', got {vn_position!r}")


def simulate_vn_overlap(g_with_vn: Graph, cm: CostModel, vn_position: str = "first",
                        strategy: str = "streaming", vn: int | None = None) -> SimTrace:
    """Simulate a virtual-node graph with the VN moved to the front or back of the order.

    The VN defaults to the highest node id, where ``add_virtual_node`` puts it.
    """
    vn = g_with_vn.num_nodes - 1 if vn is None else vn
    return simulate(g_with_vn, cm, strategy, vn_order(g_with_vn.num_nodes, vn, vn_position))


# ----------------------------------------------------------------------------
# synthetic corpus


HIGH_DEGREE_FACTOR = 4.0


def high_degree_target(avg_degree: float, pct_high: float) -> float:
    """Out-degree given to the high-degree nodes.

    Four times the mean, capped so the high nodes never need more than all
    of the edge budget (pct=1 therefore means uniform degree).
    """
    if pct_high <= 0:
        return 0.0
    return min(HIGH_DEGREE_FACTOR * avg_degree, avg_degree / pct_high)


def generate_synthetic(n: int, avg_degree: float, pct_high_degree: float, seed) -> Graph:
    """Random directed simple graph with a planted set of high out-degree nodes."""
    if n < 2:
        raise ParameterError("need at least two nodes")
    if not 0.0 <= pct_high_degree <= 1.0:
        raise ParameterError("pct_high_degree must lie in [0, 1]")
    if avg_degree < 0 or avg_degree > n - 1:
        raise ParameterError(f"average degree {avg_degree} impossible with {n} nodes")
    rng = np.random.default_rng(seed)
    total = int(round(n * avg_degree))
    k = int(round(pct_high_degree * n))
    deg = np.zeros(n, dtype=np.int64)
    high = rng.choice(n, size=k, replace=False) if k else np.zeros(0, dtype=np.int64)
    h = int(round(high_degree_target(avg_degree, pct_high_degree)))
    if h > n - 1:
        raise ParameterError(f"high-degree target {h} exceeds n-1={n - 1}")
    deg[high] = h
    remaining = total - k * h
    if remaining < 0:
        raise ParameterError("high-degree nodes exceed the edge budget")
    low = np.setdiff1d(np.arange(n), high)
    pool = low if len(low) else np.arange(n)
    deg[pool] += rng.multinomial(remaining, np.full(len(pool), 1.0 / len(pool)))
    # push overflow past n-1 onto nodes that still have room
    over = int(np.maximum(deg - (n - 1), 0).sum())
    deg = np.minimum(deg, n - 1)
    while over:
        room = np.flatnonzero(deg < n - 1)
        if not len(room):
            raise ParameterError("degree sequence does not fit")
        j = room[rng.integers(len(room))]
        deg[j] += 1
        over -= 1
    src, dst = [], []
    for i in range(n):
        if deg[i]:
            t = rng.choice(n - 1, size=int(deg[i]), replace=False)
            src.append(np.full(len(t), i))
            dst.append(t + (t >= i))
    if src:
        edges = np.stack([np.concatenate(src), np.concatenate(dst)], 1)
        edges = edges[rng.permutation(len(edges))]
    else:
        edges = np.zeros((0, 2), dtype=np.int64)
    return Graph(n, edges)


@dataclass
class CellResult:
    avg_degree: float
    pct_high: float
    graphs: int
    fixed_over_none: float
    streaming_over_fixed: float
    streaming_over_none: float
    dominance_violations: int = 0


def ratios(traces: dict) -> tuple[float, float, float]:
    n, f, s = (traces[k].total_cycles for k in STRATEGIES)
    return n / f, f / s, n / s


def speedup_report(groups: dict) -> list[CellResult]:
    """Mean speed-up ratios per ``(avg_degree, pct)`` key.

    ``groups`` maps the key to a list of ``{strategy: SimTrace}`` dicts, one
    per graph.
    """
    rows = []
    for (deg, pct), runs in sorted(groups.items()):
        r = np.array([ratios(t) for t in runs], dtype=np.float64)
        bad = sum(1 for t in runs
                  if not (t["streaming"].total_cycles <= t["fixed"].total_cycles
                          <= t["none"].total_cycles))
        rows.append(CellResult(deg, pct, len(runs), *r.mean(0).tolist(), bad))
    return rows


REPORT_COLUMNS = ("avg_degree", "pct_high", "graphs", "fixed_over_none",
                  "streaming_over_fixed", "streaming_over_none")


def format_report(rows: list[CellResult], delimiter: str = ",") -> str:
    buf = io.StringIO()
    w = csv.writer(buf, delimiter=delimiter, lineterminator="\n")
    w.writerow(REPORT_COLUMNS)
    for r in rows:
        w.writerow([f"{r.avg_degree:.2f}", f"{r.pct_high:.2f}", r.graphs,
                    f"{r.fixed_over_none:.4f}", f"{r.streaming_over_fixed:.4f}",
                    f"{r.streaming_over_none:.4f}"])
    return buf.getvalue()


@dataclass
class SweepSpec:
    degrees: tuple = (2.0, 4.0, 8.0, 16.0)
    pcts: tuple = (0.0, 0.05, 0.1, 0.2)
    graphs: int = 10_000
    n_min: int = 80
    n_max: int = 160
    seed: int = 0

    @classmethod
    def parse(cls, text: str) -> "SweepSpec":
        """``paper`` or ``key=value`` pairs separated by ``;`` (lists with ``,``)."""
        if text.strip() == "paper":
            return cls()
        kw = {}
        for part in filter(None, (p.strip() for p in text.split(";"))):
            if "=" not in part:
                raise ConfigError(f"bad sweep item {part!r}")
            key, val = (s.strip() for s in part.split("=", 1))
            if key in ("deg", "degrees"):
                kw["degrees"] = tuple(float(v) for v in val.split(","))
            elif key in ("pct", "pcts"):
                kw["pcts"] = tuple(float(v) for v in val.split(","))
            elif key in ("graphs", "n_min", "n_max", "seed"):
                kw[key] = int(val)
            else:
                raise ConfigError(f"unknown sweep key {key!r}")
        return cls(**kw)

    def cells(self):
        return [(d, p) for d in self.degrees for p in self.pcts]


def _cell_runs(args):
    spec, cm, (deg, pct), cell_index, count = args
    rng = np.random.default_rng([spec.seed, cell_index])
    runs = []
    for _ in range(count):
        n = int(rng.integers(spec.n_min, spec.n_max + 1))
        g = generate_synthetic(n, deg, pct, rng.integers(2**63))
        ne, mp = cm.costs(g)
        runs.append({s: schedule(ne, mp, s, cm.fifo_depth) for s in STRATEGIES})
    return (deg, pct), runs


def run_sweep(spec: SweepSpec, cm: CostModel | None = None, jobs: int = 1) -> list[CellResult]:
    """Simulate ``spec.graphs`` synthetic graphs spread evenly over the cells."""
    cm = cm or CostModel()
    cells = spec.cells()
    base, extra = divmod(spec.graphs, len(cells))
    work = [(spec, cm, c, i, base + (i < extra)) for i, c in enumerate(cells)]
    if jobs > 1:
        from concurrent.futures import ProcessPoolExecutor
        with ProcessPoolExecutor(jobs) as ex:
            results = list(ex.map(_cell_runs, work))
    else:
        results = [_cell_runs(w) for w in work]
    return speedup_report(dict(results))
