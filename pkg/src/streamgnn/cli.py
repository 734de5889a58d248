"""Command-line front end.

Exit status: 0 ok, 2 usage, 3 data/config error, 4 verification failure.
Errors are reported on stderr as one JSON object.
"""
from __future__ import annotations

import argparse
import contextlib
import dataclasses
import json
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .errors import StreamGNNError
from .fixed import FORMATS, Q16_16
from .graph import coo_to_csc, coo_to_csr, read_graph, write_graph

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_VERIFY = 0, 2, 3, 4


class CliError(Exception):
    def __init__(self, message: str, code: int = EXIT_DATA, kind: str = "data_error"):
        super().__init__(message)
        self.code = code
        self.kind = kind


def _fmt_row(values) -> str:
    return " ".join(f"{float(v):.6f}" for v in np.ravel(values))


def _open_out(path):
    if path in (None, "-"):
        return contextlib.nullcontext(sys.stdout)
    return open(path, "w")


def _write_manifest(args, extra: dict) -> None:
    out = getattr(args, "output", None)
    path = args.manifest or (f"{out}.manifest.json" if out not in (None, "-") else None)
    if path is None:
        return
    manifest = {"command": args.command, "argv": args.argv, "version": __version__,
                "seed": getattr(args, "seed", None), "output": out}
    manifest.update(extra)
    manifest = json.loads(json.dumps(manifest, default=list))
    Path(path).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def _graph_files(directory) -> list[Path]:
    d = Path(directory)
    if not d.is_dir():
        raise CliError(f"{directory}: not a directory")
    files = sorted(p for p in d.iterdir() if p.is_file() and not p.name.startswith("."))
    if not files:
        raise CliError(f"{directory}: no graph files")
    return files


def _load_model(model: str, weights: str):
    from .weights import load_weights
    cfg = load_weights(weights)
    path = Path(model)
    if path.suffix == ".json" and path.is_file():
        from .weights import config_dict
        want = json.loads(path.read_text())
        have = config_dict(cfg)
        diff = sorted(k for k, v in want.items() if have.get(k) != v)
        if diff:
            raise CliError(f"config {model} disagrees with weights on {diff}", EXIT_DATA, "config_mismatch")
    elif model.upper() != cfg.kind:
        raise CliError(f"weights are for {cfg.kind}, not {model}", EXIT_DATA, "config_mismatch")
    return cfg


# ----------------------------------------------------------------------------
# subcommands


def cmd_convert(args) -> int:
    g = read_graph(args.graph)
    adj = coo_to_csr(g) if args.to == "csr" else coo_to_csc(g)
    with _open_out(args.output) as f:
        f.write(f"{args.to} {g.num_nodes} {g.num_edges}\n")
        for name in ("degree_table", "neighbor_table", "edge_index_table"):
            f.write(name.split("_")[0] + " " + " ".join(map(str, getattr(adj, name).tolist())) + "\n")
    _write_manifest(args, {"inputs": [args.graph], "format": args.to})
    return EXIT_OK


def _infer_one(task):
    from .model import run_model
    path, cfg, fmt_name, exec_path = task
    g = read_graph(path)
    t0 = time.perf_counter()
    res = run_model(g, cfg, FORMATS[fmt_name], path=exec_path)
    return path.name, res.values, time.perf_counter() - t0


def _stream(tasks, worker, jobs):
    if jobs <= 1:
        for t in tasks:
            yield worker(t)
    else:
        with ProcessPoolExecutor(jobs) as ex:
            yield from ex.map(worker, tasks)


def cmd_infer(args) -> int:
    from .kernels import compile_model
    cfg = _load_model(args.model, args.weights)
    files = _graph_files(args.graph_dir)
    compiled = compile_model(cfg, FORMATS[args.format])
    tasks = ((p, compiled, args.format, args.path) for p in files)
    lat = []
    t0 = time.perf_counter()
    with _open_out(args.output) as f:
        for name, values, dt in _stream(tasks, _infer_one, args.jobs):
            lat.append(dt)
            if values.ndim == 1:
                f.write(f"{name} {_fmt_row(values)}\n")
            else:
                for i, row in enumerate(values):
                    f.write(f"{name}:{i} {_fmt_row(row)}\n")
    wall = time.perf_counter() - t0
    _write_manifest(args, {"inputs": [args.weights, args.graph_dir], "model": cfg.kind,
                           "format": args.format, "path": args.path, "graphs": len(lat),
                           "timing": {"graphs_per_sec": len(lat) / wall if wall else 0.0,
                                      "mean_latency_s": float(np.mean(lat))}})
    return EXIT_OK


def _verify_one(task):
    from .model import run_model
    from .oracle import compare, reference_forward
    path, cfg, tol = task
    g = read_graph(path)
    res = run_model(g, cfg, Q16_16)
    ref = reference_forward(g, cfg, eigvec=res.ctx.eigvec)
    return path.name, res.values, ref, compare(res.values, ref, tol)


def cmd_verify(args) -> int:
    cfg = _load_model(args.model, args.weights)
    files = _graph_files(args.graph_dir)
    tasks = ((p, cfg, args.tol) for p in files)
    failed = 0
    engine, oracle = [], []
    with _open_out(args.output) as f:
        for name, e, o, rep in _stream(tasks, _verify_one, args.jobs):
            failed += not rep.passed
            engine.append(np.ravel(e))
            oracle.append(np.ravel(o))
            f.write(f"{name} {rep.line()}\n")
        if all(len(e) == len(engine[0]) for e in engine):
            from .oracle import compare
            total = compare(np.stack(engine), np.stack(oracle), args.tol)
            f.write(f"corpus {total.line()}\n")
            failed += not total.passed
    _write_manifest(args, {"inputs": [args.weights, args.graph_dir], "model": cfg.kind,
                           "tol": args.tol, "graphs": len(engine), "failures": failed})
    if failed:
        raise CliError(f"{failed} comparison(s) exceeded tol {args.tol}", EXIT_VERIFY, "verification_failure")
    return EXIT_OK


def cmd_simulate(args) -> int:
    from .sim import CostModel, SweepSpec, format_report, run_sweep
    spec = SweepSpec.parse(args.sweep)
    if args.seed is not None:
        spec.seed = args.seed
    cm = CostModel(alpha=args.alpha, d_hidden=args.d_hidden, beta=args.beta, dim=args.dim,
                   parallel=args.parallel, fifo_depth=args.fifo_depth)
    rows = run_sweep(spec, cm, jobs=args.jobs)
    with _open_out(args.output) as f:
        f.write(format_report(rows, args.delimiter))
    violations = sum(r.dominance_violations for r in rows)
    _write_manifest(args, {"sweep": vars(spec), "cost_model": dataclasses.asdict(cm),
                           "graphs": sum(r.graphs for r in rows), "dominance_violations": violations})
    return EXIT_OK


def cmd_bench_large(args) -> int:
    from .large import ExternalStore, degree_fetch_for_graph, run_model_out_of_core
    from .large import _graph_from_store
    cfg = _load_model(args.model, args.weights)
    store = ExternalStore.load(args.store)
    t0 = time.perf_counter()
    res = run_model_out_of_core(store, cfg, capacity=args.capacity)
    wall = time.perf_counter() - t0
    g, _ = _graph_from_store(store)
    pf = degree_fetch_for_graph(g, capacity=args.capacity)
    nopf = degree_fetch_for_graph(g, capacity=args.capacity, prefetch=False)
    with _open_out(args.output) as f:
        vals = res.values
        for i, row in enumerate(np.atleast_2d(vals)):
            f.write(f"{i} {_fmt_row(row)}\n")
    summary = res.log.summary()
    summary.update(prefetch_stall_cycles=pf.stall_cycles, no_prefetch_stall_cycles=nopf.stall_cycles,
                   capacity=args.capacity)
    print(json.dumps(summary, sort_keys=True), file=sys.stderr)
    _write_manifest(args, {"inputs": [args.store, args.weights], "model": cfg.kind,
                           "access_log": summary, "timing": {"wall_s": wall}})
    return EXIT_OK


def cmd_stage(args) -> int:
    from .fixed import Q8_8
    from .large import stage_graph
    from .weights import load_weights
    cfg = load_weights(args.weights)
    store = stage_graph(read_graph(args.graph), cfg, fmt=Q8_8)
    store.save(args.store)
    args.output = args.store
    _write_manifest(args, {"inputs": [args.graph, args.weights], "model": cfg.kind})
    return EXIT_OK


def cmd_gen_graphs(args) -> int:
    from . import fixtures
    rng = np.random.default_rng(args.seed)
    out = Path(args.directory)
    out.mkdir(parents=True, exist_ok=True)
    width = len(str(args.count - 1))
    for k in range(args.count):
        if args.kind == "molecule":
            g = fixtures.molecule_like(rng)
        elif args.kind == "random":
            n = int(rng.integers(2, args.max_nodes + 1))
            e = int(rng.integers(0, min(args.avg_degree * n, n * (n - 1)) + 1))
            g = fixtures.random_graph(rng, n, e, args.node_dim, args.edge_dim)
        else:
            g = fixtures.citation_like(args.kind, rng, args.feat_dim)
        write_graph(g, out / f"g{k:0{width}d}.{'sgb' if args.binary else 'txt'}", binary=args.binary)
    args.output = str(out)
    _write_manifest(args, {"kind": args.kind, "count": args.count})
    return EXIT_OK


def cmd_init_weights(args) -> int:
    from .kernels import ModelConfig, init_weights
    from .weights import save_weights
    overrides = {}
    for item in args.set or []:
        key, _, val = item.partition("=")
        try:
            overrides[key] = json.loads(val)
        except ValueError:
            overrides[key] = val
    cfg = ModelConfig.default(args.model, args.in_dim, args.edge_dim, **overrides)
    init_weights(cfg, np.random.default_rng(args.seed))
    save_weights(cfg, args.output)
    _write_manifest(args, {"model": cfg.kind, "overrides": overrides})
    return EXIT_OK


# ----------------------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CliError(f"{self.prog}: {message}", EXIT_USAGE, "usage_error")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="streamgnn", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, out_required=False):
        sp.add_argument("-o", "--output", required=out_required,
                        help="result file (default: stdout)" if not out_required else None)
        sp.add_argument("--manifest", help="run manifest path (default: <output>.manifest.json)")
        return sp

    sp = common(sub.add_parser("convert", help="COO graph file to CSR/CSC tables"))
    sp.add_argument("graph")
    sp.add_argument("--to", choices=("csr", "csc"), required=True)
    sp.set_defaults(func=cmd_convert)

    for name, func, hlp in (("infer", cmd_infer, "stream graphs through the engine"),
                            ("verify", cmd_verify, "compare engine against the float reference")):
        sp = common(sub.add_parser(name, help=hlp))
        sp.add_argument("model", help="model kind or JSON config file")
        sp.add_argument("weights")
        sp.add_argument("graph_dir")
        sp.add_argument("--jobs", type=int, default=1)
        if name == "infer":
            sp.add_argument("--format", choices=sorted(FORMATS), default=Q16_16.name)
            sp.add_argument("--path", choices=("merged", "gather"), default="merged")
        else:
            sp.add_argument("--tol", type=float, default=1e-2)
        sp.set_defaults(func=func)

    from .sim import (DEFAULT_ALPHA, DEFAULT_BETA, DEFAULT_D_HIDDEN, DEFAULT_DIM,
                      DEFAULT_FIFO_DEPTH, DEFAULT_PARALLEL)
    sp = common(sub.add_parser("simulate", help="synthetic pipeline-schedule sweep"))
    sp.add_argument("--sweep", required=True,
                    help="'paper' or e.g. 'deg=2,4;pct=0,0.1;graphs=800;seed=1'")
    sp.add_argument("--seed", type=int)
    sp.add_argument("--alpha", type=float, default=DEFAULT_ALPHA)
    sp.add_argument("--d-hidden", type=int, default=DEFAULT_D_HIDDEN)
    sp.add_argument("--beta", type=float, default=DEFAULT_BETA)
    sp.add_argument("--dim", type=int, default=DEFAULT_DIM)
    sp.add_argument("--parallel", type=int, default=DEFAULT_PARALLEL)
    sp.add_argument("--fifo-depth", type=int, default=DEFAULT_FIFO_DEPTH)
    sp.add_argument("--delimiter", default=",")
    sp.add_argument("--jobs", type=int, default=1)
    sp.set_defaults(func=cmd_simulate)

    sp = common(sub.add_parser("bench-large", help="out-of-core run with access-log summary"))
    sp.add_argument("store")
    sp.add_argument("model", help="model kind or JSON config file")
    sp.add_argument("--weights", required=True)
    sp.add_argument("--capacity", type=int, default=64)
    sp.set_defaults(func=cmd_bench_large)

    sp = sub.add_parser("stage", help="write a graph into an external-store file")
    sp.add_argument("graph")
    sp.add_argument("weights")
    sp.add_argument("store")
    sp.add_argument("--manifest")
    sp.set_defaults(func=cmd_stage)

    sp = sub.add_parser("gen-graphs", help="write random fixture graphs")
    sp.add_argument("kind", choices=("molecule", "random", "cora", "citeseer", "pubmed"))
    sp.add_argument("directory")
    sp.add_argument("--count", type=int, default=20)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--max-nodes", type=int, default=64)
    sp.add_argument("--avg-degree", type=int, default=8)
    sp.add_argument("--node-dim", type=int, default=9)
    sp.add_argument("--edge-dim", type=int, default=3)
    sp.add_argument("--feat-dim", type=int)
    sp.add_argument("--binary", action="store_true")
    sp.add_argument("--manifest")
    sp.set_defaults(func=cmd_gen_graphs)

    sp = sub.add_parser("init-weights", help="random weights for a model preset")
    sp.add_argument("model")
    sp.add_argument("output")
    sp.add_argument("--in-dim", type=int, required=True)
    sp.add_argument("--edge-dim", type=int, default=0)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--set", action="append", metavar="KEY=VALUE", help="config override (JSON value)")
    sp.add_argument("--manifest")
    sp.set_defaults(func=cmd_init_weights)
    return p


def _error(kind: str, message: str, code: int) -> int:
    print(json.dumps({"error": kind, "message": message, "exit_code": code}), file=sys.stderr)
    return code


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    except CliError as exc:
        return _error(exc.kind, str(exc), exc.code)
    args.argv = argv
    try:
        return args.func(args)
    except CliError as exc:
        return _error(exc.kind, str(exc), exc.code)
    except (StreamGNNError, OSError, ValueError) as exc:
        return _error(type(exc).__name__, str(exc), EXIT_DATA)


if __name__ == "__main__":
    sys.exit(main())
