"""``bitgear`` command line: pretrain -> cache -> train -> eval / bench / export-scores.

Every artifact-producing command writes a JSON run manifest next to its
output (``<out>.manifest.json`` unless ``--manifest`` says otherwise).
``bitgear replay MANIFEST`` re-runs a manifest after checking its input
digests. Exit codes: 0 ok, 1 runtime failure, 2 usage or input error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import platform
import sys
import time
import warnings
from dataclasses import fields

import numpy as np
from threadpoolctl import threadpool_limits

from . import formats
from .binarization import BinarizedTable
from .config import ConfigError, TrainingConfig, config_key, load_config
from .evaluation import evaluate
from .graph import EdgeListError, load_edge_list, load_report
from .propagation import propagate
from .scoring import BinaryScorer, FullScorer, layer_weights, top_k
from .training import STREAM_BENCH, TrainingDiverged, build_teacher_cache, pretrain_teacher, rng_stream, train_student

MANIFEST_VERSION = 1
PATH_CHOICES = {"full": "full", "float": "binary_float", "bitwise": "bitwise"}


class InputError(ValueError):
    """Bad or mutually inconsistent inputs (exit code 2)."""


# ---------------------------------------------------------------------------
# helpers


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def eprint(*args) -> None:
    print(*args, file=sys.stderr, flush=True)


def _show_warning(message, category, filename, lineno, file=None, line=None):
    eprint(f"warning: {message}")


class RunManifest:
    """Config snapshot, input/output digests, timings and argv of one run."""

    def __init__(self, command: str, argv: list[str], args):
        self.data = {
            "manifest_version": MANIFEST_VERSION,
            "command": command,
            "argv": list(argv),
            "cwd": os.getcwd(),
            "threads": args.threads,
            "deterministic": args.deterministic,
            "python": platform.python_version(),
            "numpy": np.__version__,
            "config": None,
            "seed": None,
            "inputs": {},
            "outputs": {},
            "timings": {},
        }
        self._t0 = time.perf_counter()

    def set_config(self, config: TrainingConfig) -> None:
        self.data["config"] = config.as_dict()
        self.data["seed"] = config.seed

    def add_input(self, name: str, path) -> None:
        if path is not None:
            self.data["inputs"][name] = {"path": os.path.abspath(path), "sha256": sha256_file(path)}

    def add_output(self, name: str, path) -> None:
        self.data["outputs"][name] = {"path": os.path.abspath(path), "sha256": sha256_file(path)}

    def time(self, name: str, seconds: float) -> None:
        self.data["timings"][name] = round(seconds, 6)

    def write(self, path) -> None:
        self.data["timings"]["total"] = round(time.perf_counter() - self._t0, 6)
        formats.atomic_write(path, (json.dumps(self.data, indent=2) + "\n").encode("utf-8"))


def _config_from_args(args) -> TrainingConfig:
    overrides = {}
    for f in fields(TrainingConfig):
        key = config_key(f.name)
        value = getattr(args, "cfg_" + key, None)
        if value is not None:
            overrides[key] = value
    return load_config(args.config, overrides)


def _load_graph(args):
    for name in ("train", "test"):
        path = getattr(args, name, None)
        if path is not None and not os.path.isfile(path):
            raise InputError(f"{name} file not found: {path}")
    graph, split = load_edge_list(args.train, getattr(args, "test", None))
    eprint(load_report(graph, split).rstrip("\n"))
    return graph, split


def _load_teacher(path, graph, config: TrainingConfig):
    base = formats.load_checkpoint(path)
    if base.shape[0] != graph.num_nodes:
        raise InputError(f"checkpoint has {base.shape[0]} rows but the graph has {graph.num_nodes} nodes; "
                         "pass the same --train/--test files used for pretrain")
    if base.shape[1] != config.d:
        raise InputError(f"checkpoint has d={base.shape[1]} but the config says d={config.d}")
    return base


def _load_model(path, graph=None) -> BinarizedTable:
    table = formats.load_model(path)
    if graph is not None and (table.num_users, table.num_items) != (graph.num_users, graph.num_items):
        raise InputError(f"model is {table.num_users}x{table.num_items} but the graph is "
                         f"{graph.num_users}x{graph.num_items}")
    return table


def _log_epoch(rec) -> None:
    eprint(rec.line())


def _manifest_path(args, out):
    return args.manifest or f"{out}.manifest.json"


# ---------------------------------------------------------------------------
# commands


def cmd_pretrain(args, manifest: RunManifest) -> int:
    config = _config_from_args(args)
    if args.epochs is not None:
        config = config.replace(epochs_teacher=args.epochs)
    manifest.set_config(config)
    graph, _ = _load_graph(args)
    manifest.add_input("train", args.train)
    manifest.add_input("test", args.test)
    t0 = time.perf_counter()
    with threadpool_limits(1 if args.deterministic else args.threads):
        result = pretrain_teacher(graph, config, on_epoch=_log_epoch)
    manifest.time("train", time.perf_counter() - t0)
    formats.save_checkpoint(args.out, result.base)
    manifest.add_output("checkpoint", args.out)
    if args.figure:
        from .plotting import plot_history
        plot_history(result.history, args.figure, "teacher pre-training")
    manifest.write(_manifest_path(args, args.out))
    return 0


def cmd_cache(args, manifest: RunManifest) -> int:
    config = _config_from_args(args)
    manifest.set_config(config)
    graph, _ = _load_graph(args)
    base = _load_teacher(args.teacher, graph, config)
    for name in ("train", "test", "teacher"):
        manifest.add_input(name, getattr(args, name))
    t0 = time.perf_counter()
    layers = propagate(graph, base, config.L, config.norm_mode)
    w = layer_weights(config.L, config.wl_scheme)
    with threadpool_limits(args.threads):
        cache = build_teacher_cache(layers, graph.num_users, w, config.R)
    manifest.time("cache", time.perf_counter() - t0)
    formats.save_cache(args.out, cache)
    manifest.add_output("cache", args.out)
    manifest.write(_manifest_path(args, args.out))
    return 0


def cmd_train(args, manifest: RunManifest) -> int:
    config = _config_from_args(args)
    if args.epochs is not None:
        config = config.replace(epochs_student=args.epochs)
    manifest.set_config(config)
    graph, _ = _load_graph(args)
    base = _load_teacher(args.teacher, graph, config)
    cache = formats.load_cache(args.cache)
    if cache.num_layers != config.L + 1:
        raise InputError(f"cache was built with L={cache.num_layers - 1} but the config says L={config.L}")
    if cache.items.shape[0] != graph.num_users:
        raise InputError(f"cache covers {cache.items.shape[0]} users but the graph has {graph.num_users}")
    for name in ("train", "test", "teacher", "cache"):
        manifest.add_input(name, getattr(args, name))
    t0 = time.perf_counter()
    with threadpool_limits(1 if args.deterministic else args.threads):
        result = train_student(graph, base, cache, config, on_epoch=_log_epoch)
    manifest.time("train", time.perf_counter() - t0)
    formats.save_model(args.out, result.table)
    manifest.add_output("model", args.out)
    if args.figure:
        from .plotting import plot_history
        plot_history(result.history, args.figure, "binarized training")
    manifest.write(_manifest_path(args, args.out))
    return 0


def _score_source(args, graph, config):
    """Per-user scoring callable for the requested path."""
    path = PATH_CHOICES[args.path]
    if path == "full" and args.teacher:
        base = _load_teacher(args.teacher, graph, config)
        layers = propagate(graph, base, config.L, config.norm_mode)
        return FullScorer(layers, graph.num_users, layer_weights(config.L, config.wl_scheme))
    if args.model is None:
        raise InputError("--model is required (or --teacher with --path full)")
    table = _load_model(args.model, graph)
    if path == "full":
        layers = list(table.reconstruct().transpose(1, 0, 2))
        return FullScorer(layers, table.num_users, table.layer_weights)
    scorer = BinaryScorer(table, paths=[path])
    return scorer.bitwise if path == "bitwise" else scorer.binary_float


def cmd_eval(args, manifest: RunManifest) -> int:
    config = _config_from_args(args)
    manifest.set_config(config)
    graph, split = _load_graph(args)
    score = _score_source(args, graph, config)
    for name in ("train", "test", "model", "teacher"):
        manifest.add_input(name, getattr(args, name))
    report = evaluate(score, graph, split, args.K, threads=args.threads, path=PATH_CHOICES[args.path])
    manifest.time("eval", report.seconds)
    sys.stdout.write(report.to_json() + "\n" if args.json else report.to_tsv())
    if args.figure:
        from .plotting import plot_metrics
        plot_metrics(report, args.figure)
    if args.manifest:
        manifest.write(args.manifest)
    return 0


def bench_rows(table: BinarizedTable, model_bytes: int, queries: int, seed: int) -> dict:
    """Timing and size report for ``queries`` random users (empty when 0)."""
    if queries <= 0:
        return {}
    scorer = BinaryScorer(table)
    users = rng_stream(seed, STREAM_BENCH).integers(table.num_users, size=queries)
    u0 = int(users[0])
    max_diff = float(np.max(np.abs(scorer.binary_float(u0) - scorer.bitwise(u0))))  # also warms up
    timings = {}
    for name, fn in (("float", scorer.binary_float), ("bitwise", scorer.bitwise)):
        t0 = time.perf_counter()
        for u in users:
            fn(int(u))
        timings[name] = 1e3 * (time.perf_counter() - t0) / queries
    float32_bytes = table.num_nodes * table.d * 4
    L, d = table.L, table.d
    return {
        "queries": queries,
        "users": table.num_users,
        "items": table.num_items,
        "d": d,
        "L": L,
        "ms_per_query_float": timings["float"],
        "ms_per_query_bitwise": timings["bitwise"],
        "speedup": timings["float"] / timings["bitwise"],
        "max_abs_score_diff": max_diff,
        "model_bytes": model_bytes,
        "float32_bytes": float32_bytes,
        "size_ratio": model_bytes / float32_bytes,
        "expected_size_ratio": (L + 1) * (32 + d) / (32 * d),
        "compression": float32_bytes / model_bytes,
    }


def cmd_bench(args, manifest: RunManifest) -> int:
    if not os.path.isfile(args.model):
        raise InputError(f"model file not found: {args.model}")
    table = _load_model(args.model)
    manifest.add_input("model", args.model)
    with threadpool_limits(args.threads):
        rows = bench_rows(table, os.path.getsize(args.model), args.queries, args.seed)
    if args.json:
        sys.stdout.write(json.dumps(rows, indent=2) + "\n")
    else:
        out = ["metric\tvalue"]
        out += [f"{k}\t{v:.6g}" if isinstance(v, float) else f"{k}\t{v}" for k, v in rows.items()]
        sys.stdout.write("\n".join(out) + "\n")
    if args.figure and rows:
        from .plotting import plot_bench
        plot_bench(rows, args.figure)
    if args.manifest:
        manifest.write(args.manifest)
    return 0


def cmd_export_scores(args, manifest: RunManifest) -> int:
    graph, split = _load_graph(args)
    table = _load_model(args.model, graph)
    scorer = BinaryScorer(table, paths=[PATH_CHOICES[args.path]])
    score = scorer.bitwise if args.path == "bitwise" else scorer.binary_float
    if args.users:
        lookup = {uid: k for k, uid in enumerate(graph.user_ids)}
        missing = [u for u in args.users if u not in lookup]
        if missing:
            raise InputError(f"unknown user ids: {', '.join(missing)}")
        users = [lookup[u] for u in args.users]
    else:
        users = [u for u in range(graph.num_users) if graph.user_degrees[u] > 0]
    lines = ["user\trank\titem\tscore"]
    for u in users:
        s = score(u)
        exclude = np.concatenate([graph.user_neighbors(u), split.orphan_items])
        for rank, i in enumerate(top_k(s, args.K, exclude), start=1):
            lines.append(f"{graph.user_ids[u]}\t{rank}\t{graph.item_ids[i]}\t{s[i]:.9g}")
    text = "\n".join(lines) + "\n"
    if args.out:
        formats.atomic_write(args.out, text.encode("utf-8"))
    else:
        sys.stdout.write(text)
    return 0


def cmd_replay(args, manifest: RunManifest) -> int:
    with open(args.manifest_file, encoding="utf-8") as fh:
        data = json.load(fh)
    for name, rec in data["inputs"].items():
        if not os.path.isfile(rec["path"]) or sha256_file(rec["path"]) != rec["sha256"]:
            raise InputError(f"input {name!r} ({rec['path']}) is missing or changed since the run")
    os.chdir(data["cwd"])
    code = main(data["argv"])
    if code == 0 and args.check:
        for name, rec in data["outputs"].items():
            if sha256_file(rec["path"]) != rec["sha256"]:
                eprint(f"replay mismatch: {name} ({rec['path']}) differs from the recorded digest")
                return 1
        eprint("replay matches the recorded outputs")
    return code


# ---------------------------------------------------------------------------
# argument parsing


def _threads_default() -> int:
    try:
        return max(1, int(os.environ.get("BITGEAR_THREADS", "1")))
    except ValueError:
        return 1


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--threads", type=int, default=_threads_default(),
                        help="worker cap (default $BITGEAR_THREADS or 1)")
    common.add_argument("--deterministic", action="store_true",
                        help="force single-threaded numerics during training")
    common.add_argument("--manifest", help="run manifest path (default <out>.manifest.json)")

    cfg = argparse.ArgumentParser(add_help=False)
    cfg.add_argument("--config", help="key = value config file")
    for f in fields(TrainingConfig):
        key = config_key(f.name)
        cfg.add_argument("--" + key.replace("_", "-"), dest="cfg_" + key, metavar=key.upper(),
                         help=argparse.SUPPRESS if key in ("epochs_teacher", "epochs_student", "init_std") else None)

    data = argparse.ArgumentParser(add_help=False)
    data.add_argument("--train", required=True, help="training edge list")
    data.add_argument("--test", help="test edge list (same index mapping as every other stage)")

    p = argparse.ArgumentParser(prog="bitgear", description="Binarized graph collaborative filtering.")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("pretrain", parents=[common, cfg, data], help="full-precision teacher pre-training")
    s.add_argument("--out", required=True, help="teacher checkpoint (BGT1)")
    s.add_argument("--epochs", type=int, help="override epochs_teacher")
    s.add_argument("--figure", help="write a loss-curve figure")
    s.set_defaults(func=cmd_pretrain)

    s = sub.add_parser("cache", parents=[common, cfg, data], help="teacher top-R cache per user and layer")
    s.add_argument("--teacher", required=True)
    s.add_argument("--out", required=True, help="cache file (BGC1)")
    s.set_defaults(func=cmd_cache)

    s = sub.add_parser("train", parents=[common, cfg, data], help="binarized student training")
    s.add_argument("--teacher", required=True)
    s.add_argument("--cache", required=True)
    s.add_argument("--out", required=True, help="binarized model (BGR1)")
    s.add_argument("--epochs", type=int, help="override epochs_student")
    s.add_argument("--figure", help="write a loss-curve figure")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("eval", parents=[common, cfg, data], help="Recall@K / NDCG@K on the test split")
    s.add_argument("--model")
    s.add_argument("--teacher", help="with --path full, score the teacher instead of the model")
    s.add_argument("--path", choices=list(PATH_CHOICES), default="bitwise")
    s.add_argument("--K", type=int, nargs="+", default=[20])
    s.add_argument("--json", action="store_true")
    s.add_argument("--figure", help="write a metrics-vs-K figure")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("bench", parents=[common], help="float vs bitwise latency and model size")
    s.add_argument("--model", required=True)
    s.add_argument("--queries", type=int, default=1000)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--json", action="store_true")
    s.add_argument("--figure", help="write latency/size bars")
    s.set_defaults(func=cmd_bench)

    s = sub.add_parser("export-scores", parents=[common, data], help="top-K lists as TSV")
    s.add_argument("--model", required=True)
    s.add_argument("--K", type=int, default=20)
    s.add_argument("--users", nargs="+", help="original user ids (default: every training user)")
    s.add_argument("--path", choices=["float", "bitwise"], default="bitwise")
    s.add_argument("--out", help="output TSV (default stdout)")
    s.set_defaults(func=cmd_export_scores)

    s = sub.add_parser("replay", parents=[common], help="re-run a manifest after checking input digests")
    s.add_argument("manifest_file")
    s.add_argument("--check", action="store_true", help="exit 1 unless outputs match the recorded digests")
    s.set_defaults(func=cmd_replay)
    return p


def main(argv: list[str] | None = None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if args.threads < 1:
        eprint("error: --threads must be >= 1")
        return 2
    manifest = RunManifest(args.command, argv, args)
    try:
        with warnings.catch_warnings():
            warnings.showwarning = _show_warning
            return args.func(args, manifest)
    except (InputError, EdgeListError, formats.FormatError, ConfigError, FileNotFoundError,
            IsADirectoryError) as exc:
        eprint(f"error: {exc}")
        return 2
    except TrainingDiverged as exc:
        eprint(f"error: training diverged: {exc}")
        return 1
    except ValueError as exc:
        eprint(f"error: {exc}")
        return 2
    except Exception as exc:  # noqa: BLE001 - surface anything else as a runtime failure
        eprint(f"error: {type(exc).__name__}: {exc}")
        return 1


if __name__ == "__main__":
    sys.exit(main())
