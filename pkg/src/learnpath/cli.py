"""Command-line pipeline: extract -> distances -> cluster -> stats / mine, plus synth.

Exit codes: 0 success, 1 data error, 2 configuration or usage error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Sequence

from . import __version__
from .errors import ConfigError, DataError, ParameterError
from .eventlog import IngestConfig
from .export import RenderOptions, ScaleMode
from .synth import SynthSpec, event_log_text, generate_corpus
from .workspace import StageResult, Workspace, atomic_write, load_config_file

EXIT_OK = 0
EXIT_DATA = 1
EXIT_CONFIG = 2


def _report(result: StageResult) -> None:
    state = "fresh" if result.fresh else "done"
    print(f"{result.stage}: {state} {json.dumps(result.info, sort_keys=True)}")


def _k_range(text: str) -> list[int]:
    lo, _, hi = text.partition("-")
    try:
        a, b = int(lo), int(hi or lo)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected K or KMIN-KMAX, got {text!r}") from None
    if a < 2 or b < a:
        raise argparse.ArgumentTypeError("silhouette range must satisfy 2 <= KMIN <= KMAX")
    return list(range(a, b + 1))


def cmd_extract(args: argparse.Namespace) -> int:
    raw = load_config_file(args.config)
    if args.seed is not None:
        raw = {**raw, "sample_seed": args.seed}
    if args.sample_size is not None:
        raw = {**raw, "sample_size": args.sample_size}
    config = IngestConfig.from_mapping(raw)
    log_path = Path(args.log)
    if not log_path.is_file():
        raise ConfigError(f"event log not found: {log_path}")
    with Workspace(args.workspace) as ws:
        result = ws.extract(log_path, config, force=args.force)
    _report(result)
    if result.info.get("row_errors"):
        print(f"extract: {result.info['row_errors']} malformed rows skipped (see ingest_errors.csv)", file=sys.stderr)
    return EXIT_OK


def cmd_distances(args: argparse.Namespace) -> int:
    with Workspace(args.workspace) as ws:
        _report(ws.distances(force=args.force))
    return EXIT_OK


def cmd_cluster(args: argparse.Namespace) -> int:
    with Workspace(args.workspace) as ws:
        for result in ws.cluster(args.k, args.linkage, force=args.force):
            _report(result)
    return EXIT_OK


def cmd_stats(args: argparse.Namespace) -> int:
    with Workspace(args.workspace) as ws:
        result = ws.stats(silhouette_k=args.silhouette or ())
        cluster_rows = json.loads(ws.path("cluster_stats.json").read_text())
    print("cluster  students  mean_len  sd_len")
    for row in cluster_rows:
        print(f"{row['cluster_id']:>7}  {row['student_count']:>8}  {row['mean_length']:>8.2f}  {row['sd_length']:>6.2f}")
    print("cluster  nodes  edges")
    for row in result.info["graph_stats"]:  # type: ignore[union-attr]
        print(f"{row['cluster_id']:>7}  {row['nodes']:>5}  {row['edges']:>5}")
    for row in result.info.get("silhouette", []):  # type: ignore[union-attr]
        print(f"k={row['k']}: mean silhouette {row['mean_silhouette']:.4f}")
    return EXIT_OK


def cmd_mine(args: argparse.Namespace) -> int:
    cluster: str | int = args.cluster
    if cluster not in ("all", "each"):
        try:
            cluster = int(cluster)
        except ValueError:
            raise ParameterError(f"--cluster must be an integer, 'all' or 'each', got {cluster!r}") from None
    render = RenderOptions(
        min_penwidth=args.min_penwidth,
        max_penwidth=args.max_penwidth,
        min_node_size=args.min_node_size,
        max_node_size=args.max_node_size,
        scale_mode=ScaleMode(args.scale),
        include_weights_as_labels=args.weight_labels,
    )
    formats = [f.strip() for f in args.format.split(",") if f.strip()]
    with Workspace(args.workspace) as ws:
        result = ws.mine(
            cluster=cluster,
            min_weight=args.min_weight,
            share=args.share,
            drop_isolated=args.drop_isolated,
            drop_loops=args.drop_self_loops,
            formats=formats,
            render=render,
        )
    _report(result)
    return EXIT_OK


def cmd_synth(args: argparse.Namespace) -> int:
    raw = load_config_file(args.spec)
    if args.seed is not None:
        raw = {**raw, "seed": args.seed}
    spec = SynthSpec.from_mapping(raw)
    if args.out is not None:
        out = Path(args.out)
    elif args.workspace is not None:
        out = Path(args.workspace) / "synth_events.csv"
    else:
        raise ConfigError("synth needs --out or --workspace")
    labels_path = out.with_name(out.stem + ".labels.csv")
    table, truth = generate_corpus(spec)
    atomic_write(out, event_log_text(table))
    atomic_write(labels_path, truth.to_csv(table.student_ids))
    print(f"synth: wrote {len(table)} students to {out} (labels: {labels_path})")
    return EXIT_OK


def _common_options(defaults: bool) -> argparse.ArgumentParser:
    # Subparsers reuse these with SUPPRESS so a value given before the subcommand survives.
    p = argparse.ArgumentParser(add_help=False)
    default = None if defaults else argparse.SUPPRESS
    p.add_argument("--workspace", "-w", default=default, help="workspace directory")
    p.add_argument("--threads", type=int, default=default, help="worker threads for numeric kernels")
    p.add_argument("--seed", type=int, default=default, help="override the seed from config/spec")
    p.add_argument("-v", "--verbose", action="store_true", default=False if defaults else argparse.SUPPRESS)
    return p


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="learnpath",
        description="Cluster learner activity sequences and mine transition graphs.",
        parents=[_common_options(True)],
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    common = _common_options(False)

    p = sub.add_parser("extract", parents=[common], help="event log -> per-student sequences")
    p.add_argument("log", help="delimited event log (CSV or TSV)")
    p.add_argument("--config", "-c", required=True, help="ingest config (.json or .toml)")
    p.add_argument("--sample-size", type=int, default=None, help="override sample_size from config")
    p.add_argument("--force", action="store_true", help="rerun even if outputs are fresh")
    p.set_defaults(func=cmd_extract, needs_workspace=True)

    p = sub.add_parser("distances", parents=[common], help="pairwise edit-distance matrix")
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_distances, needs_workspace=True)

    p = sub.add_parser("cluster", parents=[common], help="agglomerate and cut into k clusters")
    p.add_argument("--k", "-k", type=int, required=True, help="number of clusters")
    p.add_argument(
        "--linkage",
        default="ward_squared",
        help="ward_squared (default, alias ward), ward_raw, average, complete, single",
    )
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_cluster, needs_workspace=True)

    p = sub.add_parser("stats", parents=[common], help="per-cluster sequence and graph statistics")
    p.add_argument("--silhouette", type=_k_range, default=None, metavar="KMIN-KMAX",
                   help="also report mean silhouette for each k in the range")
    p.set_defaults(func=cmd_stats, needs_workspace=True)

    p = sub.add_parser("mine", parents=[common], help="mine, filter and export transition graphs")
    p.add_argument("--cluster", default="all", help="cluster id, 'each', or 'all' (default)")
    p.add_argument("--min-weight", type=int, default=1, help="drop edges lighter than this")
    p.add_argument("--share", type=float, default=None,
                   help="relative filter: keep heaviest edges carrying this share of total weight")
    iso = p.add_mutually_exclusive_group()
    iso.add_argument("--drop-isolated", dest="drop_isolated", action="store_true", default=True)
    iso.add_argument("--keep-isolated", dest="drop_isolated", action="store_false")
    p.add_argument("--drop-self-loops", action="store_true")
    p.add_argument("--format", default="edges,dot,graphml", help="comma list of edges, dot, graphml")
    p.add_argument("--scale", choices=[m.value for m in ScaleMode], default="linear")
    p.add_argument("--min-penwidth", type=float, default=1.0)
    p.add_argument("--max-penwidth", type=float, default=8.0)
    p.add_argument("--min-node-size", type=float, default=0.3)
    p.add_argument("--max-node-size", type=float, default=2.0)
    p.add_argument("--weight-labels", action="store_true", help="label edges with their weights")
    p.set_defaults(func=cmd_mine, needs_workspace=True)

    p = sub.add_parser("synth", parents=[common], help="generate a synthetic event log with planted groups")
    p.add_argument("spec", help="synth spec (.json or .toml)")
    p.add_argument("--out", "-o", default=None, help="event log path (labels go to <stem>.labels.csv)")
    p.set_defaults(func=cmd_synth, needs_workspace=False)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if args.needs_workspace and args.workspace is None:
        parser.error(f"{args.command} requires --workspace")
    if args.threads is not None:
        import numba

        if args.threads < 1:
            parser.error("--threads must be >= 1")
        numba.set_num_threads(min(args.threads, numba.config.NUMBA_NUM_THREADS))
    try:
        return args.func(args)
    except (ConfigError, ParameterError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
