"""On-disk pipeline workspace: stage artifacts, content-hash manifest, lock."""

from __future__ import annotations

import hashlib
import io
import json
import os
import tempfile
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from filelock import FileLock, Timeout

from . import __version__
from .errors import ConfigError, DataError, ParameterError
from .eventlog import IngestConfig, SequenceTable, build_sequence_table
from .export import RenderOptions, export_dot, export_graphml
from .hac import (
    ClusterAssignment,
    Dendrogram,
    Linkage,
    agglomerate,
    cluster_stats,
    cut_tree,
    silhouette_report,
    stats_to_json,
)
from .pathgraph import (
    TransitionGraph,
    drop_self_loops,
    filter_edges,
    graph_stats,
    mine_transition_graph,
    weight_threshold_for_share,
)
from .seqdist import CondensedDistanceMatrix, pairwise_distances


MANIFEST = "manifest.json"
SEQUENCES = "sequences.csv"
INGEST_ERRORS = "ingest_errors.csv"
DISTANCES = "distances.pmdm"
DENDROGRAM = "dendrogram.csv"
ASSIGNMENTS = "assignments.csv"
CLUSTER_STATS = "cluster_stats.json"
GRAPH_STATS = "graph_stats.json"
GRAPH_STATS_DETAIL = "graph_stats_detail.json"
SILHOUETTE = "silhouette.json"
GRAPHS_DIR = "graphs"


def sha256_bytes(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def sha256_file(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def canonical_json(obj: object) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


_UMASK = os.umask(0)
os.umask(_UMASK)


def atomic_write(path: Path, data: bytes | str) -> None:
    """Write via a temp file and rename, so an interrupted run never leaves a partial artifact."""
    if isinstance(data, str):
        data = data.encode("utf-8")
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        # mkstemp creates 0600; give artifacts ordinary umask-governed permissions.
        os.chmod(tmp, 0o666 & ~_UMASK)
        os.replace(tmp, path)
    except BaseException:
        Path(tmp).unlink(missing_ok=True)
        raise


@dataclass
class StageResult:
    stage: str
    fresh: bool
    outputs: list[str]
    info: dict[str, object]


class Workspace:
    """A directory holding every pipeline artifact plus ``manifest.json``.

    Each stage records the hashes of its inputs and outputs. A stage whose
    recorded inputs and outputs still match is skipped. Use as a context
    manager to hold the workspace lock for the duration of a command.
    """

    def __init__(self, root: str | Path):
        self.root = Path(root)
        self._lock: FileLock | None = None

    def __enter__(self) -> "Workspace":
        self.root.mkdir(parents=True, exist_ok=True)
        self._lock = FileLock(str(self.root / ".lock"))
        try:
            self._lock.acquire(timeout=0)
        except Timeout:
            raise ConfigError(f"workspace {self.root} is locked by another process") from None
        return self

    def __exit__(self, *exc: object) -> None:
        if self._lock is not None:
            self._lock.release()
            self._lock = None

    def path(self, name: str) -> Path:
        return self.root / name

    def manifest(self) -> dict:
        p = self.path(MANIFEST)
        if not p.exists():
            return {"format": 1, "version": __version__, "stages": {}}
        return json.loads(p.read_text())

    def _save_manifest(self, manifest: dict) -> None:
        manifest["version"] = __version__
        atomic_write(self.path(MANIFEST), json.dumps(manifest, indent=2, sort_keys=True) + "\n")

    def _require(self, name: str, stage: str) -> Path:
        p = self.path(name)
        if not p.exists():
            raise ConfigError(f"{name} is missing; run the '{stage}' stage first")
        return p

    def is_fresh(self, stage: str, inputs: Mapping[str, str]) -> bool:
        record = self.manifest()["stages"].get(stage)
        if record is None or record.get("inputs") != dict(inputs):
            return False
        for rel, digest in record.get("outputs", {}).items():
            p = self.path(rel)
            if not p.exists() or sha256_file(p) != digest:
                return False
        return True

    def stage_info(self, stage: str) -> dict:
        return self.manifest()["stages"].get(stage, {}).get("info", {})

    def _record(self, stage: str, inputs: Mapping[str, str], outputs: Iterable[str], info: Mapping[str, object]) -> None:
        manifest = self.manifest()
        manifest["stages"][stage] = {
            "inputs": dict(inputs),
            "outputs": {rel: sha256_file(self.path(rel)) for rel in sorted(outputs)},
            "info": dict(info),
        }
        self._save_manifest(manifest)

    # -- stages ---------------------------------------------------------------

    def extract(self, log_path: str | Path, config: IngestConfig, force: bool = False) -> StageResult:
        log_path = Path(log_path)
        inputs = {
            "event_log": sha256_file(log_path),
            "config": sha256_bytes(canonical_json(config.to_mapping()).encode()),
        }
        outputs = [SEQUENCES, INGEST_ERRORS]
        if not force and self.is_fresh("extract", inputs):
            return StageResult("extract", True, outputs, self.stage_info("extract"))
        with open(log_path, "rb") as fh:
            table, parsed = build_sequence_table(fh, config)
        atomic_write(self.path(SEQUENCES), table.to_csv())
        errors = io.StringIO()
        errors.write("line,message\n")
        for e in parsed.errors:
            errors.write(f"{e.line},{json.dumps(e.message)}\n")
        atomic_write(self.path(INGEST_ERRORS), errors.getvalue())
        info = {
            "records": len(parsed.records),
            "row_errors": parsed.error_count,
            "students": len(table),
            "activities": len(table.catalog),
        }
        self._record("extract", inputs, outputs, info)
        return StageResult("extract", False, outputs, info)

    def sequences(self) -> SequenceTable:
        with open(self._require(SEQUENCES, "extract"), newline="") as fh:
            return SequenceTable.read_csv(fh)

    def distances(self, force: bool = False) -> StageResult:
        inputs = {"sequences": sha256_file(self._require(SEQUENCES, "extract"))}
        outputs = [DISTANCES]
        if not force and self.is_fresh("distances", inputs):
            return StageResult("distances", True, outputs, self.stage_info("distances"))
        matrix = pairwise_distances(self.sequences())
        atomic_write(self.path(DISTANCES), matrix.to_bytes())
        info = {"n": matrix.n, "pairs": int(matrix.data.shape[0])}
        self._record("distances", inputs, outputs, info)
        return StageResult("distances", False, outputs, info)

    def matrix(self) -> CondensedDistanceMatrix:
        return CondensedDistanceMatrix.load(self._require(DISTANCES, "distances"))

    def cluster(self, k: int, linkage: Linkage | str = Linkage.WARD_SQUARED, force: bool = False) -> list[StageResult]:
        linkage = Linkage.parse(linkage)
        results = []
        dendro_inputs = {
            "distances": sha256_file(self._require(DISTANCES, "distances")),
            "linkage": linkage.value,
        }
        if force or not self.is_fresh("dendrogram", dendro_inputs):
            dendro = agglomerate(self.matrix(), linkage)
            atomic_write(self.path(DENDROGRAM), dendro.to_csv())
            info = {"n": dendro.n, "linkage": linkage.value}
            self._record("dendrogram", dendro_inputs, [DENDROGRAM], info)
            results.append(StageResult("dendrogram", False, [DENDROGRAM], info))
        else:
            results.append(StageResult("dendrogram", True, [DENDROGRAM], self.stage_info("dendrogram")))

        cluster_inputs = {
            "dendrogram": sha256_file(self.path(DENDROGRAM)),
            "sequences": sha256_file(self.path(SEQUENCES)),
            "k": str(k),
        }
        outputs = [ASSIGNMENTS, CLUSTER_STATS]
        if not force and self.is_fresh("cluster", cluster_inputs):
            results.append(StageResult("cluster", True, outputs, self.stage_info("cluster")))
            return results
        with open(self.path(DENDROGRAM), newline="") as fh:
            dendro = Dendrogram.read_csv(fh)
        table = self.sequences()
        if dendro.n != len(table):
            raise DataError("dendrogram size does not match the sequences file; rerun distances")
        assign = cut_tree(dendro, k)
        rows = cluster_stats(assign, table)
        atomic_write(self.path(ASSIGNMENTS), assign.to_csv(table.student_ids))
        atomic_write(self.path(CLUSTER_STATS), stats_to_json(rows))
        info = {"k": k, "sizes": [r.student_count for r in rows]}
        self._record("cluster", cluster_inputs, outputs, info)
        results.append(StageResult("cluster", False, outputs, info))
        return results

    def assignment(self, table: SequenceTable | None = None) -> ClusterAssignment:
        with open(self._require(ASSIGNMENTS, "cluster"), newline="") as fh:
            ids, assign = ClusterAssignment.read_csv(fh)
        if table is not None and ids != table.student_ids:
            raise DataError("assignments do not match the sequences file; rerun cluster")
        return assign

    def stats(self, silhouette_k: Sequence[int] = ()) -> StageResult:
        """Per-cluster graph size rows, plus an optional silhouette diagnostic."""
        table = self.sequences()
        assign = self.assignment(table)
        summary, detail = [], []
        selections: list[tuple[str | int, TransitionGraph]] = [
            (c, mine_transition_graph(table, assign, c)) for c in range(assign.k)
        ]
        selections.append(("all", mine_transition_graph(table)))
        for cid, graph in selections:
            gs = graph_stats(graph)
            summary.append({"cluster_id": cid, **gs.summary()})
            detail.append({"cluster_id": cid, **gs.detail()})
        atomic_write(self.path(GRAPH_STATS), json.dumps(summary, indent=2) + "\n")
        atomic_write(self.path(GRAPH_STATS_DETAIL), json.dumps(detail, indent=2) + "\n")
        outputs = [GRAPH_STATS, GRAPH_STATS_DETAIL]
        info: dict[str, object] = {"graph_stats": summary}
        if silhouette_k:
            with open(self._require(DENDROGRAM, "cluster"), newline="") as fh:
                dendro = Dendrogram.read_csv(fh)
            report = silhouette_report(self.matrix(), dendro, silhouette_k)
            rows = [{"k": k, "mean_silhouette": v} for k, v in report.items()]
            atomic_write(self.path(SILHOUETTE), json.dumps(rows, indent=2) + "\n")
            outputs.append(SILHOUETTE)
            info["silhouette"] = rows
        return StageResult("stats", False, outputs, info)

    def mine(
        self,
        cluster: str | int = "all",
        min_weight: int = 1,
        share: float | None = None,
        drop_isolated: bool = True,
        drop_loops: bool = False,
        formats: Sequence[str] = ("edges", "dot", "graphml"),
        render: RenderOptions | None = None,
    ) -> StageResult:
        """Mine, filter and export graphs for one cluster, every cluster ("each"), or everyone ("all")."""
        bad = set(formats) - {"edges", "dot", "graphml"}
        if bad:
            raise ParameterError(f"unknown export formats: {', '.join(sorted(bad))}")
        if min_weight < 1:
            raise ParameterError("min_weight must be >= 1")
        table = self.sequences()
        render = render or RenderOptions()
        if cluster == "all":
            targets: list[tuple[str, TransitionGraph]] = [("all", mine_transition_graph(table))]
        else:
            assign = self.assignment(table)
            ids = range(assign.k) if cluster == "each" else [int(cluster)]
            for c in ids:
                if not 0 <= c < assign.k:
                    raise ParameterError(f"cluster id {c} outside 0..{assign.k - 1}")
            targets = [(f"cluster_{c}", mine_transition_graph(table, assign, c)) for c in ids]

        outputs, info = [], {}
        for name, graph in targets:
            if drop_loops:
                graph = drop_self_loops(graph)
            threshold = weight_threshold_for_share(graph, share) if share is not None else min_weight
            filtered = filter_edges(graph, threshold, drop_isolated)
            writers = {
                "edges": (f"{name}.edges.csv", filtered.edge_list_csv),
                "dot": (f"{name}.dot", lambda g=filtered: export_dot(g, render)),
                "graphml": (f"{name}.graphml", lambda g=filtered: export_graphml(g, render)),
            }
            for fmt in formats:
                fname, produce = writers[fmt]
                rel = f"{GRAPHS_DIR}/{fname}"
                atomic_write(self.path(rel), produce())
                outputs.append(rel)
            gs = graph_stats(filtered)
            info[name] = {"min_weight": threshold, **gs.detail(), "unfiltered_total_weight": graph.total_weight}
        return StageResult("mine", False, outputs, info)


def load_config_file(path: str | Path) -> dict:
    """Read a JSON or TOML config file (chosen by extension)."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    text = path.read_bytes()
    try:
        if path.suffix.lower() == ".toml":
            try:
                import tomllib
            except ModuleNotFoundError:  # Python < 3.11
                import tomli as tomllib
            return tomllib.loads(text.decode("utf-8"))
        return json.loads(text)
    except ValueError as exc:
        raise ConfigError(f"cannot parse config {path}: {exc}") from exc

