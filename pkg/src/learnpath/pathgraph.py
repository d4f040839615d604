"""Directed weighted transition graphs mined from activity sequences."""

from __future__ import annotations

import csv
import io
from collections import Counter
from dataclasses import dataclass, field
from typing import IO, Iterable, Mapping, Sequence

import numpy as np

from .errors import ParameterError


@dataclass(frozen=True)
class TransitionGraph:
    """Sparse adjacency: ``edges[(i, j)]`` counts how often activity j directly followed i.

    Node indices are dense positions into ``labels``. Zero-weight cells are
    never stored; self-loops are allowed.
    """

    labels: tuple[str, ...]
    edges: Mapping[tuple[int, int], int] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if len(set(self.labels)) != len(self.labels):
            raise ParameterError("node labels must be unique")
        if any(not lab for lab in self.labels):
            raise ParameterError("node labels must be non-empty")

    @property
    def node_count(self) -> int:
        return len(self.labels)

    @property
    def edge_count(self) -> int:
        return len(self.edges)

    @property
    def total_weight(self) -> int:
        return sum(self.edges.values())

    def labelled_edges(self) -> dict[tuple[str, str], int]:
        return {(self.labels[i], self.labels[j]): w for (i, j), w in self.edges.items()}

    def sorted_edges(self) -> list[tuple[str, str, int]]:
        """Edges as (source label, target label, weight), sorted by labels."""
        return sorted((s, t, w) for (s, t), w in self.labelled_edges().items())

    @classmethod
    def from_labelled(cls, labels: Iterable[str], edges: Mapping[tuple[str, str], int]) -> "TransitionGraph":
        labels = tuple(labels)
        index = {lab: i for i, lab in enumerate(labels)}
        return cls(labels, {(index[s], index[t]): int(w) for (s, t), w in edges.items() if w > 0})

    def write_edge_list(self, target: IO[str]) -> None:
        writer = csv.writer(target, lineterminator="\n")
        writer.writerow(["source_activity_id", "target_activity_id", "weight"])
        for s, t, w in self.sorted_edges():
            writer.writerow([s, t, w])

    def edge_list_csv(self) -> str:
        buf = io.StringIO()
        self.write_edge_list(buf)
        return buf.getvalue()


def mine_transition_graph(table, assignment=None, cluster_id: int | None = None) -> TransitionGraph:
    """Count consecutive activity pairs over the selected students.

    With ``assignment`` and ``cluster_id`` only that cluster's students are
    used. Nodes are exactly the activities occurring in the selected
    sequences, in catalog order.
    """
    entries = table.entries
    if assignment is not None:
        if len(assignment) != len(entries):
            raise ParameterError(
                f"assignment has {len(assignment)} labels but table has {len(entries)} entries"
            )
        if cluster_id is None:
            raise ParameterError("cluster_id is required when an assignment is given")
        positions: Iterable[int] = np.flatnonzero(np.asarray(assignment.labels) == cluster_id).tolist()
    elif cluster_id is not None:
        raise ParameterError("cluster_id given without an assignment")
    else:
        positions = range(len(entries))

    seen: set[int] = set()
    counts: Counter[tuple[int, int]] = Counter()
    for pos in positions:
        seq = entries[pos][1]
        seen.update(seq)
        counts.update(zip(seq, seq[1:]))

    catalog = table.catalog
    nodes = sorted(seen)
    dense = {old: new for new, old in enumerate(nodes)}
    return TransitionGraph(
        tuple(catalog[i] for i in nodes),
        {(dense[a], dense[b]): w for (a, b), w in sorted(counts.items())},
    )


def merge_graphs(graphs: Sequence[TransitionGraph]) -> TransitionGraph:
    """Edge-wise sum over shared labels; node order is first appearance across inputs."""
    labels: dict[str, None] = {}
    total: Counter[tuple[str, str]] = Counter()
    for g in graphs:
        labels.update(dict.fromkeys(g.labels))
        total.update(g.labelled_edges())
    return TransitionGraph.from_labelled(labels, total)


def _restrict(graph: TransitionGraph, kept: dict[tuple[int, int], int], drop_isolated: bool) -> TransitionGraph:
    if not drop_isolated:
        return TransitionGraph(graph.labels, kept)
    # Only nodes stranded by the filter go; nodes that never had an edge stay.
    had_edge = {i for pair in graph.edges for i in pair}
    has_edge = {i for pair in kept for i in pair}
    used = [i for i in range(graph.node_count) if i in has_edge or i not in had_edge]
    dense = {old: new for new, old in enumerate(used)}
    return TransitionGraph(
        tuple(graph.labels[i] for i in used),
        {(dense[a], dense[b]): w for (a, b), w in kept.items()},
    )


def filter_edges(graph: TransitionGraph, min_weight: int, drop_isolated: bool = True) -> TransitionGraph:
    """Keep edges with weight >= min_weight.

    With ``drop_isolated`` the nodes whose every incident edge was removed
    are dropped too and the remaining nodes re-indexed; labels are kept.
    """
    if min_weight < 1:
        raise ParameterError("min_weight must be >= 1")
    kept = {pair: w for pair, w in graph.edges.items() if w >= min_weight}
    return _restrict(graph, kept, drop_isolated)


def weight_threshold_for_share(graph: TransitionGraph, share: float) -> int:
    """Smallest absolute threshold whose surviving edges carry at least ``share`` of total weight."""
    if not 0.0 < share <= 1.0:
        raise ParameterError("share must be in (0, 1]")
    weights = sorted(graph.edges.values(), reverse=True)
    if not weights:
        return 1
    target = share * sum(weights)
    running = 0
    for w in weights:
        running += w
        if running >= target:
            return w
    return weights[-1]


def filter_edges_relative(graph: TransitionGraph, share: float, drop_isolated: bool = True) -> TransitionGraph:
    """Relative mode: keep the heaviest edges covering ``share`` of total weight (ties kept)."""
    return filter_edges(graph, weight_threshold_for_share(graph, share), drop_isolated)


def drop_self_loops(graph: TransitionGraph) -> TransitionGraph:
    return TransitionGraph(graph.labels, {(i, j): w for (i, j), w in graph.edges.items() if i != j})


@dataclass(frozen=True)
class GraphStats:
    node_count: int
    edge_count: int
    self_loop_count: int
    total_weight: int
    max_weight: int
    in_degree: np.ndarray
    out_degree: np.ndarray
    weighted_in_degree: np.ndarray
    weighted_out_degree: np.ndarray

    @property
    def edge_count_without_self_loops(self) -> int:
        return self.edge_count - self.self_loop_count

    @property
    def degree(self) -> np.ndarray:
        return self.in_degree + self.out_degree

    @property
    def weighted_degree(self) -> np.ndarray:
        return self.weighted_in_degree + self.weighted_out_degree

    def summary(self) -> dict[str, int]:
        """The node/edge counts reported per cluster."""
        return {"nodes": self.node_count, "edges": self.edge_count}

    def detail(self) -> dict[str, int]:
        return {
            "nodes": self.node_count,
            "edges": self.edge_count,
            "edges_without_self_loops": self.edge_count_without_self_loops,
            "self_loops": self.self_loop_count,
            "total_weight": self.total_weight,
            "max_weight": self.max_weight,
        }


def graph_stats(graph: TransitionGraph) -> GraphStats:
    n = graph.node_count
    in_deg = np.zeros(n, dtype=np.int64)
    out_deg = np.zeros(n, dtype=np.int64)
    w_in = np.zeros(n, dtype=np.int64)
    w_out = np.zeros(n, dtype=np.int64)
    loops = 0
    for (i, j), w in graph.edges.items():
        out_deg[i] += 1
        in_deg[j] += 1
        w_out[i] += w
        w_in[j] += w
        loops += i == j
    weights = list(graph.edges.values())
    return GraphStats(
        node_count=n,
        edge_count=len(weights),
        self_loop_count=loops,
        total_weight=sum(weights),
        max_weight=max(weights, default=0),
        in_degree=in_deg,
        out_degree=out_deg,
        weighted_in_degree=w_in,
        weighted_out_degree=w_out,
    )
