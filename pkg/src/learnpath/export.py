"""DOT and GraphML serialization of transition graphs."""

from __future__ import annotations

import enum
from dataclasses import dataclass
from xml.sax.saxutils import escape, quoteattr

import numpy as np

from .errors import ParameterError
from .pathgraph import TransitionGraph, graph_stats


class ScaleMode(str, enum.Enum):
    LINEAR = "linear"
    LOG = "log"


@dataclass(frozen=True)
class RenderOptions:
    min_penwidth: float = 1.0
    max_penwidth: float = 8.0
    min_node_size: float = 0.3
    max_node_size: float = 2.0
    scale_mode: ScaleMode = ScaleMode.LINEAR
    include_weights_as_labels: bool = False

    def __post_init__(self) -> None:
        object.__setattr__(self, "scale_mode", ScaleMode(self.scale_mode))
        for name in ("min_penwidth", "max_penwidth", "min_node_size", "max_node_size"):
            if not getattr(self, name) > 0:
                raise ParameterError(f"{name} must be positive")
        if not self.min_penwidth < self.max_penwidth:
            raise ParameterError("min_penwidth must be < max_penwidth")
        if not self.min_node_size < self.max_node_size:
            raise ParameterError("min_node_size must be < max_node_size")


def scale_values(values: np.ndarray, lo: float, hi: float, mode: ScaleMode) -> np.ndarray:
    """Affine map of ``values`` onto [lo, hi]; a constant input maps to ``lo``."""
    x = np.asarray(values, dtype=np.float64)
    if mode is ScaleMode.LOG:
        x = np.log1p(x)
    if x.size == 0:
        return x
    vmin, vmax = x.min(), x.max()
    if vmax == vmin:
        return np.full_like(x, lo)
    return lo + (x - vmin) * (hi - lo) / (vmax - vmin)


def _fmt(x: float) -> str:
    text = f"{x:.4f}".rstrip("0")
    return text + "0" if text.endswith(".") else text


def _dot_id(label: str) -> str:
    return '"' + label.replace("\\", "\\\\").replace('"', '\\"').replace("\n", "\\n") + '"'


def _layout(graph: TransitionGraph, opts: RenderOptions):
    stats = graph_stats(graph)
    order = sorted(range(graph.node_count), key=lambda i: graph.labels[i])
    node_size = scale_values(stats.weighted_degree, opts.min_node_size, opts.max_node_size, opts.scale_mode)
    edges = sorted(graph.edges.items(), key=lambda kv: (graph.labels[kv[0][0]], graph.labels[kv[0][1]]))
    pen = scale_values(np.array([w for _, w in edges]), opts.min_penwidth, opts.max_penwidth, opts.scale_mode)
    return stats, order, node_size, edges, pen


def export_dot(graph: TransitionGraph, opts: RenderOptions | None = None) -> str:
    """Graphviz digraph with penwidth from edge weight and width from weighted degree."""
    opts = opts or RenderOptions()
    if graph.node_count == 0:
        return "digraph G { }\n"
    _, order, node_size, edges, pen = _layout(graph, opts)
    lines = ["digraph G {"]
    for i in order:
        lines.append(f"  {_dot_id(graph.labels[i])} [width={_fmt(node_size[i])}];")
    for ((i, j), w), pw in zip(edges, pen):
        attrs = f"penwidth={_fmt(pw)}"
        if opts.include_weights_as_labels:
            attrs += f', label="{w}"'
        lines.append(f"  {_dot_id(graph.labels[i])} -> {_dot_id(graph.labels[j])} [{attrs}];")
    lines.append("}")
    return "\n".join(lines) + "\n"


_GRAPHML_KEYS = (
    ("activity_id", "node", "string"),
    ("in_degree", "node", "long"),
    ("out_degree", "node", "long"),
    ("degree", "node", "long"),
    ("weighted_degree", "node", "long"),
    ("size", "node", "double"),
    ("weight", "edge", "long"),
    ("penwidth", "edge", "double"),
)


def export_graphml(graph: TransitionGraph, opts: RenderOptions | None = None) -> str:
    """GraphML 1.0 document; node ids are ``n<k>`` in label order."""
    opts = opts or RenderOptions()
    stats, order, node_size, edges, pen = _layout(graph, opts)
    out = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        '<graphml xmlns="http://graphml.graphdrawing.org/xmlns" '
        'xmlns:xsi="http://www.w3.org/2001/XMLSchema-instance" '
        'xsi:schemaLocation="http://graphml.graphdrawing.org/xmlns '
        'http://graphml.graphdrawing.org/xmlns/1.0/graphml.xsd">',
    ]
    for name, domain, kind in _GRAPHML_KEYS:
        out.append(f'  <key id="{name}" for="{domain}" attr.name="{name}" attr.type="{kind}"/>')
    out.append('  <graph id="G" edgedefault="directed">')
    node_id = {i: f"n{rank}" for rank, i in enumerate(order)}
    for i in order:
        out.append(f'    <node id="{node_id[i]}">')
        values = (
            ("activity_id", escape(graph.labels[i])),
            ("in_degree", int(stats.in_degree[i])),
            ("out_degree", int(stats.out_degree[i])),
            ("degree", int(stats.degree[i])),
            ("weighted_degree", int(stats.weighted_degree[i])),
            ("size", _fmt(node_size[i])),
        )
        out.extend(f'      <data key="{k}">{v}</data>' for k, v in values)
        out.append("    </node>")
    for ((i, j), w), pw in zip(edges, pen):
        out.append(f"    <edge source={quoteattr(node_id[i])} target={quoteattr(node_id[j])}>")
        out.append(f'      <data key="weight">{w}</data>')
        out.append(f'      <data key="penwidth">{_fmt(pw)}</data>')
        out.append("    </edge>")
    out.append("  </graph>")
    out.append("</graphml>")
    return "\n".join(out) + "\n"

