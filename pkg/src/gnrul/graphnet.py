"""Attributed graphs and GraphNet blocks without global attributes.

A full block updates every edge from its attribute and its two endpoint
nodes, aggregates the updated edges arriving at each node, then updates each
node from that aggregate and its own attribute. All per-edge and per-node
functions are evaluated row-wise on stacked attributes, so a block applies
equally to one graph or to a disjoint union of many.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .gradcore import DimensionError, Tensor, as_tensor, concat, take
from .gradcore import segment_max, segment_mean, segment_min, segment_sum


@dataclass(frozen=True)
class AttributedGraph:
    """Nodes with attributes and directed, attributed edges sender -> receiver.

    ``node_attrs`` has one row per node (trailing shape is free, e.g. a raw
    ``[C, L]`` segment before encoding); ``edge_attrs`` is ``[E, d_e]``.
    """

    node_attrs: Tensor
    edge_attrs: Tensor
    senders: np.ndarray
    receivers: np.ndarray

    def __post_init__(self):
        nodes = as_tensor(self.node_attrs)
        edges = as_tensor(self.edge_attrs)
        senders = np.asarray(self.senders, dtype=np.int64).reshape(-1)
        receivers = np.asarray(self.receivers, dtype=np.int64).reshape(-1)
        object.__setattr__(self, "node_attrs", nodes)
        object.__setattr__(self, "edge_attrs", edges)
        object.__setattr__(self, "senders", senders)
        object.__setattr__(self, "receivers", receivers)
        if nodes.ndim < 1 or nodes.shape[0] < 1:
            raise DimensionError("a graph needs at least one node")
        if edges.ndim != 2:
            raise DimensionError(f"edge attributes must be [E, d_e], got {edges.shape}")
        n_edges = edges.shape[0]
        if senders.shape[0] != n_edges or receivers.shape[0] != n_edges:
            raise DimensionError("senders/receivers must have one entry per edge")
        n = nodes.shape[0]
        if n_edges and (senders.min() < 0 or receivers.min() < 0
                        or senders.max() >= n or receivers.max() >= n):
            raise DimensionError("edge endpoint index out of range")

    @property
    def n_nodes(self):
        return self.node_attrs.shape[0]

    @property
    def n_edges(self):
        return self.edge_attrs.shape[0]

    def replace(self, node_attrs=None, edge_attrs=None):
        return AttributedGraph(
            self.node_attrs if node_attrs is None else node_attrs,
            self.edge_attrs if edge_attrs is None else edge_attrs,
            self.senders,
            self.receivers,
        )


def aggregate_mean(edge_attrs, receivers, n_nodes):
    """Per-node mean of incoming edge attributes; zero for nodes with none."""
    return segment_mean(edge_attrs, receivers, n_nodes)


def aggregate_sum(edge_attrs, receivers, n_nodes):
    return segment_sum(edge_attrs, receivers, n_nodes)


def aggregate_max(edge_attrs, receivers, n_nodes):
    return segment_max(edge_attrs, receivers, n_nodes)


def aggregate_min(edge_attrs, receivers, n_nodes):
    return segment_min(edge_attrs, receivers, n_nodes)


AGGREGATORS = {
    "mean": aggregate_mean,
    "sum": aggregate_sum,
    "max": aggregate_max,
    "min": aggregate_min,
}


@dataclass
class GNBlock:
    """Full GraphNet block.

    ``edge_fn(e, v_receiver, v_sender)`` and ``node_fn(e_bar, v)`` take stacked
    rows and return stacked rows. ``aggregation`` names one of
    :data:`AGGREGATORS` or is a callable with the same signature.
    """

    edge_fn: Callable
    node_fn: Callable
    aggregation: str | Callable = "mean"

    def aggregate(self, edge_attrs, receivers, n_nodes):
        agg = AGGREGATORS[self.aggregation] if isinstance(self.aggregation, str) else self.aggregation
        return agg(edge_attrs, receivers, n_nodes)

    def __call__(self, graph):
        return gn_block_apply(graph, self)


def gn_block_apply(graph, block):
    v = graph.node_attrs
    v_receivers = take(v, graph.receivers)
    v_senders = take(v, graph.senders)
    new_edges = as_tensor(block.edge_fn(graph.edge_attrs, v_receivers, v_senders))
    if new_edges.ndim != 2 or new_edges.shape[0] != graph.n_edges:
        raise DimensionError(f"edge function returned shape {new_edges.shape} for {graph.n_edges} edges")
    messages = block.aggregate(new_edges, graph.receivers, graph.n_nodes)
    new_nodes = as_tensor(block.node_fn(messages, v))
    if new_nodes.shape[0] != graph.n_nodes:
        raise DimensionError("node function changed the number of nodes")
    return AttributedGraph(new_nodes, new_edges, graph.senders, graph.receivers)


@dataclass
class GraphIndependent:
    """Block whose functions see only their own node or edge (no message passing)."""

    node_fn: Callable | None = None
    edge_fn: Callable | None = None

    def __call__(self, graph):
        return graph_independent_apply(graph, self.node_fn, self.edge_fn)


def graph_independent_apply(graph, node_fn=None, edge_fn=None):
    nodes = graph.node_attrs if node_fn is None else as_tensor(node_fn(graph.node_attrs))
    edges = graph.edge_attrs if edge_fn is None else as_tensor(edge_fn(graph.edge_attrs))
    if nodes.shape[0] != graph.n_nodes or edges.shape[0] != graph.n_edges:
        raise DimensionError("graph-independent functions must preserve node/edge counts")
    return AttributedGraph(nodes, edges, graph.senders, graph.receivers)


def encode_process_decode(graph, encoder, core, decoder, n_core):
    """``decoder(core^n_core(encoder(graph)))`` with one shared ``core``."""
    if n_core < 1:
        raise ValueError("n_core must be >= 1")
    out = encoder(graph)
    for _ in range(n_core):
        out = core(out)
    return decoder(out)


@dataclass(frozen=True)
class SegmentMap:
    """Offsets of each member graph inside a batched disjoint union."""

    node_offsets: np.ndarray
    edge_offsets: np.ndarray
    node_graph: np.ndarray = field(repr=False)

    @property
    def n_graphs(self):
        return len(self.node_offsets) - 1

    def node_slice(self, i):
        return slice(int(self.node_offsets[i]), int(self.node_offsets[i + 1]))

    def edge_slice(self, i):
        return slice(int(self.edge_offsets[i]), int(self.edge_offsets[i + 1]))

    def unbatch(self, graph):
        """Split a batched graph back into its members (values, not gradients)."""
        out = []
        for i in range(self.n_graphs):
            ns, es = self.node_slice(i), self.edge_slice(i)
            out.append(AttributedGraph(
                graph.node_attrs.data[ns],
                graph.edge_attrs.data[es],
                graph.senders[es] - ns.start,
                graph.receivers[es] - ns.start,
            ))
        return out


def batch_graphs(graphs):
    """Disjoint union of ``graphs`` with node indices offset per member."""
    graphs = list(graphs)
    if not graphs:
        raise ValueError("cannot batch an empty list of graphs")
    node_tail = graphs[0].node_attrs.shape[1:]
    edge_width = graphs[0].edge_attrs.shape[1]
    for g in graphs[1:]:
        if g.node_attrs.shape[1:] != node_tail or g.edge_attrs.shape[1] != edge_width:
            raise DimensionError("graphs in a batch must share attribute widths")
    n_nodes = np.array([g.n_nodes for g in graphs])
    n_edges = np.array([g.n_edges for g in graphs])
    node_offsets = np.concatenate([[0], np.cumsum(n_nodes)])
    edge_offsets = np.concatenate([[0], np.cumsum(n_edges)])
    if len(graphs) == 1:
        nodes, edges = graphs[0].node_attrs, graphs[0].edge_attrs
    else:
        nodes = concat([g.node_attrs for g in graphs], axis=0)
        edges = concat([g.edge_attrs for g in graphs], axis=0)
    senders = np.concatenate([g.senders + off for g, off in zip(graphs, node_offsets[:-1])])
    receivers = np.concatenate([g.receivers + off for g, off in zip(graphs, node_offsets[:-1])])
    node_graph = np.repeat(np.arange(len(graphs)), n_nodes)
    batched = AttributedGraph(nodes, edges, senders, receivers)
    return batched, SegmentMap(node_offsets, edge_offsets, node_graph)


def dump_graph(graph, node_times=None):
    """Plain-text listing of nodes, edges and attribute norms for debugging."""
    lines = [f"graph: {graph.n_nodes} nodes, {graph.n_edges} edges"]
    node_data = graph.node_attrs.data.reshape(graph.n_nodes, -1)
    for i in range(graph.n_nodes):
        t = "" if node_times is None else f" t={node_times[i]:g}"
        lines.append(f"  node {i}{t} |v|={np.linalg.norm(node_data[i]):.6g}")
    edge_data = graph.edge_attrs.data
    for k in range(graph.n_edges):
        s, r = graph.senders[k], graph.receivers[k]
        dt = ""
        if node_times is not None:
            dt = f" dt={node_times[r] - node_times[s]:g}"
        lines.append(f"  edge {k}: {s} -> {r}{dt} |e|={np.linalg.norm(edge_data[k]):.6g}")
    return "\n".join(lines) + "\n"
