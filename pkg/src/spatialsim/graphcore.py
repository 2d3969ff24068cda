"""Complete directed object graphs and their batched form.

Edges are enumerated sender-major: for n nodes the k-th edge is the k-th pair
``(i, j)`` with ``i != j`` in lexicographic order.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Sequence

import numpy as np

from .geometry import Configuration


@dataclass
class Graph:
    X: np.ndarray
    E: np.ndarray
    senders: np.ndarray
    receivers: np.ndarray
    u: np.ndarray

    @property
    def n_nodes(self) -> int:
        return self.X.shape[0]

    @property
    def n_edges(self) -> int:
        return self.E.shape[0]


@dataclass
class GraphBatch:
    X: np.ndarray
    E: np.ndarray
    senders: np.ndarray
    receivers: np.ndarray
    graph_index: np.ndarray
    edge_graph: np.ndarray
    U: np.ndarray
    n_nodes: np.ndarray
    n_edges: np.ndarray

    @property
    def n_graphs(self) -> int:
        return len(self.n_nodes)


@lru_cache(maxsize=256)
def edge_template(n: int, self_loops: bool = False) -> tuple[np.ndarray, np.ndarray]:
    """Sender and receiver indices of the complete directed graph on ``n`` nodes."""
    i, j = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
    keep = np.ones((n, n), dtype=bool) if self_loops else ~np.eye(n, dtype=bool)
    s, r = i[keep], j[keep]
    s.setflags(write=False)
    r.setflags(write=False)
    return s, r


def build_graph(config: Configuration | np.ndarray, self_loops: bool = False) -> Graph:
    """Node matrix from the objects, edges ``[X_i || X_j]``, global vector = mean node."""
    X = config.features if isinstance(config, Configuration) else np.asarray(config, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] == 0:
        raise ValueError("empty configuration")
    s, r = edge_template(X.shape[0], self_loops)
    E = np.concatenate([X[s], X[r]], axis=1)
    return Graph(X.copy(), E, s.copy(), r.copy(), X.mean(axis=0))


def batch_graphs(graphs: Sequence[Graph]) -> GraphBatch:
    if not graphs:
        raise ValueError("cannot batch an empty list of graphs")
    n_nodes = np.array([g.n_nodes for g in graphs], dtype=np.int64)
    n_edges = np.array([g.n_edges for g in graphs], dtype=np.int64)
    offsets = np.concatenate([[0], np.cumsum(n_nodes)[:-1]])
    edge_off = np.repeat(offsets, n_edges)
    return GraphBatch(
        X=np.concatenate([g.X for g in graphs]),
        E=np.concatenate([g.E for g in graphs]),
        senders=np.concatenate([g.senders for g in graphs]).astype(np.int64) + edge_off,
        receivers=np.concatenate([g.receivers for g in graphs]).astype(np.int64) + edge_off,
        graph_index=np.repeat(np.arange(len(graphs)), n_nodes),
        edge_graph=np.repeat(np.arange(len(graphs)), n_edges),
        U=np.stack([g.u for g in graphs]),
        n_nodes=n_nodes,
        n_edges=n_edges,
    )


def unbatch(batch: GraphBatch) -> list[Graph]:
    node_off = np.concatenate([[0], np.cumsum(batch.n_nodes)])
    edge_off = np.concatenate([[0], np.cumsum(batch.n_edges)])
    out = []
    for g in range(batch.n_graphs):
        a, b = node_off[g], node_off[g + 1]
        c, d = edge_off[g], edge_off[g + 1]
        out.append(Graph(batch.X[a:b].copy(), batch.E[c:d].copy(),
                         batch.senders[c:d] - a, batch.receivers[c:d] - a,
                         batch.U[g].copy()))
    return out


def batch_configs(configs: Sequence[np.ndarray], self_loops: bool = False) -> GraphBatch:
    """Build the batch for a list of ``(n_i, 10)`` feature matrices in one pass.

    Equivalent to ``batch_graphs([build_graph(c) for c in configs])``; this is
    the path the training loop uses.
    """
    if not len(configs):
        raise ValueError("cannot batch an empty list of graphs")
    X = np.concatenate(configs)
    n_nodes = np.array([len(c) for c in configs], dtype=np.int64)
    offsets = np.concatenate([[0], np.cumsum(n_nodes)[:-1]])
    senders, receivers, n_edges = [], [], []
    for n, off in zip(n_nodes.tolist(), offsets.tolist()):
        s, r = edge_template(n, self_loops)
        senders.append(s + off)
        receivers.append(r + off)
        n_edges.append(len(s))
    senders = np.concatenate(senders)
    receivers = np.concatenate(receivers)
    n_edges = np.array(n_edges, dtype=np.int64)
    graph_index = np.repeat(np.arange(len(configs)), n_nodes)
    U = np.stack([np.asarray(c).mean(axis=0) for c in configs])
    return GraphBatch(
        X=X,
        E=np.concatenate([X[senders], X[receivers]], axis=1),
        senders=senders,
        receivers=receivers,
        graph_index=graph_index,
        edge_graph=np.repeat(np.arange(len(configs)), n_edges),
        U=U,
        n_nodes=n_nodes,
        n_edges=n_edges,
    )
