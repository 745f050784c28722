"""Continuous-time edge streams: columnar storage, splits, batching.

A stream is a chronologically ordered list of (source, destination,
timestamp) triples with an optional per-edge source label. Labels mark
whether the source node's dynamic state is abnormal at that instant; they
exist for evaluation only and are never read by training or scoring.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import ConfigError, StreamError

LABEL_UNKNOWN = -1
LABEL_NORMAL = 0
LABEL_ANOMALOUS = 1


@dataclass(frozen=True)
class TemporalEdge:
    source: int
    destination: int
    timestamp: float
    source_label: Optional[bool] = None


class EdgeStream:
    """Immutable columnar edge sequence. Slicing shares the arrays."""

    __slots__ = ("src", "dst", "t", "labels", "node_count")

    def __init__(self, src, dst, t, labels=None, node_count=None):
        self.src = np.ascontiguousarray(src, dtype=np.int64)
        self.dst = np.ascontiguousarray(dst, dtype=np.int64)
        self.t = np.ascontiguousarray(t, dtype=np.float64)
        n = self.src.shape[0]
        if self.dst.shape[0] != n or self.t.shape[0] != n:
            raise StreamError("column lengths differ")
        if labels is None:
            self.labels = np.full(n, LABEL_UNKNOWN, dtype=np.int8)
        else:
            self.labels = np.ascontiguousarray(labels, dtype=np.int8)
            if self.labels.shape[0] != n:
                raise StreamError("label column length differs")
        if node_count is None:
            node_count = int(max(self.src.max(), self.dst.max()) + 1) if n else 0
        self.node_count = int(node_count)

    def __len__(self):
        return self.src.shape[0]

    def edge(self, i):
        lab = self.labels[i]
        return TemporalEdge(
            int(self.src[i]),
            int(self.dst[i]),
            float(self.t[i]),
            None if lab == LABEL_UNKNOWN else bool(lab),
        )

    def slice(self, start, stop):
        out = EdgeStream.__new__(EdgeStream)
        out.src = self.src[start:stop]
        out.dst = self.dst[start:stop]
        out.t = self.t[start:stop]
        out.labels = self.labels[start:stop]
        out.node_count = self.node_count
        return out

    def __iter__(self):
        return (self.edge(i) for i in range(len(self)))


def validate(stream):
    """Check chronological order, id range, and timestamp sanity."""
    n = len(stream)
    if n == 0:
        return
    t = stream.t
    if not np.all(np.isfinite(t)):
        raise StreamError(f"non-finite timestamp at index {int(np.argmin(np.isfinite(t)))}")
    if t[0] < 0:
        raise StreamError("negative timestamp at index 0")
    bad = np.nonzero(np.diff(t) < 0)[0]
    if bad.size:
        raise StreamError(f"timestamps out of order at index {int(bad[0]) + 1}")
    for col in (stream.src, stream.dst):
        if col.min() < 0 or col.max() >= stream.node_count:
            i = int(np.argmax((col < 0) | (col >= stream.node_count)))
            raise StreamError(
                f"edge {i} references node {int(col[i])} outside "
                f"[0, {stream.node_count})"
            )


def chronological_split(stream, ratios=(0.7, 0.15, 0.15)):
    """Contiguous train/valid/test prefixes by edge count.

    Train and valid sizes floor; test takes the remainder.
    """
    r = tuple(float(x) for x in ratios)
    if len(r) != 3 or any(x <= 0 for x in r):
        raise ConfigError(f"split ratios must be three positives, got {ratios}")
    if abs(sum(r) - 1.0) > 1e-9:
        raise ConfigError(f"split ratios must sum to 1, got {sum(r)!r}")
    n = len(stream)
    n_train = int(n * r[0])
    n_valid = int(n * r[1])
    return (
        stream.slice(0, n_train),
        stream.slice(n_train, n_train + n_valid),
        stream.slice(n_train + n_valid, n),
    )


@dataclass(frozen=True)
class Batch:
    index: int
    start: int
    stop: int
    edges: EdgeStream


def batch_iter(stream, batch_size):
    """Yield contiguous fixed-size batches covering the stream in order."""
    if batch_size < 1:
        raise ConfigError(f"batch_size must be >= 1, got {batch_size}")
    n = len(stream)
    for index, start in enumerate(range(0, n, batch_size)):
        stop = min(start + batch_size, n)
        yield Batch(index, start, stop, stream.slice(start, stop))


class NodeRegistry:
    """Nodes observed so far, in first-seen order, with first-seen times."""

    def __init__(self):
        self._pos = {}
        self._ids = []
        self._first_seen = []
        self._map = np.full(64, -1, dtype=np.int64)

    def __len__(self):
        return len(self._ids)

    def __contains__(self, node):
        return node in self._pos

    def index_of(self, node):
        return self._pos[node]

    def ids(self):
        return np.asarray(self._ids, dtype=np.int64)

    def first_seen(self, node):
        return self._first_seen[self._pos[node]]

    def positions(self, nodes):
        """Vectorized registry positions; -1 for unobserved ids."""
        nodes = np.asarray(nodes, dtype=np.int64)
        out = np.full(nodes.shape, -1, dtype=np.int64)
        inside = nodes < self._map.shape[0]
        out[inside] = self._map[nodes[inside]]
        return out

    def observe(self, node, t):
        if node not in self._pos:
            pos = len(self._ids)
            self._pos[node] = pos
            self._ids.append(node)
            self._first_seen.append(t)
            if node >= self._map.shape[0]:
                grown = np.full(max(self._map.shape[0] * 2, node + 1), -1,
                                dtype=np.int64)
                grown[: self._map.shape[0]] = self._map
                self._map = grown
            self._map[node] = pos

    def observe_edges(self, edges):
        """Register both endpoints of every edge in stream order."""
        for i in range(len(edges)):
            ts = float(edges.t[i])
            self.observe(int(edges.src[i]), ts)
            self.observe(int(edges.dst[i]), ts)
