"""Per-node mutable state: memory vectors, last-interaction times,
recent-neighbor rings, and the per-batch raw-message staging area.

All arrays grow on demand; nodes are dense non-negative integers. A node
that was never updated reads back as zero memory with no last-interaction
time, which makes the first interaction's time gap zero by convention.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import DimensionError


@dataclass
class NodeMemory:
    s: np.ndarray
    s_prev: np.ndarray
    last_time: Optional[float]


class MemoryStore:
    def __init__(self, dim, k, size_hint=0):
        if dim < 1 or k < 1:
            raise ValueError("dim and k must be positive")
        self.dim = int(dim)
        self.k = int(k)
        self._cap = 0
        self._s = np.zeros((0, dim))
        self._s_prev = np.zeros((0, dim))
        self._last_time = np.zeros(0)
        self._has_time = np.zeros(0, dtype=bool)
        self._nbrs = []
        self._stage = {}
        if size_hint:
            self._ensure(size_hint - 1)

    def _ensure(self, node):
        if node < self._cap:
            return
        new_cap = max(self._cap * 2, node + 1, 64)
        grow = new_cap - self._cap
        self._s = np.vstack([self._s, np.zeros((grow, self.dim))])
        self._s_prev = np.vstack([self._s_prev, np.zeros((grow, self.dim))])
        self._last_time = np.concatenate([self._last_time, np.zeros(grow)])
        self._has_time = np.concatenate([self._has_time, np.zeros(grow, dtype=bool)])
        self._nbrs.extend(deque(maxlen=self.k) for _ in range(grow))
        self._cap = new_cap

    # -- memory vectors ------------------------------------------------

    def get_memory(self, node):
        """Copy of the node's state; zeros for never-updated nodes."""
        if node >= self._cap:
            return NodeMemory(np.zeros(self.dim), np.zeros(self.dim), None)
        last = float(self._last_time[node]) if self._has_time[node] else None
        return NodeMemory(self._s[node].copy(), self._s_prev[node].copy(), last)

    def memory_rows(self, nodes):
        """Current memories as a (len(nodes), dim) matrix; zeros for unseen."""
        nodes = np.asarray(nodes, dtype=np.intp)
        out = np.zeros((nodes.shape[0], self.dim))
        if nodes.size:
            inside = nodes < self._cap
            out[inside] = self._s[nodes[inside]]
        return out

    def prev_memory_rows(self, nodes):
        nodes = np.asarray(nodes, dtype=np.intp)
        out = np.zeros((nodes.shape[0], self.dim))
        if nodes.size:
            inside = nodes < self._cap
            out[inside] = self._s_prev[nodes[inside]]
        return out

    def time_gaps(self, nodes, ts):
        """Gap between ts and each node's last interaction (0 if unseen)."""
        nodes = np.asarray(nodes, dtype=np.intp)
        ts = np.asarray(ts, dtype=np.float64)
        out = np.zeros(nodes.shape[0])
        if nodes.size:
            inside = nodes < self._cap
            idx = nodes[inside]
            seen = self._has_time[idx]
            gaps = np.where(seen, ts[inside] - self._last_time[idx], 0.0)
            out[inside] = gaps
        return out

    def apply_updates(self, nodes, new_s, ts):
        """Commit one pooled update per node: s_prev <- s, s <- new row."""
        nodes = np.asarray(nodes, dtype=np.intp)
        if nodes.size == 0:
            return
        if np.unique(nodes).size != nodes.size:
            raise ValueError("apply_updates: duplicate node in one batch update")
        self._ensure(int(nodes.max()))
        self._s_prev[nodes] = self._s[nodes]
        self._s[nodes] = new_s
        self._last_time[nodes] = ts
        self._has_time[nodes] = True

    # -- raw-message staging -------------------------------------------

    def stage_raw_message(self, node, r):
        r = np.asarray(r, dtype=np.float64)
        if r.ndim != 1:
            raise DimensionError("raw message must be a vector")
        bucket = self._stage.get(node)
        if bucket is None:
            self._stage[node] = [r]
        else:
            if r.shape != bucket[0].shape:
                raise DimensionError(
                    f"raw message dim {r.shape[0]} != staged {bucket[0].shape[0]}"
                )
            bucket.append(r)

    def flush_stage(self):
        """Mean-pool each node's staged messages; clears the stage.

        Returns a dict keyed by node in first-staged order.
        """
        pooled = {}
        for node, rows in self._stage.items():
            if len(rows) == 1:
                pooled[node] = rows[0]
            else:
                pooled[node] = np.mean(rows, axis=0)
        self._stage = {}
        return pooled

    # -- neighbor rings -------------------------------------------------

    def record_neighbor(self, node, neighbor, t):
        self._ensure(max(node, neighbor))
        self._nbrs[node].append((neighbor, t))

    def recent_neighbors(self, node):
        """Buffer contents, newest first."""
        if node >= self._cap:
            return []
        return list(reversed(self._nbrs[node]))

    def neighbors_chronological(self, node):
        """Buffer contents in insertion order (oldest first)."""
        if node >= self._cap:
            return []
        return list(self._nbrs[node])

    # -- lifecycle --------------------------------------------------------

    def reset_all(self):
        self._s[...] = 0.0
        self._s_prev[...] = 0.0
        self._last_time[...] = 0.0
        self._has_time[...] = False
        for ring in self._nbrs:
            ring.clear()
        self._stage = {}

    # -- checkpoint support ----------------------------------------------

    def state_arrays(self):
        """Flat-array snapshot of all mutable state (for checkpoints)."""
        seen = np.nonzero(self._has_time)[0].astype(np.int64)
        flat_nbr = []
        flat_t = []
        counts = []
        active = [n for n in range(self._cap) if self._nbrs[n]]
        ids = np.asarray(active, dtype=np.int64)
        for n in active:
            ring = self._nbrs[n]
            counts.append(len(ring))
            for nbr, t in ring:
                flat_nbr.append(nbr)
                flat_t.append(t)
        return {
            "seen_ids": seen,
            "s": self._s[seen].copy(),
            "s_prev": self._s_prev[seen].copy(),
            "last_time": self._last_time[seen].copy(),
            "ring_ids": ids,
            "ring_counts": np.asarray(counts, dtype=np.int64),
            "ring_neighbors": np.asarray(flat_nbr, dtype=np.int64),
            "ring_times": np.asarray(flat_t, dtype=np.float64),
        }

    def load_state_arrays(self, state):
        self.reset_all()
        seen = np.asarray(state["seen_ids"], dtype=np.intp)
        if seen.size:
            self._ensure(int(seen.max()))
            self._s[seen] = state["s"]
            self._s_prev[seen] = state["s_prev"]
            self._last_time[seen] = state["last_time"]
            self._has_time[seen] = True
        ids = np.asarray(state["ring_ids"], dtype=np.intp)
        counts = np.asarray(state["ring_counts"], dtype=np.intp)
        nbrs = np.asarray(state["ring_neighbors"], dtype=np.int64)
        times = np.asarray(state["ring_times"], dtype=np.float64)
        pos = 0
        for node, count in zip(ids, counts):
            self._ensure(int(node))
            for j in range(pos, pos + count):
                self._nbrs[node].append((int(nbrs[j]), float(times[j])))
            pos += count
