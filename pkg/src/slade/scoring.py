"""Streaming anomaly scoring, ranking metrics, latency benchmarking,
and per-type score exports.

Scores are emitted for the SOURCE node of each edge using the state held
just before the edge is processed; the edge's update is applied afterward.
Parameters are never modified at inference time.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import MetricError, ParseError
from .memory import MemoryStore
from .stream import batch_iter
from .tensor import cosine
from .training import batch_forward, commit_batch

TYPE_TAGS = ("NORMAL", "T1", "T2", "T3")


@dataclass
class ScoreRecord:
    edge_index: int
    node: int
    time: float
    sc_c: float
    sc_g: float
    sc: float
    label: Optional[bool]


@dataclass
class MetricReport:
    auc: float
    ap: float
    n_pos: int
    n_neg: int


def contrast_score(mem):
    """Cosine distance between current and previous memory, in [0, 2]."""
    return 1.0 - cosine(mem.s, mem.s_prev)


def generation_score(s_hat, s):
    """Cosine distance between generated and current memory, in [0, 2]."""
    return 1.0 - cosine(s_hat, s)


def final_score(sc_c, sc_g):
    return (sc_c + sc_g) / 4.0


def score_source(model, store, node, t):
    """Score one node at time t from pre-edge state."""
    mem = store.get_memory(node)
    sc_c = contrast_score(mem)
    neighbors = store.recent_neighbors(node)
    s_hat = model.generate(t, neighbors, store.memory_rows, query_memory=mem.s)
    sc_g = generation_score(s_hat, mem.s)
    return sc_c, sc_g


def stream_inference(stream, model, store, batch_size=1, index_offset=0):
    """Score every edge's source pre-edge, then apply the edge's update.

    With batch_size > 1, all edges of a batch are scored against the
    batch-start state before the pooled update; this matches per-edge
    processing whenever no node repeats within a batch.
    """
    records = []
    for batch in batch_iter(stream, batch_size):
        edges = batch.edges
        for i in range(len(edges)):
            node = int(edges.src[i])
            t = float(edges.t[i])
            sc_c, sc_g = score_source(model, store, node, t)
            edge = edges.edge(i)
            records.append(ScoreRecord(
                index_offset + batch.start + i, node, t,
                sc_c, sc_g, final_score(sc_c, sc_g), edge.source_label,
            ))
        result = batch_forward(model, store, None, edges, compute_loss=False)
        commit_batch(store, result)
    return records


# ---------------------------------------------------------------------------
# metrics


def auc(scores, labels):
    """Probability a random positive outranks a random negative; ties half.

    Computed from average ranks (Mann-Whitney), which is exact: ranks are
    half-integers, so the statistic is identical to brute-force pair
    counting bit for bit.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=bool)
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise MetricError("AUC needs at least one positive and one negative")
    order = np.argsort(scores, kind="stable")
    ranks = np.empty(scores.size, dtype=np.float64)
    sorted_scores = scores[order]
    i = 0
    while i < scores.size:
        j = i
        while j + 1 < scores.size and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        ranks[order[i:j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    rank_sum = float(ranks[labels].sum())
    return (rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


def average_precision(scores, labels):
    """Mean of precision@rank over positives, descending score order.

    Ties are broken by ascending input position (stable), and the precision
    terms are accumulated sequentially in rank order so results are
    reproducible to the bit.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=bool)
    n_pos = int(labels.sum())
    if n_pos == 0:
        raise MetricError("AP needs at least one positive")
    order = np.argsort(-scores, kind="stable")
    hits = 0
    total = 0.0
    for rank, idx in enumerate(order, start=1):
        if labels[idx]:
            hits += 1
            total += hits / rank
    return total / n_pos


def metric_report(records):
    labeled = [r for r in records if r.label is not None]
    if not labeled:
        raise MetricError("no labeled records")
    scores = np.asarray([r.sc for r in labeled])
    labels = np.asarray([r.label for r in labeled], dtype=bool)
    n_pos = int(labels.sum())
    return MetricReport(
        auc=auc(scores, labels),
        ap=average_precision(scores, labels),
        n_pos=n_pos,
        n_neg=labels.size - n_pos,
    )


# ---------------------------------------------------------------------------
# latency


@dataclass
class BenchRow:
    n_edges: int
    total_s: float
    per_edge_s: float


def linear_fit_r2(x, y):
    """Coefficient of determination of the least-squares line y ~ a*x + b."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    a, b = np.polyfit(x, y, 1)
    resid = y - (a * x + b)
    ss_tot = float(((y - y.mean()) ** 2).sum())
    if ss_tot == 0.0:
        return 1.0
    return 1.0 - float((resid**2).sum()) / ss_tot


def latency_bench(stream, model, fractions, batch_size=1):
    """Time inference over growing stream prefixes from a cold store.

    Returns (rows, r2) where r2 is the linear fit of total seconds vs
    edge count.
    """
    rows = []
    for frac in fractions:
        n = int(round(float(frac) * len(stream)))
        prefix = stream.slice(0, n)
        store = MemoryStore(model.config.memory_dim, model.config.max_neighbors,
                            size_hint=stream.node_count)
        start = time.perf_counter()
        stream_inference(prefix, model, store, batch_size=batch_size)
        elapsed = time.perf_counter() - start
        rows.append(BenchRow(n, elapsed, elapsed / n if n else 0.0))
    if len(rows) >= 2:
        r2 = linear_fit_r2([r.n_edges for r in rows], [r.total_s for r in rows])
    else:
        r2 = 1.0
    return rows, r2


# ---------------------------------------------------------------------------
# serialization


def write_scores_csv(records, path):
    """Score CSV: edge_index,node,time,sc_c,sc_g,sc,label.

    Floats use shortest round-trip formatting; unknown labels are blank.
    """
    with open(path, "w", encoding="utf-8") as f:
        f.write("edge_index,node,time,sc_c,sc_g,sc,label\n")
        for r in records:
            label = "" if r.label is None else int(r.label)
            f.write(f"{r.edge_index},{r.node},{r.time!r},{r.sc_c!r},"
                    f"{r.sc_g!r},{r.sc!r},{label}\n")


def read_scores_csv(path):
    records = []
    with open(path, "r", encoding="utf-8") as f:
        header = f.readline().strip()
        if header != "edge_index,node,time,sc_c,sc_g,sc,label":
            raise ParseError(f"{path}: line 1: unexpected score header")
        for lineno, line in enumerate(f, start=2):
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != 7:
                raise ParseError(f"{path}: line {lineno}: expected 7 fields")
            try:
                records.append(ScoreRecord(
                    int(parts[0]), int(parts[1]), float(parts[2]),
                    float(parts[3]), float(parts[4]), float(parts[5]),
                    None if parts[6] == "" else bool(int(parts[6])),
                ))
            except ValueError as exc:
                raise ParseError(f"{path}: line {lineno}: {exc}") from exc
    return records


def write_metrics_json(report, path):
    payload = {"auc": report.auc, "ap": report.ap,
               "n_pos": report.n_pos, "n_neg": report.n_neg}
    with open(path, "w", encoding="utf-8") as f:
        json.dump(payload, f, sort_keys=True, indent=2)
        f.write("\n")


def write_bench_csv(rows, r2, path):
    with open(path, "w", encoding="utf-8") as f:
        f.write("n_edges,total_s,per_edge_s,fit_r2\n")
        for r in rows:
            f.write(f"{r.n_edges},{r.total_s!r},{r.per_edge_s!r},{r2!r}\n")


def type_distribution_rows(records, tags):
    """Pair each score with its anomaly-type tag via the global edge index.

    Records outside the tag table fall back to NORMAL. Returns (type, score)
    pairs and (time, score, type) rows for downstream density plots.
    """
    pairs = []
    timeline = []
    n_tags = len(tags) if tags is not None else 0
    for r in records:
        if tags is not None and 0 <= r.edge_index < n_tags:
            tag = tags[r.edge_index]
        else:
            tag = "NORMAL"
        if tag not in TYPE_TAGS:
            raise ParseError(f"unknown type tag {tag!r}")
        pairs.append((tag, r.sc))
        timeline.append((r.time, r.sc, tag))
    return pairs, timeline
