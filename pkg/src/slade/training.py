"""Self-supervised objectives and the batched training loop.

Each batch: raw messages are built from the batch-start memory snapshot,
pooled, and applied as one update per touched node; neighbor rings advance
edge by edge; a memory is generated for every edge endpoint; and two
softmax-contrast losses (pattern-change and generation) are averaged over
the batch. Backpropagation is truncated at batch boundaries: memories
entering the batch are constants.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import tensor as T
from .errors import TrainingError
from .memory import MemoryStore
from .stream import NodeRegistry, batch_iter


@dataclass
class LossWeights:
    contrast_src: float = 1.0
    contrast_dst: float = 1.0
    gen_src: float = 0.1
    gen_dst: float = 0.1

    def __post_init__(self):
        if min(self.contrast_src, self.contrast_dst, self.gen_src, self.gen_dst) < 0:
            raise ValueError("loss weights must be nonnegative")


@dataclass
class TrainConfig:
    batch_size: int = 100
    learning_rate: float = 3e-6
    weight_decay: float = 1e-4
    epochs: int = 10
    negatives: Optional[int] = None  # None: denominator over the full registry
    exclude_self: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.negatives is not None and self.negatives < 1:
            raise ValueError("negatives must be >= 1 when sampled")


@dataclass
class BatchLossRecord:
    epoch: int
    batch: int
    contrast: float
    generation: float
    total: float


@dataclass
class BatchResult:
    touched: np.ndarray
    s_new: T.Tensor
    commit_times: np.ndarray
    neighbor_records: list
    total: Optional[T.Tensor] = None
    contrast: Optional[T.Tensor] = None
    generation: Optional[T.Tensor] = None


def _normalized_np(rows):
    norms = np.linalg.norm(rows, axis=1)
    safe = norms >= T.COSINE_EPS
    inv = np.where(safe, 1.0 / np.where(safe, norms, 1.0), 0.0)
    return rows * inv[:, None]


def temporal_contrast_loss(current, previous, negatives):
    """Softmax contrast of a node against the registry.

    -log( exp(sim(current, previous)) / sum_k exp(sim(current, k-th row)) ).
    The denominator runs over every row of ``negatives`` (the registry),
    which by convention includes the node itself.
    """
    negatives = T.constant(negatives)
    if negatives.data.ndim != 2 or negatives.data.shape[0] == 0:
        raise TrainingError("empty negative set")
    cur_hat = T.normalize_rows(current)
    sims = T.matmul(T.normalize_rows(negatives), cur_hat)
    return T.sub(T.logsumexp(sims), T.cosine_sim(current, previous))


def generation_loss(generated, target, negatives):
    """Same contrast form with the generated memory as the anchor."""
    negatives = T.constant(negatives)
    if negatives.data.ndim != 2 or negatives.data.shape[0] == 0:
        raise TrainingError("empty negative set")
    gen_hat = T.normalize_rows(generated)
    sims = T.matmul(T.normalize_rows(negatives), gen_hat)
    return T.sub(T.logsumexp(sims), T.cosine_sim(generated, target))


def batch_forward(model, store, registry, edges, *, weights=None, training=False,
                  rng=None, compute_loss=True, negatives=None, exclude_self=False):
    """Forward pass for one batch. Reads the store, never writes it.

    Returns a BatchResult whose ``s_new``/``neighbor_records`` fields carry
    everything ``commit_batch`` needs. When ``compute_loss`` is set, the
    result also carries the scalar loss tensors, and ``registry`` must
    already include this batch's endpoints.
    """
    n_edges = len(edges)
    src, dst, ts = edges.src, edges.dst, edges.t
    k = model.config.max_neighbors

    # raw messages from the batch-start snapshot, staged then mean-pooled
    raw_src = model.build_raw_messages(store.memory_rows(dst), store.time_gaps(src, ts))
    raw_dst = model.build_raw_messages(store.memory_rows(src), store.time_gaps(dst, ts))
    for i in range(n_edges):
        store.stage_raw_message(int(src[i]), raw_src[i])
        store.stage_raw_message(int(dst[i]), raw_dst[i])
    pooled = store.flush_stage()
    touched = np.fromiter(pooled.keys(), dtype=np.int64, count=len(pooled))
    raw_pooled = np.vstack(list(pooled.values()))

    messages = model.message_rows(raw_pooled)
    s_old = store.memory_rows(touched)
    s_new = model.update_rows(messages, T.constant(s_old))

    last_t = {}
    for i in range(n_edges):
        last_t[int(src[i])] = float(ts[i])
        last_t[int(dst[i])] = float(ts[i])
    commit_times = np.asarray([last_t[int(n)] for n in touched])

    # advance neighbor rings edge by edge (on scratch copies), capturing each
    # endpoint's ring right after its own edge so time gaps stay nonnegative
    rings = {}

    def ring(node):
        r = rings.get(node)
        if r is None:
            r = store.neighbors_chronological(node)
            rings[node] = r
        return r

    cap_src = [None] * n_edges
    cap_dst = [None] * n_edges
    records = []
    for i in range(n_edges):
        a, b, t = int(src[i]), int(dst[i]), float(ts[i])
        ring(a).append((b, t))
        records.append((a, b, t))
        ring(b).append((a, t))
        records.append((b, a, t))
        cap_src[i] = ring(a)[-k:]
        cap_dst[i] = ring(b)[-k:]

    result = BatchResult(touched, s_new, commit_times, records)
    if not compute_loss:
        return result

    weights = weights or LossWeights()
    reg_ids = registry.ids()
    n_reg = reg_ids.shape[0]
    if n_reg == 0:
        raise TrainingError("empty node registry")

    # registry memory matrix at t+: batch-start rows with updates scattered in
    base = store.memory_rows(reg_ids)
    scatter_idx = registry.positions(touched)
    s_all = T.scatter_rows(T.constant(base), scatter_idx, s_new)
    u_all = T.normalize_rows(s_all)

    if negatives is not None and negatives < n_reg:
        neg_idx = np.sort(rng.choice(n_reg, size=negatives, replace=False))
        u_neg = T.gather_rows(u_all, neg_idx)
    else:
        neg_idx = None
        u_neg = u_all
    u_neg_t = T.transpose(u_neg)

    touched_row = {int(n): i for i, n in enumerate(touched)}
    anchor_src = np.asarray([touched_row[int(n)] for n in src], dtype=np.int64)
    anchor_dst = np.asarray([touched_row[int(n)] for n in dst], dtype=np.int64)
    prev_hat = _normalized_np(s_old)

    def self_mask(nodes):
        cols = registry.positions(nodes)
        if neg_idx is not None:
            mask = np.where(neg_idx[None, :] == cols[:, None], -1e30, 0.0)
        else:
            mask = np.zeros((nodes.shape[0], n_reg))
            mask[np.arange(nodes.shape[0]), cols] = -1e30
        return mask

    def contrast_side(anchor_rows, nodes):
        a_hat = T.normalize_rows(T.gather_rows(s_new, anchor_rows))
        sims = T.matmul(a_hat, u_neg_t)
        if exclude_self:
            sims = T.add(sims, T.constant(self_mask(nodes)))
        lse = T.logsumexp_rows(sims)
        pos = T.rowwise_dot(a_hat, T.constant(prev_hat[anchor_rows]))
        return T.sub(lse, pos)

    def generation_side(captures, anchor_rows, nodes):
        k_pad = max(len(c) for c in captures)
        ids = np.zeros((n_edges, k_pad), dtype=np.int64)
        gaps = np.zeros((n_edges, k_pad))
        mask = np.full((n_edges, k_pad), -1e30)
        for i, cap in enumerate(captures):
            for j, (nb, tt) in enumerate(cap):
                ids[i, j] = nb
                gaps[i, j] = ts[i] - tt
                mask[i, j] = 0.0
        pos = registry.positions(ids.reshape(-1))
        valid = mask.reshape(-1) == 0.0
        if np.any(pos[valid] < 0):
            raise TrainingError("ring neighbor missing from node registry")
        # padded slots are masked out; gather row 0 to keep indices in range
        nbr_mem = T.gather_rows(s_all, np.where(valid, pos, 0))
        kwargs = {}
        if model.config.generator == "gat":
            kwargs["query_memories"] = T.gather_rows(s_new, anchor_rows)
        else:
            kwargs["nbr_time_enc"] = model.time_enc(gaps.reshape(-1))
        generated = model.generate_batch(k_pad, nbr_mem, mask, training=training,
                                         rng=rng, **kwargs)
        g_hat = T.normalize_rows(generated)
        sims = T.matmul(g_hat, u_neg_t)
        if exclude_self:
            sims = T.add(sims, T.constant(self_mask(nodes)))
        lse = T.logsumexp_rows(sims)
        target_hat = T.normalize_rows(T.gather_rows(s_new, anchor_rows))
        pos = T.rowwise_dot(g_hat, target_hat)
        return T.sub(lse, pos)

    l_contrast = T.add(
        T.scale(T.mean_all(contrast_side(anchor_src, src)), weights.contrast_src),
        T.scale(T.mean_all(contrast_side(anchor_dst, dst)), weights.contrast_dst),
    )
    l_generation = T.add(
        T.scale(T.mean_all(generation_side(cap_src, anchor_src, src)), weights.gen_src),
        T.scale(T.mean_all(generation_side(cap_dst, anchor_dst, dst)), weights.gen_dst),
    )
    result.contrast = l_contrast
    result.generation = l_generation
    result.total = T.add(l_contrast, l_generation)
    return result


def commit_batch(store, result):
    """Apply the batch's memory updates and neighbor records to the store."""
    store.apply_updates(result.touched, result.s_new.data, result.commit_times)
    for node, neighbor, t in result.neighbor_records:
        store.record_neighbor(node, neighbor, t)


def advance_stream(model, store, stream, batch_size=1):
    """Update memories/rings over a stream without computing losses."""
    for batch in batch_iter(stream, batch_size):
        result = batch_forward(model, store, None, batch.edges, compute_loss=False)
        commit_batch(store, result)


def train(stream, model, config=None, weights=None):
    """Train in place over the stream; returns per-batch loss records.

    Memories and the node registry are rebuilt from zero at each epoch.
    """
    config = config or TrainConfig()
    weights = weights or LossWeights()
    rng = np.random.default_rng(config.seed)
    params = model.params.all()
    history = []
    for epoch in range(config.epochs):
        store = MemoryStore(model.config.memory_dim, model.config.max_neighbors,
                            size_hint=stream.node_count)
        registry = NodeRegistry()
        for batch in batch_iter(stream, config.batch_size):
            registry.observe_edges(batch.edges)
            with T.Tape() as tape:
                result = batch_forward(
                    model, store, registry, batch.edges, weights=weights,
                    training=True, rng=rng, negatives=config.negatives,
                    exclude_self=config.exclude_self,
                )
                total = result.total.item()
                if not np.isfinite(total):
                    raise TrainingError(
                        f"non-finite loss at epoch {epoch} batch {batch.index}"
                    )
                tape.backward(result.total)
            T.adam_step(params, config.learning_rate, config.weight_decay)
            commit_batch(store, result)
            history.append(BatchLossRecord(
                epoch, batch.index, result.contrast.item(),
                result.generation.item(), total,
            ))
    return history


def write_loss_history(history, path):
    """Loss history CSV: epoch,batch,L_c,L_g,L with round-trip floats."""
    with open(path, "w", encoding="utf-8") as f:
        f.write("epoch,batch,L_c,L_g,L\n")
        for rec in history:
            f.write(f"{rec.epoch},{rec.batch},{rec.contrast!r},"
                    f"{rec.generation!r},{rec.total!r}\n")
