"""Finite-difference verification scenarios for every differentiable
component, at toy dimensions so the whole suite runs in seconds."""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .memory import MemoryStore
from .model import ModelConfig, SladeModel
from .stream import EdgeStream, NodeRegistry
from .training import (LossWeights, batch_forward, generation_loss,
                       temporal_contrast_loss)

TOY_CONFIG = dict(memory_dim=4, message_dim=3, time_dim=2, max_neighbors=3,
                  heads=2, dropout=0.0)


def toy_stream(seed=0, n_nodes=3, n_edges=5):
    """Small random stream exercising both roles and varied time gaps.

    Edges are drawn without repeating an ordered node pair so each node
    accumulates distinct counterparts in its recency ring. Rings full of
    copies of one partner give attention logits whose gradients cancel
    to the finite-difference noise floor, which would make the check
    meaningless rather than strict.
    """
    rng = np.random.default_rng(seed)
    pairs = [(a, b) for a in range(n_nodes) for b in range(n_nodes) if a != b]
    if n_edges > len(pairs):
        raise ValueError("toy stream needs n_edges <= n_nodes * (n_nodes - 1)")
    order = rng.permutation(len(pairs))[:n_edges]
    src = np.array([pairs[i][0] for i in order])
    dst = np.array([pairs[i][1] for i in order])
    ts = np.cumsum(rng.uniform(0.5, 2.0, n_edges))
    return EdgeStream(src, dst, ts, node_count=n_nodes)


def _model(seed, **overrides):
    cfg = dict(TOY_CONFIG)
    cfg.update(overrides)
    return SladeModel(ModelConfig(**cfg), seed=seed)


def _check_message_net(seed):
    model = _model(seed)
    rng = np.random.default_rng(seed + 1000)
    raw = rng.normal(size=(3, TOY_CONFIG["memory_dim"] + TOY_CONFIG["time_dim"]))
    params = [model.params["message_w"], model.params["message_b"]]
    return T.grad_check(lambda: T.mean_all(model.message_rows(raw)), params)


def _check_updater(seed, updater):
    model = _model(seed, updater=updater)
    rng = np.random.default_rng(seed + 2000)
    m = rng.normal(size=(3, TOY_CONFIG["message_dim"]))
    s = rng.normal(size=(3, TOY_CONFIG["memory_dim"]))
    return T.grad_check(lambda: T.mean_all(model.update_rows(m, s)),
                        model.params.all())


def _generator_inputs(seed, d_s, d_t):
    rng = np.random.default_rng(seed + 3000)
    k_pad = 3
    q = 2
    mems = rng.normal(size=(q * k_pad, d_s))
    enc = np.cos(rng.uniform(0, 3, size=(q * k_pad, d_t)))
    mask = np.zeros((q, k_pad))
    mask[1, 2] = -1e30  # one padded slot to exercise masking
    queries = rng.normal(size=(q, d_s))
    return mems, enc, mask, queries


def _check_generator(seed, generator):
    model = _model(seed, generator=generator)
    d_s, d_t = TOY_CONFIG["memory_dim"], TOY_CONFIG["time_dim"]
    mems, enc, mask, queries = _generator_inputs(seed, d_s, d_t)
    kwargs = {}
    if generator == "gat":
        kwargs["query_memories"] = queries
    else:
        kwargs["nbr_time_enc"] = enc

    def fn():
        return T.mean_all(model.generate_batch(3, mems, mask, **kwargs))

    return T.grad_check(fn, model.params.all())


def _check_contrast_loss(seed):
    rng = np.random.default_rng(seed + 4000)
    d = 5
    cur = T.Parameter("current", rng.normal(size=d))
    neg = T.Parameter("negatives", rng.normal(size=(4, d)))
    prev = rng.normal(size=d)

    def fn():
        return temporal_contrast_loss(cur.tensor(), T.constant(prev), neg.tensor())

    return T.grad_check(fn, [cur, neg])


def _check_generation_loss(seed):
    rng = np.random.default_rng(seed + 5000)
    d = 5
    gen = T.Parameter("generated", rng.normal(size=d))
    target = T.Parameter("target", rng.normal(size=d))
    neg = T.Parameter("negatives", rng.normal(size=(4, d)))

    def fn():
        return generation_loss(gen.tensor(), target.tensor(), neg.tensor())

    return T.grad_check(fn, [gen, target, neg])


def _check_batch_loss(seed, generator):
    """Finite-difference check of the full batch loss on the toy stream.

    Node state is seeded with standard-normal memories and pre-filled
    recency rings rather than by replaying a cold start. Freshly updated
    memories are tiny, which flattens the attention logits and pushes the
    query/key projection gradients down to the finite-difference noise
    floor; unit-scale state keeps every parameter's gradient measurable
    while exercising the identical composed graph.
    """
    model = _model(seed, generator=generator)
    stream = toy_stream(seed)
    rng = np.random.default_rng(seed + 7000)
    store = MemoryStore(model.config.memory_dim, model.config.max_neighbors,
                        size_hint=stream.node_count)
    registry = NodeRegistry()
    nodes = np.arange(stream.node_count)
    store.apply_updates(nodes, rng.normal(size=(stream.node_count,
                                                model.config.memory_dim)),
                        np.zeros(stream.node_count))
    # ring entries must predate the stream (times start >= 0.5) and be
    # recorded oldest first
    for node in nodes:
        others = nodes[nodes != node]
        times = np.sort(rng.uniform(0.0, 0.4, size=others.size))
        for other, when in zip(others, times):
            store.record_neighbor(node, int(other), float(when))
    registry.observe_edges(stream)
    # unit weights: the default 0.1 generation weights only damp the
    # attention parameters' gradient signal against finite-difference noise
    weights = LossWeights(1.0, 1.0, 1.0, 1.0)

    def fn():
        return batch_forward(model, store, registry, stream, weights=weights,
                             training=True, rng=None).total

    return T.grad_check(fn, model.params.all())


def check_components(seed=0):
    """Max relative gradient error per component, keyed by component name."""
    return {
        "message_net": _check_message_net(seed),
        "gru_update": _check_updater(seed, "gru"),
        "mlp_update": _check_updater(seed, "mlp"),
        "generator_tgat": _check_generator(seed, "tgat"),
        "generator_gat": _check_generator(seed, "gat"),
        "generator_sum": _check_generator(seed, "sum"),
        "contrast_loss": _check_contrast_loss(seed),
        "generation_loss": _check_generation_loss(seed),
        "batch_loss_tgat": _check_batch_loss(seed, "tgat"),
        "batch_loss_gat": _check_batch_loss(seed, "gat"),
        "batch_loss_sum": _check_batch_loss(seed, "sum"),
    }
