"""Neural components: fixed time encoding, raw-message construction,
message network, memory updaters (GRU / MLP), and memory generators
(time-aware attention, plain attention, and weighted-sum variants).

Every method comes in a batched form operating on row-stacked tensors.
The batched forms are the single source of truth; single-vector wrappers
route through them with one row so training and inference share the math.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import DimensionError

UPDATERS = ("gru", "mlp")
GENERATORS = ("tgat", "gat", "sum")

MASK_OFF = -1e30


class TimeEncoding:
    """Fixed cosine encoding of a nonnegative time gap.

    Component j of the encoding is cos(dt * alpha^(-j/beta)). The frequency
    vector is a constant: it is never trained.
    """

    def __init__(self, dim, alpha=10.0, beta=25.6):
        if dim < 1 or alpha <= 0 or beta <= 0:
            raise ValueError("time encoding needs dim >= 1, alpha > 0, beta > 0")
        self.dim = int(dim)
        self.alpha = float(alpha)
        self.beta = float(beta)
        self.freq = alpha ** (-np.arange(dim, dtype=np.float64) / beta)

    def __call__(self, delta):
        """Encode a scalar gap to (dim,) or an (n,) array to (n, dim)."""
        delta = np.asarray(delta, dtype=np.float64)
        if np.any(delta < 0):
            raise ValueError("negative time gap")
        if delta.ndim == 0:
            return np.cos(delta * self.freq)
        if delta.ndim == 1:
            return np.cos(delta[:, None] * self.freq[None, :])
        raise DimensionError("time gaps must be scalar or rank 1")

    def zero(self):
        """Encoding of a zero gap (an all-ones vector)."""
        return np.ones(self.dim)


@dataclass
class ModelConfig:
    memory_dim: int = 256
    message_dim: int = 128
    time_dim: int = 256
    max_neighbors: int = 20
    heads: int = 2
    dropout: float = 0.1
    updater: str = "gru"
    generator: str = "tgat"
    time_alpha: float = 10.0
    time_beta: float = 25.6

    def __post_init__(self):
        if min(self.memory_dim, self.message_dim, self.time_dim) < 1:
            raise ValueError("dimensions must be positive")
        if self.max_neighbors < 1:
            raise ValueError("max_neighbors must be >= 1")
        if self.heads < 1 or self.memory_dim % self.heads != 0:
            raise ValueError(
                f"memory_dim {self.memory_dim} not divisible by heads {self.heads}"
            )
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must lie in [0, 1)")
        if self.updater not in UPDATERS:
            raise ValueError(f"updater must be one of {UPDATERS}")
        if self.generator not in GENERATORS:
            raise ValueError(f"generator must be one of {GENERATORS}")


def _uniform(rng, fan_in, shape):
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


class ModelParams:
    """All trainable arrays for one configuration, in registration order.

    Matrices are stored in input-rows orientation (x @ W), so a layer with
    fan-in f and fan-out o holds a (f, o) matrix.
    """

    def __init__(self, config, seed=0):
        self.config = config
        rng = np.random.default_rng(seed)
        d_s, d_m, d_t = config.memory_dim, config.message_dim, config.time_dim
        self._params = {}

        def p(name, fan_in, shape):
            self._params[name] = T.Parameter(name, _uniform(rng, fan_in, shape))

        def b(name, dim):
            self._params[name] = T.Parameter(name, np.zeros(dim))

        p("message_w", d_s + d_t, (d_s + d_t, d_m))
        b("message_b", d_m)

        if config.updater == "gru":
            for gate in ("z", "r", "h"):
                p(f"gru_w{gate}", d_m, (d_m, d_s))
                p(f"gru_u{gate}", d_s, (d_s, d_s))
                b(f"gru_b{gate}", d_s)
        else:
            p("mlp_w", d_m + d_s, (d_m + d_s, d_s))
            b("mlp_b", d_s)

        if config.generator in ("tgat", "gat"):
            q_dim = d_t if config.generator == "tgat" else d_s
            kv_dim = d_s + d_t if config.generator == "tgat" else d_s
            p("attn_wq", q_dim, (q_dim, d_s))
            p("attn_wk", kv_dim, (kv_dim, d_s))
            p("attn_wv", kv_dim, (kv_dim, d_s))
            p("attn_wo", d_s, (d_s, d_s))
            b("attn_bo", d_s)
        else:
            p("sum_w1", d_s + d_t, (d_s + d_t, d_s))
            p("sum_w2", d_s + d_t, (d_s + d_t, d_s))

    def __getitem__(self, name):
        return self._params[name]

    def __contains__(self, name):
        return name in self._params

    def all(self):
        return list(self._params.values())

    def names(self):
        return list(self._params.keys())

    def as_arrays(self):
        return {name: p.value for name, p in self._params.items()}

    def load_arrays(self, arrays):
        for name, p in self._params.items():
            if name not in arrays:
                raise KeyError(f"missing parameter {name!r}")
            arr = np.asarray(arrays[name], dtype=p.value.dtype)
            if arr.shape != p.value.shape:
                raise DimensionError(
                    f"parameter {name!r}: stored shape {arr.shape} "
                    f"!= expected {p.value.shape}"
                )
            p.value[...] = arr


class SladeModel:
    """Binds a configuration to parameters and exposes the forward ops."""

    def __init__(self, config=None, seed=0, params=None):
        self.config = config or ModelConfig()
        self.params = params or ModelParams(self.config, seed)
        self.time_enc = TimeEncoding(
            self.config.time_dim, self.config.time_alpha, self.config.time_beta
        )

    # -- building blocks -------------------------------------------------

    def build_raw_messages(self, other_memory_rows, time_gaps):
        """Raw message rows [other endpoint memory || encoded own gap]."""
        other = np.asarray(other_memory_rows, dtype=np.float64)
        enc = self.time_enc(np.asarray(time_gaps, dtype=np.float64))
        return np.concatenate([other, enc], axis=1)

    def message_rows(self, raw):
        """Message network: one affine layer with ReLU, rows to rows."""
        raw = T.constant(raw)
        expect = self.config.memory_dim + self.config.time_dim
        if raw.data.ndim != 2 or raw.data.shape[1] != expect:
            raise DimensionError(f"raw messages must be (n, {expect})")
        p = self.params
        return T.relu(T.add_rowvec(T.matmul(raw, p["message_w"].tensor()),
                                   p["message_b"].tensor()))

    def update_rows(self, messages, memories):
        """One memory update per row; dispatches on the configured updater."""
        m = T.constant(messages)
        s = T.constant(memories)
        if self.config.updater == "gru":
            return self._gru_rows(m, s)
        return self._mlp_rows(m, s)

    def _gru_rows(self, m, s):
        p = self.params

        def gate(name, act, s_in):
            pre = T.add(T.matmul(m, p[f"gru_w{name}"].tensor()),
                        T.matmul(s_in, p[f"gru_u{name}"].tensor()))
            return act(T.add_rowvec(pre, p[f"gru_b{name}"].tensor()))

        z = gate("z", T.sigmoid, s)
        r = gate("r", T.sigmoid, s)
        h = gate("h", T.tanh, T.mul(r, s))
        ones = T.constant(np.ones(s.data.shape))
        return T.add(T.mul(T.sub(ones, z), s), T.mul(z, h))

    def _mlp_rows(self, m, s):
        p = self.params
        joint = T.hstack([m, s])
        return T.relu(T.add_rowvec(T.matmul(joint, p["mlp_w"].tensor()),
                                   p["mlp_b"].tensor()))

    # -- generators -------------------------------------------------------

    def generate_batch(self, k_pad, nbr_memories, mask, *, nbr_time_enc=None,
                       query_memories=None, training=False, rng=None):
        """Generate one memory row per query from padded neighbor blocks.

        nbr_memories: (q * k_pad, d_s) rows, query-major, padding arbitrary.
        mask: (q, k_pad) additive, 0 for real neighbors, MASK_OFF for padding.
        nbr_time_enc: encoded gaps, same layout, required unless generator
        is "gat". query_memories: (q, d_s), required for "gat".
        Rows whose mask is all padding come back as zero.
        """
        gen = self.config.generator
        mask = np.asarray(mask, dtype=np.float64)
        q_count = mask.shape[0]
        if mask.shape[1] != k_pad or k_pad < 1:
            raise DimensionError("mask shape does not match k_pad")
        valid = mask == 0.0
        if gen == "sum":
            return self._sum_rows(k_pad, nbr_memories, nbr_time_enc, valid)

        if gen == "tgat":
            kv = T.hstack([nbr_memories, T.constant(nbr_time_enc)])
            query = T.constant(np.tile(self.time_enc.zero(), (q_count, 1)))
        else:
            kv = T.constant(nbr_memories)
            query = T.constant(query_memories)
        return self._attention_rows(query, kv, k_pad, mask, valid,
                                    training=training, rng=rng)

    def _attention_rows(self, query, kv, k_pad, mask, valid, *, training, rng):
        p = self.params
        cfg = self.config
        per_head = cfg.memory_dim // cfg.heads
        inv_scale = 1.0 / np.sqrt(per_head)
        q_count = mask.shape[0]

        Q = T.matmul(query, p["attn_wq"].tensor())
        K = T.matmul(kv, p["attn_wk"].tensor())
        V = T.matmul(kv, p["attn_wv"].tensor())

        heads = []
        for h in range(cfg.heads):
            lo, hi = h * per_head, (h + 1) * per_head
            Qh = T.repeat_rows(T.slice_cols(Q, lo, hi), k_pad)
            Kh = T.slice_cols(K, lo, hi)
            scores = T.scale(T.rowwise_dot(Kh, Qh), inv_scale)
            scores = T.add(T.reshape(scores, (q_count, k_pad)), T.constant(mask))
            weights = T.row_softmax(scores)
            if training and cfg.dropout > 0.0:
                weights = T.dropout(weights, cfg.dropout, rng)
            flat = T.reshape(weights, (q_count * k_pad,))
            ctx = T.colmul(T.slice_cols(V, lo, hi), flat)
            heads.append(T.seg_sum_rows(ctx, k_pad))
        merged = T.hstack(heads) if len(heads) > 1 else heads[0]
        out = T.add_rowvec(T.matmul(merged, p["attn_wo"].tensor()),
                           p["attn_bo"].tensor())
        present = valid.any(axis=1).astype(np.float64)
        if present.all():
            return out
        return T.colmul(out, T.constant(present))

    def _sum_rows(self, k_pad, nbr_memories, nbr_time_enc, valid):
        p = self.params
        q_count = valid.shape[0]
        x = T.hstack([nbr_memories, T.constant(nbr_time_enc)])
        x = T.colmul(x, T.constant(valid.reshape(-1).astype(np.float64)))
        pooled = T.relu(T.seg_sum_rows(T.matmul(x, p["sum_w1"].tensor()), k_pad))
        query_enc = np.tile(self.time_enc.zero(), (q_count, 1))
        joint = T.hstack([pooled, T.constant(query_enc)])
        return T.matmul(joint, p["sum_w2"].tensor())

    def generate(self, t, neighbors, memory_lookup, *, query_memory=None,
                 training=False, rng=None):
        """Generate one memory vector at time t from a neighbor list.

        neighbors: [(node, t'), ...] with t' <= t, at most max_neighbors.
        memory_lookup: callable mapping an id array to memory rows.
        Returns a plain (d_s,) array; zero for an empty neighbor list under
        the attention generators.
        """
        n = len(neighbors)
        if n > self.config.max_neighbors:
            raise ValueError("neighbor list longer than max_neighbors")
        if n == 0:
            if self.config.generator == "sum":
                pooled = np.zeros((1, self.config.memory_dim))
                joint = np.concatenate([pooled, self.time_enc.zero()[None, :]], axis=1)
                return (joint @ self.params["sum_w2"].value).reshape(-1)
            return np.zeros(self.config.memory_dim)
        ids = np.asarray([nb for nb, _ in neighbors], dtype=np.int64)
        times = np.asarray([tt for _, tt in neighbors], dtype=np.float64)
        mems = memory_lookup(ids)
        enc = self.time_enc(float(t) - times)
        mask = np.zeros((1, n))
        kwargs = {}
        if self.config.generator == "gat":
            kwargs["query_memories"] = np.asarray(query_memory, dtype=np.float64)[None, :]
        else:
            kwargs["nbr_time_enc"] = enc
        out = self.generate_batch(n, np.asarray(mems, dtype=np.float64), mask,
                                  training=training, rng=rng, **kwargs)
        return out.data.reshape(-1)
