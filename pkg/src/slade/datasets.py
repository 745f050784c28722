"""Dataset ingestion, synthetic anomaly injection, stream serialization,
and binary checkpoints.

Loaders map raw ids to dense integers in order of first appearance in the
output stream orientation and hand back validated EdgeStreams. The signed
network loader applies two-stage labeling: a user is abnormal overall iff
the ratings it receives sum below zero, and such a user's state is flagged
abnormal exactly on the edges where it receives a negative rating.
"""

from __future__ import annotations

import csv
import json
import logging
import struct
from dataclasses import dataclass

import numpy as np

from .errors import FormatError, InjectionError, ParseError
from .memory import MemoryStore
from .model import ModelConfig, ModelParams, SladeModel
from .stream import (LABEL_ANOMALOUS, LABEL_NORMAL, LABEL_UNKNOWN, EdgeStream,
                     validate)

log = logging.getLogger(__name__)

EMAIL_EU_INTERVAL = (4.06e7, 4.54e7)

CHECKPOINT_MAGIC = b"SLADECKP"
CHECKPOINT_VERSION = 1


# ---------------------------------------------------------------------------
# normalized stream CSV (this package's interchange format)


def write_stream_csv(stream, path):
    """Columns source,destination,timestamp,label; label blank if unknown."""
    with open(path, "w", encoding="utf-8") as f:
        f.write("source,destination,timestamp,label\n")
        labels = stream.labels
        for i in range(len(stream)):
            lab = "" if labels[i] == LABEL_UNKNOWN else int(labels[i])
            f.write(f"{int(stream.src[i])},{int(stream.dst[i])},"
                    f"{float(stream.t[i])!r},{lab}\n")


def read_stream_csv(path):
    src, dst, ts, labels = [], [], [], []
    with open(path, "r", encoding="utf-8") as f:
        header = f.readline().strip()
        if header != "source,destination,timestamp,label":
            raise ParseError(f"{path}: line 1: unexpected stream header")
        for lineno, line in enumerate(f, start=2):
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != 4:
                raise ParseError(f"{path}: line {lineno}: expected 4 fields")
            try:
                src.append(int(parts[0]))
                dst.append(int(parts[1]))
                ts.append(float(parts[2]))
                labels.append(LABEL_UNKNOWN if parts[3] == "" else int(parts[3]))
            except ValueError as exc:
                raise ParseError(f"{path}: line {lineno}: {exc}") from exc
    stream = EdgeStream(np.asarray(src, dtype=np.int64),
                        np.asarray(dst, dtype=np.int64),
                        np.asarray(ts), np.asarray(labels, dtype=np.int8))
    validate(stream)
    return stream


def write_tags_csv(tags, path):
    with open(path, "w", encoding="utf-8") as f:
        f.write("edge_index,type\n")
        for i, tag in enumerate(tags):
            f.write(f"{i},{tag}\n")


def read_tags_csv(path):
    tags = []
    with open(path, "r", encoding="utf-8") as f:
        header = f.readline().strip()
        if header != "edge_index,type":
            raise ParseError(f"{path}: line 1: unexpected tags header")
        for lineno, line in enumerate(f, start=2):
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != 2 or parts[1] not in ("NORMAL", "T1", "T2", "T3"):
                raise ParseError(f"{path}: line {lineno}: bad tag row")
            if int(parts[0]) != len(tags):
                raise ParseError(f"{path}: line {lineno}: non-contiguous index")
            tags.append(parts[1])
    return np.asarray(tags)


# ---------------------------------------------------------------------------
# real-dataset loaders


def _stable_sort_if_needed(ts, what):
    order = None
    if np.any(np.diff(ts) < 0):
        log.warning("%s: timestamps not sorted; applying stable sort", what)
        order = np.argsort(ts, kind="stable")
    return order


def load_jodie_csv(path):
    """Interaction CSV: user_id,item_id,timestamp,state_label,features...

    Users and items go into one dense id space (users first, then items,
    each by order of first appearance); features are discarded. The label
    marks the user's (source's) dynamic state.
    """
    users, items = {}, {}
    u_col, i_col, ts, labels = [], [], [], []
    with open(path, "r", encoding="utf-8", newline="") as f:
        reader = csv.reader(f)
        try:
            next(reader)
        except StopIteration:
            raise ParseError(f"{path}: line 1: empty file") from None
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) < 4:
                raise ParseError(f"{path}: line {lineno}: expected >= 4 columns")
            user, item, t_str, lab = row[0], row[1], row[2], row[3]
            try:
                t = float(t_str)
            except ValueError:
                raise ParseError(f"{path}: line {lineno}: bad timestamp {t_str!r}") from None
            if lab not in ("0", "1"):
                raise ParseError(f"{path}: line {lineno}: bad state label {lab!r}")
            u_col.append(users.setdefault(user, len(users)))
            i_col.append(items.setdefault(item, len(items)))
            ts.append(t)
            labels.append(LABEL_ANOMALOUS if lab == "1" else LABEL_NORMAL)
    n_users = len(users)
    src = np.asarray(u_col, dtype=np.int64)
    dst = np.asarray(i_col, dtype=np.int64) + n_users
    ts = np.asarray(ts)
    labels = np.asarray(labels, dtype=np.int8)
    order = _stable_sort_if_needed(ts, path)
    if order is not None:
        src, dst, ts, labels = src[order], dst[order], ts[order], labels[order]
    stream = EdgeStream(src, dst, ts, labels, node_count=n_users + len(items))
    validate(stream)
    return stream


def load_signed_network(path, reverse_direction=True):
    """Signed rating CSV (no header): source,target,rating,time.

    Labels implement the two-stage rule described in the module docstring.
    With reverse_direction (the default) each edge is flipped so the rated
    user is the source and carries the label; ratings never enter the
    stream itself.
    """
    rows = []
    with open(path, "r", encoding="utf-8", newline="") as f:
        reader = csv.reader(f)
        for lineno, row in enumerate(reader, start=1):
            if not row:
                continue
            if len(row) != 4:
                raise ParseError(f"{path}: line {lineno}: expected 4 columns")
            try:
                s, t = row[0].strip(), row[1].strip()
                rating = int(row[2])
                when = float(row[3])
            except ValueError as exc:
                raise ParseError(f"{path}: line {lineno}: {exc}") from exc
            if not -10 <= rating <= 10:
                raise ParseError(
                    f"{path}: line {lineno}: rating {rating} outside [-10, 10]"
                )
            rows.append((s, t, rating, when))

    received = {}
    for _, target, rating, _ in rows:
        received[target] = received.get(target, 0) + rating

    src_keys, dst_keys, ts, labels = [], [], [], []
    for s, t, rating, when in rows:
        abnormal = received[t] < 0 and rating < 0
        rated, rater = t, s
        if reverse_direction:
            src_keys.append(rated)
            dst_keys.append(rater)
        else:
            src_keys.append(rater)
            dst_keys.append(rated)
        ts.append(when)
        labels.append(LABEL_ANOMALOUS if abnormal else LABEL_NORMAL)

    ts = np.asarray(ts)
    order = np.argsort(ts, kind="stable")
    ids = {}
    src = np.empty(len(rows), dtype=np.int64)
    dst = np.empty(len(rows), dtype=np.int64)
    for pos, i in enumerate(order):
        src[pos] = ids.setdefault(src_keys[i], len(ids))
        dst[pos] = ids.setdefault(dst_keys[i], len(ids))
    labels = np.asarray(labels, dtype=np.int8)[order]
    stream = EdgeStream(src, dst, ts[order], labels, node_count=len(ids))
    validate(stream)
    return stream


def load_email_eu(path, interval=EMAIL_EU_INTERVAL):
    """Whitespace-separated "src dst timestamp" rows, no labels.

    Rows outside the open interval are dropped (pass interval=None to keep
    everything); ids are re-densified after filtering.
    """
    src_keys, dst_keys, ts = [], [], []
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) != 3:
                raise ParseError(f"{path}: line {lineno}: expected 3 fields")
            try:
                t = float(parts[2])
            except ValueError:
                raise ParseError(f"{path}: line {lineno}: bad timestamp") from None
            if interval is not None and not interval[0] < t < interval[1]:
                continue
            src_keys.append(parts[0])
            dst_keys.append(parts[1])
            ts.append(t)
    ts = np.asarray(ts)
    order = np.argsort(ts, kind="stable")
    ids = {}
    src = np.empty(len(ts), dtype=np.int64)
    dst = np.empty(len(ts), dtype=np.int64)
    for pos, i in enumerate(order):
        src[pos] = ids.setdefault(src_keys[i], len(ids))
        dst[pos] = ids.setdefault(dst_keys[i], len(ids))
    labels = np.full(len(ts), LABEL_NORMAL, dtype=np.int8)
    stream = EdgeStream(src, dst, ts[order], labels, node_count=len(ids))
    validate(stream)
    return stream


# ---------------------------------------------------------------------------
# synthetic streams


def generate_normal_stream(n_nodes, n_edges, n_communities, seed=0,
                           mean_gap=300.0, contacts_per_node=5):
    """Community-structured normal traffic with exponential inter-event gaps.

    Each edge picks a uniform sender. With probability 0.9 the receiver is
    one of the sender's preferred contacts, a fixed per-node subset of its
    own community; otherwise the receiver is uniform over all nodes. Node i
    belongs to community i mod n_communities. Stable contact sets keep each
    node's normal traffic repetitive, so bursts toward arbitrary receivers
    stand out against it.
    """
    if min(n_nodes, n_edges, n_communities, contacts_per_node) < 1 \
            or n_communities > n_nodes:
        raise ValueError("need n_nodes >= n_communities >= 1, n_edges >= 1 "
                         "and contacts_per_node >= 1")
    rng = np.random.default_rng(seed)
    community = np.arange(n_nodes, dtype=np.int64) % n_communities
    members = [np.nonzero(community == c)[0] for c in range(n_communities)]
    contacts = np.zeros((n_nodes, contacts_per_node), dtype=np.int64)
    n_contacts = np.ones(n_nodes, dtype=np.int64)
    for i in range(n_nodes):
        peers = members[community[i]]
        peers = peers[peers != i]
        take = min(contacts_per_node, peers.shape[0])
        if take == 0:
            contacts[i] = i  # single-member community, degenerate
            continue
        contacts[i, :take] = rng.choice(peers, size=take, replace=False)
        contacts[i, take:] = contacts[i, 0]
        n_contacts[i] = take

    times = np.cumsum(rng.exponential(mean_gap, n_edges))
    senders = rng.integers(0, n_nodes, n_edges)
    intra = rng.random(n_edges) < 0.9
    draw = (rng.random(n_edges) * n_contacts[senders]).astype(np.int64)
    pick_contact = contacts[senders, draw]
    pick_global = (rng.random(n_edges) * n_nodes).astype(np.int64)
    receivers = np.where(intra, pick_contact, pick_global)
    labels = np.full(n_edges, LABEL_NORMAL, dtype=np.int8)
    return EdgeStream(senders, receivers, times, labels, node_count=n_nodes)


@dataclass
class InjectionConfig:
    mode: str = "hijack"  # or "new"
    n_anomalous_nodes: int = 10
    burst_destinations: int = 10
    jitter_seconds: float = 300.0
    target_ratio: float = 0.01
    eval_region_fraction: float = 0.10
    seed: int = 0

    def __post_init__(self):
        if self.mode not in ("hijack", "new"):
            raise ValueError("mode must be 'hijack' or 'new'")
        if min(self.n_anomalous_nodes, self.burst_destinations) < 1:
            raise ValueError("node counts must be positive")
        if self.jitter_seconds < 0:
            raise ValueError("jitter must be nonnegative")
        if not 0.0 < self.target_ratio < 1.0:
            raise ValueError("target_ratio must lie in (0, 1)")
        if not 0.0 < self.eval_region_fraction < 1.0:
            raise ValueError("eval_region_fraction must lie in (0, 1)")


def _hijack_candidates(stream, eval_start, n_wanted, rng):
    src, dst = stream.src, stream.dst
    pre_nodes = np.union1d(src[:eval_start], dst[:eval_start])
    eval_nodes = np.union1d(src[eval_start:], dst[eval_start:])
    abnormal_pre = np.unique(src[:eval_start][stream.labels[:eval_start] == LABEL_ANOMALOUS])
    normal_pre = np.setdiff1d(pre_nodes, abnormal_pre)
    strict = np.setdiff1d(normal_pre, eval_nodes)
    if strict.shape[0] >= n_wanted:
        chosen = rng.choice(strict, size=n_wanted, replace=False)
        return np.sort(chosen), strict
    # Dense streams may leave no node absent from the evaluation region.
    # Fall back to normal nodes with the fewest eval-region appearances.
    if normal_pre.shape[0] < n_wanted:
        raise InjectionError(
            f"only {normal_pre.shape[0]} hijack candidates for "
            f"{n_wanted} anomalous nodes"
        )
    log.warning(
        "only %d nodes are absent from the evaluation region; "
        "extending hijack candidates by least eval-region activity",
        strict.shape[0],
    )
    appearances = np.concatenate([src[eval_start:], dst[eval_start:]])
    counts = dict(zip(*np.unique(appearances, return_counts=True)))
    ordered = sorted(normal_pre, key=lambda n: (counts.get(n, 0), n))
    chosen = np.asarray(ordered[:n_wanted], dtype=np.int64)
    return np.sort(chosen), strict


def inject_anomalies(stream, cfg):
    """Plant bursty anomalous edges inside the final region of a stream.

    Returns (stream_with_injections, tags) where tags holds one of
    NORMAL/T1/T2/T3 per output edge. Hijack mode reuses existing normal
    identities; new mode mints fresh node ids. Each burst sends one
    anomalous source to ``burst_destinations`` distinct normal nodes at
    jittered times near a uniformly drawn burst center.
    """
    n = len(stream)
    rng = np.random.default_rng(cfg.seed)
    eval_count = int(np.floor(cfg.eval_region_fraction * n))
    if eval_count < 1:
        raise InjectionError("stream too short for the evaluation region")
    eval_start = n - eval_count
    t_lo = float(stream.t[eval_start])
    t_hi = float(stream.t[-1])
    target = int(np.floor(cfg.target_ratio * n))
    if target < 1:
        raise InjectionError("target_ratio yields zero injected edges")

    node_count = stream.node_count
    if cfg.mode == "hijack":
        anomalous, candidate_pool = _hijack_candidates(
            stream, eval_start, cfg.n_anomalous_nodes, rng
        )
        excluded = np.union1d(candidate_pool, anomalous)
        first_tag = "T1"
    else:
        anomalous = np.arange(node_count, node_count + cfg.n_anomalous_nodes,
                              dtype=np.int64)
        node_count += cfg.n_anomalous_nodes
        excluded = anomalous
        first_tag = "T2"

    base_nodes = np.union1d(stream.src, stream.dst)
    dest_pool = np.setdiff1d(base_nodes, excluded)
    if dest_pool.shape[0] < cfg.burst_destinations:
        raise InjectionError(
            f"only {dest_pool.shape[0]} destination candidates for bursts "
            f"of {cfg.burst_destinations}"
        )

    inj_src, inj_dst, inj_t = [], [], []
    remaining = target
    while remaining > 0:
        size = min(cfg.burst_destinations, remaining)
        center = rng.uniform(t_lo, t_hi)
        source = int(rng.choice(anomalous))
        dests = rng.choice(dest_pool, size=size, replace=False)
        offsets = rng.uniform(-cfg.jitter_seconds, cfg.jitter_seconds, size)
        times = np.clip(center + offsets, t_lo, t_hi)
        inj_src.extend([source] * size)
        inj_dst.extend(int(d) for d in dests)
        inj_t.extend(float(t) for t in times)
        remaining -= size

    base_labels = np.where(stream.labels == LABEL_UNKNOWN,
                           LABEL_NORMAL, stream.labels).astype(np.int8)
    all_src = np.concatenate([stream.src, np.asarray(inj_src, dtype=np.int64)])
    all_dst = np.concatenate([stream.dst, np.asarray(inj_dst, dtype=np.int64)])
    all_t = np.concatenate([stream.t, np.asarray(inj_t)])
    all_labels = np.concatenate([
        base_labels, np.full(target, LABEL_ANOMALOUS, dtype=np.int8),
    ])
    injected_flag = np.concatenate([
        np.zeros(n, dtype=bool), np.ones(target, dtype=bool),
    ])
    order = np.argsort(all_t, kind="stable")
    out = EdgeStream(all_src[order], all_dst[order], all_t[order],
                     all_labels[order], node_count=node_count)
    injected_flag = injected_flag[order]

    tags = np.full(len(out), "NORMAL", dtype="<U6")
    seen_count = {}
    for i in np.nonzero(injected_flag)[0]:
        node = int(out.src[i])
        c = seen_count.get(node, 0)
        tags[i] = first_tag if c < 20 else "T3"
        seen_count[node] = c + 1
    validate(out)
    return out, tags


# ---------------------------------------------------------------------------
# checkpoints


def _dtype_code(arr):
    if arr.dtype.kind == "f":
        return "f8"
    if arr.dtype.kind in "iu":
        return "i8"
    raise FormatError(f"unsupported array dtype {arr.dtype}")


def save_checkpoint(path, params, config, memory=None):
    """Binary container: magic, u32 version, u64 header length, JSON header
    (names/shapes/dtypes in blob order), then raw little-endian blobs.
    """
    arrays = {f"param/{k}": v for k, v in params.as_arrays().items()}
    if memory is not None:
        arrays.update({f"memory/{k}": v for k, v in memory.state_arrays().items()})
    tensors = [{"name": name, "shape": list(arr.shape), "dtype": _dtype_code(arr)}
               for name, arr in arrays.items()]
    header = json.dumps(
        {"config": dict(config), "tensors": tensors,
         "has_memory": memory is not None},
        sort_keys=True,
    ).encode("utf-8")
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<I", CHECKPOINT_VERSION))
        f.write(struct.pack("<Q", len(header)))
        f.write(header)
        for name, arr in arrays.items():
            code = "<" + _dtype_code(arr)
            f.write(np.ascontiguousarray(arr, dtype=code).tobytes())


def load_checkpoint(path):
    """Returns (config dict, arrays dict, has_memory flag)."""
    with open(path, "rb") as f:
        blob = f.read()
    if len(blob) < 20:
        raise FormatError(f"{path}: truncated checkpoint")
    if blob[:8] != CHECKPOINT_MAGIC:
        raise FormatError(f"{path}: bad magic")
    version = struct.unpack("<I", blob[8:12])[0]
    if version != CHECKPOINT_VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    header_len = struct.unpack("<Q", blob[12:20])[0]
    if len(blob) < 20 + header_len:
        raise FormatError(f"{path}: truncated header")
    try:
        header = json.loads(blob[20: 20 + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: corrupt header: {exc}") from exc
    offset = 20 + header_len
    arrays = {}
    for entry in header["tensors"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        nbytes = count * 8
        if offset + nbytes > len(blob):
            raise FormatError(f"{path}: truncated blob for {entry['name']!r}")
        arr = np.frombuffer(blob, dtype="<" + entry["dtype"], count=count,
                            offset=offset).reshape(shape)
        arrays[entry["name"]] = arr.astype(
            np.float64 if entry["dtype"] == "f8" else np.int64
        )
        offset += nbytes
    if offset != len(blob):
        raise FormatError(f"{path}: trailing data after blobs")
    return header["config"], arrays, header["has_memory"]


MODEL_CONFIG_KEYS = ("memory_dim", "message_dim", "time_dim", "max_neighbors",
                     "heads", "dropout", "updater", "generator",
                     "time_alpha", "time_beta")


def model_from_checkpoint(path):
    """Rebuild (model, store-or-None, config) from a checkpoint file."""
    config, arrays, has_memory = load_checkpoint(path)
    model_cfg = ModelConfig(**{k: config[k] for k in MODEL_CONFIG_KEYS
                               if k in config})
    params = ModelParams(model_cfg, seed=0)
    params.load_arrays({k[len("param/"):]: v for k, v in arrays.items()
                        if k.startswith("param/")})
    model = SladeModel(model_cfg, params=params)
    store = None
    if has_memory:
        store = MemoryStore(model_cfg.memory_dim, model_cfg.max_neighbors)
        store.load_state_arrays({k[len("memory/"):]: v for k, v in arrays.items()
                                 if k.startswith("memory/")})
    return model, store, config
