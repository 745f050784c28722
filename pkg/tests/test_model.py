import numpy as np
import pytest

from slade.model import (GENERATORS, MASK_OFF, ModelConfig, ModelParams,
                         SladeModel, TimeEncoding)

CFG = dict(memory_dim=4, message_dim=3, time_dim=2, max_neighbors=3,
           heads=2, dropout=0.0)


def small_model(seed=0, **overrides):
    return SladeModel(ModelConfig(**dict(CFG, **overrides)), seed=seed)


# -- time encoding ----------------------------------------------------------

def test_time_encoding_closed_form():
    enc = TimeEncoding(dim=5, alpha=10.0, beta=25.6)
    dt = 3.7
    expect = np.cos(dt * 10.0 ** (-np.arange(5) / 25.6))
    assert np.allclose(enc(dt), expect, rtol=0, atol=1e-15)


def test_time_encoding_zero_gap_is_ones():
    enc = TimeEncoding(dim=4)
    assert np.array_equal(enc(0.0), np.ones(4))
    assert np.array_equal(enc.zero(), np.ones(4))


def test_time_encoding_vector_input():
    enc = TimeEncoding(dim=3)
    gaps = np.array([0.0, 1.0, 2.5])
    out = enc(gaps)
    assert out.shape == (3, 3)
    for i, g in enumerate(gaps):
        assert np.array_equal(out[i], enc(float(g)))


def test_time_encoding_rejects_negative_gap():
    enc = TimeEncoding(dim=3)
    with pytest.raises(ValueError):
        enc(-0.1)
    with pytest.raises(ValueError):
        enc(np.array([1.0, -2.0]))


def test_time_encoding_not_trainable():
    model = small_model()
    assert not any("time" in name for name in model.params.names())


# -- config validation -------------------------------------------------------

def test_config_defaults():
    cfg = ModelConfig()
    assert (cfg.memory_dim, cfg.message_dim, cfg.time_dim) == (256, 128, 256)
    assert (cfg.max_neighbors, cfg.heads, cfg.dropout) == (20, 2, 0.1)
    assert (cfg.updater, cfg.generator) == ("gru", "tgat")


@pytest.mark.parametrize("bad", [
    dict(memory_dim=5, heads=2),
    dict(dropout=1.0),
    dict(dropout=-0.1),
    dict(updater="rnn"),
    dict(generator="mean"),
    dict(max_neighbors=0),
    dict(memory_dim=0),
])
def test_config_rejects_invalid(bad):
    with pytest.raises(ValueError):
        ModelConfig(**dict(CFG, **bad))


# -- parameters ---------------------------------------------------------------

def test_params_init_bounds_and_zero_biases():
    params = ModelParams(ModelConfig(**CFG), seed=3)
    w = params["message_w"].value
    fan_in = CFG["memory_dim"] + CFG["time_dim"]
    assert np.all(np.abs(w) <= 1.0 / np.sqrt(fan_in))
    assert np.array_equal(params["message_b"].value,
                          np.zeros(CFG["message_dim"]))
    assert np.array_equal(params["gru_bz"].value,
                          np.zeros(CFG["memory_dim"]))


def test_params_seed_determinism():
    a = ModelParams(ModelConfig(**CFG), seed=5)
    b = ModelParams(ModelConfig(**CFG), seed=5)
    for pa, pb in zip(a.all(), b.all()):
        assert np.array_equal(pa.value, pb.value)


def test_params_load_arrays_round_trip_and_errors():
    params = ModelParams(ModelConfig(**CFG), seed=1)
    arrays = {k: v.copy() for k, v in params.as_arrays().items()}
    other = ModelParams(ModelConfig(**CFG), seed=2)
    other.load_arrays(arrays)
    for name in params.names():
        assert np.array_equal(other[name].value, arrays[name])
    with pytest.raises(KeyError):
        other.load_arrays({k: v for k, v in arrays.items()
                           if k != "message_w"})


# -- message net and updaters --------------------------------------------------

def test_raw_message_layout():
    model = small_model()
    other = np.arange(8, dtype=np.float64).reshape(2, 4)
    raw = model.build_raw_messages(other, np.array([0.0, 1.5]))
    assert raw.shape == (2, 6)
    assert np.array_equal(raw[:, :4], other)
    assert np.array_equal(raw[0, 4:], np.ones(2))
    assert np.array_equal(raw[1, 4:], model.time_enc(1.5))


def test_message_net_matches_affine_relu():
    model = small_model(seed=2)
    rng = np.random.default_rng(0)
    raw = rng.normal(size=(3, 6))
    w = model.params["message_w"].value
    b = model.params["message_b"].value
    expect = np.maximum(raw @ w + b, 0.0)
    assert np.allclose(model.message_rows(raw).data, expect, rtol=0, atol=1e-15)


def test_gru_zero_weights_halves_memory():
    model = small_model()
    for p in model.params.all():
        if p.name.startswith("gru"):
            p.value[...] = 0.0
    s = np.random.default_rng(1).normal(size=(2, 4))
    m = np.random.default_rng(2).normal(size=(2, 3))
    # z = r = sigmoid(0) = 1/2, candidate = tanh(0) = 0, so s' = s/2
    out = model.update_rows(m, s).data
    assert np.allclose(out, s / 2.0, rtol=0, atol=1e-15)


def test_gru_matches_reference_equations():
    model = small_model(seed=4)
    rng = np.random.default_rng(3)
    m = rng.normal(size=(3, 3))
    s = rng.normal(size=(3, 4))
    p = {name: model.params[name].value for name in model.params.names()}

    def sig(x):
        return 1.0 / (1.0 + np.exp(-x))

    z = sig(m @ p["gru_wz"] + s @ p["gru_uz"] + p["gru_bz"])
    r = sig(m @ p["gru_wr"] + s @ p["gru_ur"] + p["gru_br"])
    h = np.tanh(m @ p["gru_wh"] + (r * s) @ p["gru_uh"] + p["gru_bh"])
    expect = (1.0 - z) * s + z * h
    assert np.allclose(model.update_rows(m, s).data, expect, rtol=0, atol=1e-14)


def test_mlp_updater_matches_reference():
    model = small_model(seed=5, updater="mlp")
    rng = np.random.default_rng(4)
    m = rng.normal(size=(2, 3))
    s = rng.normal(size=(2, 4))
    w = model.params["mlp_w"].value
    b = model.params["mlp_b"].value
    expect = np.maximum(np.hstack([m, s]) @ w + b, 0.0)
    assert np.allclose(model.update_rows(m, s).data, expect, rtol=0, atol=1e-15)


# -- generators ----------------------------------------------------------------

def attention_oracle(model, query_rows, kv_rows, k_pad, mask):
    """Plain-numpy multi-head attention over padded neighbor blocks."""
    cfg = model.config
    p = {name: model.params[name].value for name in model.params.names()}
    per_head = cfg.memory_dim // cfg.heads
    q_count = mask.shape[0]
    Q = query_rows @ p["attn_wq"]
    K = kv_rows @ p["attn_wk"]
    V = kv_rows @ p["attn_wv"]
    merged = np.zeros((q_count, cfg.memory_dim))
    for qi in range(q_count):
        for h in range(cfg.heads):
            lo, hi = h * per_head, (h + 1) * per_head
            kh = K[qi * k_pad:(qi + 1) * k_pad, lo:hi]
            vh = V[qi * k_pad:(qi + 1) * k_pad, lo:hi]
            logits = kh @ Q[qi, lo:hi] / np.sqrt(per_head) + mask[qi]
            w = np.exp(logits - logits.max())
            w = w / w.sum()
            merged[qi, lo:hi] = w @ vh
    out = merged @ p["attn_wo"] + p["attn_bo"]
    out[~(mask == 0.0).any(axis=1)] = 0.0
    return out


def test_tgat_generator_matches_oracle():
    model = small_model(seed=6, generator="tgat")
    rng = np.random.default_rng(5)
    k_pad, q = 3, 2
    mems = rng.normal(size=(q * k_pad, 4))
    enc = model.time_enc(rng.uniform(0, 2, size=q * k_pad))
    mask = np.zeros((q, k_pad))
    mask[0, 1] = MASK_OFF
    out = model.generate_batch(k_pad, mems, mask, nbr_time_enc=enc).data
    queries = np.tile(model.time_enc.zero(), (q, 1))
    expect = attention_oracle(model, queries, np.hstack([mems, enc]),
                              k_pad, mask)
    assert np.allclose(out, expect, rtol=0, atol=1e-12)


def test_gat_generator_matches_oracle():
    model = small_model(seed=7, generator="gat")
    rng = np.random.default_rng(6)
    k_pad, q = 4, 3
    mems = rng.normal(size=(q * k_pad, 4))
    queries = rng.normal(size=(q, 4))
    mask = np.zeros((q, k_pad))
    mask[2, 0] = MASK_OFF
    out = model.generate_batch(k_pad, mems, mask, query_memories=queries).data
    expect = attention_oracle(model, queries, mems, k_pad, mask)
    assert np.allclose(out, expect, rtol=0, atol=1e-12)


def test_sum_generator_matches_oracle():
    model = small_model(seed=8, generator="sum")
    rng = np.random.default_rng(7)
    k_pad, q = 3, 2
    mems = rng.normal(size=(q * k_pad, 4))
    gaps = rng.uniform(0, 2, size=q * k_pad)
    enc = model.time_enc(gaps)
    mask = np.zeros((q, k_pad))
    mask[1, 2] = MASK_OFF
    out = model.generate_batch(k_pad, mems, mask, nbr_time_enc=enc).data

    w1 = model.params["sum_w1"].value
    w2 = model.params["sum_w2"].value
    x = np.hstack([mems, enc])
    expect = np.zeros((q, 4))
    for qi in range(q):
        block = x[qi * k_pad:(qi + 1) * k_pad]
        keep = (mask[qi] == 0.0)[:, None]
        pooled = np.maximum((block * keep).sum(axis=0) @ w1, 0.0)
        expect[qi] = np.concatenate([pooled, np.ones(2)]) @ w2
    assert np.allclose(out, expect, rtol=0, atol=1e-12)


def test_sum_generator_has_no_bias_params():
    model = small_model(generator="sum")
    names = model.params.names()
    assert "sum_w1" in names and "sum_w2" in names
    assert not any(n.startswith("sum_b") for n in names)


def test_single_neighbor_attention_ignores_logits():
    # softmax over one slot is 1 regardless of scores
    model = small_model(seed=9, generator="gat")
    rng = np.random.default_rng(8)
    mem = rng.normal(size=(1, 4))
    query = rng.normal(size=(1, 4))
    out = model.generate_batch(1, mem, np.zeros((1, 1)),
                               query_memories=query).data
    p = {n: model.params[n].value for n in model.params.names()}
    expect = mem @ p["attn_wv"] @ p["attn_wo"] + p["attn_bo"]
    assert np.allclose(out, expect, rtol=0, atol=1e-12)


def test_masked_slot_equals_dropped_slot():
    model = small_model(seed=10, generator="tgat")
    rng = np.random.default_rng(9)
    mems = rng.normal(size=(3, 4))
    gaps = rng.uniform(0, 2, size=3)
    enc = model.time_enc(gaps)
    mask = np.array([[0.0, 0.0, MASK_OFF]])
    padded = model.generate_batch(3, mems, mask, nbr_time_enc=enc).data
    tight = model.generate_batch(2, mems[:2], np.zeros((1, 2)),
                                 nbr_time_enc=enc[:2]).data
    assert np.allclose(padded, tight, rtol=0, atol=1e-12)


@pytest.mark.parametrize("generator", ["tgat", "gat"])
def test_empty_neighbors_give_zero_vector(generator):
    model = small_model(seed=11, generator=generator)
    out = model.generate(5.0, [], lambda ids: np.zeros((0, 4)),
                         query_memory=np.ones(4))
    assert np.array_equal(out, np.zeros(4))


def test_empty_neighbors_sum_generator_closed_form():
    model = small_model(seed=12, generator="sum")
    out = model.generate(5.0, [], lambda ids: np.zeros((0, 4)))
    w2 = model.params["sum_w2"].value
    expect = np.concatenate([np.zeros(4), np.ones(2)]) @ w2
    assert np.allclose(out, expect, rtol=0, atol=1e-15)


@pytest.mark.parametrize("generator", GENERATORS)
def test_single_wrapper_matches_batch_path(generator):
    model = small_model(seed=13, generator=generator)
    rng = np.random.default_rng(11)
    mems = {i: rng.normal(size=4) for i in range(3)}

    def lookup(ids):
        return np.stack([mems[int(i)] for i in ids])

    neighbors = [(0, 4.0), (2, 2.5), (1, 1.0)]
    out = model.generate(5.0, neighbors, lookup, query_memory=np.ones(4))
    ids = np.array([0, 2, 1])
    enc = model.time_enc(5.0 - np.array([4.0, 2.5, 1.0]))
    kwargs = ({"query_memories": np.ones((1, 4))} if generator == "gat"
              else {"nbr_time_enc": enc})
    batch = model.generate_batch(3, lookup(ids), np.zeros((1, 3)), **kwargs)
    assert np.allclose(out, batch.data.reshape(-1), rtol=0, atol=1e-15)


def test_generate_rejects_overlong_neighbor_list():
    model = small_model()
    neighbors = [(0, 1.0)] * 4  # max_neighbors is 3
    with pytest.raises(ValueError):
        model.generate(2.0, neighbors, lambda ids: np.zeros((4, 4)))


def test_dropout_applies_only_in_training():
    model = small_model(seed=14, generator="tgat", dropout=0.5)
    rng = np.random.default_rng(12)
    mems = rng.normal(size=(3, 4))
    enc = model.time_enc(rng.uniform(0, 2, size=3))
    mask = np.zeros((1, 3))
    eval_a = model.generate_batch(3, mems, mask, nbr_time_enc=enc).data
    eval_b = model.generate_batch(3, mems, mask, nbr_time_enc=enc,
                                  training=False,
                                  rng=np.random.default_rng(0)).data
    assert np.array_equal(eval_a, eval_b)
    train_out = model.generate_batch(3, mems, mask, nbr_time_enc=enc,
                                     training=True,
                                     rng=np.random.default_rng(0)).data
    assert not np.allclose(train_out, eval_a)
