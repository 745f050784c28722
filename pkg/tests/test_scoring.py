import json

import numpy as np
import pytest

from slade.errors import MetricError, ParseError
from slade.memory import MemoryStore
from slade.model import ModelConfig, SladeModel
from slade.scoring import (MetricReport, ScoreRecord, auc, average_precision,
                           contrast_score, final_score, generation_score,
                           latency_bench, linear_fit_r2, metric_report,
                           read_scores_csv, score_source, stream_inference,
                           type_distribution_rows, write_metrics_json,
                           write_scores_csv)
from slade.stream import EdgeStream

CFG = dict(memory_dim=4, message_dim=3, time_dim=2, max_neighbors=3,
           heads=2, dropout=0.0)


def small_model(seed=0, **overrides):
    return SladeModel(ModelConfig(**dict(CFG, **overrides)), seed=seed)


def brute_force_auc(scores, labels):
    """Count positive-over-negative pairs directly, ties at half weight."""
    pos = [s for s, l in zip(scores, labels) if l]
    neg = [s for s, l in zip(scores, labels) if not l]
    total = 0.0
    for p in pos:
        for n in neg:
            if p > n:
                total += 1.0
            elif p == n:
                total += 0.5
    return total / (len(pos) * len(neg))


def brute_force_ap(scores, labels):
    order = sorted(range(len(scores)), key=lambda i: (-scores[i], i))
    hits, out = 0, 0.0
    for rank, idx in enumerate(order, start=1):
        if labels[idx]:
            hits += 1
            out += hits / rank
    return out / sum(labels)


# -- metrics ------------------------------------------------------------------

def test_auc_hand_case_with_tie():
    scores = [0.9, 0.8, 0.8, 0.1]
    labels = [1, 0, 1, 0]
    # pairs: (.9>.8)=1, (.9>.1)=1, (.8=.8)=.5, (.8>.1)=1 -> 3.5/4
    assert auc(scores, labels) == 0.875


def test_ap_hand_case():
    scores = [0.9, 0.8, 0.8, 0.1]
    labels = [1, 0, 1, 0]
    # descending stable order: 0.9(pos), 0.8(neg), 0.8(pos), 0.1(neg)
    assert average_precision(scores, labels) == (1.0 + 2.0 / 3.0) / 2.0


def test_auc_perfect_and_inverted():
    assert auc([0.9, 0.8, 0.2, 0.1], [1, 1, 0, 0]) == 1.0
    assert auc([0.9, 0.8, 0.2, 0.1], [0, 0, 1, 1]) == 0.0


def test_auc_all_tied_is_half():
    assert auc([0.5, 0.5, 0.5, 0.5], [1, 0, 1, 0]) == 0.5


def test_metrics_match_brute_force_random():
    rng = np.random.default_rng(0)
    for _ in range(50):
        n = int(rng.integers(2, 40))
        scores = rng.choice([0.1, 0.25, 0.5, 0.75, 0.9], size=n)
        labels = rng.integers(0, 2, size=n)
        if labels.sum() in (0, n):
            continue
        assert auc(scores, labels) == brute_force_auc(scores.tolist(),
                                                      labels.tolist())
        assert average_precision(scores, labels) == brute_force_ap(
            scores.tolist(), labels.tolist())


def test_metrics_reject_degenerate_inputs():
    with pytest.raises(MetricError):
        auc([0.5, 0.6], [1, 1])
    with pytest.raises(MetricError):
        auc([0.5, 0.6], [0, 0])
    with pytest.raises(MetricError):
        average_precision([0.5], [0])
    with pytest.raises(MetricError):
        metric_report([])


def test_metric_report_uses_labeled_records_only():
    recs = [
        ScoreRecord(0, 0, 1.0, 0.5, 0.5, 0.9, True),
        ScoreRecord(1, 1, 2.0, 0.5, 0.5, 0.2, False),
        ScoreRecord(2, 2, 3.0, 0.5, 0.5, 0.99, None),
    ]
    rep = metric_report(recs)
    assert isinstance(rep, MetricReport)
    assert (rep.n_pos, rep.n_neg) == (1, 1)
    assert rep.auc == 1.0 and rep.ap == 1.0


# -- score formulas --------------------------------------------------------------

def test_score_formulas():
    class Mem:
        s = np.array([1.0, 0.0])
        s_prev = np.array([0.0, 1.0])

    assert contrast_score(Mem) == 1.0  # orthogonal -> sim 0
    assert generation_score(np.array([1.0, 0.0]), np.array([1.0, 0.0])) == 0.0
    assert final_score(1.0, 1.0) == 0.5
    assert final_score(2.0, 2.0) == 1.0
    assert final_score(0.0, 0.0) == 0.0


def test_new_node_first_score_is_half():
    """Zero memory and empty ring: both sims are 0, so sc = 2/4."""
    model = small_model(seed=1)
    store = MemoryStore(4, 3, size_hint=2)
    sc_c, sc_g = score_source(model, store, 0, 1.0)
    assert sc_c == 1.0 and sc_g == 1.0
    assert final_score(sc_c, sc_g) == 0.5


def test_scores_lie_in_unit_interval():
    model = small_model(seed=2)
    rng = np.random.default_rng(3)
    n = 60
    src = rng.integers(0, 8, n)
    dst = (src + rng.integers(1, 8, n)) % 8
    t = np.cumsum(rng.uniform(0.1, 1.0, n))
    stream = EdgeStream(src, dst, t, node_count=8)
    store = MemoryStore(4, 3, size_hint=8)
    recs = stream_inference(stream, model, store)
    assert len(recs) == n
    for r in recs:
        assert 0.0 <= r.sc <= 1.0


def test_inference_scores_before_update():
    """The source's own edge must not influence its score at that edge."""
    model = small_model(seed=4)
    stream = EdgeStream([0, 1], [1, 0], [1.0, 2.0], node_count=2)
    store = MemoryStore(4, 3, size_hint=2)
    recs = stream_inference(stream, model, store)
    assert recs[0].sc == 0.5  # node 0 scored while still at zero state
    # after edge 0, node 1 has non-trivial state
    assert recs[1].node == 1
    assert recs[1].sc != 0.5


def test_inference_never_touches_params():
    model = small_model(seed=5)
    before = {p.name: p.value.copy() for p in model.params.all()}
    stream = EdgeStream([0, 1, 0], [1, 0, 1], [1.0, 2.0, 3.0], node_count=2)
    store = MemoryStore(4, 3, size_hint=2)
    stream_inference(stream, model, store, batch_size=2)
    for p in model.params.all():
        assert np.array_equal(p.value, before[p.name])
        assert np.array_equal(p.grad, np.zeros_like(p.value))


def test_inference_batch_one_equals_batch_many_when_no_repeats():
    model = small_model(seed=6)
    src = np.array([0, 2, 4, 1])
    dst = np.array([1, 3, 5, 2])
    t = np.array([1.0, 2.0, 3.0, 4.0])
    stream = EdgeStream(src, dst, t, node_count=6)
    a = stream_inference(stream, model, MemoryStore(4, 3, size_hint=6),
                         batch_size=1)
    b = stream_inference(stream, model, MemoryStore(4, 3, size_hint=6),
                         batch_size=2)
    for ra, rb in zip(a, b):
        assert abs(ra.sc - rb.sc) <= 1e-10
        assert ra.edge_index == rb.edge_index


def test_index_offset_shifts_global_indices():
    model = small_model(seed=7)
    stream = EdgeStream([0], [1], [1.0], node_count=2)
    recs = stream_inference(stream, model, MemoryStore(4, 3), index_offset=40)
    assert recs[0].edge_index == 40


# -- bench ------------------------------------------------------------------------

def test_linear_fit_r2_exact_line():
    x = np.array([1.0, 2.0, 3.0, 4.0])
    assert linear_fit_r2(x, 2.5 * x + 1.0) == 1.0
    noisy = np.array([1.0, 5.0, 2.0, 8.0])
    assert linear_fit_r2(x, noisy) < 1.0


def test_latency_bench_rows():
    model = small_model(seed=8)
    rng = np.random.default_rng(9)
    n = 40
    src = rng.integers(0, 6, n)
    dst = (src + 1 + rng.integers(0, 5, n)) % 6
    t = np.cumsum(rng.uniform(0.1, 0.5, n))
    stream = EdgeStream(src, dst, t, node_count=6)
    rows, r2 = latency_bench(stream, model, [0.5, 1.0])
    assert [r.n_edges for r in rows] == [20, 40]
    assert all(r.total_s > 0 for r in rows)
    assert 0.0 <= r2 <= 1.0


# -- serialization ------------------------------------------------------------------

def test_scores_csv_round_trip(tmp_path):
    recs = [
        ScoreRecord(0, 3, 1.5, 1.0 / 3.0, 0.1, (1.0 / 3.0 + 0.1) / 4.0, True),
        ScoreRecord(1, 4, 2.5, 0.0, 0.0, 0.0, None),
        ScoreRecord(2, 5, 3.5, 1.0, 1.0, 0.5, False),
    ]
    path = tmp_path / "scores.csv"
    write_scores_csv(recs, path)
    lines = path.read_text().splitlines()
    assert lines[0] == "edge_index,node,time,sc_c,sc_g,sc,label"
    assert lines[2].endswith(",")  # unknown label stays blank
    back = read_scores_csv(path)
    assert back == recs


def test_read_scores_csv_rejects_garbage(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("edge_index,node,time,sc_c,sc_g,sc,label\n1,2\n")
    with pytest.raises(ParseError, match="line 2"):
        read_scores_csv(path)
    path.write_text("wrong,header\n")
    with pytest.raises(ParseError, match="line 1"):
        read_scores_csv(path)


def test_metrics_json_sorted_keys(tmp_path):
    rep = MetricReport(auc=0.9, ap=0.8, n_pos=10, n_neg=90)
    path = tmp_path / "metrics.json"
    write_metrics_json(rep, path)
    payload = json.loads(path.read_text())
    assert payload == {"auc": 0.9, "ap": 0.8, "n_pos": 10, "n_neg": 90}
    text = path.read_text()
    assert text.index('"ap"') < text.index('"auc"') < text.index('"n_neg"')


def test_type_distribution_rows():
    recs = [ScoreRecord(0, 0, 1.0, 1, 1, 0.5, None),
            ScoreRecord(2, 1, 2.0, 1, 1, 0.7, None),
            ScoreRecord(9, 1, 3.0, 1, 1, 0.2, None)]
    tags = np.array(["NORMAL", "T1", "T2"])
    pairs, timeline = type_distribution_rows(recs, tags)
    assert pairs == [("NORMAL", 0.5), ("T2", 0.7), ("NORMAL", 0.2)]
    assert timeline[1] == (2.0, 0.7, "T2")
    with pytest.raises(ParseError):
        type_distribution_rows(recs, np.array(["BOGUS"]))
