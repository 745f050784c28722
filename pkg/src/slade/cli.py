"""Command-line surface: ingest, inject, train, score, eval, bench,
gradcheck, export-dist.

Exit codes: 0 success, 1 runtime failure, 2 usage error. Every report
command writes its delimited output and renders a matching PNG figure
next to it.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import checks, config as cfgmod, datasets, plots, scoring
from .errors import SladeError
from .memory import MemoryStore
from .model import SladeModel
from .stream import chronological_split
from .training import train, write_loss_history

GRADCHECK_TOLERANCE = 1e-4


def _add_config_flags(parser, keys):
    for key in keys:
        default = cfgmod.DEFAULTS[key]
        flag = "--" + key.replace("_", "-")
        if isinstance(default, bool):
            parser.add_argument(flag, dest=key, action="store_const", const=True,
                                default=None, help=f"default {default}")
        else:
            parser.add_argument(flag, dest=key, type=type(default), default=None,
                                help=f"default {default}")


def _resolved(args):
    overrides = {k: getattr(args, k) for k in cfgmod.DEFAULTS if hasattr(args, k)}
    return cfgmod.resolve_config(getattr(args, "config", None), overrides)


def _stream_stats(stream):
    labeled = stream.labels != -1
    anomalous = int(np.sum(stream.labels == 1))
    ratio = anomalous / len(stream) if len(stream) else 0.0
    return {
        "edges": len(stream),
        "nodes": stream.node_count,
        "labeled_edges": int(labeled.sum()),
        "anomalous_edges": anomalous,
        "anomaly_ratio": ratio,
        "anomaly_pct": round(100.0 * ratio, 2),
    }


def cmd_ingest(args):
    if args.format == "jodie":
        stream = datasets.load_jodie_csv(args.src)
    elif args.format == "signed":
        stream = datasets.load_signed_network(args.src,
                                              reverse_direction=not args.keep_direction)
    else:
        interval = None if args.no_interval else tuple(args.interval)
        stream = datasets.load_email_eu(args.src, interval=interval)
    datasets.write_stream_csv(stream, args.out)
    stats = _stream_stats(stream)
    print(f"{stats['edges']} edges, {stats['nodes']} nodes")
    print(json.dumps(stats, sort_keys=True))
    return 0


def cmd_inject(args):
    stream = datasets.read_stream_csv(args.stream)
    cfg = datasets.InjectionConfig(
        mode=args.mode, n_anomalous_nodes=args.anomalous_nodes,
        burst_destinations=args.burst_destinations,
        jitter_seconds=args.jitter, target_ratio=args.target_ratio,
        eval_region_fraction=args.eval_fraction, seed=args.seed,
    )
    injected, tags = datasets.inject_anomalies(stream, cfg)
    datasets.write_stream_csv(injected, args.out)
    tags_path = args.tags_out or args.out + ".tags.csv"
    datasets.write_tags_csv(tags, tags_path)
    n_injected = int(np.sum(tags != "NORMAL"))
    print(json.dumps({
        "edges": len(injected),
        "injected_edges": n_injected,
        "injected_ratio": n_injected / len(stream),
        "tags_file": tags_path,
    }, sort_keys=True))
    return 0


def cmd_train(args):
    cfg = _resolved(args)
    stream = datasets.read_stream_csv(args.stream)
    train_split, _, _ = chronological_split(stream, cfgmod.split_ratios(cfg))
    model = SladeModel(cfgmod.model_config(cfg), seed=cfg["seed"])
    history = train(train_split, model, cfgmod.train_config(cfg),
                    cfgmod.loss_weights(cfg))
    os.makedirs(args.out_dir, exist_ok=True)
    ckpt = os.path.join(args.out_dir, "checkpoint.bin")
    datasets.save_checkpoint(ckpt, model.params, cfg)
    write_loss_history(history, os.path.join(args.out_dir, "loss_history.csv"))
    plots.save_loss_curve(history, os.path.join(args.out_dir, "loss_curve.png"))
    if history:
        print(f"trained {len(history)} batches over {cfg['epochs']} epochs; "
              f"final loss {history[-1].total:.6f}")
    else:
        print("empty training split; parameters unchanged")
    print(f"checkpoint: {ckpt}")
    return 0


def _scored_records(args, cfg, model):
    stream = datasets.read_stream_csv(args.stream)
    store = MemoryStore(model.config.memory_dim, model.config.max_neighbors,
                        size_hint=stream.node_count)
    if args.split == "test":
        train_split, valid_split, test_split = chronological_split(
            stream, cfgmod.split_ratios(cfg))
        from .training import advance_stream
        advance_stream(model, store, train_split, batch_size=args.replay_batch)
        advance_stream(model, store, valid_split, batch_size=args.replay_batch)
        offset = len(train_split) + len(valid_split)
        target = test_split
    else:
        offset = 0
        target = stream
    return scoring.stream_inference(target, model, store,
                                    batch_size=args.batch_size,
                                    index_offset=offset)


def cmd_score(args):
    cfg = _resolved(args)
    model, _, _ = datasets.model_from_checkpoint(args.checkpoint)
    records = _scored_records(args, cfg, model)
    os.makedirs(args.out_dir, exist_ok=True)
    out = os.path.join(args.out_dir, "scores.csv")
    scoring.write_scores_csv(records, out)
    print(f"wrote {len(records)} scores to {out}")
    return 0


def cmd_eval(args):
    cfg = _resolved(args)
    model, _, _ = datasets.model_from_checkpoint(args.checkpoint)
    records = _scored_records(args, cfg, model)
    os.makedirs(args.out_dir, exist_ok=True)
    scoring.write_scores_csv(records, os.path.join(args.out_dir, "scores.csv"))
    report = scoring.metric_report(records)
    scoring.write_metrics_json(report, os.path.join(args.out_dir, "metrics.json"))
    plots.save_score_histogram(records,
                               os.path.join(args.out_dir, "score_hist.png"))
    print(json.dumps({"auc": report.auc, "ap": report.ap,
                      "n_pos": report.n_pos, "n_neg": report.n_neg},
                     sort_keys=True))
    return 0


def cmd_bench(args):
    model, _, _ = datasets.model_from_checkpoint(args.checkpoint)
    stream = datasets.read_stream_csv(args.stream)
    fractions = [float(p) for p in args.prefixes.split(",") if p.strip()]
    if not fractions:
        print("empty prefix list", file=sys.stderr)
        return 1
    rows, r2 = scoring.latency_bench(stream, model, fractions,
                                     batch_size=args.batch_size)
    os.makedirs(args.out_dir, exist_ok=True)
    scoring.write_bench_csv(rows, r2, os.path.join(args.out_dir, "bench.csv"))
    plots.save_bench_curve(rows, r2, os.path.join(args.out_dir, "bench.png"))
    for row in rows:
        print(f"{row.n_edges} edges: {row.total_s:.3f}s total, "
              f"{1e3 * row.per_edge_s:.4f} ms/edge")
    print(f"linear fit R^2 = {r2:.6f}")
    return 0


def cmd_gradcheck(args):
    errors = checks.check_components(args.seed)
    failed = False
    for name, err in errors.items():
        ok = err < GRADCHECK_TOLERANCE
        failed = failed or not ok
        print(f"{name:20s} max_rel_err={err:.3e} {'PASS' if ok else 'FAIL'}")
    return 1 if failed else 0


def cmd_export_dist(args):
    records = scoring.read_scores_csv(args.scores)
    tags = None
    if args.tags and os.path.exists(args.tags):
        tags = datasets.read_tags_csv(args.tags)
    elif args.tags:
        print(f"warning: tags file {args.tags} not found; "
              "exporting all rows as NORMAL", file=sys.stderr)
    pairs, timeline = scoring.type_distribution_rows(records, tags)
    os.makedirs(args.out_dir, exist_ok=True)
    with open(os.path.join(args.out_dir, "type_scores.csv"), "w",
              encoding="utf-8") as f:
        f.write("type,score\n")
        for tag, score in pairs:
            f.write(f"{tag},{score!r}\n")
    with open(os.path.join(args.out_dir, "score_timeline.csv"), "w",
              encoding="utf-8") as f:
        f.write("time,score,type\n")
        for t, score, tag in timeline:
            f.write(f"{t!r},{score!r},{tag}\n")
    plots.save_type_distributions(pairs,
                                  os.path.join(args.out_dir, "type_dist.png"))
    print(f"exported {len(pairs)} rows")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="slade",
        description="Self-supervised anomaly detection over temporal edge streams",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="normalize a raw dataset file")
    p.add_argument("src", help="raw dataset path")
    p.add_argument("--format", required=True, choices=("jodie", "signed", "emaileu"))
    p.add_argument("--out", required=True, help="normalized stream CSV path")
    p.add_argument("--keep-direction", action="store_true",
                   help="signed format: keep rater->rated orientation")
    p.add_argument("--interval", nargs=2, type=float,
                   default=list(datasets.EMAIL_EU_INTERVAL),
                   help="emaileu: open time interval filter")
    p.add_argument("--no-interval", action="store_true",
                   help="emaileu: disable the interval filter")
    p.set_defaults(fn=cmd_ingest)

    p = sub.add_parser("inject", help="plant synthetic anomalies in a stream")
    p.add_argument("stream", help="normalized stream CSV")
    p.add_argument("--mode", required=True, choices=("hijack", "new"))
    p.add_argument("--out", required=True)
    p.add_argument("--tags-out", default=None,
                   help="sidecar tags CSV (default: <out>.tags.csv)")
    p.add_argument("--anomalous-nodes", type=int, default=10)
    p.add_argument("--burst-destinations", type=int, default=10)
    p.add_argument("--jitter", type=float, default=300.0)
    p.add_argument("--target-ratio", type=float, default=0.01)
    p.add_argument("--eval-fraction", type=float, default=0.10)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=cmd_inject)

    p = sub.add_parser("train", help="train on the chronological train split")
    p.add_argument("stream", help="normalized stream CSV")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--config", default=None, help="key = value config file")
    _add_config_flags(p, cfgmod.DEFAULTS)
    p.set_defaults(fn=cmd_train)

    for name, fn, extra_help in (("score", cmd_score, "write score CSV"),
                                 ("eval", cmd_eval, "score and compute metrics")):
        p = sub.add_parser(name, help=extra_help)
        p.add_argument("stream", help="normalized stream CSV")
        p.add_argument("--checkpoint", required=True)
        p.add_argument("--out-dir", required=True)
        p.add_argument("--split", choices=("test", "all"), default="test")
        p.add_argument("--batch-size", type=int, default=1,
                       help="inference batch size (default 1)")
        p.add_argument("--replay-batch", type=int, default=1,
                       help="batch size for the train+valid replay (default 1)")
        p.add_argument("--config", default=None)
        _add_config_flags(p, ("train_ratio", "valid_ratio", "test_ratio"))
        p.set_defaults(fn=fn)

    p = sub.add_parser("bench", help="inference latency over stream prefixes")
    p.add_argument("stream", help="normalized stream CSV")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--prefixes", default="0.2,0.4,0.6,0.8,1.0")
    p.add_argument("--batch-size", type=int, default=1)
    p.set_defaults(fn=cmd_bench)

    p = sub.add_parser("gradcheck", help="finite-difference gradient audit")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=cmd_gradcheck)

    p = sub.add_parser("export-dist", help="per-type score distributions")
    p.add_argument("--scores", required=True, help="score CSV from score/eval")
    p.add_argument("--tags", default=None, help="tags sidecar CSV")
    p.add_argument("--out-dir", required=True)
    p.set_defaults(fn=cmd_export_dist)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except (SladeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
