"""Command-line interface: ingest, sample, train, eval, report.

Every run resolves its settings from (profile defaults) < (config file) <
(command-line flags), validates them up front, and writes a manifest with the
resolved configuration, seed, and input checksums so it can be reproduced
exactly. Exit codes: 0 success, 1 runtime failure, 2 usage or parse error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from pathlib import Path

# settings from the tables reported for each public dataset; time_unit is
# seconds per day since those datasets carry epoch-second timestamps
PROFILES = {
    "transaction": dict(m=10000, max_len=5, min_len=3, k=128, heads=4, blocks=3,
                        batch_size=200, lr=0.005, time_unit=86400.0, epochs=30),
    "hyperlink": dict(m=200000, max_len=5, min_len=3, k=128, heads=8, blocks=6,
                      batch_size=500, lr=0.005, time_unit=86400.0, epochs=100),
    "discussion": dict(m=300000, max_len=10, min_len=3, k=128, heads=8, blocks=6,
                       batch_size=300, lr=0.005, time_unit=86400.0, epochs=100),
}

DEFAULTS = dict(m=1000, max_len=5, min_len=3, seed=0, test_fraction=0.2,
                k=32, heads=2, blocks=1, dropout=0.1,
                batch_size=100, lr=0.005, epochs=10, neg_samples=5,
                window_len=10, window_step=5, time_unit=1.0,
                checkpoint_every=0, use_structure=True, decay_on_normalized=True,
                init_mode="random", threads=1)

_INT_KEYS = {"m", "max_len", "min_len", "seed", "k", "heads", "blocks",
             "batch_size", "epochs", "neg_samples", "window_len", "window_step",
             "checkpoint_every", "threads"}
_FLOAT_KEYS = {"test_fraction", "lr", "dropout", "time_unit"}
_BOOL_KEYS = {"use_structure", "decay_on_normalized"}
_STR_KEYS = {"init_mode", "init_file"}


class UsageError(ValueError):
    pass


def _coerce(key: str, raw):
    if key in _INT_KEYS:
        return int(raw)
    if key in _FLOAT_KEYS:
        return float(raw)
    if key in _BOOL_KEYS:
        if isinstance(raw, bool):
            return raw
        if str(raw).lower() in ("1", "true", "yes"):
            return True
        if str(raw).lower() in ("0", "false", "no"):
            return False
        raise UsageError(f"bad boolean for {key}: {raw!r}")
    if key in _STR_KEYS:
        return str(raw)
    raise UsageError(f"unknown config key: {key!r}")


def read_config_file(path) -> dict:
    out = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise UsageError(f"{path}:{lineno}: expected key=value")
            key, _, raw = line.partition("=")
            out[key.strip()] = _coerce(key.strip(), raw.strip())
    return out


def resolve_config(args) -> dict:
    cfg = dict(DEFAULTS)
    if getattr(args, "profile", None):
        cfg.update(PROFILES[args.profile])
    if getattr(args, "config", None):
        cfg.update(read_config_file(args.config))
    for key in list(DEFAULTS) + ["init_file"]:
        flag = getattr(args, key, None)
        if flag is not None:
            cfg[key] = _coerce(key, flag)
    return cfg


def _file_digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(path, command: str, cfg: dict, inputs: dict, outputs: dict,
                   extra: dict | None = None) -> None:
    body = {
        "command": command,
        "config": {k: cfg[k] for k in sorted(cfg)},
        "config_digest": hashlib.sha256(
            json.dumps(cfg, sort_keys=True, default=str).encode()).hexdigest()[:16],
        "inputs": {name: _file_digest(p) for name, p in inputs.items()},
        "outputs": {name: str(p) for name, p in outputs.items()},
    }
    if extra:
        body.update(extra)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(body, sort_keys=True, indent=2) + "\n")


# -- subcommands -----------------------------------------------------------

def cmd_ingest(args) -> int:
    from .graph import export_graph_text, ingest_edge_list, save_graph

    cfg = resolve_config(args)
    graph = ingest_edge_list(args.input, schema=args.schema, delimiter=args.delimiter,
                             labels_path=args.labels)
    save_graph(graph, args.out)
    if args.text_export:
        export_graph_text(graph, args.text_export)
    stats = graph.stats(time_unit=cfg["time_unit"] if cfg["time_unit"] > 1 else 86400.0)
    print(f"|V|={stats['vertices']} |E|={stats['edges']} "
          f"mean_degree={stats['mean_degree']:.3f} "
          f"mean_occurrences={stats['mean_occurrences']:.3f} "
          f"mean_toe_days={stats['mean_toe']:.3f} std_toe_days={stats['std_toe']:.3f}")
    inputs = {"edges": args.input}
    if args.labels:
        inputs["labels"] = args.labels
    write_manifest(Path(args.out).with_suffix(".manifest.json"), "ingest", cfg,
                   inputs, {"graph": args.out}, extra={"stats": stats})
    return 0


def cmd_sample(args) -> int:
    from .graph import load_graph
    from .walks import WalkConfig, build_corpora, export_corpus_text, save_corpus

    cfg = resolve_config(args)
    graph = load_graph(args.graph)
    wcfg = WalkConfig(m=cfg["m"], max_len=cfg["max_len"], min_len=cfg["min_len"],
                      seed=cfg["seed"])
    wcfg.validate(graph)
    train_c, test_c = build_corpora(graph, wcfg, cfg["test_fraction"],
                                    workers=cfg["threads"])
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    train_path = out_dir / "train.corpus"
    test_path = out_dir / "test.corpus"
    save_corpus(train_c, train_path)
    save_corpus(test_c, test_path)
    if args.text_export:
        export_corpus_text(train_c, out_dir / "train.txt")
        export_corpus_text(test_c, out_dir / "test.txt")
    print(f"train: {len(train_c)} sequences ({train_c.meta['rejected']} rejected) | "
          f"test: {len(test_c)} sequences ({test_c.meta['rejected']} rejected)")
    write_manifest(out_dir / "sample.manifest.json", "sample", cfg,
                   {"graph": args.graph},
                   {"train": train_path, "test": test_path},
                   extra={"train_meta": train_c.meta, "test_meta": test_c.meta,
                          "edge_disjoint": True})
    return 0


def cmd_train(args) -> int:
    from .graph import load_graph
    from .model import EmbeddingModel, ModelConfig, save_checkpoint
    from .training import (NaNLossError, TrainConfig, init_embeddings, train,
                           write_loss_csv)
    from .walks import WindowConfig, load_corpus

    cfg = resolve_config(args)
    graph = load_graph(args.graph)
    corpus = load_corpus(args.train_corpus)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    mc = ModelConfig(n_vertices=graph.num_vertices, k=cfg["k"], heads=cfg["heads"],
                     blocks=cfg["blocks"], max_len=corpus.max_len,
                     dropout=cfg["dropout"], seed=cfg["seed"])
    r_init = init_embeddings(graph.num_vertices, cfg["k"], mode=cfg["init_mode"],
                             path=cfg.get("init_file"), labels=graph.labels,
                             seed=cfg["seed"])
    model = EmbeddingModel(mc, r_init=r_init)
    tc = TrainConfig(batch_size=cfg["batch_size"], lr=cfg["lr"], epochs=cfg["epochs"],
                     neg_samples=cfg["neg_samples"],
                     window=WindowConfig(cfg["window_len"], cfg["window_step"]),
                     seed=cfg["seed"], time_unit=cfg["time_unit"],
                     decay_on_normalized=cfg["decay_on_normalized"],
                     use_structure=cfg["use_structure"],
                     checkpoint_every=cfg["checkpoint_every"])
    ckpt_path = out_dir / "checkpoint_final.bin"
    epoch_seen = {}

    def on_batch(report):
        epoch_seen.setdefault(report.epoch, [0.0, 0])
        epoch_seen[report.epoch][0] += report.wall_ms
        epoch_seen[report.epoch][1] += 1
        if report.batch == 0:
            print(f"epoch {report.epoch}: total={report.total:.4f} "
                  f"(l_v={report.l_v:.4f} l_s={report.l_s:.4f} "
                  f"l_edg={report.l_edg:.4f} l_toe={report.l_toe:.4f})")

    try:
        reports = train(graph, corpus, model, tc, on_batch=on_batch,
                        checkpoint_dir=out_dir)
    except NaNLossError as err:
        params, table = err.snapshot
        model.set_param_values(params)
        model.r_table = table
        save_checkpoint(model, out_dir / "checkpoint_last_good.bin")
        print(f"aborted: {err} (last good state saved)", file=sys.stderr)
        return 1
    save_checkpoint(model, ckpt_path)
    write_loss_csv(reports, out_dir / "loss.csv")
    for epoch, (ms, _) in sorted(epoch_seen.items()):
        print(f"epoch {epoch} wall: {ms:.0f} ms")
    write_manifest(out_dir / "train.manifest.json", "train", cfg,
                   {"graph": args.graph, "train_corpus": args.train_corpus},
                   {"checkpoint": ckpt_path, "loss_csv": out_dir / "loss.csv"},
                   extra={"batches": len(reports)})
    return 0


def cmd_eval(args) -> int:
    from .evaluation import (static_edge_prediction, time_aware_edge_prediction,
                             toe_prediction, vertex_classification, write_reports,
                             write_sweep_csv)
    from .graph import load_graph
    from .model import load_checkpoint
    from .walks import load_corpus

    cfg = resolve_config(args)
    tasks = [t.strip() for t in args.tasks.split(",") if t.strip()]
    known = {"toe", "static", "timeaware", "classify"}
    bad = set(tasks) - known
    if bad:
        raise UsageError(f"unknown tasks: {sorted(bad)} (choose from {sorted(known)})")
    model = load_checkpoint(args.checkpoint)
    corpus = load_corpus(args.test_corpus)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    table = model.r_table
    w_toe = model.params["w_toe"].value
    reports = []
    for task in tasks:
        if task == "toe":
            reports.append(toe_prediction(corpus, table, w_toe,
                                          time_unit=cfg["time_unit"]))
        elif task == "static":
            reports.append(static_edge_prediction(corpus, table))
        elif task == "timeaware":
            rep = time_aware_edge_prediction(corpus, table, w_toe,
                                             time_unit=cfg["time_unit"])
            write_sweep_csv(rep, out_dir / "sweep.csv")
            reports.append(rep)
        elif task == "classify":
            if not args.graph:
                print("classify task needs --graph for the label sidecar", file=sys.stderr)
                return 1
            graph = load_graph(args.graph)
            if not graph.class_labels:
                print("graph carries no class labels; ingest with --labels", file=sys.stderr)
                return 1
            train_vertices = set()
            if args.train_corpus:
                for s in load_corpus(args.train_corpus).sequences:
                    train_vertices.update(int(v) for v in s.vids[:s.real_len])
            else:
                train_vertices = set(range(0, graph.num_vertices, 2))
            labeled = graph.class_labels
            train_labels = {v: c for v, c in labeled.items() if v in train_vertices}
            test_labels = {v: c for v, c in labeled.items() if v not in train_vertices}
            skipped = graph.num_vertices - len(labeled)
            if skipped:
                print(f"classify: {skipped} vertices without labels skipped")
            reports.append(vertex_classification(train_labels, test_labels, table))
    write_reports(reports, out_dir / "report.json", out_dir / "report.txt",
                  with_timing=args.timing)
    for rep in reports:
        print(rep.to_text(), end="")
    inputs = {"checkpoint": args.checkpoint, "test_corpus": args.test_corpus}
    if args.graph:
        inputs["graph"] = args.graph
    write_manifest(out_dir / "eval.manifest.json", "eval", cfg, inputs,
                   {"report": out_dir / "report.json"}, extra={"tasks": tasks})
    return 0


def cmd_report(args) -> int:
    with open(args.report, "r", encoding="utf-8") as fh:
        body = json.load(fh)
    for task in sorted(body):
        print(f"== {task} ==")
        for key, val in sorted(body[task].get("metrics", {}).items()):
            print(f"  {key:<24} {val}")
        for eps, prec in body[task].get("sweep", []) or []:
            print(f"  eps {eps:<6} precision {prec:.6f}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dygem",
                                     description="dynamic-graph embedding pipeline")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--profile", choices=sorted(PROFILES))
        p.add_argument("--config", help="key=value settings file")
        p.add_argument("--seed", type=int)
        p.add_argument("--threads", type=int)
        p.add_argument("--time-unit", dest="time_unit", type=float)

    p = sub.add_parser("ingest", help="parse an edge list into a graph file")
    p.add_argument("input")
    p.add_argument("--schema", default="src,dst,ts")
    p.add_argument("--delimiter", default=",")
    p.add_argument("--labels", help="vertex_label,class_label sidecar")
    p.add_argument("--out", required=True)
    p.add_argument("--text-export", dest="text_export")
    common(p)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("sample", help="split and sample walk corpora")
    p.add_argument("--graph", required=True)
    p.add_argument("--out-dir", dest="out_dir", required=True)
    p.add_argument("--m", type=int)
    p.add_argument("--max-len", dest="max_len", type=int)
    p.add_argument("--min-len", dest="min_len", type=int)
    p.add_argument("--test-fraction", dest="test_fraction", type=float)
    p.add_argument("--text-export", dest="text_export", action="store_true")
    common(p)
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("train", help="train embeddings on a corpus")
    p.add_argument("--graph", required=True)
    p.add_argument("--train-corpus", dest="train_corpus", required=True)
    p.add_argument("--out-dir", dest="out_dir", required=True)
    for key in ("k", "heads", "blocks", "batch_size", "epochs", "neg_samples",
                "window_len", "window_step", "checkpoint_every"):
        p.add_argument(f"--{key.replace('_', '-')}", dest=key, type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--dropout", type=float)
    p.add_argument("--no-structure", dest="use_structure", action="store_const", const=False)
    p.add_argument("--raw-decay", dest="decay_on_normalized", action="store_const", const=False)
    p.add_argument("--init-mode", dest="init_mode", choices=["random", "file"])
    p.add_argument("--init-file", dest="init_file")
    common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="run downstream tasks from a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--test-corpus", dest="test_corpus", required=True)
    p.add_argument("--graph", help="needed for the classify task")
    p.add_argument("--train-corpus", dest="train_corpus",
                   help="defines the classify train/test vertex split")
    p.add_argument("--tasks", default="toe,static,timeaware")
    p.add_argument("--out-dir", dest="out_dir", required=True)
    p.add_argument("--timing", action="store_true",
                   help="include wall times in the report (breaks byte-for-byte "
                        "comparability)")
    common(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("report", help="pretty-print a report file")
    p.add_argument("report")
    p.set_defaults(func=cmd_report)
    return parser


def _pin_blas_threads_early() -> None:
    """Honor --threads 1 before numpy loads so BLAS pools cannot introduce
    run-to-run reduction-order differences."""
    argv = sys.argv
    if "numpy" in sys.modules:
        return
    for i, arg in enumerate(argv):
        if arg == "--threads" and i + 1 < len(argv):
            n = argv[i + 1]
        elif arg.startswith("--threads="):
            n = arg.split("=", 1)[1]
        else:
            continue
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
            os.environ.setdefault(var, n)
        break


def main(argv=None) -> int:
    if argv is None:
        _pin_blas_threads_early()
        argv = sys.argv[1:]
    parser = build_parser()
    args = parser.parse_args(argv)
    from .graph import GraphFormatError, IngestError
    try:
        return args.func(args)
    except (IngestError, UsageError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    except (GraphFormatError, ValueError, OSError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
