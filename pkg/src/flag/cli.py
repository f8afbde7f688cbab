"""Command-line entry point.

Typical workflow::

    flag gen-corpus --out corpus
    flag build-graphs --manifest corpus/manifest.jsonl --config corpus/config.txt --out run/graphs
    flag label --manifest corpus/manifest.jsonl --prices corpus/prices.csv --out run/labels.jsonl
    flag train --manifest corpus/manifest.jsonl --graphs run/graphs --labels run/labels.jsonl \\
               --config corpus/config.txt --out run/model
    flag eval --model run/model/model.flagm --graphs run/graphs --split run/model/split.json
    flag explain --graph run/graphs/D0081.flagg --model run/model/model.flagm --top-k 3
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace

from flag import corpus as corpus_mod
from flag.config import load_config
from flag.embeddings import FileEmbeddings, PseudoEmbeddings, TokenEmbeddingArchive
from flag.explainer import ExplainerConfig, emit_explanation, explain, rank_sentences, sentence_texts
from flag.graph import (attach_features, build_document_graph, format_stats_table, graph_stats,
                        load_graph, save_graph)
from flag.labeling import label_events, load_prices, read_labels, write_labels
from flag.model import load_checkpoint, save_checkpoint
from flag.penman import parse_penman_file
from flag.trainer import (DatasetSplit, SplitSpec, TrainConfig, emit_report, evaluate,
                          format_report_table, make_split, train)

log = logging.getLogger("flag")

PLANTED_CONFIG = """\
# planted-signal corpus: the default FLAG layout scaled down
epochs = 20
lr = 1e-3
layers = 4
heads = 4
hidden_dim = 64
layer_kind = gatv2
seed = 0
selection = loss
horizon = daily
split.test_year = {test_year}
split.val_fraction = 0.2
provider.mode = pseudo
provider.dim = {dim}
provider.seed = {seed}
"""


def _resolve_config(args):
    cfg = load_config(getattr(args, "config", None))
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    print("# resolved config")
    print(cfg.to_text(), end="")
    sys.stdout.flush()
    return cfg


def _graph_path(graph_dir, doc_id):
    return os.path.join(graph_dir, f"{doc_id}.flagg")


def make_provider(cfg):
    if cfg.provider_mode == "file":
        return FileEmbeddings(TokenEmbeddingArchive.load(cfg.provider_archive), cfg.provider_dim)
    return PseudoEmbeddings(cfg.provider_dim, cfg.provider_seed)


# -- commands --------------------------------------------------------------


def cmd_gen_corpus(args):
    records = corpus_mod.generate_corpus(args.out, n_trainval=args.n_trainval, n_test=args.n_test,
                                         seed=args.seed or 0, dim=args.dim, test_year=args.test_year)
    with open(os.path.join(args.out, "config.txt"), "w", encoding="utf-8") as fh:
        fh.write(PLANTED_CONFIG.format(dim=args.dim, seed=args.seed or 0, test_year=args.test_year))
    print(f"wrote {len(records)} documents to {args.out}")
    return 0


def _build_one(rec, provider, out_dir):
    sentences = parse_penman_file(rec.amr_path)
    graph = attach_features(build_document_graph(rec.doc_id, sentences), provider, sentences)
    save_graph(graph, _graph_path(out_dir, rec.doc_id))
    return graph


def cmd_build_graphs(args):
    cfg = _resolve_config(args)
    if args.provider:
        cfg.provider_mode = args.provider
    if args.archive:
        cfg.provider_archive, cfg.provider_mode = args.archive, "file"
    if args.dim:
        cfg.provider_dim = args.dim
    cfg.validate()
    provider = make_provider(cfg)
    records = corpus_mod.read_manifest(args.manifest)
    os.makedirs(args.out, exist_ok=True)

    def job(rec):
        try:
            return rec.doc_id, _build_one(rec, provider, args.out), None
        except (OSError, ValueError, LookupError) as exc:
            return rec.doc_id, None, exc

    with ThreadPoolExecutor(max_workers=max(1, args.threads)) as pool:
        results = list(pool.map(job, records))
    failures = [(d, e) for d, _, e in results if e is not None]
    for doc_id, exc in failures:
        log.error("%s: %s", doc_id, exc)
    graphs = [g for _, g, _ in results if g is not None]
    if graphs:
        stats = graph_stats(graphs)
        table = format_stats_table([("corpus", stats)])
        with open(os.path.join(args.out, "stats.txt"), "w", encoding="utf-8") as fh:
            fh.write(table)
        with open(os.path.join(args.out, "stats.json"), "w", encoding="utf-8") as fh:
            json.dump({"n_graphs": len(graphs), "n_nodes": stats.n_nodes, "n_edges": stats.n_edges,
                       "avg_degree": stats.avg_degree}, fh, indent=2, sort_keys=True)
            fh.write("\n")
        print(table, end="")
    print(f"built {len(graphs)} graphs, {len(failures)} failures")
    return 1 if failures else 0


def cmd_label(args):
    cfg = _resolve_config(args)
    horizon = args.horizon or cfg.horizon
    records = corpus_mod.read_manifest(args.manifest)
    labeled = label_events([r.event for r in records], load_prices(args.prices), horizon)
    write_labels(labeled, args.out)
    print(f"labelled {len(labeled)} of {len(records)} events ({horizon})")
    return 0


def _load_split_graphs(graph_dir, items):
    return [(load_graph(_graph_path(graph_dir, d)), y) for d, y in items]


def _train_config(cfg, layer_kind=None):
    model_cfg = cfg.model_config()
    if layer_kind:
        model_cfg = replace(model_cfg, layer_kind=layer_kind)
    return TrainConfig(epochs_max=cfg.epochs, lr=cfg.lr, seed=cfg.seed, model=model_cfg,
                       selection=cfg.selection)


def _split(args, cfg):
    records = corpus_mod.read_manifest(args.manifest)
    labels = read_labels(args.labels)
    return make_split(records, labels, SplitSpec(cfg.split_test_year, cfg.split_val_fraction, cfg.seed))


def _write_split(split, path):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump({"train": split.train, "validation": split.validation, "test": split.test,
                   "test_year_start": split.spec.test_year_start,
                   "val_fraction": split.spec.val_fraction, "seed": split.spec.seed}, fh, indent=1)
        fh.write("\n")


def _read_split(path):
    with open(path, encoding="utf-8") as fh:
        d = json.load(fh)
    spec = SplitSpec(d["test_year_start"], d["val_fraction"], d["seed"])
    return DatasetSplit(*[[tuple(x) for x in d[k]] for k in ("train", "validation", "test")], spec)


def cmd_train(args):
    cfg = _resolve_config(args)
    split = _split(args, cfg)
    train_set = _load_split_graphs(args.graphs, split.train)
    val_set = _load_split_graphs(args.graphs, split.validation)
    test_set = _load_split_graphs(args.graphs, split.test)
    os.makedirs(args.out, exist_ok=True)
    result = train(train_set, val_set, _train_config(cfg))
    save_checkpoint(result.model, os.path.join(args.out, "model.flagm"))
    _write_split(split, os.path.join(args.out, "split.json"))
    with open(os.path.join(args.out, "epochs.jsonl"), "w", encoding="utf-8") as fh:
        fh.write("\n".join(result.log_lines()) + "\n")
    report = evaluate(result.model, test_set)
    emit_report(report, os.path.join(args.out, "test_report"))
    print(f"best epoch {result.best_epoch}")
    print(format_report_table([("FLAG (test)", report)]), end="")
    return 0


def cmd_eval(args):
    _resolve_config(args)
    model = load_checkpoint(args.model)
    split = _read_split(args.split)
    items = split.train + split.validation + split.test if args.subset == "all" else getattr(split, args.subset)
    report = evaluate(model, _load_split_graphs(args.graphs, items))
    if args.out:
        emit_report(report, args.out)
    print(format_report_table([(f"FLAG ({args.subset})", report)]), end="")
    return 0


def cmd_explain(args):
    _resolve_config(args)
    graph = load_graph(args.graph)
    model = load_checkpoint(args.model)
    config = ExplainerConfig(hops=args.hops, epochs=args.epochs, seed=args.seed or 0)
    mask = explain(graph, model, config=config)
    ranking = rank_sentences(mask, graph)
    if args.amr:
        texts = sentence_texts(parse_penman_file(args.amr))
    else:
        texts = [f"sentence {j}" for j in range(graph.n_sentences)]
    records = emit_explanation(ranking, texts, args.top_k, args.out, graph.doc_id)
    print(f"{graph.doc_id}: predicted class {mask.target_class}")
    for rec in records:
        print(f"{rec['rank']:>3}. [{rec['sentence_index']}] {rec['importance']:.4f}  {rec['text']}")
    return 0


def cmd_stats(args):
    paths = sorted(p for p in os.listdir(args.graphs) if p.endswith(".flagg"))
    if not paths:
        print(f"no graph files in {args.graphs}", file=sys.stderr)
        return 1
    stats = graph_stats(load_graph(os.path.join(args.graphs, p)) for p in paths)
    print(format_stats_table([(f"{len(paths)} graphs", stats)]), end="")
    return 0


def cmd_ablate(args):
    cfg = _resolve_config(args)
    split = _split(args, cfg)
    train_set = _load_split_graphs(args.graphs, split.train)
    val_set = _load_split_graphs(args.graphs, split.validation)
    test_set = _load_split_graphs(args.graphs, split.test)
    rows, summary = [], {}
    for kind in args.kinds:
        result = train(train_set, val_set, _train_config(cfg, kind))
        report = evaluate(result.model, test_set)
        rows.append((kind, report))
        summary[kind] = {"final_train_loss": result.log[-1].train_loss, "best_epoch": result.best_epoch,
                         **report.to_dict()}
    table = format_report_table(rows)
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        with open(os.path.join(args.out, "ablation.txt"), "w", encoding="utf-8") as fh:
            fh.write(table)
        with open(os.path.join(args.out, "ablation.json"), "w", encoding="utf-8") as fh:
            json.dump(summary, fh, indent=2, sort_keys=True)
            fh.write("\n")
    print(table, end="")
    return 0


def cmd_pipeline(args):
    """build-graphs, label and train in sequence, stopping at the first failure."""
    corpus_dir, out = args.corpus, args.out
    config = args.config or os.path.join(corpus_dir, "config.txt")
    manifest = os.path.join(corpus_dir, "manifest.jsonl")
    graphs, labels, model_dir = (os.path.join(out, p) for p in ("graphs", "labels.jsonl", "model"))
    seed = ["--seed", str(args.seed)] if args.seed is not None else []
    steps = [
        ["build-graphs", "--manifest", manifest, "--config", config, "--out", graphs, *seed],
        ["label", "--manifest", manifest, "--prices", os.path.join(corpus_dir, "prices.csv"),
         "--config", config, "--out", labels, *seed],
        ["train", "--manifest", manifest, "--graphs", graphs, "--labels", labels, "--config", config,
         "--out", model_dir, *seed],
    ]
    for step in steps:
        code = main(step)
        if code:
            return code
    return 0


def build_parser():
    p = argparse.ArgumentParser(prog="flag", description="AMR document graphs + GATv2 classification")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def command(name, fn, help_text):
        sp = sub.add_parser(name, help=help_text)
        sp.add_argument("--seed", type=int, default=None)
        sp.set_defaults(func=fn)
        return sp

    sp = command("gen-corpus", cmd_gen_corpus, "write the synthetic planted-signal corpus")
    sp.add_argument("--out", required=True)
    sp.add_argument("--dim", type=int, default=32)
    sp.add_argument("--n-trainval", type=int, default=80)
    sp.add_argument("--n-test", type=int, default=32)
    sp.add_argument("--test-year", type=int, default=2019)

    sp = command("build-graphs", cmd_build_graphs, "build document graphs from AMR files")
    sp.add_argument("--manifest", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--config")
    sp.add_argument("--provider", choices=("pseudo", "file"))
    sp.add_argument("--archive")
    sp.add_argument("--dim", type=int)
    sp.add_argument("--threads", type=int, default=1)

    sp = command("label", cmd_label, "compute value-based trend labels")
    sp.add_argument("--manifest", required=True)
    sp.add_argument("--prices", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--config")
    sp.add_argument("--horizon", choices=("daily", "weekly"))

    for name, fn, help_text in (("train", cmd_train, "train and select on validation loss"),
                                ("ablate", cmd_ablate, "compare GATv2 / GAT / GCN layers")):
        sp = command(name, fn, help_text)
        sp.add_argument("--manifest", required=True)
        sp.add_argument("--graphs", required=True)
        sp.add_argument("--labels", required=True)
        sp.add_argument("--config")
        sp.add_argument("--out", required=(name == "train"))
        if name == "ablate":
            sp.add_argument("--kinds", nargs="+", default=["gatv2", "gat", "gcn"])

    sp = command("eval", cmd_eval, "evaluate a checkpoint")
    sp.add_argument("--model", required=True)
    sp.add_argument("--graphs", required=True)
    sp.add_argument("--split", required=True)
    sp.add_argument("--subset", choices=("train", "validation", "test", "all"), default="test")
    sp.add_argument("--config")
    sp.add_argument("--out")

    sp = command("explain", cmd_explain, "rank sentences with an edge-mask explanation")
    sp.add_argument("--graph", required=True)
    sp.add_argument("--model", required=True)
    sp.add_argument("--hops", type=int, default=3)
    sp.add_argument("--epochs", type=int, default=1000)
    sp.add_argument("--top-k", type=int, default=5)
    sp.add_argument("--amr", help="AMR file of the document, for sentence text")
    sp.add_argument("--config")
    sp.add_argument("--out", help="output path stem for .json/.txt")

    sp = command("stats", cmd_stats, "graph statistics of a directory of graph files")
    sp.add_argument("--graphs", required=True)

    sp = command("pipeline", cmd_pipeline, "build-graphs, label and train on a corpus directory")
    sp.add_argument("--corpus", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--config")
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (OSError, ValueError, LookupError, RuntimeError) as exc:
        print(f"flag {args.command}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
