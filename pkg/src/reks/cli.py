"""Command line pipeline: one subcommand per stage, artifacts in a work directory.

    reks synth --workdir runs/synth
    reks ingest --config runs/synth/reks.conf
    reks build-kg --config runs/synth/reks.conf
    ...

Exit codes: 0 ok, 1 configuration error, 2 data error, 3 internal error.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import __version__, synth
from .config import RunConfig, load_config
from .evaluate import ConfigError, ExperimentSetup, ablation_suite, comparison_table, evaluate
from .infer import beam_search, recommend, recommendation_record
from .ingest import DataError, DatasetSplit, load_dataset, parse_metadata
from .kg import GraphError, KnowledgeGraph, build_graph, graph_stats
from .model import ReksModel, SkipSession
from .train import Trainer
from .transe import EmbeddingTable, ranking_accuracy, train_transe

log = logging.getLogger("reks")

FILES = {
    "sessions": "sessions.json",
    "kg": "kg.tsv",
    "entities": "entities.tsv",
    "kg_stats": "kg_stats.json",
    "embeddings": "embeddings.bin",
    "model": "model.bin",
    "train_log": "train_log.jsonl",
    "recommendations": "recommendations.jsonl",
    "metrics": "metrics.json",
    "metrics_table": "metrics.txt",
    "ablation": "ablation.json",
    "ablation_table": "ablation.txt",
}


class UsageError(ConfigError):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with status 2 on bad usage; that code is reserved for data errors
    def error(self, message):
        raise UsageError(f"{message}\n{self.format_usage()}")


# -- helpers -------------------------------------------------------------------

def _dump(path: Path, obj):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(json.dumps(obj, sort_keys=True, indent=1) + "\n")


def _artifact(cfg: RunConfig, key: str) -> Path:
    return Path(cfg.workdir) / FILES[key]


def _need(cfg: RunConfig, key: str, stage: str) -> Path:
    p = _artifact(cfg, key)
    if not p.exists():
        raise DataError(f"missing {p}; run `reks {stage}` first")
    return p


def load_split(cfg: RunConfig) -> DatasetSplit:
    p = _need(cfg, "sessions", "ingest")
    try:
        return DatasetSplit.from_dict(json.loads(p.read_text(encoding="utf-8")))
    except (json.JSONDecodeError, KeyError) as e:
        raise DataError(f"{p}: unreadable session file ({e})") from None


def load_graph(cfg: RunConfig) -> KnowledgeGraph:
    return KnowledgeGraph.from_tsv(_need(cfg, "kg", "build-kg"), _need(cfg, "entities", "build-kg"))


def load_table(cfg: RunConfig, g: KnowledgeGraph) -> EmbeddingTable:
    table = EmbeddingTable.load(_need(cfg, "embeddings", "train-transe"))
    if table.num_entities != g.num_entities or table.num_relations != g.num_relations:
        raise DataError("embeddings do not match the graph; rerun `reks train-transe`")
    return table


def load_model(cfg: RunConfig) -> ReksModel:
    g = load_graph(cfg)
    table = load_table(cfg, g)
    return ReksModel.load(_need(cfg, "model", "train"), g, table)


# -- stages -----------------------------------------------------------------------

def cmd_synth(cfg: RunConfig, args) -> int:
    work = Path(args.workdir or cfg.workdir)
    inter, meta = synth.write_dataset(work, n_products=args.products, n_brands=args.brands,
                                      n_categories=args.categories, n_users=args.users,
                                      sessions_per_item=args.sessions_per_item, seed=cfg.seed)
    preset = synth.preset_config(cfg.seed)
    (work / "reks.conf").write_text(preset, encoding="utf-8")
    print(f"wrote {inter}, {meta} and {work / 'reks.conf'}")
    return 0


def cmd_ingest(cfg: RunConfig, args) -> int:
    split, _ = load_dataset(cfg.interactions, cfg.metadata, min_item_count=cfg.min_item_count,
                            min_session_len=cfg.min_session_len, ratios=cfg.split, seed=cfg.seed)
    Path(cfg.workdir).mkdir(parents=True, exist_ok=True)
    out = split.to_dict()
    out["fingerprint"] = cfg.fingerprint()
    _dump(_artifact(cfg, "sessions"), out)
    print(json.dumps(split.summary, sort_keys=True))
    return 0


def cmd_build_kg(cfg: RunConfig, args) -> int:
    split = load_split(cfg)
    meta = parse_metadata(cfg.metadata) if Path(cfg.metadata).exists() else []
    g = build_graph(split.train, meta, user_info=cfg.user_info, vocabulary=split.vocabulary())
    head = {"fingerprint": cfg.fingerprint()}
    g.to_tsv(_artifact(cfg, "kg"), head)
    g.entities_to_tsv(_artifact(cfg, "entities"), head)
    stats = graph_stats(g) | head
    _dump(_artifact(cfg, "kg_stats"), stats)
    print(json.dumps(stats, sort_keys=True))
    return 0


def cmd_train_transe(cfg: RunConfig, args) -> int:
    g = load_graph(cfg)
    table = train_transe(g, cfg.transe_config())
    acc = ranking_accuracy(g, table, seed=cfg.seed)
    table.save(_artifact(cfg, "embeddings"), fingerprint=cfg.fingerprint(),
               loss_history=[round(x, 8) for x in table.history], ranking_accuracy=acc)
    print(json.dumps({"final_loss": table.history[-1] if table.history else None,
                      "ranking_accuracy": acc}))
    return 0


def cmd_train(cfg: RunConfig, args) -> int:
    split = load_split(cfg)
    g = load_graph(cfg)
    table = load_table(cfg, g)
    d0, d1, d2 = cfg.dims
    model = ReksModel.create(g, table, cfg.encoder, d1, d2, dropout=cfg.dropout,
                             seed=cfg.seed, start=cfg.start)
    trainer = Trainer(model, cfg.train_config())
    fp = cfg.fingerprint()
    with open(_artifact(cfg, "train_log"), "w", encoding="utf-8", newline="\n") as fh:
        for _ in range(cfg.epochs):
            rep = trainer.train_epoch(split.train)
            row = {"epoch": rep.epoch, "L_r": rep.L_r, "L_ce": rep.L_ce, "L": rep.L,
                   "mean_reward": rep.mean_reward, "skipped_sessions": rep.skipped_sessions,
                   "fingerprint": fp}
            fh.write(json.dumps(row, sort_keys=True) + "\n")
    model.save(_artifact(cfg, "model"), fingerprint=fp, trainer=trainer.state())
    print(f"trained {cfg.epochs} epochs; checkpoint {_artifact(cfg, 'model')}")
    return 0


def cmd_recommend(cfg: RunConfig, args) -> int:
    split = load_split(cfg)
    model = load_model(cfg)
    n = args.path_length or cfg.path_length
    widths = list(cfg.widths(n))
    if args.p1 is not None:
        widths[0] = args.p1
    if args.p2 is not None and n > 1:
        widths[1] = args.p2
    K = args.topk or max(cfg.topk)
    if K < 1 or min(widths) < 1:
        raise ConfigError("--topk and beam widths must be >= 1")
    sessions = getattr(split, args.split)
    fp = cfg.fingerprint()
    out = Path(args.output) if args.output else _artifact(cfg, "recommendations")
    with open(out, "w", encoding="utf-8", newline="\n") as fh:
        for s in sessions:
            try:
                paths = beam_search(model, s, tuple(widths))
            except SkipSession:
                fh.write(recommendation_record(model, s, [], skipped=True, fingerprint=fp) + "\n")
                continue
            excl = model.item_entities(s.items) if cfg.exclude_seen else ()
            recs = recommend(paths, K, model.g, excl)
            fh.write(recommendation_record(model, s, recs, paths_per_item=args.paths_per_item,
                                           all_paths=paths, fingerprint=fp) + "\n")
    print(f"wrote {len(sessions)} sessions to {out}")
    return 0


def cmd_evaluate(cfg: RunConfig, args) -> int:
    split = load_split(cfg)
    model = load_model(cfg)
    Ks = cfg.topk
    if args.topk:
        try:
            Ks = tuple(int(k) for k in args.topk.split(","))
        except ValueError:
            raise ConfigError(f"--topk expects a comma-separated list, got {args.topk!r}") from None
        if min(Ks) < 1:
            raise ConfigError("--topk values must be >= 1")
    report = evaluate(model, getattr(split, args.split), Ks, cfg.widths(), seed=cfg.seed,
                      fingerprint=cfg.fingerprint(), exclude_seen=cfg.exclude_seen)
    _dump(_artifact(cfg, "metrics"), report.to_dict(with_sessions=True))
    _artifact(cfg, "metrics_table").write_text(report.table() + "\n", encoding="utf-8")
    print(report.table())
    return 0


def cmd_ablate(cfg: RunConfig, args) -> int:
    split = load_split(cfg)
    g = load_graph(cfg)
    table = load_table(cfg, g)
    _, d1, d2 = cfg.dims
    setup = ExperimentSetup(g, table, split.train, split.test, cfg.encoder, d1, d2, cfg.topk, cfg.seed)
    axes = args.axes.split(",") if args.axes else None
    seeds = [int(s) for s in args.seeds.split(",")] if args.seeds else None
    if axes is not None:
        unknown = set(axes) - {"reward", "loss", "start", "path_length"}
        if unknown:
            raise ConfigError(f"unknown ablation axes {sorted(unknown)}")
    results = ablation_suite(setup, cfg.train_config(), axes, seeds)
    K = min(cfg.topk)
    text = comparison_table(results, K)
    _dump(_artifact(cfg, "ablation"), {
        "fingerprint": cfg.fingerprint(),
        "results": {axis: {name: [r.to_dict() for r in reps] for name, reps in v.items()}
                    for axis, v in results.items()},
    })
    _artifact(cfg, "ablation_table").write_text(text + "\n", encoding="utf-8")
    print(text)
    return 0


COMMANDS = {
    "synth": cmd_synth,
    "ingest": cmd_ingest,
    "build-kg": cmd_build_kg,
    "train-transe": cmd_train_transe,
    "train": cmd_train,
    "recommend": cmd_recommend,
    "evaluate": cmd_evaluate,
    "ablate": cmd_ablate,
}


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="flat 'key = value' config file")
    common.add_argument("--workdir", help="artifact directory (overrides config)")
    common.add_argument("--seed", type=int, help="overrides config and REKS_SEED")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override any config key")
    common.add_argument("-q", "--quiet", action="store_true")

    p = _Parser(prog="reks", description="Knowledge-graph path reasoning for session recommendation.")
    p.add_argument("--version", action="version", version=f"reks {__version__}")
    sub = p.add_subparsers(dest="command", metavar="{" + ",".join(COMMANDS) + "}",
                           parser_class=_Parser)
    s = sub.add_parser("synth", parents=[common], help="write the synthetic benchmark")
    s.add_argument("--products", type=int, default=200)
    s.add_argument("--brands", type=int, default=20)
    s.add_argument("--categories", type=int, default=20)
    s.add_argument("--users", type=int, default=60)
    s.add_argument("--sessions-per-item", type=int, default=4)
    sub.add_parser("ingest", parents=[common], help="sessionize and split interactions")
    sub.add_parser("build-kg", parents=[common], help="build the knowledge graph")
    sub.add_parser("train-transe", parents=[common], help="train entity/relation embeddings")
    t = sub.add_parser("train", parents=[common], help="train the path policy")
    t.add_argument("--epochs", type=int)
    r = sub.add_parser("recommend", parents=[common], help="top-K items with explanation paths")
    r.add_argument("--topk", type=int)
    r.add_argument("--p1", type=int, help="beam width at hop 1")
    r.add_argument("--p2", type=int, help="beam width at hop 2")
    r.add_argument("--path-length", type=int)
    r.add_argument("--paths-per-item", type=int, default=1)
    r.add_argument("--split", choices=("train", "validation", "test"), default="test")
    r.add_argument("--output")
    e = sub.add_parser("evaluate", parents=[common], help="HR@K / NDCG@K on held-out sessions")
    e.add_argument("--topk", help="comma-separated K list, e.g. 5,10,20")
    e.add_argument("--split", choices=("validation", "test"), default="test")
    a = sub.add_parser("ablate", parents=[common], help="train and compare ablation variants")
    a.add_argument("--axes", help="comma-separated subset of reward,loss,start,path_length")
    a.add_argument("--seeds", help="comma-separated seeds (default: config seed)")
    return p


def _overrides(args) -> dict:
    out = {}
    for item in args.set:
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        out[key.strip()] = value
    if args.workdir:
        out["workdir"] = args.workdir
    if args.seed is not None:
        out["seed"] = args.seed
    if getattr(args, "epochs", None) is not None:
        out["epochs"] = args.epochs
    return out


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError(f"no subcommand given\n{parser.format_usage()}")
        logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                            format="%(name)s: %(message)s", stream=sys.stderr)
        cfg = load_config(args.config, _overrides(args))
        if not args.quiet:
            log.info("config fingerprint %s", cfg.fingerprint())
        return COMMANDS[args.command](cfg, args)
    except ConfigError as e:
        print(f"reks: config error: {e}", file=sys.stderr)
        return 1
    except (DataError, GraphError, FileNotFoundError, json.JSONDecodeError) as e:
        msg = e.args[0] if isinstance(e, GraphError) and e.args else e
        print(f"reks: data error: {msg}", file=sys.stderr)
        return 2
    except Exception as e:  # noqa: BLE001
        print(f"reks: internal error: {type(e).__name__}: {e}", file=sys.stderr)
        return 3


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
