"""``relatt`` command-line entry point.

    relatt train    --config run.conf --data DIR --out DIR
    relatt evaluate --checkpoint FILE --data DIR [--out FILE]
    relatt match    --checkpoint FILE --reference DIR --queries DIR --th X [--out FILE]
    relatt infer    --checkpoint FILE --graph DIR --out FILE
    relatt make-fixture {toy,matching} --out DIR

Errors print one line, ``relatt: error: <Kind>: <message>``, and exit 1.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from relatt import __version__
from relatt.config import RunConfig, Timer, config_hash, parse_config, write_atomic, write_manifest
from relatt.errors import ConfigError, ModeError, RelattError
from relatt.graph import (
    FeatureSource,
    KnowledgeGraph,
    augment,
    graph_from_triples,
    load_dataset,
    load_features,
    random_split,
    read_triple_file,
    write_dataset,
    write_feature_file,
)
from relatt.matching import evaluate_matching, load_query_graphs, reference_embeddings, write_query_graph
from relatt.model import embed
from relatt.numeric.checkpoint import load_checkpoint, save_checkpoint
from relatt.ranking import FilterIndex, dumps_report, evaluate
from relatt.training import TrainConfig, train

log = logging.getLogger("relatt")


def _overrides(args) -> dict:
    out = {}
    for item in args.set or []:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        out[k.strip()] = v.strip()
    for key in ("data", "out", "checkpoint", "reference", "queries", "graph", "features", "split"):
        value = getattr(args, key, None)
        if value is not None:
            out[key] = str(value)
    for key in ("seed", "th"):
        value = getattr(args, key, None)
        if value is not None:
            out[key] = value
    if getattr(args, "ranks", False):
        out["include_ranks"] = True
    if getattr(args, "raw", False):
        out["raw"] = True
    return out


def _require_file(path, what: str) -> Path:
    p = Path(path)
    if not str(path) or not p.is_file():
        raise FileNotFoundError(f"{what} not found: {p}")
    return p


def _require_dir(path, what: str, files=()) -> Path:
    p = Path(path)
    if not str(path) or not p.is_dir():
        raise FileNotFoundError(f"{what} directory not found: {p}")
    for name in files:
        _require_file(p / name, f"{what} file")
    return p


def _resolve_features(cfg: RunConfig, data_dir: Path, graph: KnowledgeGraph, trained_mode=None):
    if cfg.features == "none":
        return None
    if cfg.features == "auto":
        path = data_dir / "features.txt"
        if not path.is_file():
            if trained_mode == FeatureSource.FILE:
                raise FileNotFoundError(f"model needs input features but {path} does not exist")
            return None
    else:
        path = _require_file(cfg.features, "feature file")
    return load_features(path, graph)


def cmd_train(args) -> int:
    timer = Timer()
    cfg = parse_config(args.config, _overrides(args))
    data = _require_dir(cfg.data, "data", ("train.tsv", "valid.tsv", "test.tsv"))
    if not cfg.out:
        raise ConfigError("--out is required", key="out")
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    with timer.phase("load"):
        split = load_dataset(data)
        features = _resolve_features(cfg, data, split.graph)
    tcfg = cfg.train_config()
    with timer.phase("train"):
        result = train(split, features, tcfg)
    mode = FeatureSource.FILE if features is not None else FeatureSource.TRAINABLE
    meta = {
        "config": {k: v for k, v in cfg.to_dict().items() if k in TrainConfig.__dataclass_fields__},
        "entities": split.graph.entities.ids,
        "relations": split.graph.relations.ids,
        "feature_mode": mode,
        "best_epoch": result.best_epoch,
        "version": __version__,
    }
    save_checkpoint(out / "checkpoint.npz", result.params, config_hash(cfg), meta)
    write_atomic(out / "history.csv", result.history_csv())
    if len(split.test):
        with timer.phase("evaluate"):
            feats = features if features is not None else FeatureSource(FeatureSource.TRAINABLE, result.params["entity_emb"])
            emb = embed(result.graph, feats, result.params, tcfg.model_config())
            filt = FilterIndex(split.train, split.valid, split.test)
            report = evaluate(split.test, emb, result.params["distmult_diag"], filt)
        payload = {"metrics": report.to_dict(cfg.include_ranks, split.graph.entities, split.graph.relations),
                   "split": "test", "seed": cfg.seed, "config_hash": config_hash(cfg)}
        write_atomic(out / "report.json", dumps_report(payload))
    write_manifest(out / "manifest.json", cfg, "train", timer.phases, __version__)
    print(f"best epoch {result.best_epoch}, validation MRR {result.best_mrr:.4f}; wrote {out}")
    return 0


def _load_model(path):
    params, meta = load_checkpoint(_require_file(path, "checkpoint"))
    tcfg = TrainConfig(**meta["config"])
    return params, meta, tcfg


def cmd_evaluate(args) -> int:
    cfg = parse_config(args.config, _overrides(args))
    params, meta, tcfg = _load_model(cfg.checkpoint)
    data = _require_dir(cfg.data, "data", ("train.tsv", "valid.tsv", "test.tsv"))
    split = load_dataset(data, meta["entities"], meta["relations"])
    mcfg = tcfg.model_config()
    if meta["feature_mode"] == FeatureSource.TRAINABLE:
        if split.graph.num_entities != len(meta["entities"]):
            raise ModeError("data contains entities unseen in training; "
                            "a model with a per-entity embedding table cannot rank them")
        features = FeatureSource(FeatureSource.TRAINABLE, params["entity_emb"])
    else:
        features = _resolve_features(cfg, data, split.graph, FeatureSource.FILE)
    graph = augment(split.train_graph(), mcfg.inverse, mcfg.self_loop)
    emb = embed(graph, features, params, mcfg)
    filt = None if cfg.raw else FilterIndex(split.train, split.valid, split.test)
    report = evaluate(getattr(split, cfg.split), emb, params["distmult_diag"], filt)
    payload = {"metrics": report.to_dict(cfg.include_ranks, split.graph.entities, split.graph.relations),
               "split": cfg.split, "filtered": not cfg.raw, "checkpoint_config_hash": meta["config_hash"]}
    text = dumps_report(payload)
    if cfg.out:
        write_atomic(cfg.out, text)
    else:
        sys.stdout.write(text)
    return 0


def _load_reference(directory: Path, relations):
    if (directory / "train.tsv").is_file():
        split = load_dataset(directory, relations=relations)
        graph = split.graph
    else:
        triples = read_triple_file(_require_file(directory / "triples.tsv", "reference triples"))
        graph = graph_from_triples(triples, relations)
    return graph


def cmd_match(args) -> int:
    cfg = parse_config(args.config, _overrides(args))
    params, meta, tcfg = _load_model(cfg.checkpoint)
    ref_dir = _require_dir(cfg.reference, "reference", ("features.txt",))
    q_dir = _require_dir(cfg.queries, "queries")
    if meta["feature_mode"] != FeatureSource.FILE:
        raise ModeError("matching needs a model trained on file-backed features")
    mcfg = tcfg.model_config()
    graph = _load_reference(ref_dir, meta["relations"])
    feats = load_features(ref_dir / "features.txt", graph)
    queries = load_query_graphs(q_dir, meta["relations"])
    ids = graph.entities.ids
    if args.feature_only:
        ref = feats.values
        report = evaluate_matching(queries, None, mcfg, ref, ids, cfg.th, cfg.seed)
    else:
        ref = reference_embeddings(graph, feats.values, params, mcfg)
        report = evaluate_matching(queries, params, mcfg, ref, ids, cfg.th, cfg.seed,
                                   model_relations=meta["relations"])
    payload = {"report": report.to_dict(), "th": cfg.th, "seed": cfg.seed,
               "feature_only": bool(args.feature_only)}
    text = dumps_report(payload)
    if cfg.out:
        write_atomic(cfg.out, text)
    else:
        sys.stdout.write(text)
    return 0


def cmd_infer(args) -> int:
    cfg = parse_config(args.config, _overrides(args))
    params, meta, tcfg = _load_model(cfg.checkpoint)
    g_dir = _require_dir(cfg.graph, "graph", ("triples.tsv", "features.txt"))
    if not cfg.out:
        raise ConfigError("--out is required", key="out")
    if meta["feature_mode"] != FeatureSource.FILE:
        raise ModeError("inference on new graphs needs a model trained on file-backed features")
    mcfg = tcfg.model_config()
    graph = graph_from_triples(read_triple_file(g_dir / "triples.tsv"), meta["relations"])
    feats = load_features(g_dir / "features.txt", graph)
    emb = reference_embeddings(graph, feats.values, params, mcfg)
    write_feature_file(cfg.out, graph.entities.ids, emb)
    return 0


def cmd_make_fixture(args) -> int:
    from relatt.synthetic import matching_fixture, memorization_split, typed_kg

    out = Path(args.out)
    if args.kind == "toy":
        graph = typed_kg(seed=args.seed)
        write_dataset(out, random_split(graph, (0.8, 0.1, 0.1), seed=args.seed))
    else:
        fx = matching_fixture(seed=args.seed, noise=args.noise)
        write_dataset(out / "reference", memorization_split(fx.reference))
        write_feature_file(out / "reference" / "features.txt", fx.reference.entities.ids, fx.features)
        for q in fx.queries:
            write_query_graph(out / "queries" / q.name, q)
    print(f"wrote {args.kind} fixture to {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="relatt", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"relatt {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log training progress")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="key = value config file")
        p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key")
        p.add_argument("--seed", type=int)

    p = sub.add_parser("train", help="train a model")
    common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--features", help="feature file, 'auto' or 'none'")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="filtered link-prediction metrics")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out")
    p.add_argument("--features")
    p.add_argument("--split", choices=["test", "valid", "train"])
    p.add_argument("--ranks", action="store_true", help="include per-triple ranks")
    p.add_argument("--raw", action="store_true", help="unfiltered ranking")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("match", help="entity matching of query graphs")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--reference", required=True)
    p.add_argument("--queries", required=True)
    p.add_argument("--th", type=float, required=True)
    p.add_argument("--out")
    p.add_argument("--feature-only", action="store_true", help="match on raw input features")
    p.set_defaults(func=cmd_match)

    p = sub.add_parser("infer", help="embed a new graph")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--graph", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("make-fixture", help="write a synthetic dataset")
    p.add_argument("kind", choices=["toy", "matching"])
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--noise", type=float, default=0.0)
    p.set_defaults(func=cmd_make_fixture)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    try:
        return args.func(args)
    except (RelattError, OSError) as exc:
        kind = type(exc).__name__
        message = " ".join(str(exc).split())
        print(f"relatt: error: {kind}: {message}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
