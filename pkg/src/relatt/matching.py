"""Unsupervised entity matching of query graphs against a reference graph.

Pipeline per query: thin the matching entity's neighbourhood, run the
trained encoder inductively on the query graph, and rank reference
entities by cosine similarity to the matching entity's embedding.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from relatt.errors import ConfigError, CoverageError, DimensionError, ModeError, ParseError, SimilarityError, VocabularyError
from relatt.graph import (
    FeatureSource,
    KnowledgeGraph,
    Vocabulary,
    augment,
    graph_from_triples,
    read_feature_file,
    read_triple_file,
    write_feature_file,
    write_triples,
)
from relatt.model import ModelConfig, embed

DEFAULT_KS = (1, 5, 10, 30)


@dataclass(eq=False)
class QueryGraph:
    graph: KnowledgeGraph
    features: np.ndarray
    matching_entity: int
    ground_truth: str
    name: str = ""

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        if self.features.shape[0] != self.graph.num_entities:
            raise DimensionError(f"query {self.name}: {self.features.shape[0]} feature rows "
                                 f"for {self.graph.num_entities} nodes")
        if not np.all(np.isfinite(self.features)):
            raise DimensionError(f"query {self.name}: non-finite features")
        if not 0 <= self.matching_entity < self.graph.num_entities:
            raise ConfigError(f"query {self.name}: matching entity out of range")

    def degree(self, node: int | None = None) -> int:
        node = self.matching_entity if node is None else node
        t = self.graph.triples
        return int(np.count_nonzero((t[:, 0] == node) | (t[:, 2] == node)))


def sample_query_neighbors(q: QueryGraph, th: float, rng: np.random.Generator) -> QueryGraph:
    """Keep ceil(th * degree) random triples incident to the matching entity.

    Triples not touching the matching entity are kept as long as they stay
    connected to it (undirected); disconnected remainders are dropped.
    ``th == 1`` returns ``q`` itself.
    """
    if not 0.0 < th <= 1.0:
        raise ConfigError(f"neighbour threshold must be in (0, 1], got {th}", key="th")
    if th == 1.0:
        return q
    t = q.graph.triples
    m = q.matching_entity
    incident = np.flatnonzero((t[:, 0] == m) | (t[:, 2] == m))
    # tolerance keeps e.g. 0.3 * 10 from rounding up to 4
    n_keep = math.ceil(th * len(incident) - 1e-9)
    kept = np.sort(rng.choice(incident, size=n_keep, replace=False)) if n_keep else incident[:0]
    mask = np.ones(len(t), dtype=bool)
    mask[incident] = False
    mask[kept] = True
    sub = t[mask]

    reach = {m}
    adj: dict[int, list[int]] = {}
    for h, _, o in sub.tolist():
        adj.setdefault(h, []).append(o)
        adj.setdefault(o, []).append(h)
    stack = [m]
    while stack:
        for nb in adj.get(stack.pop(), ()):
            if nb not in reach:
                reach.add(nb)
                stack.append(nb)
    sub = sub[np.isin(sub[:, 0], list(reach))]

    keep_nodes = sorted(reach)
    local = {n: j for j, n in enumerate(keep_nodes)}
    ents = Vocabulary(q.graph.entities.id(n) for n in keep_nodes)
    triples = np.array([(local[h], r, local[o]) for h, r, o in sub.tolist()], dtype=np.int64).reshape(-1, 3)
    graph = KnowledgeGraph(ents, q.graph.relations, triples)
    return QueryGraph(graph, q.features[keep_nodes], local[m], q.ground_truth, q.name)


def _check_inductive(params: dict, cfg: ModelConfig, relations: Vocabulary, feat_dim: int,
                     model_relations: Sequence[str] | None = None) -> None:
    if "entity_emb" in params:
        raise ModeError("model was trained with a per-entity embedding table and cannot embed unseen nodes")
    if model_relations is not None and list(model_relations) != relations.ids:
        unknown = [r for r in relations.ids if r not in set(model_relations)]
        raise VocabularyError(f"relation vocabulary differs from the model's; unknown: {unknown}")
    n_rel = params["distmult_diag"].shape[0]
    expected = 2 * len(relations) if cfg.inverse else len(relations)
    if n_rel != expected:
        raise VocabularyError(f"graph has {len(relations)} relation types, model expects "
                              f"{n_rel // 2 if cfg.inverse else n_rel}")
    if cfg.layers > 0:
        width = params["layer0.attn_W"].shape[0]
    else:
        width = params["distmult_diag"].shape[1]
    if width != feat_dim:
        raise DimensionError(f"features have width {feat_dim}, model expects {width}")


def infer_embeddings(q: QueryGraph, params: dict, cfg: ModelConfig,
                     model_relations: Sequence[str] | None = None) -> np.ndarray:
    """Evaluation-mode embeddings of every node in ``q`` with trained weights."""
    _check_inductive(params, cfg, q.graph.relations, q.features.shape[1], model_relations)
    graph = augment(q.graph, cfg.inverse, cfg.self_loop)
    return embed(graph, FeatureSource(FeatureSource.FILE, q.features), params, cfg)


def reference_embeddings(graph: KnowledgeGraph, features: np.ndarray, params: dict,
                         cfg: ModelConfig) -> np.ndarray:
    """Embeddings of the whole reference graph (computed once, then reused)."""
    _check_inductive(params, cfg, graph.relations, np.asarray(features).shape[1])
    aug = augment(graph, cfg.inverse, cfg.self_loop)
    return embed(aug, FeatureSource(FeatureSource.FILE, features), params, cfg)


def match_entities(query_emb, reference_embs, k: int) -> list[tuple[int, float]]:
    """Top-``k`` reference rows by cosine similarity; ties go to the lower index.

    Zero-norm reference rows get similarity 0.
    """
    q = np.asarray(query_emb, dtype=np.float64)
    ref = np.asarray(reference_embs, dtype=np.float64)
    qn = np.linalg.norm(q)
    if qn == 0 or not np.isfinite(qn):
        raise SimilarityError("query embedding has zero norm")
    norms = np.linalg.norm(ref, axis=1)
    safe = np.where(norms > 0, norms, 1.0)
    cos = np.where(norms > 0, (ref @ (q / qn)) / safe, 0.0)
    order = np.lexsort((np.arange(len(cos)), -cos))[:k]
    return [(int(i), float(cos[i])) for i in order]


@dataclass
class MatchReport:
    hits: dict[int, float]
    queries: list = field(default_factory=list)  # per-query dicts with ranked candidates

    @classmethod
    def from_queries(cls, queries: list, ks=DEFAULT_KS) -> "MatchReport":
        hits = {}
        for k in ks:
            found = [q["ground_truth"] in [c[0] for c in q["candidates"][:k]] for q in queries]
            hits[int(k)] = float(np.mean(found)) if found else 0.0
        return cls(hits, queries)

    def to_dict(self) -> dict:
        return {"hits": {str(k): v for k, v in sorted(self.hits.items())},
                "count": len(self.queries),
                "queries": self.queries}


def evaluate_matching(queries: Sequence[QueryGraph], params: dict | None, cfg: ModelConfig,
                      reference_embs: np.ndarray, reference_ids: Sequence[str], th: float,
                      seed: int, ks=DEFAULT_KS, model_relations: Sequence[str] | None = None) -> MatchReport:
    """Sample, embed and match every query; Hits@K against ground truth.

    ``params=None`` matches on the matching entity's raw input features
    (the attribute-only baseline); ``reference_embs`` should then be the
    raw reference features. Query ``i`` samples with its own child of
    ``SeedSequence(seed)``.
    """
    if not queries:
        raise ConfigError("no query graphs to evaluate")
    top = max(ks)
    children = np.random.SeedSequence(seed).spawn(len(queries))
    rows = []
    for q, child in zip(queries, children):
        sampled = sample_query_neighbors(q, th, np.random.default_rng(child))
        if params is None:
            vec = sampled.features[sampled.matching_entity]
        else:
            vec = infer_embeddings(sampled, params, cfg, model_relations)[sampled.matching_entity]
        cands = match_entities(vec, reference_embs, top)
        rows.append({
            "query": q.name,
            "ground_truth": q.ground_truth,
            "degree": sampled.degree(),
            "candidates": [[reference_ids[i], s] for i, s in cands],
        })
    return MatchReport.from_queries(rows, ks)


def _read_meta(path: Path) -> dict:
    meta = {}
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            if "=" not in line:
                raise ParseError(path, line_no, "expected key=value")
            k, v = line.split("=", 1)
            meta[k.strip()] = v.strip()
    for key in ("matching_entity", "ground_truth"):
        if key not in meta:
            raise ParseError(path, 0, f"missing {key}")
    return meta


def load_query_graph(directory, relations: Sequence[str]) -> QueryGraph:
    """Read ``triples.tsv``, ``features.txt`` and ``meta.txt`` from one query directory."""
    directory = Path(directory)
    meta = _read_meta(directory / "meta.txt")
    triples = read_triple_file(directory / "triples.tsv")
    graph = graph_from_triples(triples, relations)
    ids, rows = read_feature_file(directory / "features.txt")
    ents = Vocabulary(graph.entities.ids)
    # nodes that only appear in the feature file (e.g. isolated matching entity)
    for ident in ids:
        ents.add(ident)
    graph = KnowledgeGraph(ents, graph.relations, graph.triples)
    index = {ident: i for i, ident in enumerate(ids)}
    missing = [e for e in ents.ids if e not in index]
    if missing:
        raise CoverageError(missing)
    feats = rows[[index[e] for e in ents.ids]]
    return QueryGraph(graph, feats, ents.index(meta["matching_entity"]), meta["ground_truth"],
                      name=directory.name)


def load_query_graphs(directory, relations: Sequence[str]) -> list[QueryGraph]:
    directory = Path(directory)
    subdirs = sorted(p for p in directory.iterdir() if p.is_dir())
    if not subdirs:
        raise FileNotFoundError(f"no query directories under {directory}")
    return [load_query_graph(p, relations) for p in subdirs]


def write_query_graph(directory, q: QueryGraph) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    write_triples(directory / "triples.tsv", q.graph.labeled())
    write_feature_file(directory / "features.txt", q.graph.entities.ids, q.features)
    with open(directory / "meta.txt", "w", encoding="utf-8") as fh:
        fh.write(f"matching_entity={q.graph.entities.id(q.matching_entity)}\n")
        fh.write(f"ground_truth={q.ground_truth}\n")
