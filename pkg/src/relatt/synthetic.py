"""Seeded synthetic fixtures: a small typed KG and an entity-matching benchmark.

Relations are typed: relation ``r`` links heads from one half of the
entities to tails in the other half, alternating direction with ``r``.
This mirrors typed enterprise graphs (company -> product) and keeps the
symmetric DistMult decoder from being asked to separate ``(a, r, b)``
from ``(b, r, a)``, which it provably cannot.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from relatt.graph import DatasetSplit, KnowledgeGraph, Vocabulary


def typed_kg(num_entities: int = 50, num_relations: int = 4, num_triples: int = 200,
             seed: int = 0) -> KnowledgeGraph:
    rng = np.random.default_rng(seed)
    half = num_entities // 2
    side_a = np.arange(half)
    side_b = np.arange(half, num_entities)
    per_rel = np.full(num_relations, num_triples // num_relations)
    per_rel[: num_triples % num_relations] += 1
    rows = []
    for r in range(num_relations):
        heads, tails = (side_a, side_b) if r % 2 == 0 else (side_b, side_a)
        pairs = rng.choice(len(heads) * len(tails), size=per_rel[r], replace=False)
        for p in np.sort(pairs):
            rows.append((int(heads[p // len(tails)]), r, int(tails[p % len(tails)])))
    order = rng.permutation(len(rows))
    triples = np.array(rows, dtype=np.int64)[order]
    ents = Vocabulary(f"e{i}" for i in range(num_entities))
    rels = Vocabulary(f"r{i}" for i in range(num_relations))
    return KnowledgeGraph(ents, rels, triples)


def memorization_split(graph: KnowledgeGraph) -> DatasetSplit:
    """All triples in train; empty valid and test."""
    empty = np.zeros((0, 3), dtype=np.int64)
    return DatasetSplit(graph, graph.triples, empty, empty)


@dataclass
class MatchingFixture:
    reference: KnowledgeGraph
    features: np.ndarray
    queries: list  # list[QueryGraph]


def ego_triples(graph: KnowledgeGraph, center: int, radius: int) -> np.ndarray:
    """Indices of triples incident to any node within ``radius`` hops (undirected) of ``center``."""
    t = graph.triples
    frontier = {center}
    seen = {center}
    for _ in range(radius):
        mask = np.isin(t[:, 0], list(frontier)) | np.isin(t[:, 2], list(frontier))
        nxt = set(t[mask][:, [0, 2]].ravel().tolist()) - seen
        seen |= nxt
        frontier = nxt
    mask = np.isin(t[:, 0], list(seen)) | np.isin(t[:, 2], list(seen))
    return np.flatnonzero(mask)


def matching_fixture(num_entities: int = 200, num_relations: int = 3, num_triples: int = 700,
                     num_queries: int = 40, feat_dim: int = 16, layers: int = 2,
                     noise: float = 0.0, min_degree: int = 5, seed: int = 0,
                     noise_seed: int | None = None) -> MatchingFixture:
    """Reference KG with Gaussian features plus ego-graph queries.

    Each query copies every reference triple incident to a node within
    ``layers - 1`` hops of a labelled center, so with ``noise=0`` a
    ``layers``-layer encoder sees exactly the center's reference
    receptive field. Query features are the reference features plus
    ``U(-noise, noise)`` noise drawn from ``noise_seed`` (defaults to
    ``seed``). Query node ids are renamed ``q<i>n<j>``.
    """
    from relatt.matching import QueryGraph

    ref = typed_kg(num_entities, num_relations, num_triples, seed)
    rng = np.random.default_rng(seed)
    feats = rng.normal(size=(num_entities, feat_dim))
    degree = np.bincount(ref.triples[:, [0, 2]].ravel(), minlength=num_entities)
    eligible = np.flatnonzero(degree >= min_degree)
    centers = np.sort(rng.choice(eligible, size=min(num_queries, len(eligible)), replace=False))
    noise_rng = np.random.default_rng(seed if noise_seed is None else noise_seed)
    queries = []
    for qi, c in enumerate(centers):
        idx = ego_triples(ref, int(c), max(layers - 1, 0))
        sub = ref.triples[idx]
        nodes = [int(c)]
        for n in sub[:, [0, 2]].ravel().tolist():
            if n not in nodes:
                nodes.append(n)
        local = {n: j for j, n in enumerate(nodes)}
        ents = Vocabulary(f"q{qi}n{j}" for j in range(len(nodes)))
        rels = Vocabulary(ref.relations.ids)
        triples = np.array([(local[h], r, local[t]) for h, r, t in sub.tolist()], dtype=np.int64)
        q_feats = feats[nodes]
        if noise > 0:
            q_feats = q_feats + noise_rng.uniform(-noise, noise, size=q_feats.shape)
        queries.append(QueryGraph(KnowledgeGraph(ents, rels, triples.reshape(-1, 3)), q_feats,
                                  0, ref.entities.id(int(c)), name=f"q{qi:03d}"))
    return MatchingFixture(ref, feats, queries)
