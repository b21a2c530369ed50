"""Knowledge-graph data model, file ingestion, augmentation and negative sampling."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from relatt.errors import (
    ConfigError,
    ContractError,
    CoverageError,
    DimensionError,
    EmptyGraphError,
    ParseError,
    SamplingError,
    SplitError,
    VocabularyError,
)

log = logging.getLogger(__name__)


class Vocabulary:
    """Bijection between external string ids and dense indices ``0..n-1``."""

    def __init__(self, ids: Iterable[str] = ()):
        self._ids: list[str] = []
        self._index: dict[str, int] = {}
        for i in ids:
            if i in self._index:
                raise VocabularyError(f"duplicate id {i!r}")
            self.add(i)

    def add(self, ident: str) -> int:
        idx = self._index.get(ident)
        if idx is None:
            idx = len(self._ids)
            self._ids.append(ident)
            self._index[ident] = idx
        return idx

    def index(self, ident: str) -> int:
        try:
            return self._index[ident]
        except KeyError:
            raise VocabularyError(f"unknown id {ident!r}") from None

    def id(self, idx: int) -> str:
        return self._ids[idx]

    @property
    def ids(self) -> list[str]:
        return list(self._ids)

    def __len__(self):
        return len(self._ids)

    def __contains__(self, ident):
        return ident in self._index

    def __eq__(self, other):
        return isinstance(other, Vocabulary) and self._ids == other._ids

    def __repr__(self):
        return f"Vocabulary({len(self)} ids)"


def _as_triples(triples) -> np.ndarray:
    arr = np.asarray(triples, dtype=np.int64)
    if arr.size == 0:
        return np.zeros((0, 3), dtype=np.int64)
    if arr.ndim != 2 or arr.shape[1] != 3:
        raise ContractError(f"triples must have shape (M, 3), got {arr.shape}")
    return arr


@dataclass(frozen=True, eq=False)
class KnowledgeGraph:
    entities: Vocabulary
    relations: Vocabulary
    triples: np.ndarray
    dropped_duplicates: int = 0

    def __post_init__(self):
        t = _as_triples(self.triples)
        t.setflags(write=False)
        object.__setattr__(self, "triples", t)
        if len(t):
            if t[:, [0, 2]].min() < 0 or t[:, [0, 2]].max() >= len(self.entities):
                raise ContractError("triple entity index out of range")
            if t[:, 1].min() < 0 or t[:, 1].max() >= len(self.relations):
                raise ContractError("triple relation index out of range")
            if len(np.unique(t, axis=0)) != len(t):
                raise ContractError("duplicate triples in graph")

    @property
    def num_entities(self) -> int:
        return len(self.entities)

    @property
    def num_relations(self) -> int:
        return len(self.relations)

    def __len__(self):
        return len(self.triples)

    def labeled(self, idx_triples=None) -> list[tuple[str, str, str]]:
        t = self.triples if idx_triples is None else _as_triples(idx_triples)
        return [(self.entities.id(h), self.relations.id(r), self.entities.id(o)) for h, r, o in t]


def read_triple_file(path) -> list[tuple[str, str, str]]:
    """Parse a tab-separated ``head<TAB>relation<TAB>tail`` file into string triples."""
    path = Path(path)
    out = []
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.rstrip("\r\n")
            if not line.strip():
                continue
            fields = line.split("\t")
            if len(fields) != 3:
                raise ParseError(path, line_no, f"expected 3 tab-separated fields, got {len(fields)}")
            if any(not f for f in fields):
                raise ParseError(path, line_no, "empty field")
            out.append((fields[0], fields[1], fields[2]))
    return out


def _encode(string_triples, entities: Vocabulary, relations: Vocabulary,
            fixed_relations: bool) -> tuple[np.ndarray, int]:
    seen = set()
    rows = []
    for h, r, t in string_triples:
        if fixed_relations:
            ri = relations.index(r)
        else:
            ri = relations.add(r)
        row = (entities.add(h), ri, entities.add(t))
        if row in seen:
            continue
        seen.add(row)
        rows.append(row)
    return _as_triples(rows), len(string_triples) - len(rows)


def graph_from_triples(string_triples: Sequence[tuple[str, str, str]],
                       relations: Sequence[str] | None = None) -> KnowledgeGraph:
    """Build a graph with ids numbered in first-appearance order.

    When ``relations`` is given the relation vocabulary is fixed to it and
    any other relation raises :class:`VocabularyError`.
    """
    ents = Vocabulary()
    rels = Vocabulary(relations or ())
    triples, dropped = _encode(string_triples, ents, rels, relations is not None)
    return KnowledgeGraph(ents, rels, triples, dropped)


def load_triples(path, relations: Sequence[str] | None = None) -> KnowledgeGraph:
    string_triples = read_triple_file(path)
    if not string_triples:
        raise EmptyGraphError(f"no triples in {path}")
    g = graph_from_triples(string_triples, relations)
    if g.dropped_duplicates:
        log.info("%s: dropped %d duplicate triples", path, g.dropped_duplicates)
    return g


@dataclass(frozen=True, eq=False)
class DatasetSplit:
    """Train/valid/test triple arrays over one shared graph.

    ``graph.triples`` is the union of the three parts.
    """

    graph: KnowledgeGraph
    train: np.ndarray
    valid: np.ndarray
    test: np.ndarray
    seed: int | None = None

    def __post_init__(self):
        parts = []
        for name in ("train", "valid", "test"):
            arr = _as_triples(getattr(self, name))
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
            parts.append(arr)
        sets = [set(map(tuple, p.tolist())) for p in parts]
        for (a, sa), (b, sb) in [(("train", sets[0]), ("valid", sets[1])),
                                 (("train", sets[0]), ("test", sets[2])),
                                 (("valid", sets[1]), ("test", sets[2]))]:
            overlap = sa & sb
            if overlap:
                raise SplitError(f"{a} and {b} share {len(overlap)} triples, e.g. {sorted(overlap)[0]}")
        union = sets[0] | sets[1] | sets[2]
        if union != set(map(tuple, self.graph.triples.tolist())):
            raise SplitError("split parts do not cover the graph's triples")

    def train_graph(self) -> KnowledgeGraph:
        """Training triples over the full entity/relation vocabularies."""
        return KnowledgeGraph(self.graph.entities, self.graph.relations, self.train)


def load_dataset(directory, entities: Sequence[str] | None = None,
                 relations: Sequence[str] | None = None) -> DatasetSplit:
    """Read ``train.tsv``, ``valid.tsv`` and ``test.tsv`` from a directory.

    ``entities``/``relations`` pre-seed the vocabularies (e.g. from a
    checkpoint) so indices line up with a trained model; relations outside
    a given relation vocabulary are rejected.
    """
    directory = Path(directory)
    ents, rels = Vocabulary(entities or ()), Vocabulary(relations or ())
    parts = {}
    for name in ("train", "valid", "test"):
        path = directory / f"{name}.tsv"
        if not path.is_file():
            raise FileNotFoundError(f"missing split file: {path}")
        parts[name], dropped = _encode(read_triple_file(path), ents, rels, fixed_relations=False)
        if dropped:
            log.info("%s: dropped %d duplicate triples", path, dropped)
    if relations is not None and len(rels) > len(relations):
        raise VocabularyError(f"{directory}: relations unknown to the model: {rels.ids[len(relations):]}")
    if len(parts["train"]) == 0:
        raise EmptyGraphError(f"no training triples in {directory / 'train.tsv'}")
    union = np.concatenate([parts["train"], parts["valid"], parts["test"]])
    _, first = np.unique(union, axis=0, return_index=True)
    if len(first) != len(union):
        raise SplitError(f"{directory}: the same triple occurs in more than one split")
    graph = KnowledgeGraph(ents, rels, union)
    return DatasetSplit(graph, parts["train"], parts["valid"], parts["test"])


def write_triples(path, labeled: Iterable[tuple[str, str, str]]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for h, r, t in labeled:
            fh.write(f"{h}\t{r}\t{t}\n")


def write_dataset(directory, split: DatasetSplit) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for name in ("train", "valid", "test"):
        write_triples(directory / f"{name}.tsv", split.graph.labeled(getattr(split, name)))


def random_split(graph: KnowledgeGraph, fractions=(0.8, 0.1, 0.1), seed: int = 0) -> DatasetSplit:
    """Seeded uniform-random split of a graph's triples."""
    if len(fractions) != 3 or any(f < 0 for f in fractions) or not math.isclose(sum(fractions), 1.0):
        raise ConfigError(f"split fractions must be three non-negative numbers summing to 1, got {fractions}")
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(graph.triples))
    n_train = int(round(fractions[0] * len(order)))
    n_valid = int(round(fractions[1] * len(order)))
    t = graph.triples[order]
    return DatasetSplit(graph, t[:n_train], t[n_train:n_train + n_valid], t[n_train + n_valid:], seed=seed)


@dataclass(frozen=True, eq=False)
class AugmentedGraph:
    """Directed message-passing edges grouped by relation.

    An edge ``(h, r, t)`` carries a message from ``t`` into ``h``. With
    inverse augmentation every base triple ``(h, r, t)`` also yields
    ``(t, r + K, h)``. Edges are ordered by relation, and by base triple
    order within a relation.
    """

    base: KnowledgeGraph
    heads: np.ndarray
    rels: np.ndarray
    tails: np.ndarray
    num_relations: int
    inverse: bool
    self_loop: bool
    rel_offsets: np.ndarray = field(repr=False, default=None)
    head_degree: np.ndarray = field(repr=False, default=None)
    rel_degree: np.ndarray = field(repr=False, default=None)

    @property
    def num_entities(self) -> int:
        return self.base.num_entities

    @property
    def num_base_relations(self) -> int:
        return self.base.num_relations

    @property
    def num_edges(self) -> int:
        return len(self.heads)

    def relation_slice(self, r: int) -> slice:
        return slice(int(self.rel_offsets[r]), int(self.rel_offsets[r + 1]))

    def neighbors(self, h: int, r: int | None = None) -> list[tuple[int, int]]:
        """``(relation, tail)`` pairs of N_h, or of N_h^r when ``r`` is given."""
        mask = self.heads == h
        if r is not None:
            mask &= self.rels == r
        return list(zip(self.rels[mask].tolist(), self.tails[mask].tolist()))


def augment(graph: KnowledgeGraph, add_inverse: bool = True, add_self_loop: bool = True) -> AugmentedGraph:
    if isinstance(graph, AugmentedGraph):
        raise ContractError("graph is already augmented")
    t = graph.triples
    k = graph.num_relations
    heads, rels, tails = t[:, 0], t[:, 1], t[:, 2]
    if add_inverse:
        heads = np.concatenate([heads, t[:, 2]])
        rels = np.concatenate([rels, t[:, 1] + k])
        tails = np.concatenate([tails, t[:, 0]])
    n_rel = 2 * k if add_inverse else k
    order = np.argsort(rels, kind="stable")
    heads, rels, tails = heads[order], rels[order], tails[order]
    offsets = np.zeros(n_rel + 1, dtype=np.int64)
    np.cumsum(np.bincount(rels, minlength=n_rel), out=offsets[1:])
    n = graph.num_entities
    head_deg = np.bincount(heads, minlength=n)
    pair = heads * n_rel + rels
    pair_deg = np.bincount(pair, minlength=n * n_rel) if len(pair) else np.zeros(0, dtype=np.int64)
    arrays = [heads, rels, tails, offsets, head_deg[heads], pair_deg[pair] if len(pair) else pair]
    for a in arrays:
        a.setflags(write=False)
    return AugmentedGraph(graph, arrays[0], arrays[1], arrays[2], n_rel, add_inverse, add_self_loop,
                          rel_offsets=arrays[3], head_degree=arrays[4], rel_degree=arrays[5])


@dataclass(frozen=True, eq=False)
class FeatureSource:
    """Per-entity input features: fixed from a file, or a trainable table."""

    mode: str
    values: np.ndarray

    FILE = "file"
    TRAINABLE = "trainable"

    def __post_init__(self):
        if self.mode not in (self.FILE, self.TRAINABLE):
            raise ConfigError(f"unknown feature mode {self.mode!r}")
        v = np.array(self.values, dtype=np.float64)
        if v.ndim != 2:
            raise DimensionError(f"features must be a matrix, got shape {v.shape}")
        if not np.all(np.isfinite(v)):
            raise DimensionError("features contain non-finite values")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def dim(self) -> int:
        return self.values.shape[1]

    @property
    def trainable(self) -> bool:
        return self.mode == self.TRAINABLE


def read_feature_file(path) -> tuple[list[str], np.ndarray]:
    """Parse a feature file: header ``N d``, then ``entity_id v_1 ... v_d`` lines."""
    path = Path(path)
    with open(path, encoding="utf-8") as fh:
        lines = [ln.rstrip("\r\n") for ln in fh]
    while lines and not lines[-1].strip():
        lines.pop()
    if not lines:
        raise ParseError(path, 1, "empty feature file")
    header = lines[0].split()
    try:
        n, d = int(header[0]), int(header[1])
        if len(header) != 2:
            raise ValueError
    except (ValueError, IndexError):
        raise ParseError(path, 1, "header must be 'N d'") from None
    if len(lines) - 1 != n:
        raise ParseError(path, len(lines), f"header declares {n} rows, found {len(lines) - 1}")
    ids, rows = [], np.empty((n, d))
    for i, line in enumerate(lines[1:]):
        parts = line.split()
        if len(parts) != d + 1:
            raise DimensionError(f"{path}:{i + 2}: expected {d} values, got {len(parts) - 1}")
        try:
            rows[i] = [float(x) for x in parts[1:]]
        except ValueError:
            raise ParseError(path, i + 2, "non-numeric feature value") from None
        ids.append(parts[0])
    return ids, rows


def write_feature_file(path, ids: Sequence[str], values: np.ndarray) -> None:
    """Write features with shortest round-trip float reprs (ids must not contain whitespace)."""
    values = np.asarray(values, dtype=np.float64)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"{values.shape[0]} {values.shape[1]}\n")
        for ident, row in zip(ids, values):
            fh.write(ident + " " + " ".join(repr(float(x)) for x in row) + "\n")


def load_features(path, graph: KnowledgeGraph) -> FeatureSource:
    ids, rows = read_feature_file(path)
    index = {}
    for i, ident in enumerate(ids):
        if ident in index:
            raise ParseError(path, i + 2, f"duplicate entity {ident!r}")
        index[ident] = i
    missing = [e for e in graph.entities.ids if e not in index]
    if missing:
        raise CoverageError(missing)
    order = [index[e] for e in graph.entities.ids]
    return FeatureSource(FeatureSource.FILE, rows[order] if order else np.zeros((0, rows.shape[1])))


def glorot_uniform(rng: np.random.Generator, shape) -> np.ndarray:
    fan_in, fan_out = shape[-2], shape[-1]
    bound = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape)


def init_random_features(graph: KnowledgeGraph | int, dim: int, seed: int) -> FeatureSource:
    """Glorot-uniform N x dim table, U(-b, b) with b = sqrt(6 / (N + dim))."""
    if dim < 1:
        raise ConfigError(f"feature dim must be >= 1, got {dim}", key="dim")
    n = graph if isinstance(graph, int) else graph.num_entities
    rng = np.random.default_rng(seed)
    return FeatureSource(FeatureSource.TRAINABLE, glorot_uniform(rng, (n, dim)))


@dataclass(frozen=True, eq=False)
class LabeledTripleBatch:
    triples: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        t = _as_triples(self.triples)
        y = np.asarray(self.labels, dtype=np.float64)
        if len(t) != len(y):
            raise ContractError(f"{len(t)} triples but {len(y)} labels")
        object.__setattr__(self, "triples", t)
        object.__setattr__(self, "labels", y)

    def __len__(self):
        return len(self.triples)


def sample_negatives(positives, ratio: int, num_entities: int, rng: np.random.Generator,
                     known: set | None = None, max_tries: int = 100) -> LabeledTripleBatch:
    """Label positives 1 and append ``ratio`` corruptions of each, labelled 0.

    Negative ``j`` of positive ``i`` sits at row ``len(pos) + j * len(pos) + i``.
    A corruption swaps the head or the tail (chosen with equal probability)
    for a different entity drawn uniformly. When ``known`` (a set of
    ``(h, r, t)`` tuples) is given, corruptions that hit a known triple are
    redrawn.
    """
    if ratio < 1:
        raise ConfigError(f"negative ratio must be >= 1, got {ratio}", key="neg_ratio")
    if num_entities < 2:
        raise SamplingError("negative sampling needs at least 2 entities")
    pos = _as_triples(positives)
    neg = np.tile(pos, (ratio, 1))
    m = len(neg)
    side = rng.integers(0, 2, size=m) * 2  # column 0 (head) or 2 (tail)
    rows = np.arange(m)
    original = neg[rows, side]
    repl = rng.integers(0, num_entities - 1, size=m)
    repl += repl >= original
    neg[rows, side] = repl
    if known is not None:
        for i in range(m):
            tries = 0
            while (int(neg[i, 0]), int(neg[i, 1]), int(neg[i, 2])) in known:
                if tries >= max_tries:
                    raise SamplingError(f"could not find a non-true corruption for {tuple(pos[i % len(pos)])}")
                e = int(rng.integers(0, num_entities - 1))
                e += e >= original[i]
                neg[i, side[i]] = e
                tries += 1
    triples = np.concatenate([pos, neg])
    labels = np.concatenate([np.ones(len(pos)), np.zeros(m)])
    return LabeledTripleBatch(triples, labels)
