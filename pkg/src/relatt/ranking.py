"""Filtered link-prediction ranking: MRR and Hits@K."""
from __future__ import annotations

import json
from collections import defaultdict
from dataclasses import dataclass, field

import numpy as np

from relatt.errors import ContractError

HEAD, TAIL = "head", "tail"
DEFAULT_KS = (1, 3, 10)


class FilterIndex:
    """All known true triples, indexed for fast per-query lookup."""

    def __init__(self, *triple_arrays):
        self.triples: set[tuple[int, int, int]] = set()
        self._tails = defaultdict(list)
        self._heads = defaultdict(list)
        for arr in triple_arrays:
            for h, r, t in np.asarray(arr, dtype=np.int64).reshape(-1, 3).tolist():
                if (h, r, t) in self.triples:
                    continue
                self.triples.add((h, r, t))
                self._tails[(h, r)].append(t)
                self._heads[(r, t)].append(h)
        self._tails = {k: np.array(v, dtype=np.int64) for k, v in self._tails.items()}
        self._heads = {k: np.array(v, dtype=np.int64) for k, v in self._heads.items()}

    def __contains__(self, triple):
        return tuple(int(x) for x in triple) in self.triples

    def __len__(self):
        return len(self.triples)

    def known_tails(self, h: int, r: int) -> np.ndarray:
        return self._tails.get((h, r), np.zeros(0, dtype=np.int64))

    def known_heads(self, r: int, t: int) -> np.ndarray:
        return self._heads.get((r, t), np.zeros(0, dtype=np.int64))


def candidate_scores(triple, embeddings: np.ndarray, diag: np.ndarray, side: str) -> np.ndarray:
    """DistMult scores with the ``side`` entity replaced by every entity."""
    h, r, t = (int(x) for x in triple)
    if side == TAIL:
        prod = embeddings[h] * embeddings
    elif side == HEAD:
        prod = embeddings * embeddings[t]
    else:
        raise ContractError(f"side must be 'head' or 'tail', got {side!r}")
    return (prod * diag[r]).sum(axis=1)


def rank_triple(triple, embeddings: np.ndarray, diag: np.ndarray, filter: FilterIndex | None,
                side: str) -> int:
    """Pessimistic filtered rank of a true triple among its corruptions.

    Candidates that are known true triples (other than ``triple``) are
    removed; every remaining candidate scoring at least as high as the
    test triple counts against it. ``filter=None`` gives the raw rank.
    """
    h, r, t = (int(x) for x in triple)
    scores = candidate_scores(triple, embeddings, diag, side)
    target = t if side == TAIL else h
    valid = np.ones(len(scores), dtype=bool)
    if filter is not None:
        known = filter.known_tails(h, r) if side == TAIL else filter.known_heads(r, t)
        valid[known] = False
    valid[target] = False
    s = scores[target]
    return 1 + int(np.count_nonzero(valid & (scores >= s)))


@dataclass
class RankingReport:
    mrr: float
    hits: dict[int, float]
    triples: np.ndarray = field(repr=False)
    ranks: np.ndarray = field(repr=False)  # (M, 2): head-side rank, tail-side rank

    @classmethod
    def from_ranks(cls, triples, ranks, ks=DEFAULT_KS) -> "RankingReport":
        ranks = np.asarray(ranks, dtype=np.int64).reshape(-1, 2)
        if ranks.size == 0:
            raise ContractError("cannot build a report from zero ranks")
        flat = ranks.reshape(-1)
        mrr = float(np.mean(1.0 / flat))
        hits = {int(k): float(np.mean(flat <= k)) for k in ks}
        return cls(mrr, hits, np.asarray(triples, dtype=np.int64).reshape(-1, 3), ranks)

    def to_dict(self, include_ranks: bool = False, entities=None, relations=None) -> dict:
        out = {
            "mrr": self.mrr,
            "hits": {str(k): v for k, v in sorted(self.hits.items())},
            "count": int(self.ranks.size),
        }
        if include_ranks:
            rows = []
            for (h, r, t), (hr, tr) in zip(self.triples.tolist(), self.ranks.tolist()):
                if entities is not None:
                    h, t = entities.id(h), entities.id(t)
                if relations is not None:
                    r = relations.id(r)
                rows.append({"triple": [h, r, t], "head_rank": hr, "tail_rank": tr})
            out["ranks"] = rows
        return out


def evaluate(triples, embeddings: np.ndarray, diag: np.ndarray, filter: FilterIndex | None,
             ks=DEFAULT_KS) -> RankingReport:
    """Rank both corruption sides of every triple; aggregate over all 2M ranks."""
    triples = np.asarray(triples, dtype=np.int64).reshape(-1, 3)
    if len(triples) == 0:
        raise ContractError("evaluate needs at least one triple")
    embeddings = np.asarray(embeddings, dtype=np.float64)
    diag = np.asarray(diag, dtype=np.float64)
    ranks = np.empty((len(triples), 2), dtype=np.int64)
    for i, tr in enumerate(triples):
        ranks[i, 0] = rank_triple(tr, embeddings, diag, filter, HEAD)
        ranks[i, 1] = rank_triple(tr, embeddings, diag, filter, TAIL)
    return RankingReport.from_ranks(triples, ranks, ks)


def dumps_report(payload: dict) -> str:
    """Canonical JSON so identical reports serialize to identical bytes."""
    return json.dumps(payload, sort_keys=True, indent=2) + "\n"
