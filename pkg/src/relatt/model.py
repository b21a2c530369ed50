"""Relation-aware attention GCN encoder with a DistMult decoder.

Parameter names (stable, used in checkpoints)::

    entity_emb            N x d_feat   trainable input table (only in trainable-feature mode)
    rel_feats             K2 x d       relation features for attention, shared by layers
    layer0.rel_feats      K2 x d_feat  only when the input width differs from d
    layer{l}.attn_W       d_in x d     attention transform
    layer{l}.attn_a       3d           attention vector (``attn_a`` when shared)
    layer{l}.basis{b}     d_in x d     basis matrices
    layer{l}.coeffs       K2 x B       basis coefficients
    layer{l}.self_W0      d_in x d     self-loop transform
    distmult_diag         K2 x d_out   decoder diagonals

K2 is the relation count after augmentation (2K with inverse edges).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from relatt.errors import ConfigError, ContractError
from relatt.graph import AugmentedGraph, FeatureSource, glorot_uniform
from relatt.numeric.autograd import (
    Tensor,
    as_tensor,
    concat,
    gather,
    leaky_relu,
    matmul,
    mean,
    mul,
    relu,
    reshape,
    scatter_add,
    segment_softmax,
    softplus,
    sum_axis,
)


@dataclass(frozen=True)
class ModelConfig:
    layers: int = 2
    dim: int = 100
    bases: int = 2
    attention: bool = True
    attn_nonlinearity: str = "none"
    share_attn_a: bool = False
    attention_once: bool = False
    hidden_dropout: float = 0.0
    attn_dropout: float = 0.0
    inverse: bool = True
    self_loop: bool = True

    def __post_init__(self):
        if self.layers < 0:
            raise ConfigError("layers must be >= 0", key="layers")
        if self.dim < 1:
            raise ConfigError("dim must be >= 1", key="dim")
        if self.bases < 1:
            raise ConfigError("bases must be >= 1", key="bases")
        if self.attn_nonlinearity not in ("none", "leaky_relu"):
            raise ConfigError("attn_nonlinearity must be 'none' or 'leaky_relu'", key="attn_nonlinearity")
        for key in ("hidden_dropout", "attn_dropout"):
            p = getattr(self, key)
            if not 0.0 <= p < 1.0:
                raise ConfigError(f"{key} must be in [0, 1)", key=key)


def layer_dims(cfg: ModelConfig, feat_dim: int) -> list[tuple[int, int]]:
    return [(feat_dim if l == 0 else cfg.dim, cfg.dim) for l in range(cfg.layers)]


def decoder_dim(cfg: ModelConfig, feat_dim: int) -> int:
    return cfg.dim if cfg.layers > 0 else feat_dim


def rel_feats_name(cfg: ModelConfig, layer: int, feat_dim: int) -> str:
    if layer == 0 and feat_dim != cfg.dim:
        return "layer0.rel_feats"
    return "rel_feats"


def attn_a_name(cfg: ModelConfig, layer: int) -> str:
    return "attn_a" if cfg.share_attn_a else f"layer{layer}.attn_a"


def init_params(cfg: ModelConfig, features: FeatureSource, num_relations: int,
                rng: np.random.Generator) -> dict[str, np.ndarray]:
    """Glorot-uniform matrices, zero attention vectors, diagonals of 1/sqrt(d).

    ``num_relations`` is the augmented relation count.
    """
    feat_dim = features.dim
    params: dict[str, np.ndarray] = {}
    if features.trainable:
        params["entity_emb"] = np.array(features.values, copy=True)
    for l, (d_in, d_out) in enumerate(layer_dims(cfg, feat_dim)):
        rf = rel_feats_name(cfg, l, feat_dim)
        if rf not in params:
            params[rf] = glorot_uniform(rng, (num_relations, d_in))
        params[f"layer{l}.attn_W"] = glorot_uniform(rng, (d_in, d_out))
        a_name = attn_a_name(cfg, l)
        if a_name not in params:
            params[a_name] = np.zeros(3 * d_out)
        for b in range(cfg.bases):
            params[f"layer{l}.basis{b}"] = glorot_uniform(rng, (d_in, d_out))
        params[f"layer{l}.coeffs"] = glorot_uniform(rng, (num_relations, cfg.bases))
        if cfg.self_loop:
            params[f"layer{l}.self_W0"] = glorot_uniform(rng, (d_in, d_out))
    d = decoder_dim(cfg, feat_dim)
    params["distmult_diag"] = np.full((num_relations, d), 1.0 / math.sqrt(d))
    return params


@dataclass
class AttentionMap:
    """Per-edge coefficients aligned with the graph's edge order, grouped by head node."""

    coefficients: Tensor
    groups: np.ndarray
    num_groups: int

    def group_sums(self) -> np.ndarray:
        return np.bincount(self.groups, weights=self.coefficients.value, minlength=self.num_groups)


@dataclass
class ForwardResult:
    embeddings: Tensor
    activations: list = field(default_factory=list)
    attention: list = field(default_factory=list)
    masks: list = field(default_factory=list)


def attention_logits(h_in, rel_feats, graph: AugmentedGraph, attn_W, attn_a,
                     nonlinearity: str = "none") -> Tensor:
    """e = a . [W h_head || W m_rel || W h_tail] for every edge."""
    h_in, rel_feats, attn_W, attn_a = map(as_tensor, (h_in, rel_feats, attn_W, attn_a))
    d_attn = attn_W.shape[1]
    if h_in.shape[1] != attn_W.shape[0] or rel_feats.shape[1] != attn_W.shape[0]:
        raise ContractError(f"attention: features {h_in.shape} / relation features {rel_feats.shape} "
                            f"do not match transform {attn_W.shape}")
    if attn_a.value.size != 3 * d_attn:
        raise ContractError(f"attention vector has {attn_a.value.size} entries, expected {3 * d_attn}")
    if rel_feats.shape[0] < graph.num_relations:
        raise ContractError(f"{rel_feats.shape[0]} relation feature rows for {graph.num_relations} relations")
    wh = matmul(h_in, attn_W)
    wm = matmul(rel_feats, attn_W)
    cat = concat([gather(wh, graph.heads), gather(wm, graph.rels), gather(wh, graph.tails)], axis=1)
    e = reshape(matmul(cat, reshape(attn_a, (3 * d_attn, 1))), (graph.num_edges,))
    if nonlinearity == "leaky_relu":
        e = leaky_relu(e, 0.2)
    return e


def attention_normalize(logits, graph: AugmentedGraph) -> AttentionMap:
    """Softmax of the logits over each head node's incident edges, across all relations."""
    logits = as_tensor(logits)
    if logits.value.shape != (graph.num_edges,):
        raise ContractError(f"expected {graph.num_edges} logits, got shape {logits.shape}")
    alpha = segment_softmax(logits, graph.heads, graph.num_entities)
    return AttentionMap(alpha, graph.heads, graph.num_entities)


def basis_expand(bases, coeffs) -> Tensor:
    """W_r = sum_b coeffs[r, b] * V_b, returned as a (K, d_in, d_out) tensor."""
    bases = [as_tensor(v) for v in bases]
    coeffs = as_tensor(coeffs)
    if not bases:
        raise ContractError("basis_expand needs at least one basis")
    d_in, d_out = bases[0].shape
    if any(v.shape != (d_in, d_out) for v in bases) or coeffs.shape[1] != len(bases):
        raise ContractError(f"bases {[v.shape for v in bases]} vs coefficients {coeffs.shape}")
    stacked = concat([reshape(v, (1, d_in * d_out)) for v in bases], axis=0)
    return reshape(matmul(coeffs, stacked), (coeffs.shape[0], d_in, d_out))


def identity(x):
    return x


def propagate_layer(h_in, attn: AttentionMap | None, graph: AugmentedGraph, rel_mats,
                    self_W0=None, activation: Callable = identity) -> Tensor:
    """One attention-weighted relational convolution.

    out_h = act( sum_r sum_{t in N_h^r} alpha_(h,r,t) / |N_h^r| * W_r h_t + W_0 h_h )

    ``attn=None`` means every alpha is 1 (the plain relational GCN update).
    ``self_W0=None`` drops the self-loop term.
    """
    h_in, rel_mats = as_tensor(h_in), as_tensor(rel_mats)
    n = graph.num_entities
    k, d_in, d_out = rel_mats.shape
    if h_in.shape != (n, d_in):
        raise ContractError(f"layer input {h_in.shape}, expected ({n}, {d_in})")
    if k < graph.num_relations:
        raise ContractError(f"{k} relation matrices for {graph.num_relations} relations")
    flat = reshape(rel_mats, (k, d_in * d_out))
    blocks = []
    for r in range(graph.num_relations):
        sl = graph.relation_slice(r)
        if sl.start == sl.stop:
            continue
        w_r = reshape(gather(flat, [r]), (d_in, d_out))
        blocks.append(matmul(gather(h_in, graph.tails[sl]), w_r))
    out = None
    if blocks:
        msgs = concat(blocks, axis=0)
        norm = 1.0 / graph.rel_degree
        if attn is None:
            coef = norm
        else:
            if attn.coefficients.value.shape != (graph.num_edges,):
                raise ContractError("attention map is not aligned with the graph's edges")
            coef = mul(attn.coefficients, norm)
        out = scatter_add(mul(msgs, reshape(coef, (graph.num_edges, 1))), graph.heads, n)
    if self_W0 is not None:
        self_term = matmul(h_in, self_W0)
        out = self_term if out is None else out + self_term
    if out is None:
        out = as_tensor(np.zeros((n, d_out)))
    return activation(out)


def _dropout(x: Tensor, p: float, rng: np.random.Generator):
    keep = rng.random(x.shape) >= p
    mask = keep / (1.0 - p)
    return mul(x, mask), keep


def model_forward(graph: AugmentedGraph, features: FeatureSource, params: dict, cfg: ModelConfig,
                  rng: np.random.Generator | None = None, training: bool = False) -> ForwardResult:
    """Run the encoder over ``graph`` and return entity embeddings.

    ``params`` values may be arrays or taped tensors. Hidden ReLU layers, an
    identity final layer. Dropout only when ``training`` (then ``rng`` is
    required): hidden dropout on non-final layer outputs, attention dropout
    on normalized coefficients without renormalizing.
    """
    if training and (cfg.hidden_dropout > 0 or cfg.attn_dropout > 0) and rng is None:
        raise ContractError("training-mode dropout needs an rng")
    if features.trainable:
        if "entity_emb" not in params:
            raise ContractError("trainable features need an 'entity_emb' parameter")
        h = as_tensor(params["entity_emb"])
    else:
        h = as_tensor(features.values)
    if h.shape[0] != graph.num_entities:
        raise ContractError(f"{h.shape[0]} feature rows for {graph.num_entities} entities")
    feat_dim = h.shape[1]
    result = ForwardResult(h)
    first_attn = None
    for l in range(cfg.layers):
        attn = None
        if cfg.attention:
            if cfg.attention_once and first_attn is not None:
                attn = first_attn
            else:
                logits = attention_logits(h, params[rel_feats_name(cfg, l, feat_dim)], graph,
                                          params[f"layer{l}.attn_W"], params[attn_a_name(cfg, l)],
                                          cfg.attn_nonlinearity)
                attn = attention_normalize(logits, graph)
                first_attn = first_attn or attn
            result.attention.append(attn)
            if training and cfg.attn_dropout > 0:
                dropped, keep = _dropout(attn.coefficients, cfg.attn_dropout, rng)
                attn = AttentionMap(dropped, attn.groups, attn.num_groups)
                result.masks.append((f"layer{l}.attn", keep))
        rel_mats = basis_expand([params[f"layer{l}.basis{b}"] for b in range(cfg.bases)],
                                params[f"layer{l}.coeffs"])
        last = l == cfg.layers - 1
        h = propagate_layer(h, attn, graph, rel_mats,
                            params.get(f"layer{l}.self_W0") if graph.self_loop else None,
                            identity if last else relu)
        if training and not last and cfg.hidden_dropout > 0:
            h, keep = _dropout(h, cfg.hidden_dropout, rng)
            result.masks.append((f"layer{l}.hidden", keep))
        result.activations.append(h)
    result.embeddings = h
    return result


def distmult_score(h_emb, rel_diag, t_emb) -> float:
    """sum_i h_i * diag_i * t_i for single vectors (h * t is formed first, so swapping h and t is exact)."""
    h, d, t = (np.asarray(x, dtype=np.float64) for x in (h_emb, rel_diag, t_emb))
    if not (h.shape == d.shape == t.shape) or h.ndim != 1:
        raise ContractError(f"distmult: shapes {h.shape}, {d.shape}, {t.shape}")
    return float(np.sum((h * t) * d))


def distmult_scores(embeddings, diag, triples) -> Tensor:
    """Batched DistMult scores for an (M, 3) triple array."""
    emb, diag = as_tensor(embeddings), as_tensor(diag)
    triples = np.asarray(triples, dtype=np.int64)
    if emb.shape[1] != diag.shape[1]:
        raise ContractError(f"decoder width {diag.shape[1]} vs embedding width {emb.shape[1]}")
    ht = mul(gather(emb, triples[:, 0]), gather(emb, triples[:, 2]))
    return sum_axis(mul(ht, gather(diag, triples[:, 1])), 1)


def bce_loss(scores, labels) -> Tensor:
    """Mean binary cross-entropy of sigmoid(scores), as softplus(-g) for y=1 and softplus(g) for y=0."""
    scores = as_tensor(scores)
    labels = np.asarray(labels, dtype=np.float64)
    if scores.value.ndim != 1 or scores.shape != labels.shape:
        raise ContractError(f"scores {scores.shape} vs labels {labels.shape}")
    if labels.size == 0:
        raise ContractError("bce_loss of an empty batch")
    return mean(softplus(mul(scores, 1.0 - 2.0 * labels)))


def loss_program(graph: AugmentedGraph, features: FeatureSource, cfg: ModelConfig, batch,
                 rng: np.random.Generator | None = None, training: bool = False):
    """Closure params -> scalar loss, suitable for gradient evaluation and gradcheck."""
    def program(params):
        emb = model_forward(graph, features, params, cfg, rng, training).embeddings
        return bce_loss(distmult_scores(emb, params["distmult_diag"], batch.triples), batch.labels)

    return program


def embed(graph: AugmentedGraph, features: FeatureSource, params: dict, cfg: ModelConfig) -> np.ndarray:
    """Evaluation-mode embeddings as a plain array."""
    return model_forward(graph, features, params, cfg, training=False).embeddings.value
