"""Full-batch training with early stopping on filtered validation MRR."""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field, fields
from typing import Callable

import numpy as np

from relatt.errors import ConfigError, ContractError, NumericError, TrainingError
from relatt.graph import AugmentedGraph, DatasetSplit, FeatureSource, augment, init_random_features, sample_negatives
from relatt.model import ModelConfig, embed, init_params, loss_program
from relatt.numeric.adam import AdamState, adam_step
from relatt.numeric.autograd import evaluate_with_gradients
from relatt.ranking import FilterIndex, evaluate

log = logging.getLogger(__name__)

# Order matters: each phase owns one child of SeedSequence(seed).
STREAMS = ("features", "init", "negatives", "dropout", "sampling")


def seed_streams(seed: int) -> dict[str, np.random.Generator]:
    """Independent generators per phase, all derived from one seed."""
    children = np.random.SeedSequence(seed).spawn(len(STREAMS))
    return {name: np.random.default_rng(child) for name, child in zip(STREAMS, children)}


def stream_seed(seed: int, name: str) -> int:
    child = np.random.SeedSequence(seed).spawn(len(STREAMS))[STREAMS.index(name)]
    return int(child.generate_state(1)[0])


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 0.01
    layers: int = 2
    dim: int = 100
    bases: int = 2
    neg_ratio: int = 10
    seed: int = 42
    hidden_dropout: float = 0.0
    attn_dropout: float = 0.0
    max_epochs: int = 6000
    min_epochs: int = 0
    patience: int = 10
    eval_interval: int = 100
    attention: bool = True
    inverse: bool = True
    self_loop: bool = True
    attn_nonlinearity: str = "none"
    share_attn_a: bool = False
    attention_once: bool = False
    filtered_negatives: bool = False
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if not self.lr > 0:
            raise ConfigError("lr must be positive", key="lr")
        for key in ("max_epochs", "patience", "eval_interval", "neg_ratio"):
            if getattr(self, key) < 1:
                raise ConfigError(f"{key} must be >= 1", key=key)
        if self.min_epochs < 0:
            raise ConfigError("min_epochs must be >= 0", key="min_epochs")
        for key in ("beta1", "beta2"):
            if not 0.0 <= getattr(self, key) < 1.0:
                raise ConfigError(f"{key} must be in [0, 1)", key=key)
        self.model_config()  # validates the shared model fields

    def model_config(self) -> ModelConfig:
        names = {f.name for f in fields(ModelConfig)}
        return ModelConfig(**{k: v for k, v in asdict(self).items() if k in names})


@dataclass
class TrainResult:
    params: dict[str, np.ndarray]
    history: list[tuple[int, float, float | None]] = field(default_factory=list)
    best_epoch: int = 0
    best_mrr: float = float("-inf")
    stopped_epoch: int = 0
    graph: AugmentedGraph | None = None

    def history_csv(self) -> str:
        lines = ["epoch,loss,val_mrr"]
        for epoch, loss, mrr in self.history:
            lines.append(f"{epoch},{loss!r},{'' if mrr is None else repr(mrr)}")
        return "\n".join(lines) + "\n"


def make_features(split: DatasetSplit, cfg: TrainConfig, features: FeatureSource | None) -> FeatureSource:
    """File-backed features if given, else a seeded trainable table of width ``cfg.dim``."""
    if features is not None:
        return features
    return init_random_features(split.graph, cfg.dim, stream_seed(cfg.seed, "features"))


def train(split: DatasetSplit, features: FeatureSource | None, cfg: TrainConfig,
          evaluator: Callable[[dict], float] | None = None) -> TrainResult:
    """Train on ``split.train``: one Adam step per epoch over all positives
    plus freshly sampled negatives.

    Every ``eval_interval`` epochs (and at the last epoch) ``evaluator``
    scores the current parameters; by default it is filtered MRR on
    ``split.valid``, or ``split.train`` when there is no validation data.
    The best-scoring parameters are returned. Training stops once
    ``patience`` evaluations in a row fail to improve, but not before
    ``min_epochs``.
    """
    if len(split.train) == 0:
        raise ContractError("training split is empty")
    mcfg = cfg.model_config()
    features = make_features(split, cfg, features)
    rngs = seed_streams(cfg.seed)
    graph = augment(split.train_graph(), cfg.inverse, cfg.self_loop)
    params = init_params(mcfg, features, graph.num_relations, rngs["init"])
    state = AdamState(lr=cfg.lr, beta1=cfg.beta1, beta2=cfg.beta2, eps=cfg.eps)
    known = FilterIndex(split.train).triples if cfg.filtered_negatives else None

    if evaluator is None:
        held_out = split.valid
        if len(held_out) == 0:
            # e.g. a matching reference graph trained in full
            log.warning("validation split is empty; early stopping on training-set MRR")
            held_out = split.train
        filt = FilterIndex(split.train, split.valid, split.test)

        def evaluator(p):
            emb = embed(graph, features, p, mcfg)
            return evaluate(held_out, emb, p["distmult_diag"], filt).mrr

    result = TrainResult(params={k: v.copy() for k, v in params.items()}, graph=graph)
    bad_evals = 0
    for epoch in range(1, cfg.max_epochs + 1):
        batch = sample_negatives(split.train, cfg.neg_ratio, split.graph.num_entities,
                                 rngs["negatives"], known)
        program = loss_program(graph, features, mcfg, batch, rngs["dropout"], training=True)
        try:
            loss, grads = evaluate_with_gradients(program, params)
        except NumericError as exc:
            raise TrainingError(epoch, f"non-finite value in forward pass ({exc})") from exc
        if not np.isfinite(loss):
            raise TrainingError(epoch, "loss is not finite")
        params, state = adam_step(params, grads, state)
        if not all(np.all(np.isfinite(p)) for p in params.values()):
            raise TrainingError(epoch, "parameters diverged")
        val = None
        if epoch % cfg.eval_interval == 0 or epoch == cfg.max_epochs:
            val = float(evaluator(params))
            if val > result.best_mrr:
                result.best_mrr, result.best_epoch = val, epoch
                result.params = {k: v.copy() for k, v in params.items()}
                bad_evals = 0
            else:
                bad_evals += 1
            log.info("epoch %d loss %.6f val_mrr %.4f", epoch, loss, val)
        result.history.append((epoch, loss, val))
        result.stopped_epoch = epoch
        if bad_evals >= cfg.patience and epoch >= cfg.min_epochs:
            break
    return result
