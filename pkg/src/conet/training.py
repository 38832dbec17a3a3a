"""Losses, Adam with proximal L1 sparsification, and the two-domain loop.

One optimizer step consumes one mini-batch of a single domain. Batches
alternate target, source, target, source; a batch updates the shared
parameters (user embedding and any coupling parameters) plus that
domain's own tower, never the other tower. The L1 penalty on the
transfer matrices is applied proximally: after every Adam step each
entry is soft-thresholded by ``learning_rate * lasso_lambda``, which is
what produces exact zeros.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import evaluation
from .data import LooSplit, epoch_batches, num_batches
from .errors import ConfigError, NumericError
from .models import lasso_penalty
from .numerics import derive_rng

__all__ = [
    "TrainConfig",
    "Adam",
    "EpochStats",
    "Trainer",
    "ModelScorer",
    "make_scorer",
    "fit",
    "cross_entropy_loss",
    "cross_entropy_from_logits",
    "joint_loss",
    "proximal_l1",
    "pair_source_item",
    "sparsity_ratio",
]


@dataclass(frozen=True)
class TrainConfig:
    """Optimization hyperparameters. Defaults follow the experimental setup."""

    learning_rate: float = 0.001
    batch_size: int = 128
    negative_ratio: int = 1
    epochs: int = 30
    patience: Optional[int] = 5
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_epsilon: float = 1e-8
    seed: int = 0

    def validate(self) -> None:
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be > 0")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.negative_ratio < 0:
            raise ConfigError("negative_ratio must be >= 0")
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")
        if self.patience is not None and self.patience < 1:
            raise ConfigError("patience must be >= 1 (or None to disable)")


# ---------------------------------------------------------------------------
# Losses


def cross_entropy_loss(predictions, labels) -> float:
    """Summed binary cross-entropy from probabilities strictly in (0, 1)."""
    p = np.asarray(predictions, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    return float(-np.sum(y * np.log(p) + (1.0 - y) * np.log(1.0 - p)))


def cross_entropy_from_logits(logits, labels) -> float:
    """Same loss computed from logits; stable for any logit magnitude.

    Uses ``softplus(z) - y * z`` with the overflow-free softplus form;
    mathematically identical to :func:`cross_entropy_loss` applied to
    ``sigmoid(z)``.
    """
    z = np.asarray(logits, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    softplus = np.maximum(z, 0.0) + np.log1p(np.exp(-np.abs(z)))
    return float(np.sum(softplus - y * z))


def joint_loss(loss_target: float, loss_source: float, penalty: float) -> float:
    """Total objective: both domain losses plus the sparsity penalty."""
    return loss_target + loss_source + penalty


# ---------------------------------------------------------------------------
# Optimizer


@dataclass
class _AdamSlot:
    m: np.ndarray
    v: np.ndarray
    t: int = 0


class Adam:
    """Adam with bias correction over named parameter tensors.

    Each tensor carries its own update count for bias correction, so a
    tensor that is only touched by every other batch (a domain-specific
    tower in alternating training) sees exactly the same update sequence
    it would in a single-domain run. ``step_count`` counts optimizer
    steps globally, one per mini-batch.
    """

    def __init__(self, learning_rate: float, beta1: float = 0.9, beta2: float = 0.999,
                 epsilon: float = 1e-8):
        if learning_rate <= 0:
            raise ConfigError("learning_rate must be > 0")
        self.learning_rate = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.epsilon = epsilon
        self.slots: dict = {}
        self.step_count = 0

    def step(self, params: dict, grads: dict) -> None:
        """Apply one Adam update to every tensor present in ``grads``."""
        self.step_count += 1
        for name, g in grads.items():
            p = params[name]
            if p.shape != g.shape:
                raise ConfigError(f"gradient shape {g.shape} does not match {name} {p.shape}")
            slot = self.slots.get(name)
            if slot is None:
                slot = self.slots[name] = _AdamSlot(m=np.zeros_like(p), v=np.zeros_like(p))
            slot.t += 1
            slot.m = self.beta1 * slot.m + (1.0 - self.beta1) * g
            slot.v = self.beta2 * slot.v + (1.0 - self.beta2) * (g * g)
            m_hat = slot.m / (1.0 - self.beta1 ** slot.t)
            v_hat = slot.v / (1.0 - self.beta2 ** slot.t)
            p -= self.learning_rate * m_hat / (np.sqrt(v_hat) + self.epsilon)


def proximal_l1(h: np.ndarray, threshold: float) -> np.ndarray:
    """Soft-threshold every entry: sign(h) * max(|h| - threshold, 0)."""
    if threshold < 0:
        raise ConfigError("proximal threshold must be >= 0")
    if threshold == 0.0:
        return h.copy()
    return np.sign(h) * np.maximum(np.abs(h) - threshold, 0.0)


def sparsity_ratio(h: np.ndarray) -> float:
    """Fraction of entries exactly equal to zero."""
    if h.size == 0:
        return 0.0
    return float(np.count_nonzero(h == 0.0) / h.size)


# ---------------------------------------------------------------------------
# Cross-domain item pairing


def _pair_item(dataset, user: int, rng, mode: str) -> int:
    items = dataset.items_of(user)
    if items.size == 0:
        return -1  # sentinel: zero item-embedding half
    if mode == "eval":
        return int(items[0])  # adjacency is sorted, so smallest index
    if mode == "train":
        return int(items[rng.integers(items.size)])
    raise ConfigError(f"unknown pairing mode {mode!r}")


def pair_source_item(split: LooSplit, user: int, rng=None, mode: str = "train") -> int:
    """Pick the source item riding along with a target-domain example.

    Train mode samples uniformly from the user's source interactions,
    fresh per example; eval mode deterministically takes the smallest
    item index. A user with no source history gets the sentinel ``-1``,
    which zeroes the source tower's item embedding half.
    """
    if mode == "train" and rng is None:
        raise ConfigError("train-mode pairing needs an rng")
    return _pair_item(split.train.source, user, rng, mode)


# ---------------------------------------------------------------------------
# Epoch statistics


@dataclass
class EpochStats:
    """Per-epoch record: losses, validation ranking metrics, H sparsity."""

    epoch: int
    loss_target: float
    loss_source: float
    penalty: float
    val_hr: float
    val_ndcg: float
    val_mrr: float
    h_zero_ratios: list

    def to_json_line(self) -> str:
        record = {
            "epoch": self.epoch,
            "loss_target": self.loss_target,
            "loss_source": self.loss_source,
            "penalty": self.penalty,
            "val_hr": self.val_hr,
            "val_ndcg": self.val_ndcg,
            "val_mrr": self.val_mrr,
            "h_zero_ratios": list(self.h_zero_ratios),
        }
        return json.dumps(record)

    @classmethod
    def from_json_line(cls, line: str) -> "EpochStats":
        record = json.loads(line)
        return cls(**record)


# ---------------------------------------------------------------------------
# Scoring adapter


class ModelScorer:
    """Deterministic (user, items) -> probabilities view of a trained model.

    Coupled models are driven with eval-mode source pairing: the user's
    smallest-index source interaction, or the zero-embedding sentinel for
    users without source history.
    """

    def __init__(self, model, source_train=None):
        self.model = model
        self.source_train = source_train

    def score_items(self, user: int, items) -> np.ndarray:
        if self.model.dual:
            if self.source_train is None:
                raise ConfigError("coupled models need the source train set for scoring")
            j = _pair_item(self.source_train, user, None, "eval")
            return self.model.score_items(user, items, j)
        return self.model.score_items(user, items)


def make_scorer(model, split: LooSplit) -> ModelScorer:
    return ModelScorer(model, split.train.source if model.dual else None)


# ---------------------------------------------------------------------------
# Training loop


class Trainer:
    """Alternating two-domain mini-batch training of one model.

    All randomness comes from streams derived from ``config.seed``: one
    batch stream and one pairing stream per domain. An epoch is defined
    over the larger domain; the smaller domain's batch stream simply
    continues (reshuffling as it wraps) so both domains see at least one
    full pass per epoch.
    """

    def __init__(self, model, split: LooSplit, config: TrainConfig):
        config.validate()
        self.model = model
        self.split = split
        self.config = config
        self.optimizer = Adam(config.learning_rate, config.adam_beta1,
                              config.adam_beta2, config.adam_epsilon)
        self._epoch = 0
        self._batch_rng = {
            "target": derive_rng(config.seed, "batches", "target"),
            "source": derive_rng(config.seed, "batches", "source"),
        }
        self._pair_rng = {
            "target": derive_rng(config.seed, "pairing", "target"),
            "source": derive_rng(config.seed, "pairing", "source"),
        }
        self._iters = {"target": self._cycle("target")}
        if model.dual:
            self._iters["source"] = self._cycle("source")

    def _dataset(self, domain: str):
        return self.split.train.target if domain == "target" else self.split.train.source

    def _cycle(self, domain: str):
        cfg = self.config
        while True:
            yield from epoch_batches(self._dataset(domain), domain, cfg.batch_size,
                                     cfg.negative_ratio, self._batch_rng[domain])

    def _paired_items(self, domain: str, users: np.ndarray) -> np.ndarray:
        # For a target batch, pick one source item per example (and vice
        # versa) so the coupled forward pass has both inputs.
        other = self.split.train.source if domain == "target" else self.split.train.target
        rng = self._pair_rng[domain]
        return np.asarray([_pair_item(other, int(u), rng, "train") for u in users],
                          dtype=np.int64)

    def _train_step(self, domain: str, step: int) -> tuple:
        model = self.model
        batch = next(self._iters[domain])
        wanted = model.update_group(domain)
        if model.dual:
            paired = self._paired_items(domain, batch.users)
            if domain == "target":
                trace = model.forward_batch(batch.users, batch.items, paired)
                loss = cross_entropy_from_logits(trace.logits_t, batch.labels)
                grads = model.backward_batch(trace, labels_target=batch.labels, wanted=wanted)
            else:
                trace = model.forward_batch(batch.users, paired, batch.items)
                loss = cross_entropy_from_logits(trace.logits_s, batch.labels)
                grads = model.backward_batch(trace, labels_source=batch.labels, wanted=wanted)
        else:
            trace = model.forward_batch(batch.users, batch.items)
            loss = cross_entropy_from_logits(trace.logits, batch.labels)
            grads = model.backward_batch(trace, batch.labels, wanted=wanted)
        if not math.isfinite(loss):
            raise NumericError(
                f"non-finite training loss at epoch {self._epoch}, step {step} ({domain} batch)"
            )
        self.optimizer.step(model.params, grads)
        lam = model.config.lasso_lambda
        if lam > 0 and not getattr(model, "_frozen_cross", False):
            threshold = self.config.learning_rate * lam
            for h in model.transfer_matrices():
                h[:] = proximal_l1(h, threshold)
        return loss, len(batch)

    def train_epoch(self) -> EpochStats:
        """One alternating pass; returns losses, validation metrics, sparsity."""
        model = self.model
        cfg = self.config
        self._epoch += 1
        steps = num_batches(self.split.train.target, cfg.batch_size)
        if model.dual:
            steps = max(steps, num_batches(self.split.train.source, cfg.batch_size))
        sums = {"target": 0.0, "source": 0.0}
        counts = {"target": 0, "source": 0}
        for step in range(steps):
            loss, n = self._train_step("target", step)
            sums["target"] += loss
            counts["target"] += n
            if model.dual:
                loss, n = self._train_step("source", step)
                sums["source"] += loss
                counts["source"] += n
        val = self._validation_metrics()
        matrices = model.transfer_matrices()
        return EpochStats(
            epoch=self._epoch,
            loss_target=sums["target"] / counts["target"],
            loss_source=sums["source"] / counts["source"] if counts["source"] else 0.0,
            penalty=lasso_penalty(matrices, model.config.lasso_lambda),
            val_hr=val.hr,
            val_ndcg=val.ndcg,
            val_mrr=val.mrr,
            h_zero_ratios=[sparsity_ratio(h) for h in matrices],
        )

    def _validation_metrics(self):
        if not self.split.test:
            return evaluation.MetricsReport(hr=math.nan, ndcg=math.nan, mrr=math.nan,
                                            per_user=[], top_n=10, num_evaluated_users=0)
        scorer = make_scorer(self.model, self.split)
        return evaluation.evaluate(scorer, self.split, partition="validation")

    def fit(self) -> list:
        """Run up to ``epochs`` epochs with early stopping on validation NDCG.

        Leaves the model at the best-validation parameters and returns the
        per-epoch stats. Without evaluable users the final parameters win.
        """
        cfg = self.config
        best = {k: v.copy() for k, v in self.model.params.items()}
        best_ndcg = -math.inf
        bad = 0
        stats = []
        for _ in range(cfg.epochs):
            st = self.train_epoch()
            stats.append(st)
            if math.isnan(st.val_ndcg):
                best = {k: v.copy() for k, v in self.model.params.items()}
                continue
            if st.val_ndcg > best_ndcg:
                best_ndcg = st.val_ndcg
                best = {k: v.copy() for k, v in self.model.params.items()}
                bad = 0
            else:
                bad += 1
                if cfg.patience is not None and bad >= cfg.patience:
                    break
        for k in self.model.params:
            self.model.params[k] = best[k]
        return stats


def fit(model, split: LooSplit, config: TrainConfig):
    """Train ``model`` on ``split``; returns ``(model, stats)``."""
    trainer = Trainer(model, split, config)
    stats = trainer.fit()
    return model, stats
