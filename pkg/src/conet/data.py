"""Interaction datasets, domain alignment, leave-one-out splits and sampling.

A dataset is a set of binary user-item interactions over dense indices.
Two aligned datasets over one shared user index space form a
:class:`CrossDomainDataset`; the leave-one-out split holds out one test
and one validation interaction per target-domain user and freezes the 99
ranking negatives so that every model is evaluated on identical
candidates.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Iterator

import numpy as np

from .errors import ConfigError, DataError
from .numerics import derive_rng

__all__ = [
    "InteractionDataset",
    "CrossDomainDataset",
    "LooSplit",
    "TrainingExample",
    "Batch",
    "SyntheticConfig",
    "ReductionResult",
    "load_interactions",
    "write_interactions",
    "align_domains",
    "loo_split",
    "sample_eval_negatives",
    "epoch_batches",
    "generate_synthetic",
    "reduce_training",
    "save_split_manifest",
    "load_split_manifest",
]

NUM_EVAL_NEGATIVES = 99
MIN_EVAL_INTERACTIONS = 3  # 1 test + 1 validation + at least 1 train


class InteractionDataset:
    """Binary implicit-feedback interactions of one domain.

    Stores a per-user sorted adjacency over dense indices. Optional
    ``user_ids`` / ``item_ids`` keep the external identifiers so that two
    domains can later be aligned over their shared users.
    """

    def __init__(self, num_users, num_items, adjacency, user_ids=None, item_ids=None):
        if num_users < 1 or num_items < 1:
            raise DataError("dataset needs at least one user and one item")
        if len(adjacency) != num_users:
            raise DataError("adjacency length does not match num_users")
        self.num_users = int(num_users)
        self.num_items = int(num_items)
        self.adjacency = []
        for u, items in enumerate(adjacency):
            arr = np.asarray(items, dtype=np.int64)
            if arr.size and (arr.min() < 0 or arr.max() >= num_items):
                raise DataError(f"user {u} has an item index out of range")
            if np.unique(arr).size != arr.size:
                raise DataError(f"user {u} has duplicate interactions")
            self.adjacency.append(np.sort(arr))
        self.user_ids = tuple(user_ids) if user_ids is not None else None
        self.item_ids = tuple(item_ids) if item_ids is not None else None

    @property
    def num_interactions(self) -> int:
        return sum(a.size for a in self.adjacency)

    @property
    def density(self) -> float:
        return self.num_interactions / (self.num_users * self.num_items)

    def items_of(self, user: int) -> np.ndarray:
        return self.adjacency[user]

    def has(self, user: int, item: int) -> bool:
        a = self.adjacency[user]
        pos = np.searchsorted(a, item)
        return pos < a.size and a[pos] == item

    def pairs(self) -> np.ndarray:
        """All (user, item) pairs, user-major, items ascending. Shape (N, 2)."""
        chunks = [
            np.column_stack([np.full(a.size, u, dtype=np.int64), a])
            for u, a in enumerate(self.adjacency)
            if a.size
        ]
        if not chunks:
            return np.empty((0, 2), dtype=np.int64)
        return np.concatenate(chunks, axis=0)

    def same_interactions(self, other: "InteractionDataset") -> bool:
        if self.num_users != other.num_users or self.num_items != other.num_items:
            return False
        return all(
            np.array_equal(a, b) for a, b in zip(self.adjacency, other.adjacency)
        )


@dataclass
class CrossDomainDataset:
    """Target and source domains aligned over one shared user index space."""

    target: InteractionDataset
    source: InteractionDataset

    def __post_init__(self):
        if self.target.num_users != self.source.num_users:
            raise DataError("target and source must share the same user set")

    @property
    def num_users(self) -> int:
        return self.target.num_users


@dataclass
class LooSplit:
    """Leave-one-out split of the target domain with frozen eval negatives.

    ``test`` and ``validation`` map evaluated users to their held-out
    target items; ``eval_negatives`` maps each evaluated user to 99 target
    items the user never interacted with. The source domain is never
    split: all of it stays in ``train``.
    """

    train: CrossDomainDataset
    test: dict
    validation: dict
    eval_negatives: dict

    @property
    def evaluated_users(self) -> list:
        return sorted(self.test)


@dataclass(frozen=True)
class TrainingExample:
    user: int
    item: int
    label: int
    domain: str


@dataclass
class Batch:
    """One mini-batch of labelled examples for a single domain."""

    domain: str
    users: np.ndarray
    items: np.ndarray
    labels: np.ndarray

    def __len__(self):
        return self.users.size

    def to_examples(self) -> list:
        return [
            TrainingExample(int(u), int(i), int(l), self.domain)
            for u, i, l in zip(self.users, self.items, self.labels)
        ]


# ---------------------------------------------------------------------------
# Ingestion


def load_interactions(path, min_user_interactions: int = 3) -> InteractionDataset:
    """Load a tab-separated interaction log into a dense-index dataset.

    One interaction per line, ``<user_id>\\t<item_id>``; extra trailing
    columns are ignored, lines starting with ``#`` are comments. Duplicate
    pairs collapse to one. Users with fewer than ``min_user_interactions``
    distinct interactions are dropped before any index is assigned, and
    the surviving users and items get dense indices in first-appearance
    order.
    """
    per_user: dict = {}
    order: list = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.rstrip("\n").rstrip("\r")
            if not line or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) < 2 or not parts[0] or not parts[1]:
                raise DataError(f"{path}: malformed line {lineno}: {line!r}")
            user, item = parts[0], parts[1]
            if user not in per_user:
                per_user[user] = []
                order.append(user)
            per_user[user].append(item)
    kept = [u for u in order if len(set(per_user[u])) >= min_user_interactions]
    if not kept:
        raise DataError(f"{path}: no interactions left after filtering")

    user_index = {u: k for k, u in enumerate(kept)}
    item_index: dict = {}
    item_ids: list = []
    adjacency = [[] for _ in kept]
    for u in kept:
        seen = set()
        for item in per_user[u]:
            if item in seen:
                continue
            seen.add(item)
            if item not in item_index:
                item_index[item] = len(item_ids)
                item_ids.append(item)
            adjacency[user_index[u]].append(item_index[item])
    return InteractionDataset(
        num_users=len(kept),
        num_items=len(item_ids),
        adjacency=adjacency,
        user_ids=kept,
        item_ids=item_ids,
    )


def write_interactions(dataset: InteractionDataset, path) -> None:
    """Write a dataset back to the tab-separated format, user-major.

    Uses the external identifiers when present, else the dense indices.
    Loading the written file with ``min_user_interactions=1`` reproduces
    the dataset exactly whenever its indices are in first-appearance
    order (true for loaded and generated datasets).
    """
    uids = dataset.user_ids or [str(u) for u in range(dataset.num_users)]
    iids = dataset.item_ids or [str(i) for i in range(dataset.num_items)]
    with open(path, "w", encoding="utf-8") as fh:
        for u in range(dataset.num_users):
            for i in dataset.adjacency[u]:
                fh.write(f"{uids[u]}\t{iids[int(i)]}\n")


def align_domains(target: InteractionDataset, source: InteractionDataset) -> CrossDomainDataset:
    """Restrict both domains to their shared users and reindex densely.

    Users keep the target domain's first-appearance order; each domain's
    items are reindexed over the surviving interactions only. Raises when
    the user intersection is empty.
    """
    if target.user_ids is None or source.user_ids is None:
        raise DataError("align_domains needs datasets with external user ids")
    source_index = {u: k for k, u in enumerate(source.user_ids)}
    shared = [u for u in target.user_ids if u in source_index]
    if not shared:
        raise DataError("no users shared between the two domains")

    def rebuild(ds, users_old):
        item_map: dict = {}
        item_ids: list = []
        adjacency = []
        for old_u in users_old:
            row = []
            for old_i in ds.adjacency[old_u]:
                old_i = int(old_i)
                if old_i not in item_map:
                    item_map[old_i] = len(item_ids)
                    item_ids.append(ds.item_ids[old_i] if ds.item_ids else str(old_i))
                row.append(item_map[old_i])
            adjacency.append(row)
        return InteractionDataset(
            num_users=len(users_old),
            num_items=len(item_ids),
            adjacency=adjacency,
            user_ids=shared,
            item_ids=item_ids,
        )

    target_old = {u: k for k, u in enumerate(target.user_ids)}
    new_target = rebuild(target, [target_old[u] for u in shared])
    new_source = rebuild(source, [source_index[u] for u in shared])
    return CrossDomainDataset(target=new_target, source=new_source)


# ---------------------------------------------------------------------------
# Leave-one-out splitting


def sample_eval_negatives(
    dataset: InteractionDataset, user: int, rng: np.random.Generator
) -> np.ndarray:
    """Draw 99 distinct items the user never interacted with, uniformly."""
    interacted = dataset.items_of(user)
    eligible = np.setdiff1d(np.arange(dataset.num_items, dtype=np.int64), interacted)
    if eligible.size < NUM_EVAL_NEGATIVES:
        raise DataError(
            f"user {user}: only {eligible.size} non-interacted items, need {NUM_EVAL_NEGATIVES}"
        )
    picked = rng.choice(eligible, size=NUM_EVAL_NEGATIVES, replace=False)
    return picked.astype(np.int64)


def loo_split(data: CrossDomainDataset, rng: np.random.Generator) -> LooSplit:
    """Hold out one test and one validation target item per evaluable user.

    Users with fewer than three target interactions keep everything in
    train and are excluded from evaluation. The source domain is copied
    into train untouched. Negatives are sampled against the user's full
    target history (train, validation and test).
    """
    target = data.target
    test: dict = {}
    validation: dict = {}
    negatives: dict = {}
    train_adj = []
    for u in range(target.num_users):
        items = target.items_of(u)
        if items.size < MIN_EVAL_INTERACTIONS:
            train_adj.append(items.copy())
            continue
        picked = rng.choice(items, size=2, replace=False)
        test_item, val_item = int(picked[0]), int(picked[1])
        test[u] = test_item
        validation[u] = val_item
        keep = items[(items != test_item) & (items != val_item)]
        train_adj.append(keep)
        negatives[u] = sample_eval_negatives(target, u, rng)
    train_target = InteractionDataset(
        num_users=target.num_users,
        num_items=target.num_items,
        adjacency=train_adj,
        user_ids=target.user_ids,
        item_ids=target.item_ids,
    )
    train = CrossDomainDataset(target=train_target, source=data.source)
    return LooSplit(train=train, test=test, validation=validation, eval_negatives=negatives)


# ---------------------------------------------------------------------------
# Training batches


def _draw_negative(adjacency: np.ndarray, num_items: int, rng) -> int:
    # Rejection sampling stays uniform over the non-interacted items.
    while True:
        j = int(rng.integers(num_items))
        pos = np.searchsorted(adjacency, j)
        if pos >= adjacency.size or adjacency[pos] != j:
            return j


def epoch_batches(
    dataset: InteractionDataset,
    domain: str,
    batch_size: int,
    negative_ratio: int,
    rng: np.random.Generator,
) -> Iterator[Batch]:
    """Yield one epoch of training batches for a single domain.

    Positives are shuffled once and consumed without replacement; each
    positive ``(u, i)`` is followed by ``negative_ratio`` fresh negatives
    ``(u, j)`` with ``j`` uniform over the items ``u`` never interacted
    with in this dataset. Negatives are resampled every epoch.
    """
    if batch_size < 1:
        raise ConfigError("batch_size must be >= 1")
    if negative_ratio < 0:
        raise ConfigError("negative_ratio must be >= 0")
    pairs = dataset.pairs()
    if pairs.shape[0] == 0:
        raise DataError(f"{domain} domain has no training interactions")
    order = rng.permutation(pairs.shape[0])
    for start in range(0, order.size, batch_size):
        chunk = pairs[order[start : start + batch_size]]
        users = []
        items = []
        labels = []
        for u, i in chunk:
            users.append(u)
            items.append(i)
            labels.append(1)
            adj = dataset.items_of(int(u))
            for _ in range(negative_ratio):
                users.append(u)
                items.append(_draw_negative(adj, dataset.num_items, rng))
                labels.append(0)
        yield Batch(
            domain=domain,
            users=np.asarray(users, dtype=np.int64),
            items=np.asarray(items, dtype=np.int64),
            labels=np.asarray(labels, dtype=np.float64),
        )


def num_batches(dataset: InteractionDataset, batch_size: int) -> int:
    n = dataset.num_interactions
    return (n + batch_size - 1) // batch_size


# ---------------------------------------------------------------------------
# Synthetic cross-domain data


@dataclass(frozen=True)
class SyntheticConfig:
    """Controls the synthetic cross-domain generator.

    ``relatedness`` blends the source-domain user factors between the
    shared target factors (1.0) and an independent draw (0.0), so it
    directly tunes how much transferable structure the two domains share.
    """

    num_users: int = 1000
    num_items_target: int = 1600
    num_items_source: int = 1000
    latent_dim: int = 8
    relatedness: float = 0.9
    target_density: float = 0.005
    source_density: float = 0.015
    seed: int = 0

    def validate(self) -> None:
        if self.num_users < 1 or self.num_items_target < 1 or self.num_items_source < 1:
            raise ConfigError("synthetic sizes must be positive")
        if self.latent_dim < 1:
            raise ConfigError("latent_dim must be >= 1")
        if not 0.0 <= self.relatedness <= 1.0:
            raise ConfigError("relatedness must lie in [0, 1]")
        for density, n in (
            (self.target_density, self.num_items_target),
            (self.source_density, self.num_items_source),
        ):
            if not 0.0 < density < 1.0:
                raise ConfigError("densities must lie in (0, 1)")
            count = round(density * n)
            if count < 1:
                raise ConfigError(f"density {density} gives no interactions over {n} items")
            if abs(count / n - density) > 0.05 * density:
                raise ConfigError(
                    f"density {density} not achievable within 5% with {n} items per user"
                )


def _top_items_per_user(scores: np.ndarray, per_user: int) -> list:
    chosen = []
    for u in range(scores.shape[0]):
        top = np.argpartition(-scores[u], per_user - 1)[:per_user]
        chosen.append(set(int(i) for i in top))
    return chosen


def _force_full_coverage(chosen: list, scores: np.ndarray) -> None:
    # Items nobody picked are swapped into their best-scoring user's set in
    # place of that user's lowest-scoring item that other users still hold,
    # so the item universe survives a TSV round trip while per-user counts
    # and the overall density stay put.
    n_items = scores.shape[1]
    holders = np.zeros(n_items, dtype=np.int64)
    for s in chosen:
        for j in s:
            holders[j] += 1
    for j in range(n_items):
        if holders[j] > 0:
            continue
        # Best-scoring user that can still give something up; a user whose
        # remaining items are all singleton-held would orphan another item.
        candidates = np.argsort(-scores[:, j], kind="stable")
        for u in candidates:
            u = int(u)
            removable = [i for i in chosen[u] if holders[i] > 1 and i != j]
            if removable:
                worst = min(removable, key=lambda i: scores[u, i])
                chosen[u].discard(worst)
                holders[worst] -= 1
                break
        else:
            u = int(candidates[0])
        chosen[u].add(j)
        holders[j] += 1


def _relabel_first_appearance(chosen: list, n_items: int, prefix: str):
    # Reassign item indices in user-major first-appearance order, which is
    # exactly the order load_interactions would assign after a write.
    mapping = {}
    for items in chosen:
        for old in sorted(items):
            if old not in mapping:
                mapping[old] = len(mapping)
    adjacency = [[mapping[i] for i in items] for items in chosen]
    item_ids = [""] * len(mapping)
    for old, new in mapping.items():
        item_ids[new] = f"{prefix}{old}"
    return adjacency, item_ids


def generate_synthetic(config: SyntheticConfig) -> CrossDomainDataset:
    """Build an aligned two-domain dataset from a shared latent factor model.

    Shared user factors drive the target domain; the source domain uses
    ``relatedness * U + (1 - relatedness) * U'`` with an independent
    ``U'``. Each user interacts with their top-scoring items, with the
    per-user count set by the requested density. Deterministic in the
    config seed.
    """
    config.validate()
    m, k = config.num_users, config.latent_dim
    user_factors = derive_rng(config.seed, "synthetic-users").standard_normal((m, k))
    noise = derive_rng(config.seed, "synthetic-user-noise").standard_normal((m, k))
    rho = config.relatedness
    source_user_factors = rho * user_factors + (1.0 - rho) * noise

    def build(domain_users, n_items, density, prefix):
        count = round(density * n_items)
        item_rng = derive_rng(config.seed, "synthetic-items", n_items, count)
        item_factors = item_rng.standard_normal((n_items, k))
        scores = domain_users @ item_factors.T
        chosen = _top_items_per_user(scores, count)
        _force_full_coverage(chosen, scores)
        adjacency, item_ids = _relabel_first_appearance(chosen, n_items, prefix)
        return InteractionDataset(
            num_users=m,
            num_items=n_items,
            adjacency=adjacency,
            user_ids=[f"u{u}" for u in range(m)],
            item_ids=item_ids,
        )

    target = build(user_factors, config.num_items_target, config.target_density, "t")
    source = build(source_user_factors, config.num_items_source, config.source_density, "s")
    return CrossDomainDataset(target=target, source=source)


# ---------------------------------------------------------------------------
# Training-set reduction


@dataclass
class ReductionResult:
    split: LooSplit
    removed: int
    total_before: int

    @property
    def removed_fraction(self) -> float:
        return self.removed / self.total_before if self.total_before else 0.0


def reduce_training(split: LooSplit, per_user_removal: int, rng: np.random.Generator) -> ReductionResult:
    """Drop up to ``per_user_removal`` train target interactions per user.

    Removal is uniform without replacement per user and never drops a user
    below one remaining train interaction. Test, validation and the frozen
    negatives are untouched.
    """
    if per_user_removal < 0:
        raise ConfigError("per_user_removal must be >= 0")
    target = split.train.target
    total_before = target.num_interactions
    if per_user_removal == 0:
        return ReductionResult(split=split, removed=0, total_before=total_before)
    adjacency = []
    removed = 0
    for u in range(target.num_users):
        items = target.items_of(u)
        k = min(per_user_removal, items.size - 1)
        if k <= 0:
            adjacency.append(items.copy())
            continue
        drop = set(int(i) for i in rng.choice(items, size=k, replace=False))
        adjacency.append(np.asarray([i for i in items if int(i) not in drop], dtype=np.int64))
        removed += k
    reduced_target = InteractionDataset(
        num_users=target.num_users,
        num_items=target.num_items,
        adjacency=adjacency,
        user_ids=target.user_ids,
        item_ids=target.item_ids,
    )
    train = CrossDomainDataset(target=reduced_target, source=split.train.source)
    new_split = LooSplit(
        train=train,
        test=dict(split.test),
        validation=dict(split.validation),
        eval_negatives={u: v.copy() for u, v in split.eval_negatives.items()},
    )
    return ReductionResult(split=new_split, removed=removed, total_before=total_before)


# ---------------------------------------------------------------------------
# Split manifest (freeze a split across runs)


def save_split_manifest(split: LooSplit, path) -> None:
    """Write the held-out items and frozen negatives as JSON."""
    manifest = {
        "num_users": split.train.num_users,
        "num_items_target": split.train.target.num_items,
        "num_items_source": split.train.source.num_items,
        "test": {str(u): int(i) for u, i in sorted(split.test.items())},
        "validation": {str(u): int(i) for u, i in sorted(split.validation.items())},
        "eval_negatives": {
            str(u): [int(i) for i in split.eval_negatives[u]] for u in sorted(split.eval_negatives)
        },
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=1)
        fh.write("\n")


def load_split_manifest(data: CrossDomainDataset, path) -> LooSplit:
    """Rebuild a LooSplit from a manifest against the full dataset.

    Validates that the held-out items are real interactions and that no
    negative was ever interacted with by its user.
    """
    with open(path, "r", encoding="utf-8") as fh:
        manifest = json.load(fh)
    if manifest["num_users"] != data.num_users:
        raise DataError("split manifest user count does not match the dataset")
    if manifest["num_items_target"] != data.target.num_items:
        raise DataError("split manifest target item count does not match the dataset")
    if manifest["num_items_source"] != data.source.num_items:
        raise DataError("split manifest source item count does not match the dataset")
    test = {int(u): int(i) for u, i in manifest["test"].items()}
    validation = {int(u): int(i) for u, i in manifest["validation"].items()}
    negatives = {int(u): np.asarray(v, dtype=np.int64) for u, v in manifest["eval_negatives"].items()}
    if set(test) != set(validation) or set(test) != set(negatives):
        raise DataError("split manifest partitions cover different users")
    train_adj = []
    for u in range(data.num_users):
        items = data.target.items_of(u)
        if u not in test:
            train_adj.append(items.copy())
            continue
        held = {test[u], validation[u]}
        if len(held) != 2 or not all(data.target.has(u, i) for i in held):
            raise DataError(f"split manifest holds out invalid items for user {u}")
        if negatives[u].size != NUM_EVAL_NEGATIVES:
            raise DataError(f"user {u} must have exactly {NUM_EVAL_NEGATIVES} negatives")
        if any(data.target.has(u, int(j)) for j in negatives[u]):
            raise DataError(f"split manifest negative was interacted by user {u}")
        train_adj.append(np.asarray([i for i in items if int(i) not in held], dtype=np.int64))
    train_target = InteractionDataset(
        num_users=data.num_users,
        num_items=data.target.num_items,
        adjacency=train_adj,
        user_ids=data.target.user_ids,
        item_ids=data.target.item_ids,
    )
    train = CrossDomainDataset(target=train_target, source=data.source)
    return LooSplit(train=train, test=test, validation=validation, eval_negatives=negatives)
