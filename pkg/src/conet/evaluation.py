"""Leave-one-out ranking evaluation and paired significance testing.

For every evaluated user the held-out item is scored against that user's
99 frozen negatives; the hit position is its 1-based rank among the 100
candidates, with ties counted against the held-out item (pessimistic and
deterministic). HR, NDCG and MRR are averaged per-user contributions with
the ranked list cut off at ``top_n`` (10 by default). Per-user arithmetic
uses plain Python floats in user-index order so the aggregates are
bit-reproducible and exactly recomputable from the per-user records.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Protocol

import numpy as np
from scipy import stats as _scipy_stats

from .data import LooSplit
from .errors import ConfigError, DataError, NumericError

__all__ = [
    "RankingResult",
    "MetricsReport",
    "Scorer",
    "rank_test_item",
    "hit_ratio",
    "ndcg",
    "mrr",
    "evaluate",
    "paired_t_test",
    "ndcg_contributions",
]

DEFAULT_TOP_N = 10


class Scorer(Protocol):
    def score_items(self, user: int, items) -> np.ndarray: ...


@dataclass(frozen=True)
class RankingResult:
    user: int
    position: int  # 1-based rank among the 100 scored candidates


@dataclass
class MetricsReport:
    hr: float
    ndcg: float
    mrr: float
    per_user: list
    top_n: int
    num_evaluated_users: int

    def to_jsonable(self, model: str = "", dataset: str = "", include_per_user: bool = True) -> dict:
        record = {
            "model": model,
            "dataset": dataset,
            "topN": self.top_n,
            "hr": self.hr,
            "ndcg": self.ndcg,
            "mrr": self.mrr,
            "num_users": self.num_evaluated_users,
        }
        if include_per_user:
            record["per_user"] = [[r.user, r.position] for r in self.per_user]
        return record


def rank_test_item(test_score: float, negative_scores) -> int:
    """1 + number of negatives scoring at least the test score.

    Ties count against the test item, so a constant scorer ranks it last.
    """
    negatives = np.asarray(negative_scores, dtype=np.float64)
    if not math.isfinite(test_score) or not np.all(np.isfinite(negatives)):
        raise NumericError("rank_test_item: scores must be finite")
    return 1 + int(np.count_nonzero(negatives >= test_score))


def _check_nonempty(results):
    if not results:
        raise DataError("ranking metrics need at least one evaluated user")


def hit_ratio(results, top_n: int = DEFAULT_TOP_N) -> float:
    """Fraction of users whose hit position is within the cutoff."""
    _check_nonempty(results)
    total = 0.0
    for r in results:
        total += 1.0 if r.position <= top_n else 0.0
    return total / len(results)


def ndcg(results, top_n: int = DEFAULT_TOP_N) -> float:
    """Mean of log 2 / log(position + 1) over users inside the cutoff."""
    _check_nonempty(results)
    total = 0.0
    for r in results:
        if r.position <= top_n:
            total += math.log(2.0) / math.log(r.position + 1.0)
    return total / len(results)


def mrr(results, top_n: int = DEFAULT_TOP_N, apply_cutoff: bool = True) -> float:
    """Mean reciprocal hit position.

    By default the top-N cutoff zeroes contributions beyond ``top_n``,
    matching the other two metrics; ``apply_cutoff=False`` gives the
    uncut reading.
    """
    _check_nonempty(results)
    total = 0.0
    for r in results:
        if not apply_cutoff or r.position <= top_n:
            total += 1.0 / r.position
    return total / len(results)


def ndcg_contributions(results, top_n: int = DEFAULT_TOP_N) -> np.ndarray:
    """Per-user NDCG contributions in the order given (for paired tests)."""
    return np.asarray(
        [math.log(2.0) / math.log(r.position + 1.0) if r.position <= top_n else 0.0
         for r in results],
        dtype=np.float64,
    )


def evaluate(scorer: Scorer, split: LooSplit, partition: str = "test",
             top_n: int = DEFAULT_TOP_N, mrr_uncut: bool = False) -> MetricsReport:
    """Rank every evaluated user's held-out item against its 99 negatives.

    Deterministic: users are processed in index order against the frozen
    negatives of the split, so two models are always compared on
    identical candidate sets.
    """
    if partition == "test":
        held = split.test
    elif partition == "validation":
        held = split.validation
    else:
        raise ConfigError(f"unknown partition {partition!r}")
    if not held:
        raise DataError("split has no evaluated users")
    results = []
    for user in sorted(held):
        candidates = np.concatenate([[held[user]], split.eval_negatives[user]])
        try:
            scores = np.asarray(scorer.score_items(user, candidates), dtype=np.float64)
        except Exception as exc:
            raise type(exc)(f"scorer failed for user {user}: {exc}") from exc
        position = rank_test_item(float(scores[0]), scores[1:])
        results.append(RankingResult(user=user, position=position))
    return MetricsReport(
        hr=hit_ratio(results, top_n),
        ndcg=ndcg(results, top_n),
        mrr=mrr(results, top_n, apply_cutoff=not mrr_uncut),
        per_user=results,
        top_n=top_n,
        num_evaluated_users=len(results),
    )


def paired_t_test(per_user_a, per_user_b) -> float:
    """Two-sided paired t-test p-value on per-user metric differences.

    Degenerate cases are pinned: all-zero differences give p = 1.0, and a
    nonzero constant difference (zero variance) gives p = 0.0.
    """
    a = np.asarray(per_user_a, dtype=np.float64)
    b = np.asarray(per_user_b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise DataError("paired_t_test needs two equal-length vectors")
    if a.size < 2:
        raise DataError("paired_t_test needs at least two pairs")
    diff = a - b
    if np.all(diff == 0.0):
        return 1.0
    sd = float(diff.std(ddof=1))
    if sd == 0.0:
        return 0.0
    t_stat = float(diff.mean()) / (sd / math.sqrt(diff.size))
    return float(2.0 * _scipy_stats.t.sf(abs(t_stat), diff.size - 1))
