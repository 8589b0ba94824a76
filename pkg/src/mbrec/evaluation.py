"""Full-ranking top-K evaluation: Recall@K and NDCG@K plus a naive oracle.

Every item is ranked for every evaluated user (no sampled negatives);
score ties break by ascending item id so rankings are reproducible.
NDCG uses binary relevance with gain 1/log2(rank+1), rank 1-based.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dataio import InteractionDataset, Role
from .model import ForwardCache

DEFAULT_K_VALUES = (10, 40, 80)


@dataclass
class RankingMetrics:
    k_values: list[int]
    recall_at: dict[int, float]
    ndcg_at: dict[int, float]
    num_evaluated_users: int
    skipped_users: int = 0
    score_view: str = "svd"

    def to_dict(self) -> dict:
        return {"k_values": list(self.k_values),
                "recall_at": {str(k): self.recall_at[k] for k in self.k_values},
                "ndcg_at": {str(k): self.ndcg_at[k] for k in self.k_values},
                "num_evaluated_users": self.num_evaluated_users,
                "skipped_users": self.skipped_users,
                "score_view": self.score_view}


def _checked_k_values(k_values) -> list[int]:
    ks = sorted({int(k) for k in k_values})
    if not ks or ks[0] < 1:
        raise ValueError("k_values must be positive integers")
    return ks


def score_all(cache: ForwardCache, user_id: int, score_view: str = "svd",
              masked_items: np.ndarray | None = None) -> np.ndarray:
    """Scores of every item for one user: dot products against the fused
    item table. ``masked_items`` (the user's training targets) are set to
    -inf so they can never enter a top-K list."""
    user_vec = cache.user_vectors(score_view)[user_id]
    scores = cache.item_vectors(score_view) @ user_vec
    if masked_items is not None and len(masked_items):
        scores[np.asarray(masked_items)] = -np.inf
    return scores


def _ranking(scores_row: np.ndarray) -> np.ndarray:
    # stable sort on negated scores = descending score, ties by item id
    return np.argsort(-scores_row, kind="stable")


def metrics(scores: np.ndarray, truth: list, k_values=DEFAULT_K_VALUES,
            score_view: str = "svd") -> RankingMetrics:
    """Average Recall@K / NDCG@K over users with nonempty truth.

    ``scores``: (num_users, num_items); ``truth``: per-user arrays of
    held-out item ids. Users with empty truth are skipped and tallied.
    NDCG normalizes by the ideal gain of the full held-out set (not
    truncated at K), so both metrics are nondecreasing in K.
    """
    ks = _checked_k_values(k_values)
    max_k = min(ks[-1], scores.shape[1])
    discounts = 1.0 / np.log2(np.arange(2, max_k + 2))
    recall_sum = {k: 0.0 for k in ks}
    ndcg_sum = {k: 0.0 for k in ks}
    evaluated = skipped = 0
    for row, items in zip(scores, truth):
        items = np.asarray(items)
        if items.size == 0:
            skipped += 1
            continue
        evaluated += 1
        top = _ranking(row)[:max_k]
        hits = np.isin(top, items)
        ideal = (1.0 / np.log2(np.arange(2, items.size + 2))).sum()
        for k in ks:
            kk = min(k, max_k)
            recall_sum[k] += hits[:kk].sum() / items.size
            ndcg_sum[k] += (hits[:kk] * discounts[:kk]).sum() / ideal
    denom = max(evaluated, 1)
    return RankingMetrics(
        k_values=ks,
        recall_at={k: recall_sum[k] / denom for k in ks},
        ndcg_at={k: ndcg_sum[k] / denom for k in ks},
        num_evaluated_users=evaluated, skipped_users=skipped,
        score_view=score_view)


def oracle_metrics(scores: np.ndarray, truth: list, k_values=DEFAULT_K_VALUES,
                   score_view: str = "svd") -> RankingMetrics:
    """Brute-force reference: full per-user sort in plain Python with the
    same tie rule, scored item by item. Must agree with `metrics`."""
    ks = _checked_k_values(k_values)
    recall_sum = {k: 0.0 for k in ks}
    ndcg_sum = {k: 0.0 for k in ks}
    evaluated = skipped = 0
    num_items = scores.shape[1]
    for row, items in zip(scores, truth):
        wanted = set(int(i) for i in np.asarray(items).ravel())
        if not wanted:
            skipped += 1
            continue
        evaluated += 1
        order = sorted(range(num_items), key=lambda i: (-row[i], i))
        idcg = 0.0
        for rank in range(1, len(wanted) + 1):
            idcg += 1.0 / np.log2(rank + 1)
        for k in ks:
            hits = dcg = 0.0
            for rank, item in enumerate(order[:k], start=1):
                if item in wanted:
                    hits += 1.0
                    dcg += 1.0 / np.log2(rank + 1)
            recall_sum[k] += hits / len(wanted)
            ndcg_sum[k] += dcg / idcg
    denom = max(evaluated, 1)
    return RankingMetrics(
        k_values=ks,
        recall_at={k: recall_sum[k] / denom for k in ks},
        ndcg_at={k: ndcg_sum[k] / denom for k in ks},
        num_evaluated_users=evaluated, skipped_users=skipped,
        score_view=score_view)


def _role_value(split) -> int:
    if isinstance(split, str):
        try:
            return int(Role[split.upper().replace("VALIDATION", "VALID")])
        except KeyError:
            raise ValueError(f"unknown split {split!r}") from None
    return int(split)


def evaluate_split(cache: ForwardCache, dataset: InteractionDataset,
                   split="valid", k_values=DEFAULT_K_VALUES,
                   score_view: str = "svd") -> RankingMetrics:
    """Rank all items for every user holding out >= 1 item in ``split``.

    Ground truth is the user's held-out target-behavior items; the user's
    target-behavior training items are masked out of the candidate list.
    """
    role = _role_value(split)
    target = dataset.behaviors == dataset.target_behavior
    eval_sel = target & (dataset.roles == role)
    train_sel = target & (dataset.roles == int(Role.TRAIN))
    users = np.unique(dataset.users[eval_sel])
    user_vecs = cache.user_vectors(score_view)
    item_vecs = cache.item_vectors(score_view)
    scores = user_vecs[users] @ item_vecs.T
    truth = []
    for pos, u in enumerate(users):
        held = dataset.items[eval_sel & (dataset.users == u)]
        mine = dataset.items[train_sel & (dataset.users == u)]
        if mine.size:
            scores[pos, mine] = -np.inf
        truth.append(held)
    return metrics(scores, truth, k_values=k_values, score_view=score_view)
