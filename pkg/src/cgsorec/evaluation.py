"""Ranking metrics, hot/tail breakdowns, and popularity diagnostics.

Recall is the global hit ratio (summed hits over summed test-set sizes);
NDCG is a per-user mean of DCG/IDCG with log-2 discounting.  Users whose
test row is empty are excluded everywhere — both metrics are undefined
for them.  Ties in scores always break toward the lower item id, which
keeps every ranking reproducible bit-for-bit.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .corpus import InteractionMatrix, ItemGroups
from .errors import ConfigError, DataError


@dataclass(frozen=True)
class RankedList:
    """Top-K recommendation for one user, best first, train items absent."""

    user: int
    items: np.ndarray
    scores: np.ndarray


def _as_csr(matrix) -> sp.csr_matrix:
    if isinstance(matrix, InteractionMatrix):
        return matrix.matrix
    return matrix.tocsr() if sp.issparse(matrix) else sp.csr_matrix(matrix)


def _row_indices(m: sp.csr_matrix, u: int) -> np.ndarray:
    return m.indices[m.indptr[u] : m.indptr[u + 1]]


def rank_items(x_bar: np.ndarray, masked: np.ndarray | None, K: int, user: int = 0) -> RankedList:
    """Top-K items by score with the given item ids masked out.

    Ties break by ascending item id.  K larger than the number of
    unmasked items is a config error.
    """
    scores = np.asarray(x_bar, dtype=np.float64).copy()
    n = len(scores)
    n_masked = 0
    if masked is not None and len(masked):
        scores[masked] = -np.inf
        n_masked = len(np.unique(masked))
    if K > n - n_masked:
        raise ConfigError(f"K={K} exceeds {n - n_masked} unmasked items")
    order = np.lexsort((np.arange(n), -scores))[:K]
    return RankedList(user=user, items=order, scores=scores[order])


def topk_lists(score_matrix: np.ndarray, K: int, mask=None) -> list[RankedList]:
    """Per-user ranked lists from a dense score matrix.

    mask, if given, is a sparse matrix of already-seen entries (train
    interactions) excluded from ranking.
    """
    mask_csr = _as_csr(mask) if mask is not None else None
    lists = []
    for u in range(score_matrix.shape[0]):
        masked = _row_indices(mask_csr, u) if mask_csr is not None else None
        lists.append(rank_items(score_matrix[u], masked, K, user=u))
    return lists


def _truncate(rl: RankedList, k: int | None) -> np.ndarray:
    return rl.items if k is None else rl.items[:k]


def recall_at_k(lists, test, k: int | None = None, per_user: bool = False) -> float:
    """Hit ratio over the test set.

    Default is the global ratio sum(hits) / sum(|T(u)|); per_user=True
    averages the per-user ratios instead (both appear in the
    literature — the global form is the primary one here).
    """
    test = _as_csr(test)
    hits_total = 0
    relevant_total = 0
    ratios = []
    for rl in lists:
        t_items = _row_indices(test, rl.user)
        if len(t_items) == 0:
            continue
        rec = _truncate(rl, k)
        hits = int(np.isin(rec, t_items).sum())
        hits_total += hits
        relevant_total += len(t_items)
        ratios.append(hits / len(t_items))
    if relevant_total == 0:
        raise DataError("recall undefined: every test row is empty")
    if per_user:
        return float(np.mean(ratios))
    return hits_total / relevant_total


def ndcg_at_k(lists, test, k: int | None = None) -> float:
    """Mean over users of DCG/IDCG with 1/log2(rank+1) gains."""
    test = _as_csr(test)
    values = []
    for rl in lists:
        t_items = _row_indices(test, rl.user)
        if len(t_items) == 0:
            continue
        rec = _truncate(rl, k)
        ranks = np.flatnonzero(np.isin(rec, t_items)) + 1
        dcg = float(np.sum(1.0 / np.log2(ranks + 1)))
        ideal = min(len(t_items), len(rec))
        idcg = float(np.sum(1.0 / np.log2(np.arange(1, ideal + 1) + 1)))
        values.append(dcg / idcg)
    if not values:
        raise DataError("ndcg undefined: every test row is empty")
    return float(np.mean(values))


def group_metrics(
    lists, test, groups: ItemGroups, ks
) -> tuple[dict[str, dict[str, dict[int, float]]], list[str]]:
    """Recall/NDCG per item group, test rows restricted to the group.

    Ranks stay those of the full recommendation list; only the relevant
    sets shrink.  A group with no test interactions is omitted, with a
    notice saying so.
    """
    test = _as_csr(test)
    out: dict[str, dict[str, dict[int, float]]] = {}
    notices: list[str] = []
    for name, members in (("hot", groups.hot), ("tail", groups.tail)):
        cols = np.zeros(test.shape[1], dtype=bool)
        cols[members] = True
        restricted = (test @ sp.diags(cols.astype(np.float64))).tocsr()
        restricted.eliminate_zeros()
        if restricted.nnz == 0:
            notices.append(f"group {name!r} has no test interactions; metrics omitted")
            continue
        out[name] = {
            "recall": {k: recall_at_k(lists, restricted, k) for k in ks},
            "ndcg": {k: ndcg_at_k(lists, restricted, k) for k in ks},
        }
    return out, notices


def frequency_histogram(
    lists, train, groups: ItemGroups, n_buckets: int = 10
) -> dict:
    """How often each popularity bucket gets recommended.

    Items are bucketed by train interaction count (bucket 1 = least
    popular) into equal-size buckets; the histogram reports the mean
    top-K appearance count per bucket plus hot/tail means and the total
    (which always equals K * number of lists).
    """
    if not lists:
        raise DataError("no ranked lists to histogram")
    train = _as_csr(train)
    n_items = train.shape[1]
    counts = np.zeros(n_items, dtype=np.int64)
    for rl in lists:
        counts[rl.items] += 1
    popularity = np.asarray(train.sum(axis=0)).ravel()
    order = np.lexsort((np.arange(n_items), popularity))
    buckets = np.array_split(order, n_buckets)
    decile_means = {
        i + 1: float(counts[b].mean()) if len(b) else 0.0
        for i, b in enumerate(buckets)
    }
    return {
        "decile_mean_freq": decile_means,
        "hot_mean_freq": float(counts[groups.hot].mean()),
        "tail_mean_freq": float(counts[groups.tail].mean()),
        "total_count": int(counts.sum()),
    }


@dataclass
class EvalReport:
    """Everything one evaluation run produces, JSON-serializable."""

    recall: dict[int, float]
    ndcg: dict[int, float]
    per_group: dict[str, dict[str, dict[int, float]]]
    freq_hist: dict
    notices: list[str] = field(default_factory=list)
    config_echo: dict = field(default_factory=dict)

    def to_json(self) -> str:
        def keys_to_str(obj):
            if isinstance(obj, dict):
                return {str(k): keys_to_str(v) for k, v in obj.items()}
            if isinstance(obj, list):
                return [keys_to_str(v) for v in obj]
            return obj

        payload = {
            "recall": keys_to_str(self.recall),
            "ndcg": keys_to_str(self.ndcg),
            "per_group": keys_to_str(self.per_group),
            "freq_hist": keys_to_str(self.freq_hist),
            "notices": list(self.notices),
            "config": keys_to_str(self.config_echo),
        }
        return json.dumps(payload, indent=2, sort_keys=True) + "\n"


def evaluate_lists(
    lists,
    test,
    train,
    groups: ItemGroups,
    ks,
    config_echo: dict | None = None,
    per_user_recall: bool = False,
) -> EvalReport:
    """Full evaluation of already-ranked lists against a test split."""
    ks = sorted(int(k) for k in ks)
    if lists and len(lists[0].items) < max(ks):
        raise ConfigError(
            f"lists hold {len(lists[0].items)} items, need {max(ks)} for K={max(ks)}"
        )
    recall = {k: recall_at_k(lists, test, k, per_user=per_user_recall) for k in ks}
    ndcg = {k: ndcg_at_k(lists, test, k) for k in ks}
    per_group, notices = group_metrics(lists, test, groups, ks)
    hist = frequency_histogram(lists, train, groups)
    return EvalReport(
        recall=recall,
        ndcg=ndcg,
        per_group=per_group,
        freq_hist=hist,
        notices=notices,
        config_echo=dict(config_echo or {}),
    )


def evaluate(
    score_matrix: np.ndarray,
    test,
    train,
    groups: ItemGroups,
    ks,
    config_echo: dict | None = None,
    per_user_recall: bool = False,
) -> EvalReport:
    """Full evaluation of a score matrix against a test split."""
    lists = topk_lists(score_matrix, max(int(k) for k in ks), mask=train)
    return evaluate_lists(
        lists, test, train, groups, ks, config_echo, per_user_recall
    )
