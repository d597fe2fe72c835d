"""Full-ranking top-K evaluation: Precision@K, Recall@K, NDCG@K."""
import json
from dataclasses import dataclass, field

import numpy as np

from grcn import _accel
from grcn import gcn
from grcn.graph import SPLIT_NAMES, TRAIN


@dataclass
class RankingResult:
    k: int
    precision: float
    recall: float
    ndcg: float
    users_evaluated: int
    users_skipped: int
    users: list = field(default_factory=list, repr=False)
    top_items: list = field(default_factory=list, repr=False)
    top_scores: list = field(default_factory=list, repr=False)

    def summary(self):
        return {
            "k": self.k,
            "precision": self.precision,
            "recall": self.recall,
            "ndcg": self.ndcg,
            "users_evaluated": self.users_evaluated,
            "users_skipped": self.users_skipped,
        }

    def to_json(self):
        return json.dumps(self.summary(), indent=2) + "\n"


def _discounts(n):
    return 1.0 / np.log2(np.arange(2, n + 2))


def user_metrics(ranked, held_out, k):
    """(precision, recall, ndcg) for one ranked list against a held-out set."""
    ranked = np.asarray(ranked)[:k]
    held = set(int(x) for x in held_out)
    hits = np.array([int(i) in held for i in ranked], dtype=bool)
    disc = _discounts(k)
    dcg = float(disc[: hits.size][hits].sum())
    idcg = float(disc[: min(k, len(held))].sum())
    n_hits = int(hits.sum())
    return n_hits / k, n_hits / len(held), dcg / idcg


def metrics_at_k(ranked_lists, held_out_sets, k=10):
    """Average per-user metrics; users with an empty held-out set are skipped."""
    if k < 1:
        raise ValueError("k must be >= 1")
    per_user = []
    skipped = 0
    for ranked, held in zip(ranked_lists, held_out_sets):
        if len(held) == 0:
            skipped += 1
            continue
        per_user.append(user_metrics(ranked, held, k))
    if per_user:
        p, r, n = (float(x) for x in np.mean(np.array(per_user), axis=0))
    else:
        p = r = n = 0.0
    return RankingResult(k, p, r, n, len(per_user), skipped)


def candidate_mask(graph, split):
    """Items each user may be ranked on for ``split``.

    Everything the user never consumed, plus the user's own held-out items
    for this split; train items and the other held-out split are excluded.
    """
    split = SPLIT_NAMES[split] if isinstance(split, str) else split
    if split == TRAIN:
        raise ValueError("evaluation split must be validation or test")
    mask = np.ones((graph.num_users, graph.num_items), dtype=bool)
    mask[graph.edges[:, 0], graph.edges[:, 1]] = False
    held = graph.split_edges(split)
    mask[held[:, 0], held[:, 1]] = True
    return mask


def score_matrix(params, graph, features):
    """Dense user x item preference scores from a detached forward pass."""
    out = gcn.forward(params, graph, features)
    return out.user_rep.data @ out.item_rep.data.T


def rank_all(scores, mask, k):
    """Top-``k`` candidate items per row; -1 pads rows with fewer candidates."""
    return _accel.topk_masked(scores, mask, k)


def rank_candidates(params, graph, features, user, k=10, split="test", scores=None):
    """Top-``k`` items for one user among the candidates for ``split``.

    Ties break towards the lower item index.
    """
    if scores is None:
        scores = score_matrix(params, graph, features)
    mask = candidate_mask(graph, split)[user : user + 1]
    row = rank_all(scores[user : user + 1], mask, k)[0]
    return row[row >= 0]


def evaluate_scores(scores, graph, split, k=10):
    held = graph.items_by_user(split)
    users = np.array([u for u in range(graph.num_users) if held[u].size], dtype=np.int64)
    skipped = graph.num_users - users.size
    if users.size == 0:
        return RankingResult(k, 0.0, 0.0, 0.0, 0, skipped)
    mask = candidate_mask(graph, split)[users]
    top = rank_all(scores[users], mask, k)
    ranked = [row[row >= 0] for row in top]
    result = metrics_at_k(ranked, [held[u] for u in users], k)
    result.users_skipped = skipped
    result.users = users.tolist()
    result.top_items = ranked
    result.top_scores = [scores[u, r] for u, r in zip(users, ranked)]
    return result


def evaluate(params, graph, features, split="test", k=10):
    return evaluate_scores(score_matrix(params, graph, features), graph, split, k)

