"""Bipartite user-item interaction graph, per-user splitting, BPR triplets."""
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

TRAIN, VALIDATION, TEST = 0, 1, 2
SPLIT_NAMES = {"train": TRAIN, "validation": VALIDATION, "test": TEST}


class GraphError(ValueError):
    pass


class SamplingError(RuntimeError):
    pass


@dataclass(frozen=True)
class InteractionGraph:
    """Implicit-feedback graph with a train/validation/test label per edge.

    ``edges`` is an (E, 2) int array of (user, item) rows, sorted and free of
    duplicates. ``partition`` holds one of TRAIN/VALIDATION/TEST per edge.
    """

    num_users: int
    num_items: int
    edges: np.ndarray
    partition: np.ndarray
    user_adjacency: list = field(repr=False)
    item_adjacency: list = field(repr=False)
    duplicate_count: int = 0

    @property
    def num_edges(self):
        return self.edges.shape[0]

    @cached_property
    def edge_keys(self):
        return self.edges[:, 0].astype(np.int64) * self.num_items + self.edges[:, 1]

    def has_edge(self, users, items):
        """Vectorised lookup of A[u, i] over the full edge set."""
        keys = np.asarray(users, dtype=np.int64) * self.num_items + np.asarray(items, dtype=np.int64)
        all_keys = self.edge_keys
        pos = np.searchsorted(all_keys, keys)
        pos = np.minimum(pos, max(all_keys.size - 1, 0))
        if all_keys.size == 0:
            return np.zeros(keys.shape, dtype=bool)
        return all_keys[pos] == keys

    def split_edges(self, split):
        if isinstance(split, str):
            split = SPLIT_NAMES[split]
        return self.edges[self.partition == split]

    def train_edges(self):
        return self.split_edges(TRAIN)

    def items_by_user(self, split):
        """Per-user sorted item arrays for one partition."""
        sub = self.split_edges(split)
        cuts = np.searchsorted(sub[:, 0], np.arange(self.num_users + 1))
        return [sub[cuts[u] : cuts[u + 1], 1] for u in range(self.num_users)]

    def with_partition(self, partition):
        partition = np.asarray(partition, dtype=np.int8)
        if partition.shape != (self.num_edges,):
            raise GraphError("partition length must equal the edge count")
        return InteractionGraph(
            self.num_users,
            self.num_items,
            self.edges,
            partition,
            self.user_adjacency,
            self.item_adjacency,
            self.duplicate_count,
        )


def build_graph(num_users, num_items, edges):
    """Validate, deduplicate and index an edge list. Every edge starts in train."""
    arr = np.asarray(edges, dtype=np.int64).reshape(-1, 2) if len(edges) else np.zeros((0, 2), np.int64)
    bad = np.flatnonzero(
        (arr[:, 0] < 0) | (arr[:, 0] >= num_users) | (arr[:, 1] < 0) | (arr[:, 1] >= num_items)
    )
    if bad.size:
        row = int(bad[0])
        u, i = arr[row]
        raise GraphError(f"edge row {row} ({u}, {i}) out of range for {num_users} users x {num_items} items")
    keys = arr[:, 0] * num_items + arr[:, 1]
    uniq = np.unique(keys)
    dup = int(keys.size - uniq.size)
    edges = np.stack([uniq // num_items, uniq % num_items], axis=1).astype(np.int64)
    edges = edges.reshape(-1, 2)

    cuts = np.searchsorted(edges[:, 0], np.arange(num_users + 1))
    user_adj = [edges[cuts[u] : cuts[u + 1], 1].copy() for u in range(num_users)]
    by_item = edges[np.lexsort((edges[:, 0], edges[:, 1]))]
    icuts = np.searchsorted(by_item[:, 1], np.arange(num_items + 1))
    item_adj = [by_item[icuts[i] : icuts[i + 1], 0].copy() for i in range(num_items)]
    partition = np.zeros(edges.shape[0], dtype=np.int8)
    return InteractionGraph(num_users, num_items, edges, partition, user_adj, item_adj, dup)


def largest_remainder(n, ratios):
    """Integer split of ``n`` proportional to ``ratios`` (Hamilton's method).

    Ties in the fractional part go to the earlier ratio.
    """
    ratios = np.asarray(ratios, dtype=np.float64)
    if np.any(ratios <= 0):
        raise ValueError(f"ratios must be positive: {ratios.tolist()}")
    quotas = n * ratios / ratios.sum()
    counts = np.floor(quotas).astype(np.int64)
    short = n - int(counts.sum())
    order = np.argsort(-(quotas - counts), kind="stable")
    counts[order[:short]] += 1
    return counts


def split_per_user(g, ratios=(8, 1, 1), seed=0, min_interactions=3):
    """Shuffle each user's edges and cut them train/validation/test.

    Users with fewer than ``min_interactions`` edges stay entirely in train.
    ``seed`` may be an int or a numpy Generator.
    """
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    partition = np.zeros(g.num_edges, dtype=np.int8)
    cuts = np.searchsorted(g.edges[:, 0], np.arange(g.num_users + 1))
    for u in range(g.num_users):
        lo, hi = cuts[u], cuts[u + 1]
        n = hi - lo
        if n < min_interactions:
            continue
        n_train, n_val, _ = largest_remainder(n, ratios)
        perm = lo + rng.permutation(n)
        partition[perm[n_train : n_train + n_val]] = VALIDATION
        partition[perm[n_train + n_val :]] = TEST
    return g.with_partition(partition)


@dataclass
class TripletBatch:
    users: np.ndarray
    pos_items: np.ndarray
    neg_items: np.ndarray

    def __len__(self):
        return self.users.shape[0]

    def rows(self):
        return np.stack([self.users, self.pos_items, self.neg_items], axis=1)


def _check_not_saturated(g, users):
    degree = np.bincount(g.edges[:, 0], minlength=g.num_users)
    full = np.flatnonzero(degree[np.unique(users)] >= g.num_items) if users.size else []
    if len(full):
        u = int(np.unique(users)[full[0]])
        raise SamplingError(f"user {u} interacted with every item; no negative exists")


def sample_negatives(g, users, rng):
    """One item per user drawn uniformly from items with A[u, j] = 0."""
    users = np.asarray(users, dtype=np.int64)
    _check_not_saturated(g, users)
    neg = rng.integers(0, g.num_items, size=users.size)
    bad = g.has_edge(users, neg)
    while bad.any():
        neg[bad] = rng.integers(0, g.num_items, size=int(bad.sum()))
        bad[bad] = g.has_edge(users[bad], neg[bad])
    return neg


def sample_triplets(g, batch_size, seed=0):
    """Draw ``batch_size`` triplets: a uniform train edge plus a rejection-sampled negative."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    train = g.train_edges()
    if batch_size == 0:
        empty = np.zeros(0, dtype=np.int64)
        return TripletBatch(empty, empty.copy(), empty.copy())
    if train.shape[0] == 0:
        raise SamplingError("graph has no train edges to sample from")
    pick = train[rng.integers(0, train.shape[0], size=batch_size)]
    neg = sample_negatives(g, pick[:, 0], rng)
    return TripletBatch(pick[:, 0].copy(), pick[:, 1].copy(), neg)


def epoch_batches(g, batch_size, rng):
    """Yield triplet batches covering every train edge once, shuffled."""
    train = g.train_edges()
    if train.shape[0] == 0:
        raise SamplingError("graph has no train edges to sample from")
    order = train[rng.permutation(train.shape[0])]
    neg = sample_negatives(g, order[:, 0], rng)
    for lo in range(0, order.shape[0], batch_size):
        hi = lo + batch_size
        yield TripletBatch(order[lo:hi, 0].copy(), order[lo:hi, 1].copy(), neg[lo:hi].copy())
