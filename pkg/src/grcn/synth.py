"""Synthetic multimodal implicit feedback with planted false-positive edges."""
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.stats import rankdata

from grcn import rng as rngs
from grcn.graph import build_graph
from grcn.refine import ModalityFeatureTable, canonical_modalities

TRUE_POSITIVE, FALSE_POSITIVE = "true_positive", "false_positive"


class GenerationError(ValueError):
    pass


@dataclass(frozen=True)
class SynthSpec:
    num_users: int = 60
    num_items: int = 120
    num_clusters: int = 4
    modalities: dict = field(default_factory=lambda: {"visual": 16, "acoustic": 16})
    interactions_per_user: int = 20
    noise_fraction: float = 0.3
    cluster_separation: float = 3.0
    feature_noise_scale: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.noise_fraction < 1.0:
            raise GenerationError(f"noise_fraction must lie in [0, 1), got {self.noise_fraction}")
        if self.num_clusters < 1 or self.num_clusters > self.num_items:
            raise GenerationError("need 1 <= num_clusters <= num_items")
        if self.num_users < 1 or self.interactions_per_user < 1:
            raise GenerationError("num_users and interactions_per_user must be positive")
        if not self.modalities:
            raise GenerationError("at least one modality is required")
        canonical_modalities(self.modalities)
        if any(int(d) < 1 for d in self.modalities.values()):
            raise GenerationError("modality widths must be positive")

    @property
    def false_per_user(self):
        # small guard so e.g. 0.3 * 20 lands on 6, not 5
        return int(np.floor(self.noise_fraction * self.interactions_per_user + 1e-9))

    @property
    def true_per_user(self):
        return self.interactions_per_user - self.false_per_user

    def to_dict(self):
        d = asdict(self)
        d["modalities"] = {m: int(self.modalities[m]) for m in canonical_modalities(self.modalities)}
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


@dataclass
class SynthDataset:
    spec: SynthSpec
    graph: object
    features: dict
    labels: np.ndarray  # 1 = true positive, aligned with graph.edges
    user_cluster: np.ndarray
    item_cluster: np.ndarray

    @property
    def noise_rate(self):
        return 1.0 - float(self.labels.mean())


def _sphere(rng, n, dim, radius):
    x = rng.standard_normal((n, dim))
    return radius * x / np.linalg.norm(x, axis=1, keepdims=True)


def generate(spec):
    rng = rngs.stream(spec.seed, "synth")
    n_true, n_false = spec.true_per_user, spec.false_per_user
    item_cluster = rng.permutation(np.arange(spec.num_items) % spec.num_clusters)
    members = [np.flatnonzero(item_cluster == c) for c in range(spec.num_clusters)]
    for c, mem in enumerate(members):
        if mem.size == 0:
            raise GenerationError(f"cluster {c} has no items")
        if mem.size < n_true:
            raise GenerationError(f"cluster {c} has {mem.size} items, fewer than {n_true} true edges per user")
        if spec.num_items - mem.size < n_false:
            raise GenerationError(f"too few items outside cluster {c} for {n_false} false edges per user")

    features = {}
    for m in canonical_modalities(spec.modalities):
        dim = int(spec.modalities[m])
        centroids = _sphere(rng, spec.num_clusters, dim, spec.cluster_separation)
        feats = centroids[item_cluster] + spec.feature_noise_scale * rng.standard_normal((spec.num_items, dim))
        features[m] = ModalityFeatureTable(m, feats)

    user_cluster = rng.integers(0, spec.num_clusters, size=spec.num_users)
    edges, truth = [], []
    for u in range(spec.num_users):
        own = members[user_cluster[u]]
        other = np.flatnonzero(item_cluster != user_cluster[u])
        for i in rng.choice(own, size=n_true, replace=False):
            edges.append((u, int(i)))
            truth.append(1)
        for i in rng.choice(other, size=n_false, replace=False):
            edges.append((u, int(i)))
            truth.append(0)
    edges = np.array(edges, dtype=np.int64)
    truth = np.array(truth, dtype=np.int8)
    graph = build_graph(spec.num_users, spec.num_items, edges)
    order = np.lexsort((edges[:, 1], edges[:, 0]))
    labels = truth[order]
    return SynthDataset(spec, graph, features, labels, user_cluster, item_cluster)


def edge_weight_auc(weights, labels):
    """ROC AUC of edge weights, true-positive edges as the positive class.

    ``weights`` may be an :class:`EdgeWeightSet` (scored by s_{u<-i}), a
    tensor, or an array. Rank-sum (Mann-Whitney) form; tied weights
    contribute one half.
    """
    if hasattr(weights, "user_from_item"):
        weights = weights.user_from_item
    w = np.asarray(getattr(weights, "data", weights), dtype=np.float64)
    y = np.asarray(labels)
    if y.dtype.kind in "OUS":
        y = y == TRUE_POSITIVE
    y = y.astype(bool)
    if w.shape != y.shape:
        raise ValueError(f"weights {w.shape} and labels {y.shape} differ in shape")
    n_pos = int(y.sum())
    n_neg = y.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUC is undefined when only one label class is present")
    ranks = rankdata(w, method="average")
    return float((ranks[y].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))
