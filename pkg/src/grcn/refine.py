"""Graph refining layer: content projection, preference routing, edge pruning weights.

All edge-level quantities are laid out over the *train* edges of a graph,
given as parallel ``users``/``items`` index arrays sorted by user.
"""
from dataclasses import dataclass, field

import numpy as np

from grcn import autodiff as ad

MODALITY_ORDER = ("visual", "acoustic", "textual")
FUSION_MODES = ("base_max", "max", "mean", "hard", "uniform")


class RoutingError(ValueError):
    pass


class FusionError(ValueError):
    pass


def canonical_modalities(names):
    names = list(names)
    unknown = [n for n in names if n not in MODALITY_ORDER]
    if unknown:
        raise ValueError(f"unknown modalities {unknown}; expected a subset of {MODALITY_ORDER}")
    return tuple(m for m in MODALITY_ORDER if m in names)


@dataclass
class ModalityFeatureTable:
    modality: str
    features: np.ndarray

    def __post_init__(self):
        if self.modality not in MODALITY_ORDER:
            raise ValueError(f"unknown modality {self.modality!r}")
        self.features = np.asarray(self.features, dtype=np.float64)
        if self.features.ndim != 2:
            raise ValueError(f"{self.modality} features must be a matrix, got {self.features.shape}")
        if not np.all(np.isfinite(self.features)):
            raise ValueError(f"{self.modality} features contain non-finite entries")

    @property
    def num_items(self):
        return self.features.shape[0]

    @property
    def dim(self):
        return self.features.shape[1]


def xavier_uniform(shape, rng):
    fan_out, fan_in = shape
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape)


@dataclass
class RefineParams:
    """Per-modality projection and routing seeds plus the fusion base vectors.

    ``rho_user`` is (N, k) and ``rho_item`` is (M, k) for the k modalities in
    ``modalities`` order.
    """

    modalities: tuple
    weight: dict
    bias: dict
    seed: dict
    rho_user: ad.Tensor
    rho_item: ad.Tensor

    def tensors(self):
        out = {}
        for m in self.modalities:
            out[f"W_{m}"] = self.weight[m]
            out[f"b_{m}"] = self.bias[m]
            out[f"u0_{m}"] = self.seed[m]
        out["rho_user"] = self.rho_user
        out["rho_item"] = self.rho_item
        return out


def init_refine_params(num_users, num_items, feature_dims, d_proj, rng):
    """Xavier-uniform projections and seeds, zero biases, all-ones base vectors."""
    modalities = canonical_modalities(feature_dims)
    if not modalities:
        raise FusionError("at least one modality is required")
    weight, bias, seed = {}, {}, {}
    for m in modalities:
        weight[m] = ad.Tensor(xavier_uniform((d_proj, feature_dims[m]), rng), True, f"W_{m}")
        bias[m] = ad.Tensor(np.zeros(d_proj), True, f"b_{m}")
        seed[m] = ad.Tensor(xavier_uniform((num_users, d_proj), rng), True, f"u0_{m}")
    k = len(modalities)
    return RefineParams(
        modalities,
        weight,
        bias,
        seed,
        ad.Tensor(np.ones((num_users, k)), True, "rho_user"),
        ad.Tensor(np.ones((num_items, k)), True, "rho_item"),
    )


def project_items(features, weight, bias, slope=0.01):
    """leaky_relu(i_m W_m^T + b_m) for every item row."""
    feats = features.features if isinstance(features, ModalityFeatureTable) else features
    feats = ad.as_tensor(feats)
    weight = ad.as_tensor(weight)
    if weight.shape[1] != feats.shape[1]:
        raise ad.ShapeError(
            f"projection expects {weight.shape[1]} input features, table has {feats.shape[1]}"
        )
    return ad.leaky_relu(ad.matmul(feats, ad.transpose(weight)) + bias, slope)


def route_preference(seed, item_vectors, iterations):
    """Neighbour routing for one user.

    ``item_vectors`` is the (n, D') block of projected features of the user's
    train neighbours. Each iteration softmaxes the neighbours' similarity to
    the current prototype, adds the weighted neighbour sum, and renormalises.
    """
    item_vectors = ad.as_tensor(item_vectors)
    if item_vectors.shape[0] == 0:
        raise RoutingError("user has no train neighbours to route over")
    if iterations < 0:
        raise ValueError("iterations must be >= 0")
    proto = ad.l2_normalize(seed) if iterations == 0 else ad.as_tensor(seed)
    for _ in range(iterations):
        logits = ad.reshape(ad.matmul(item_vectors, ad.reshape(proto, (-1, 1))), (-1,))
        p = ad.softmax_over_set(logits)
        pulled = ad.reshape(ad.matmul(ad.reshape(p, (1, -1)), item_vectors), (-1,))
        proto = ad.l2_normalize(proto + pulled)
    return proto


def route_all(seeds, item_vectors, users, items, num_users, iterations):
    """Vectorised routing for every user at once over train edges.

    Users without train edges end with ``l2_normalize(seed)``.
    """
    if iterations < 0:
        raise ValueError("iterations must be >= 0")
    if iterations == 0:
        return ad.l2_normalize(seeds)
    neigh = ad.gather(item_vectors, items)
    proto = seeds
    for _ in range(iterations):
        logits = ad.rowdot(ad.gather(proto, users), neigh)
        p = ad.segment_softmax(logits, users, num_users)
        pulled = ad.segment_sum(ad.reshape(p, (-1, 1)) * neigh, users, num_users)
        proto = ad.l2_normalize(proto + pulled)
    return proto


def affinity_scores(user_pref, item_vectors, users, items, num_users, num_items):
    """Two-directional neighbourhood softmax of user-item affinities.

    Returns ``(s_user_from_item, s_item_from_user)`` per edge: the first is
    normalised over each user's neighbours, the second over each item's.
    """
    logits = ad.rowdot(ad.gather(user_pref, users), ad.gather(item_vectors, items))
    return (
        ad.segment_softmax(logits, users, num_users),
        ad.segment_softmax(logits, items, num_items),
    )


def _hard_prune(scores, owner, n):
    counts = np.bincount(owner, minlength=n).astype(np.float64)
    inv = np.where(counts > 0, 1.0 / np.maximum(counts, 1.0), 0.0)
    mean = ad.segment_sum(scores, owner, n) * inv
    return ad.relu(scores - ad.gather(mean, owner))


def fuse_scores(per_modality, rho, owner, num_owners, mode="base_max"):
    """Fuse per-modality scores into one weight per edge.

    ``per_modality`` is a list of per-edge score vectors (modality order),
    ``rho`` the (num_owners, k) base vectors and ``owner`` the index of the
    node each score is normalised over.
    """
    if not per_modality:
        raise FusionError("no modality available for fusion")
    if mode not in FUSION_MODES:
        raise FusionError(f"unknown fusion mode {mode!r}")
    stacked = ad.stack_columns(per_modality)
    if mode == "max":
        return ad.max_columns(stacked)
    if mode == "mean":
        return ad.sum(stacked, axis=1) * (1.0 / len(per_modality))
    if mode == "uniform":
        counts = np.bincount(owner, minlength=num_owners).astype(np.float64)
        return ad.Tensor(1.0 / counts[owner])
    fused = ad.max_columns(ad.gather(rho, owner) * stacked)
    if mode == "hard":
        fused = _hard_prune(fused, owner, num_owners)
    return fused


@dataclass
class EdgeWeightSet:
    """Fused pruning weights over train edges, both directions."""

    users: np.ndarray
    items: np.ndarray
    user_from_item: ad.Tensor
    item_from_user: ad.Tensor
    per_modality: dict = field(default_factory=dict)

    def __len__(self):
        return self.users.shape[0]

    def as_arrays(self):
        return self.user_from_item.data, self.item_from_user.data


@dataclass
class RefineOutput:
    weights: EdgeWeightSet
    user_pref: dict
    item_vectors: dict


def refine(params, features, users, items, num_users, num_items, iterations=3, slope=0.01, mode="base_max"):
    """Run the whole refining layer for the given train edges.

    ``features`` maps modality name to a :class:`ModalityFeatureTable` or
    raw matrix.
    """
    s_ui, s_iu, user_pref, item_vecs, per_mod = [], [], {}, {}, {}
    for m in params.modalities:
        table = features[m]
        ibar = project_items(table, params.weight[m], params.bias[m], slope)
        if ibar.shape[0] != num_items:
            raise ad.ShapeError(f"{m} features have {ibar.shape[0]} rows, graph has {num_items} items")
        ubar = route_all(params.seed[m], ibar, users, items, num_users, iterations)
        a_ui, a_iu = affinity_scores(ubar, ibar, users, items, num_users, num_items)
        user_pref[m], item_vecs[m] = ubar, ibar
        per_mod[m] = (a_ui, a_iu)
        s_ui.append(a_ui)
        s_iu.append(a_iu)
    weights = EdgeWeightSet(
        users,
        items,
        fuse_scores(s_ui, params.rho_user, users, num_users, mode),
        fuse_scores(s_iu, params.rho_item, items, num_items, mode),
        per_mod,
    )
    return RefineOutput(weights, user_pref, item_vecs)
