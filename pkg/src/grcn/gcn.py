"""Weighted graph convolution, layer summation, representation assembly, scoring."""
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from grcn import autodiff as ad
from grcn import refine as rf

VARIANTS = {
    # name: (fusion mode, id_only)
    "full": ("base_max", False),
    "id-only": ("base_max", True),
    "hard": ("hard", False),
    "max": ("max", False),
    "mean": ("mean", False),
    "uniform": ("uniform", False),
}


class ConsistencyError(ValueError):
    pass


class AssemblyError(ValueError):
    pass


@dataclass(frozen=True)
class Hyperparams:
    embed_dim: int = 64
    proj_dim: int = 64
    layers: int = 2
    routing_iters: int = 3
    slope: float = 0.01
    learning_rate: float = 0.01
    reg_weight: float = 1e-4
    reg_squared: bool = False
    k: int = 10
    fusion: str = "base_max"
    id_only: bool = False
    modalities: tuple = ("visual", "acoustic", "textual")
    batch_size: int = 1024
    max_epochs: int = 200
    patience: int = 20

    def __post_init__(self):
        object.__setattr__(self, "modalities", rf.canonical_modalities(self.modalities))
        for name in ("embed_dim", "proj_dim", "layers", "k", "batch_size"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        if self.routing_iters < 0:
            raise ValueError("routing_iters must be >= 0")
        if self.reg_weight < 0:
            raise ValueError("reg_weight must be >= 0")
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be >= 0")
        if self.max_epochs < 0 or self.patience < 1:
            raise ValueError("max_epochs must be >= 0 and patience >= 1")
        if not 0.0 < self.slope < 1.0:
            raise ValueError("slope must lie in (0, 1)")
        if self.fusion not in rf.FUSION_MODES:
            raise ValueError(f"unknown fusion mode {self.fusion!r}")
        if not self.modalities:
            raise ValueError("at least one modality is required")

    @classmethod
    def for_variant(cls, variant, **kw):
        if variant not in VARIANTS:
            raise ValueError(f"unknown variant {variant!r}; choose from {sorted(VARIANTS)}")
        fusion, id_only = VARIANTS[variant]
        return cls(fusion=fusion, id_only=id_only, **kw)

    def with_updates(self, **kw):
        return replace(self, **kw)

    def to_dict(self):
        d = asdict(self)
        d["modalities"] = list(self.modalities)
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if "modalities" in d:
            d["modalities"] = tuple(d["modalities"])
        return cls(**d)


@dataclass
class ModelParams:
    """Trainable state: ID embeddings for users then items, plus refining params."""

    num_users: int
    num_items: int
    id_embeddings: ad.Tensor
    refine: rf.RefineParams
    hyper: Hyperparams
    feature_dims: dict = field(default_factory=dict)

    def user_embeddings(self):
        return self.id_embeddings.data[: self.num_users]

    def tensors(self):
        """Name -> trainable tensor, in a fixed order."""
        out = {"E": self.id_embeddings}
        out.update(self.refine.tensors())
        return out

    def copy(self):
        clone = {n: ad.Tensor(t.data.copy(), True, n) for n, t in self.tensors().items()}
        return from_tensors(clone, self.num_users, self.num_items, self.hyper, self.feature_dims)


def from_tensors(tensors, num_users, num_items, hyper, feature_dims):
    mods = hyper.modalities
    refine = rf.RefineParams(
        mods,
        {m: tensors[f"W_{m}"] for m in mods},
        {m: tensors[f"b_{m}"] for m in mods},
        {m: tensors[f"u0_{m}"] for m in mods},
        tensors["rho_user"],
        tensors["rho_item"],
    )
    return ModelParams(num_users, num_items, tensors["E"], refine, hyper, dict(feature_dims))


def init_params(num_users, num_items, feature_dims, hyper, rng):
    feature_dims = {m: int(feature_dims[m]) for m in hyper.modalities}
    emb = rf.xavier_uniform((num_users + num_items, hyper.embed_dim), rng)
    refine = rf.init_refine_params(num_users, num_items, feature_dims, hyper.proj_dim, rng)
    return ModelParams(
        num_users, num_items, ad.Tensor(emb, True, "E"), refine, hyper, feature_dims
    )


def propagate(weights, user_emb, item_emb, layers):
    """Weighted message passing over train edges.

    Returns ``[(users_0, items_0), ..., (users_L, items_L)]``. No self loops,
    no activation, no degree normalisation beyond the edge weights.
    """
    users, items = weights.users, weights.items
    n_users, n_items = user_emb.shape[0], item_emb.shape[0]
    s_ui = weights.user_from_item
    s_iu = weights.item_from_user
    if s_ui.shape[0] != users.shape[0] or s_iu.shape[0] != users.shape[0]:
        missing = min(s_ui.shape[0], s_iu.shape[0])
        if missing < users.shape[0]:
            raise ConsistencyError(
                f"no edge weight for edge ({users[missing]}, {items[missing]})"
            )
        raise ConsistencyError("edge weights outnumber edges")
    s_ui = ad.reshape(s_ui, (-1, 1))
    s_iu = ad.reshape(s_iu, (-1, 1))
    out = [(user_emb, item_emb)]
    for _ in range(layers):
        prev_u, prev_i = out[-1]
        nxt_u = ad.segment_sum(s_ui * ad.gather(prev_i, items), users, n_users)
        nxt_i = ad.segment_sum(s_iu * ad.gather(prev_u, users), items, n_items)
        out.append((nxt_u, nxt_i))
    return out


def combine_layers(layer_embeddings):
    users, items = layer_embeddings[0]
    for u, i in layer_embeddings[1:]:
        users = users + u
        items = items + i
    return users, items


def assemble_representation(user_ids, item_ids, user_pref, item_vectors, modalities, id_only=False):
    """Concatenate ID embeddings with per-modality content vectors.

    ``user_pref`` and ``item_vectors`` map modality -> matrix. Both sides use
    the order in ``modalities``; GRCN-ID returns the ID parts alone.
    """
    if id_only:
        return user_ids, item_ids
    if isinstance(modalities, dict):
        u_order, i_order = modalities["user"], modalities["item"]
        if tuple(u_order) != tuple(i_order):
            raise AssemblyError(f"modality order differs: users {u_order} vs items {i_order}")
        modalities = u_order
    users = ad.concat([user_ids] + [user_pref[m] for m in modalities], axis=1)
    items = ad.concat([item_ids] + [item_vectors[m] for m in modalities], axis=1)
    return users, items


def score(user_vec, item_vec):
    """Inner product preference score."""
    return ad.dot(user_vec, item_vec)


def score_pairs(user_rep, item_rep, users, items):
    return ad.rowdot(ad.gather(user_rep, users), ad.gather(item_rep, items))


@dataclass
class Forward:
    user_rep: ad.Tensor
    item_rep: ad.Tensor
    refined: rf.RefineOutput


def forward(params, graph, features):
    """Refine the train graph, convolve, and assemble final representations."""
    hyper = params.hyper
    train = graph.train_edges()
    users, items = train[:, 0], train[:, 1]
    refined = rf.refine(
        params.refine,
        features,
        users,
        items,
        graph.num_users,
        graph.num_items,
        hyper.routing_iters,
        hyper.slope,
        hyper.fusion,
    )
    emb = params.id_embeddings
    n = graph.num_users
    user_emb = ad.gather(emb, np.arange(n))
    item_emb = ad.gather(emb, np.arange(n, n + graph.num_items))
    layers = propagate(refined.weights, user_emb, item_emb, hyper.layers)
    e_u, e_i = combine_layers(layers)
    user_rep, item_rep = assemble_representation(
        e_u, e_i, refined.user_pref, refined.item_vectors, params.refine.modalities, hyper.id_only
    )
    return Forward(user_rep, item_rep, refined)
