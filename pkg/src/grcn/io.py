"""On-disk formats: interactions TSV + id map, feature files, labels, checkpoints.

Interactions are ``user_id<TAB>item_id`` lines. Raw ids are remapped to dense
indices; the mapping lives next to the TSV as ``<stem>.ids.json`` and is the
authority on N, M and index order when present.
"""
import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from grcn import autodiff as ad
from grcn import gcn
from grcn.graph import build_graph
from grcn.refine import MODALITY_ORDER, ModalityFeatureTable, canonical_modalities
from grcn.synth import FALSE_POSITIVE, TRUE_POSITIVE

CHECKPOINT_FORMAT = "grcn-checkpoint"
CHECKPOINT_VERSION = 1
INTERACTIONS = "interactions.tsv"
LABELS = "labels.tsv"
SPEC_ECHO = "synth_spec.json"


class FormatError(ValueError):
    pass


def feature_filename(modality):
    return f"features_{modality}.txt"


def mapping_path(interactions_path):
    p = Path(interactions_path)
    return p.with_name(p.stem + ".ids.json")


@dataclass
class IdMap:
    users: list
    items: list

    def __post_init__(self):
        self._u = {k: i for i, k in enumerate(self.users)}
        self._i = {k: i for i, k in enumerate(self.items)}
        if len(self._u) != len(self.users) or len(self._i) != len(self.items):
            raise FormatError("id map contains duplicate ids")

    def user_index(self, raw):
        return self._u[raw]

    def item_index(self, raw):
        return self._i[raw]

    def to_json(self):
        return json.dumps({"users": self.users, "items": self.items}, indent=1) + "\n"

    def digest(self):
        return hashlib.sha256(self.to_json().encode("utf-8")).hexdigest()

    @classmethod
    def from_json(cls, text):
        d = json.loads(text)
        return cls([str(x) for x in d["users"]], [str(x) for x in d["items"]])

    @classmethod
    def identity(cls, num_users, num_items):
        return cls([str(u) for u in range(num_users)], [str(i) for i in range(num_items)])


def _natural(ids):
    ids = sorted(set(ids))
    if all(s.lstrip("-").isdigit() for s in ids):
        return sorted(ids, key=int)
    return ids


def read_pairs(path):
    pairs = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n").rstrip("\r")
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise FormatError(f"{path}:{lineno}: expected 'user<TAB>item', got {line!r}")
            pairs.append((parts[0], parts[1]))
    return pairs


def load_interactions(path, persist_mapping=True):
    """Read a TSV into an :class:`InteractionGraph` plus its :class:`IdMap`."""
    pairs = read_pairs(path)
    mpath = mapping_path(path)
    if mpath.exists():
        idmap = IdMap.from_json(mpath.read_text(encoding="utf-8"))
    else:
        idmap = IdMap(_natural(p[0] for p in pairs), _natural(p[1] for p in pairs))
        if persist_mapping:
            mpath.write_text(idmap.to_json(), encoding="utf-8")
    edges = []
    for row, (u, i) in enumerate(pairs):
        try:
            edges.append((idmap.user_index(u), idmap.item_index(i)))
        except KeyError as exc:
            raise FormatError(f"{path}: row {row} references id {exc.args[0]!r} missing from {mpath.name}")
    return build_graph(len(idmap.users), len(idmap.items), edges), idmap


def write_interactions(path, edges, idmap):
    path = Path(path)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for u, i in edges:
            fh.write(f"{idmap.users[u]}\t{idmap.items[i]}\n")
    mapping_path(path).write_text(idmap.to_json(), encoding="utf-8")


def read_features(path, modality):
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().split()
        if len(header) != 2:
            raise FormatError(f"{path}: header must be 'M D_m'")
        m, d = int(header[0]), int(header[1])
        data = np.loadtxt(fh, dtype=np.float64, ndmin=2) if m else np.zeros((0, d))
    if data.shape != (m, d):
        raise FormatError(f"{path}: header says {m}x{d}, body is {data.shape[0]}x{data.shape[1]}")
    return ModalityFeatureTable(modality, data)


def write_features(path, table):
    feats = table.features if isinstance(table, ModalityFeatureTable) else np.asarray(table)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"{feats.shape[0]} {feats.shape[1]}\n")
        for row in feats:
            fh.write(" ".join(repr(float(x)) for x in row) + "\n")


def write_labels(path, edges, labels, idmap):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for (u, i), y in zip(edges, labels):
            fh.write(f"{idmap.users[u]}\t{idmap.items[i]}\t{TRUE_POSITIVE if y else FALSE_POSITIVE}\n")


def read_labels(path, graph, idmap):
    """Per-edge labels aligned with ``graph.edges``; -1 where unlabelled."""
    out = np.full(graph.num_edges, -1, dtype=np.int8)
    keys = graph.edge_keys
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            parts = line.rstrip("\n").split("\t")
            if len(parts) != 3 or parts[2] not in (TRUE_POSITIVE, FALSE_POSITIVE):
                raise FormatError(f"{path}:{lineno}: expected 'user<TAB>item<TAB>label'")
            try:
                u, i = idmap.user_index(parts[0]), idmap.item_index(parts[1])
            except KeyError:
                raise FormatError(f"{path}:{lineno}: unknown id in {parts[:2]}")
            key = u * graph.num_items + i
            pos = int(np.searchsorted(keys, key))
            if pos >= keys.size or keys[pos] != key:
                raise FormatError(f"{path}:{lineno}: edge ({parts[0]}, {parts[1]}) is not in the graph")
            out[pos] = 1 if parts[2] == TRUE_POSITIVE else 0
    return out


@dataclass
class Dataset:
    root: Path
    graph: object
    idmap: IdMap
    features: dict


def available_modalities(root):
    root = Path(root)
    return tuple(m for m in MODALITY_ORDER if (root / feature_filename(m)).exists())


def load_dataset(root, modalities=None):
    root = Path(root)
    graph, idmap = load_interactions(root / INTERACTIONS)
    modalities = available_modalities(root) if modalities is None else canonical_modalities(modalities)
    features = {}
    for m in modalities:
        path = root / feature_filename(m)
        if not path.exists():
            raise FileNotFoundError(f"missing feature file {path}")
        table = read_features(path, m)
        if table.num_items != graph.num_items:
            raise FormatError(f"{path.name} has {table.num_items} rows, dataset has {graph.num_items} items")
        features[m] = table
    return Dataset(root, graph, idmap, features)


# ---------------------------------------------------------------------------
# checkpoints


def checkpoint_dict(params, id_digest, extra=None):
    tensors = {
        name: {"shape": list(t.shape), "data": t.data.reshape(-1).tolist()}
        for name, t in params.tensors().items()
    }
    doc = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "num_users": params.num_users,
        "num_items": params.num_items,
        "feature_dims": {m: int(d) for m, d in params.feature_dims.items()},
        "hyper": params.hyper.to_dict(),
        "id_digest": id_digest,
        "tensors": tensors,
    }
    doc.update(extra or {})
    return doc


def save_checkpoint(path, params, id_digest, extra=None):
    doc = checkpoint_dict(params, id_digest, extra)
    Path(path).write_text(json.dumps(doc) + "\n", encoding="utf-8")


def load_checkpoint(path):
    """Returns ``(ModelParams, document)``; tensors are restored bit-exactly."""
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise FormatError(f"{path} is not a checkpoint")
    if doc.get("version") != CHECKPOINT_VERSION:
        raise FormatError(f"unsupported checkpoint version {doc.get('version')}")
    hyper = gcn.Hyperparams.from_dict(doc["hyper"])
    tensors = {}
    for name, rec in doc["tensors"].items():
        data = np.array(rec["data"], dtype=np.float64).reshape(rec["shape"])
        tensors[name] = ad.Tensor(data, True, name)
    params = gcn.from_tensors(tensors, doc["num_users"], doc["num_items"], hyper, doc["feature_dims"])
    return params, doc
