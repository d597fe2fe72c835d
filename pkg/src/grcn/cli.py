"""Command-line entry point.

Exit codes: 0 success, 2 configuration/validation error, 3 numeric failure,
4 I/O failure.
"""
import argparse
import json
import logging
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np

from grcn import gcn
from grcn import io as gio
from grcn import rng as rngs
from grcn import synth
from grcn import train as tr
from grcn.evaluate import evaluate
from grcn.graph import GraphError, SamplingError, split_per_user
from grcn.synth import GenerationError

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3
EXIT_IO = 4

SPLIT_RATIOS = (8, 1, 1)
HYPER_FIELDS = {f.name for f in fields(gcn.Hyperparams)}

log = logging.getLogger("grcn")


class ConfigError(ValueError):
    pass


def _load_json(path):
    if path is None:
        return {}
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})")


def resolve_config(args):
    """Merge defaults < config file < command-line flags."""
    cfg = _load_json(getattr(args, "config", None))
    if not isinstance(cfg, dict):
        raise ConfigError("config file must hold a JSON object")
    for key in ("seed", "k", "split", "variant", "out", "data", "checkpoint", "labels"):
        val = getattr(args, key, None)
        if val is not None:
            cfg[key] = val
    if getattr(args, "modalities", None):
        cfg["modalities"] = [m.strip() for m in args.modalities.split(",") if m.strip()]
    if getattr(args, "max_epochs", None) is not None:
        cfg["max_epochs"] = args.max_epochs
    return cfg


def hyper_from_config(cfg, default_modalities):
    variant = cfg.get("variant", "full")
    kw = {k: v for k, v in cfg.items() if k in HYPER_FIELDS and k not in ("fusion", "id_only")}
    kw.setdefault("modalities", tuple(default_modalities))
    try:
        return gcn.Hyperparams.for_variant(variant, **kw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc))


def _out_dir(cfg):
    out = Path(cfg.get("out") or ".")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _split_graph(graph, seed):
    return split_per_user(graph, SPLIT_RATIOS, rngs.stream(seed, "split"))


def _model_and_data(cfg):
    ck = cfg.get("checkpoint")
    if not ck:
        raise ConfigError("--checkpoint is required")
    params, doc = gio.load_checkpoint(ck)
    data_dir = cfg.get("data") or doc.get("data")
    if not data_dir:
        raise ConfigError("--data is required (checkpoint records no dataset path)")
    ds = gio.load_dataset(data_dir, params.hyper.modalities)
    if ds.idmap.digest() != doc["id_digest"]:
        raise ConfigError(f"checkpoint {ck} was trained on a different id mapping than {data_dir}")
    if (ds.graph.num_users, ds.graph.num_items) != (params.num_users, params.num_items):
        raise ConfigError("checkpoint and dataset disagree on user/item counts")
    for m, d in params.feature_dims.items():
        if ds.features[m].dim != d:
            raise ConfigError(f"checkpoint expects {d}-wide {m} features, dataset has {ds.features[m].dim}")
    graph = _split_graph(ds.graph, doc["seed"])
    return params, doc, ds, graph


# ---------------------------------------------------------------------------
# commands


def cmd_synth(args):
    cfg = _load_json(args.config)
    if args.seed is not None:
        cfg["seed"] = args.seed
    try:
        spec = synth.SynthSpec.from_dict(cfg)
    except TypeError as exc:
        raise ConfigError(f"invalid synth spec: {exc}")
    data = synth.generate(spec)
    out = _out_dir({"out": args.out})
    idmap = gio.IdMap.identity(spec.num_users, spec.num_items)
    gio.write_interactions(out / gio.INTERACTIONS, data.graph.edges, idmap)
    for m, table in data.features.items():
        gio.write_features(out / gio.feature_filename(m), table)
    gio.write_labels(out / gio.LABELS, data.graph.edges, data.labels, idmap)
    (out / gio.SPEC_ECHO).write_text(json.dumps(spec.to_dict(), indent=2) + "\n", encoding="utf-8")
    print(
        f"N={spec.num_users} M={spec.num_items} edges={data.graph.num_edges} "
        f"phi={data.noise_rate:.4f} -> {out}"
    )
    return EXIT_OK


def cmd_train(args):
    cfg = resolve_config(args)
    if not cfg.get("data"):
        raise ConfigError("--data is required")
    seed = int(cfg.get("seed", 0))
    mods = cfg.get("modalities")
    ds = gio.load_dataset(cfg["data"], mods)
    if not ds.features:
        raise ConfigError(f"no feature files found in {cfg['data']}")
    hyper = hyper_from_config(cfg, ds.features.keys())
    graph = _split_graph(ds.graph, seed)
    out = _out_dir(cfg)
    params, report = tr.fit(graph, ds.features, hyper, seed)
    extra = {"seed": seed, "split_ratios": list(SPLIT_RATIOS), "data": str(Path(cfg["data"]).resolve())}
    gio.save_checkpoint(out / "checkpoint.json", params, ds.idmap.digest(), extra)
    (out / "train_report.jsonl").write_text(report.to_jsonl(), encoding="utf-8")
    print(
        f"epochs={len(report.epochs)} best_epoch={report.best_epoch} "
        f"best_val_recall@{hyper.k}={report.best_val_recall:.6f} -> {out / 'checkpoint.json'}"
    )
    return EXIT_OK


def cmd_eval(args):
    cfg = resolve_config(args)
    params, doc, ds, graph = _model_and_data(cfg)
    split = cfg.get("split", "test")
    k = int(cfg.get("k", 10))
    result = evaluate(params, graph, ds.features, split, k)
    text = result.to_json()
    out = _out_dir(cfg)
    (out / f"metrics_{split}.json").write_text(text, encoding="utf-8")
    sys.stdout.write(text)
    return EXIT_OK


def cmd_inspect_edges(args):
    cfg = resolve_config(args)
    params, doc, ds, graph = _model_and_data(cfg)
    fwd = gcn.forward(params, graph, ds.features)
    w = fwd.refined.weights
    mods = params.refine.modalities
    s_ui, s_iu = w.as_arrays()

    labels = None
    if cfg.get("labels"):
        all_labels = gio.read_labels(cfg["labels"], ds.graph, ds.idmap)
        labels = all_labels[graph.partition == 0]

    out = _out_dir(cfg)
    header = ["user", "item", "s_user_from_item", "s_item_from_user"]
    for m in mods:
        header += [f"{m}_user_from_item", f"{m}_item_from_user"]
    lines = ["\t".join(header)]
    for e in range(len(w)):
        row = [ds.idmap.users[w.users[e]], ds.idmap.items[w.items[e]], repr(float(s_ui[e])), repr(float(s_iu[e]))]
        for m in mods:
            a, b = w.per_modality[m]
            row += [repr(float(a.data[e])), repr(float(b.data[e]))]
        lines.append("\t".join(row))
    auc = None
    if labels is not None:
        known = labels >= 0
        if not known.any():
            raise ConfigError("labels file covers no train edge")
        auc = synth.edge_weight_auc(s_ui[known], labels[known] == 1)
        lines.append(f"# edge_weight_auc\t{auc!r}")
    (out / "edge_weights.tsv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    summary = {"edges": len(w)}
    if auc is not None:
        summary["edge_weight_auc"] = auc
    print(json.dumps(summary))
    return EXIT_OK


def cmd_export_embeddings(args):
    cfg = resolve_config(args)
    params, doc, ds, graph = _model_and_data(cfg)
    fwd = gcn.forward(params, graph, ds.features)
    out = _out_dir(cfg)
    np.save(out / "user_embeddings.npy", fwd.user_rep.data)
    np.save(out / "item_embeddings.npy", fwd.item_rep.data)
    (out / "ids.json").write_text(ds.idmap.to_json(), encoding="utf-8")
    print(f"users {fwd.user_rep.shape} items {fwd.item_rep.shape} -> {out}")
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser():
    parser = argparse.ArgumentParser(prog="grcn", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, model=True):
        p.add_argument("--config", metavar="PATH")
        p.add_argument("--seed", type=int, metavar="U64")
        p.add_argument("--out", metavar="DIR")
        p.add_argument("--data", metavar="DIR", help="dataset directory")
        if model:
            p.add_argument("--checkpoint", metavar="PATH")
            p.add_argument("--k", type=int)
            p.add_argument("--split", choices=["validation", "test"])

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    p.add_argument("--config", metavar="PATH", help="synth spec JSON")
    p.add_argument("--seed", type=int, metavar="U64")
    p.add_argument("--out", metavar="DIR", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="fit a model and write a checkpoint")
    common(p, model=False)
    p.add_argument("--variant", choices=sorted(gcn.VARIANTS))
    p.add_argument("--modalities", metavar="LIST", help="comma-separated modality subset")
    p.add_argument("--max-epochs", type=int, dest="max_epochs")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="top-K metrics for a checkpoint")
    common(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("inspect-edges", help="dump fused edge weights")
    common(p)
    p.add_argument("--labels", metavar="PATH")
    p.set_defaults(func=cmd_inspect_edges)

    p = sub.add_parser("export-embeddings", help="write final user/item representations")
    common(p)
    p.set_defaults(func=cmd_export_embeddings)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except (ConfigError, GraphError, GenerationError, SamplingError, gio.FormatError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (tr.NumericError, FloatingPointError, ArithmeticError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"I/O failure: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
