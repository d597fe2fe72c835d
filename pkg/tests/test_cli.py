import hashlib
import json

import numpy as np
import pytest

from grcn import cli, gcn
from grcn import io as gio
from grcn import train as tr
from grcn.evaluate import candidate_mask

TINY = {
    "num_users": 20,
    "num_items": 40,
    "num_clusters": 2,
    "modalities": {"visual": 4, "acoustic": 3},
    "interactions_per_user": 8,
    "noise_fraction": 0.25,
}
TRAIN_CFG = {"embed_dim": 8, "proj_dim": 8, "batch_size": 64, "max_epochs": 2}


def write_json(path, obj):
    path.write_text(json.dumps(obj), encoding="utf-8")
    return str(path)


def digests(folder):
    return {p.name: hashlib.sha256(p.read_bytes()).hexdigest() for p in sorted(folder.iterdir())}


@pytest.fixture(scope="module")
def run(tmp_path_factory):
    """A synthesized dataset plus a two-epoch checkpoint."""
    root = tmp_path_factory.mktemp("cli")
    data, out = root / "data", root / "run"
    assert cli.main(["synth", "--config", write_json(root / "s.json", TINY), "--seed", "3", "--out", str(data)]) == 0
    cfg = write_json(root / "t.json", TRAIN_CFG)
    assert cli.main(["train", "--config", cfg, "--data", str(data), "--out", str(out), "--seed", "1"]) == 0
    return root, data, out


def test_synth_writes_dataset(run):
    _, data, _ = run
    names = {p.name for p in data.iterdir()}
    assert {"interactions.tsv", "features_visual.txt", "features_acoustic.txt", "labels.tsv", "synth_spec.json"} <= names
    assert "interactions.ids.json" in names
    echo = json.loads((data / "synth_spec.json").read_text())
    assert echo["seed"] == 3 and echo["num_users"] == 20


def test_minimal_spec(tmp_path):
    spec = {"num_users": 10, "num_items": 20, "num_clusters": 2, "modalities": {"visual": 2}, "interactions_per_user": 4,
            "noise_fraction": 0.0}
    assert cli.main(["synth", "--config", write_json(tmp_path / "s.json", spec), "--out", str(tmp_path / "a")]) == 0
    labels = (tmp_path / "a" / "labels.tsv").read_text().splitlines()
    assert len(labels) == 40 and all(line.endswith("\ttrue_positive") for line in labels)
    assert cli.main(["synth", "--config", str(tmp_path / "s.json"), "--out", str(tmp_path / "b")]) == 0
    assert digests(tmp_path / "a") == digests(tmp_path / "b")


def test_invalid_spec_exit_code(tmp_path, capsys):
    bad = write_json(tmp_path / "s.json", dict(TINY, noise_fraction=1.5))
    assert cli.main(["synth", "--config", bad, "--out", str(tmp_path / "x")]) == cli.EXIT_CONFIG
    assert "error" in capsys.readouterr().err
    typo = write_json(tmp_path / "t.json", {"num_userz": 3})
    assert cli.main(["synth", "--config", typo, "--out", str(tmp_path / "x")]) == cli.EXIT_CONFIG


def test_train_one_epoch_report(run, tmp_path):
    root, data, _ = run
    cfg = write_json(tmp_path / "t.json", TRAIN_CFG)
    assert cli.main(["train", "--config", cfg, "--data", str(data), "--out", str(tmp_path), "--max-epochs", "1"]) == 0
    lines = (tmp_path / "train_report.jsonl").read_text().splitlines()
    assert len(lines) == 1
    assert set(json.loads(lines[0])) == {"epoch", "loss", "val_recall", "wall_time"}


def test_train_rerun_same_best_metric(run, tmp_path):
    _, data, out = run
    cfg = write_json(tmp_path / "t.json", TRAIN_CFG)
    assert cli.main(["train", "--config", cfg, "--data", str(data), "--out", str(tmp_path), "--seed", "1"]) == 0
    strip = lambda p: [{k: v for k, v in json.loads(l).items() if k != "wall_time"} for l in p.read_text().splitlines()]
    assert strip(tmp_path / "train_report.jsonl") == strip(out / "train_report.jsonl")
    assert (tmp_path / "checkpoint.json").read_bytes() == (out / "checkpoint.json").read_bytes()


def test_flags_override_config(run, tmp_path):
    _, data, _ = run
    cfg = write_json(tmp_path / "t.json", dict(TRAIN_CFG, max_epochs=5, variant="mean"))
    args = ["train", "--config", cfg, "--data", str(data), "--out", str(tmp_path), "--max-epochs", "0", "--variant", "max"]
    assert cli.main(args) == 0
    doc = json.loads((tmp_path / "checkpoint.json").read_text())
    assert doc["hyper"]["max_epochs"] == 0 and doc["hyper"]["fusion"] == "max"
    assert doc["hyper"]["embed_dim"] == 8 and doc["hyper"]["layers"] == 2


def test_eval_defaults_to_k10(run, tmp_path, capsys):
    _, data, out = run
    assert cli.main(["eval", "--checkpoint", str(out / "checkpoint.json"), "--out", str(tmp_path)]) == 0
    printed = json.loads(capsys.readouterr().out)
    assert printed["k"] == 10
    assert json.loads((tmp_path / "metrics_test.json").read_text()) == printed


def test_eval_splits_use_disjoint_held_out_sets(run, tmp_path):
    _, data, out = run
    ck = str(out / "checkpoint.json")
    for split in ("validation", "test"):
        assert cli.main(["eval", "--checkpoint", ck, "--split", split, "--out", str(tmp_path)]) == 0
    assert (tmp_path / "metrics_validation.json").exists() and (tmp_path / "metrics_test.json").exists()
    params, doc = gio.load_checkpoint(ck)
    graph = cli._split_graph(gio.load_dataset(data).graph, doc["seed"])
    val = {tuple(e) for e in graph.split_edges("validation").tolist()}
    test = {tuple(e) for e in graph.split_edges("test").tolist()}
    assert val and test and not val & test
    # each split's candidates hide the other split's items
    assert not candidate_mask(graph, "test")[tuple(np.array(sorted(val)).T)].any()


def test_untrained_checkpoint_matches_random_baseline(tmp_path, capsys):
    # one cluster and no separation: neither content nor structure carries preference
    spec = dict(num_users=60, num_items=120, num_clusters=1, cluster_separation=0.0, noise_fraction=0.0,
                modalities={"visual": 16, "acoustic": 16}, interactions_per_user=20)
    data = tmp_path / "data"
    assert cli.main(["synth", "--config", write_json(tmp_path / "s.json", spec), "--seed", "5", "--out", str(data)]) == 0
    assert cli.main(["train", "--data", str(data), "--out", str(tmp_path), "--max-epochs", "0", "--seed", "5"]) == 0
    capsys.readouterr()
    assert cli.main(["eval", "--checkpoint", str(tmp_path / "checkpoint.json"), "--out", str(tmp_path)]) == 0
    recall = json.loads(capsys.readouterr().out)["recall"]
    params, doc = gio.load_checkpoint(tmp_path / "checkpoint.json")
    graph = cli._split_graph(gio.load_dataset(data).graph, 5)
    mask = candidate_mask(graph, "test")
    held = graph.items_by_user("test")
    users = [u for u in range(graph.num_users) if held[u].size]
    # a uniformly random ranking recovers each held-out item with probability K/|candidates|
    p = np.array([min(10, mask[u].sum()) / mask[u].sum() for u in users])
    sigma = np.sqrt(np.sum(p * (1 - p))) / len(users)
    assert abs(recall - p.mean()) <= 3 * sigma


def test_eval_rejects_mismatched_dataset(run, tmp_path, capsys):
    root, _, out = run
    other = tmp_path / "other"
    spec = write_json(tmp_path / "s.json", dict(TINY, num_users=21))
    assert cli.main(["synth", "--config", spec, "--out", str(other)]) == 0
    code = cli.main(["eval", "--checkpoint", str(out / "checkpoint.json"), "--data", str(other), "--out", str(tmp_path)])
    assert code == cli.EXIT_CONFIG
    assert "different id mapping" in capsys.readouterr().err


def _weights(path):
    rows = [l.split("\t") for l in path.read_text().splitlines() if not l.startswith("#")]
    return rows[0], rows[1:]


def test_inspect_without_labels(run, tmp_path, capsys):
    _, _, out = run
    assert cli.main(["inspect-edges", "--checkpoint", str(out / "checkpoint.json"), "--out", str(tmp_path)]) == 0
    assert "edge_weight_auc" not in json.loads(capsys.readouterr().out)
    text = (tmp_path / "edge_weights.tsv").read_text()
    assert "# edge_weight_auc" not in text
    header, rows = _weights(tmp_path / "edge_weights.tsv")
    assert header[:4] == ["user", "item", "s_user_from_item", "s_item_from_user"]
    assert all(len(r) == len(header) for r in rows)


def test_inspect_perfect_separation_labels(run, tmp_path, capsys):
    _, _, out = run
    ck = str(out / "checkpoint.json")
    assert cli.main(["inspect-edges", "--checkpoint", ck, "--out", str(tmp_path)]) == 0
    _, rows = _weights(tmp_path / "edge_weights.tsv")
    w = np.array([float(r[2]) for r in rows])
    cut = np.sort(np.unique(w))[len(np.unique(w)) // 2]
    labels = tmp_path / "labels.tsv"
    labels.write_text("".join(f"{r[0]}\t{r[1]}\t{'true_positive' if float(r[2]) >= cut else 'false_positive'}\n"
                              for r in rows), encoding="utf-8")
    capsys.readouterr()
    assert cli.main(["inspect-edges", "--checkpoint", ck, "--labels", str(labels), "--out", str(tmp_path)]) == 0
    assert json.loads(capsys.readouterr().out)["edge_weight_auc"] == 1.0
    assert (tmp_path / "edge_weights.tsv").read_text().splitlines()[-1] == "# edge_weight_auc\t1.0"


def test_inspect_degree_one_user(tmp_path):
    data = tmp_path / "data"
    data.mkdir()
    idmap = gio.IdMap(["a", "b"], ["x", "y", "z", "w"])
    gio.write_interactions(data / "interactions.tsv", [(0, 0), (1, 1), (1, 2), (1, 3)], idmap)
    rng = np.random.default_rng(0)
    gio.write_features(data / "features_visual.txt", rng.standard_normal((4, 3)))
    gio.write_features(data / "features_textual.txt", rng.standard_normal((4, 2)))
    assert cli.main(["train", "--data", str(data), "--out", str(tmp_path), "--max-epochs", "0"]) == 0
    assert cli.main(["inspect-edges", "--checkpoint", str(tmp_path / "checkpoint.json"), "--out", str(tmp_path)]) == 0
    header, rows = _weights(tmp_path / "edge_weights.tsv")
    row = dict(zip(header, [r for r in rows if r[0] == "a"][0]))
    assert float(row["visual_user_from_item"]) == 1.0 and float(row["textual_user_from_item"]) == 1.0


def test_inspect_unknown_label_edge(run, tmp_path):
    _, _, out = run
    labels = tmp_path / "labels.tsv"
    labels.write_text("0\tnope\ttrue_positive\n", encoding="utf-8")
    code = cli.main(["inspect-edges", "--checkpoint", str(out / "checkpoint.json"), "--labels", str(labels),
                     "--out", str(tmp_path)])
    assert code == cli.EXIT_CONFIG


def test_export_id_only_width(run, tmp_path):
    _, data, _ = run
    args = ["train", "--data", str(data), "--out", str(tmp_path), "--max-epochs", "0", "--variant", "id-only"]
    assert cli.main(args + ["--config", write_json(tmp_path / "t.json", TRAIN_CFG)]) == 0
    assert cli.main(["export-embeddings", "--checkpoint", str(tmp_path / "checkpoint.json"), "--out", str(tmp_path)]) == 0
    assert np.load(tmp_path / "user_embeddings.npy").shape == (20, 8)
    assert np.load(tmp_path / "item_embeddings.npy").shape == (40, 8)


def test_export_three_modalities_round_trip(tmp_path):
    spec = dict(TINY, modalities={"visual": 4, "acoustic": 3, "textual": 5})
    data = tmp_path / "data"
    assert cli.main(["synth", "--config", write_json(tmp_path / "s.json", spec), "--out", str(data)]) == 0
    assert cli.main(["train", "--data", str(data), "--out", str(tmp_path), "--max-epochs", "0"]) == 0
    ck = str(tmp_path / "checkpoint.json")
    assert cli.main(["export-embeddings", "--checkpoint", ck, "--out", str(tmp_path / "a")]) == 0
    users = np.load(tmp_path / "a" / "user_embeddings.npy")
    assert users.shape == (20, 256)
    ids = json.loads((tmp_path / "a" / "ids.json").read_text())
    assert len(ids["users"]) == 20 and len(ids["items"]) == 40
    params, doc = gio.load_checkpoint(ck)
    ds = gio.load_dataset(data)
    fwd = gcn.forward(params, cli._split_graph(ds.graph, doc["seed"]), ds.features)
    assert users.tobytes() == fwd.user_rep.data.tobytes()
    assert cli.main(["export-embeddings", "--checkpoint", ck, "--out", str(tmp_path / "b")]) == 0
    assert digests(tmp_path / "a") == digests(tmp_path / "b")


def test_exit_codes_are_distinct(run, tmp_path, monkeypatch):
    _, data, out = run
    assert len({cli.EXIT_OK, cli.EXIT_CONFIG, cli.EXIT_NUMERIC, cli.EXIT_IO}) == 4
    assert cli.main(["train", "--out", str(tmp_path)]) == cli.EXIT_CONFIG
    assert cli.main(["eval", "--checkpoint", str(tmp_path / "missing.json")]) == cli.EXIT_IO
    blocker = tmp_path / "file"
    blocker.write_text("")
    assert cli.main(["eval", "--checkpoint", str(out / "checkpoint.json"), "--out", str(blocker / "sub")]) == cli.EXIT_IO

    def diverge(*args, **kw):
        raise tr.NumericError("non-finite loss at epoch 1, batch 0 (seed 0)")

    monkeypatch.setattr(tr, "fit", diverge)
    assert cli.main(["train", "--data", str(data), "--out", str(tmp_path)]) == cli.EXIT_NUMERIC


def test_bad_config_file(tmp_path):
    (tmp_path / "c.json").write_text("{not json", encoding="utf-8")
    assert cli.main(["train", "--config", str(tmp_path / "c.json"), "--data", "x"]) == cli.EXIT_CONFIG
