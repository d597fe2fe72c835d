"""BPR objective, Adam, and the early-stopped training loop."""
import json
import logging
import time
from dataclasses import dataclass, field

import numpy as np

from grcn import autodiff as ad
from grcn import evaluate as ev
from grcn import gcn
from grcn import rng as rngs
from grcn.graph import VALIDATION, epoch_batches

log = logging.getLogger(__name__)


class NumericError(ArithmeticError):
    pass


def regularizer(tensors, squared=False):
    if squared:
        total = ad.sum_squares(tensors[0])
        for t in tensors[1:]:
            total = total + ad.sum_squares(t)
        return total
    return ad.global_norm(tensors)


def bpr_loss(scores_pos, scores_neg, params=(), reg_weight=0.0, squared=False):
    """sum(-ln sigmoid(pos - neg)) + reg_weight * ||theta||_2.

    ``params`` is a sequence of tensors making up theta. With ``squared`` the
    penalty is the squared norm instead.
    """
    scores_pos, scores_neg = ad.as_tensor(scores_pos), ad.as_tensor(scores_neg)
    if scores_pos.shape != scores_neg.shape or scores_pos.ndim != 1:
        raise ad.ShapeError(f"score vectors differ: {scores_pos.shape} vs {scores_neg.shape}")
    if scores_pos.shape[0] == 0:
        raise ad.ShapeError("empty score batch")
    loss = ad.sum(ad.softplus(scores_neg - scores_pos))
    params = list(params)
    if params and reg_weight:
        loss = loss + regularizer(params, squared) * reg_weight
    return loss


@dataclass
class OptimizerState:
    learning_rate: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(state, gradients, params):
    """One bias-corrected Adam update of ``params`` (name -> Tensor) in place."""
    for name, g in gradients.items():
        if g.shape != params[name].shape:
            raise ad.ShapeError(f"gradient for {name} has shape {g.shape}, param {params[name].shape}")
        bad = ~np.isfinite(g)
        if bad.any():
            raise NumericError(
                f"non-finite gradient for {name}: {int(bad.sum())} of {g.size} entries "
                f"(step {state.step + 1})"
            )
    state.step += 1
    t = state.step
    c1 = 1.0 - state.beta1**t
    c2 = 1.0 - state.beta2**t
    for name, g in gradients.items():
        m = state.m.get(name)
        v = state.v.get(name)
        if m is None:
            m = np.zeros_like(g)
            v = np.zeros_like(g)
        m = state.beta1 * m + (1.0 - state.beta1) * g
        v = state.beta2 * v + (1.0 - state.beta2) * g * g
        state.m[name], state.v[name] = m, v
        update = state.learning_rate * (m / c1) / (np.sqrt(v / c2) + state.eps)
        params[name].data = params[name].data - update
    return params


@dataclass
class TrainReport:
    epochs: list = field(default_factory=list)
    stopping_epoch: int = 0
    best_epoch: int = 0
    best_val_recall: float = 0.0

    def to_jsonl(self, wall_time=True):
        lines = []
        for rec in self.epochs:
            rec = dict(rec)
            if not wall_time:
                rec.pop("wall_time", None)
            lines.append(json.dumps(rec))
        return "".join(line + "\n" for line in lines)


def batch_loss(params, graph, features, batch):
    out = gcn.forward(params, graph, features)
    pos = gcn.score_pairs(out.user_rep, out.item_rep, batch.users, batch.pos_items)
    neg = gcn.score_pairs(out.user_rep, out.item_rep, batch.users, batch.neg_items)
    hyper = params.hyper
    return bpr_loss(pos, neg, list(params.tensors().values()), hyper.reg_weight, hyper.reg_squared)


def fit(graph, features, hyper, seed=0, params=None, on_epoch=None):
    """Train on ``graph``'s train edges; early-stop on validation Recall@K.

    Returns the parameters of the best validation epoch and the report.
    """
    if params is None:
        dims = {m: np.asarray(getattr(features[m], "features", features[m])).shape[1] for m in hyper.modalities}
        params = gcn.init_params(graph.num_users, graph.num_items, dims, hyper, rngs.stream(seed, "init"))
    report = TrainReport()
    best = params.copy()
    if hyper.max_epochs == 0:
        return best, report

    has_val = bool(np.any(graph.partition == VALIDATION))
    sampler = rngs.stream(seed, "sample")
    state = OptimizerState(hyper.learning_rate)
    tensors = params.tensors()
    best_recall = -np.inf
    stale = 0
    for epoch in range(1, hyper.max_epochs + 1):
        t0 = time.perf_counter()
        losses = []
        for b, batch in enumerate(epoch_batches(graph, hyper.batch_size, sampler)):
            with ad.GradientTape() as tape:
                tape.watch(*tensors.values())
                loss = batch_loss(params, graph, features, batch)
            if not np.isfinite(loss.data):
                raise NumericError(
                    f"non-finite loss at epoch {epoch}, batch {b} (seed {seed}, {len(batch)} triplets)"
                )
            grads = tape.backward(loss)
            adam_step(state, {n: grads[t] for n, t in tensors.items()}, tensors)
            losses.append(float(loss.data) / len(batch))

        val = ev.evaluate(params, graph, features, "validation", hyper.k).recall if has_val else 0.0
        rec = {
            "epoch": epoch,
            "loss": float(np.mean(losses)),
            "val_recall": val,
            "wall_time": time.perf_counter() - t0,
        }
        report.epochs.append(rec)
        if on_epoch is not None:
            on_epoch(rec)
        log.debug("epoch %d loss %.5f val recall@%d %.4f", epoch, rec["loss"], hyper.k, val)
        if val > best_recall:
            best_recall = val
            best = params.copy()
            report.best_epoch = epoch
            stale = 0
        else:
            stale += 1
            if stale >= hyper.patience:
                break
    report.stopping_epoch = report.epochs[-1]["epoch"]
    report.best_val_recall = float(best_recall)
    return best, report
