"""The three learning procedures: baseline pre-training, episodic
meta-training, and few-shot fine-tuning with a frozen backbone."""

import csv
import time
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .backbones import embed
from .episodes import AugmentConfig, augment_batch, sample_episode
from .errors import ConfigError, DivergenceError
from .heads import (
    HeadKind,
    HeadState,
    SupportSet,
    episode_loss,
    fit_head,
    init_relation_params,
    score_queries,
)
from .optim import OptimizerConfig, ParamSet, optimizer_step
from .tensor import Tensor


@dataclass
class TrainSchedule:
    phase: str = "meta_train"          # pretrain | meta_train | fine_tune
    epochs: int = 10
    episodes: int = 2000
    batch_size: int = 8
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    checkpoint_interval: int = 100
    seed: int = 0
    augment: AugmentConfig = field(default_factory=AugmentConfig)

    def __post_init__(self):
        if self.phase not in ("pretrain", "meta_train", "fine_tune"):
            raise ConfigError(f"unknown phase {self.phase!r}")
        if self.epochs < 0 or self.episodes < 0 or self.batch_size < 1:
            raise ConfigError("schedule counts must be positive")


@dataclass
class TrainLog:
    losses: list = field(default_factory=list)
    accuracies: list = field(default_factory=list)   # (step, accuracy)
    seconds: list = field(default_factory=list)      # (step, wall seconds)

    def to_csv(self, path):
        acc = dict(self.accuracies)
        sec = dict(self.seconds)
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["step", "loss", "accuracy", "seconds"])
            for i, loss in enumerate(self.losses):
                w.writerow([i, repr(loss), acc.get(i, ""), sec.get(i, "")])


def _check_finite(loss_value, step):
    if not np.isfinite(loss_value):
        raise DivergenceError(f"non-finite loss {loss_value} at step {step}")


def _backward_multi(loss, *paramsets):
    """One reverse pass; per-set gradient maps (zeros where unreachable)."""
    for ps in paramsets:
        ps.zero_grad()
    loss.backward()
    out = []
    for ps in paramsets:
        out.append({
            name: (p.grad if p.grad is not None else np.zeros_like(p.data))
            for name, p in ps.params.items()
        })
    return out


def _init_classifier(head, n_classes, dim, seed):
    rng = np.random.default_rng(seed)
    params = ParamSet()
    bound = 1.0 / np.sqrt(dim)
    params.add("cls_w", rng.uniform(-bound, bound, size=(dim, n_classes)))
    if head.kind == "baseline":
        params.add("cls_b", rng.uniform(-bound, bound, size=(n_classes,)))
    return params


def _classifier_logits(head, params, feats):
    """Batch logits of the baseline / baseline_pp classifier, differentiable."""
    if head.kind == "baseline":
        return T.add(T.matmul(feats, params["cls_w"]), params["cls_b"])
    # cosine classifier: scale * cos(w_c, f)
    w = params["cls_w"]                                  # (d, C)
    wn = T.sqrt(T.tsum(T.mul(w, w), axis=0, keepdims=True))
    fn = T.sqrt(T.tsum(T.mul(feats, feats), axis=1, keepdims=True))
    return T.mul(T.div(T.div(T.matmul(feats, w), wn), fn), head.cosine_scale)


def _batch_ce(logits, labels):
    losses = [T.softmax_cross_entropy(T.take(logits, i), int(y)) for i, y in enumerate(labels)]
    total = losses[0]
    for item in losses[1:]:
        total = T.add(total, item)
    return T.mul(total, 1.0 / len(losses))


def _classifier_state(head, params):
    w = params["cls_w"].data.T.copy()
    if head.kind == "baseline":
        return HeadState(kind="baseline", weights=w, bias=params["cls_b"].data.copy())
    return HeadState(kind="baseline_pp", weight_vectors=w)


def pretrain_baseline(backbone, head, base_data, schedule):
    """Supervised training of the backbone plus a base-class classifier."""
    if head.kind not in ("baseline", "baseline_pp"):
        raise ConfigError("pretraining expects head kind baseline or baseline_pp")
    if len(base_data) == 0:
        raise ConfigError("base data is empty")
    rng = np.random.default_rng(schedule.seed)
    cls = _init_classifier(head, base_data.n_classes, backbone.embedding_dim, schedule.seed)
    log = TrainLog()
    n = len(base_data)
    step = 0
    t0 = time.perf_counter()
    for _ in range(schedule.epochs):
        order = rng.permutation(n)
        for lo in range(0, n, schedule.batch_size):
            idx = order[lo:lo + schedule.batch_size]
            batch = np.asarray([base_data.inputs[i] for i in idx], dtype=np.float64)
            batch = augment_batch(batch, schedule.augment, rng)
            labels = base_data.labels[idx]
            feats = embed(backbone, Tensor(batch))
            logits = _classifier_logits(head, cls, feats)
            loss = _batch_ce(logits, labels)
            _check_finite(loss.item(), step)
            log.losses.append(loss.item())
            bg, cg = _backward_multi(loss, backbone.params, cls)
            optimizer_step(backbone.params, bg, schedule.optimizer)
            optimizer_step(cls, cg, schedule.optimizer)
            if step % schedule.checkpoint_interval == 0:
                acc = float(np.mean(np.argmax(logits.data, axis=1) == labels))
                log.accuracies.append((step, acc))
                log.seconds.append((step, time.perf_counter() - t0))
            step += 1
    return backbone, _classifier_state(head, cls), log


def meta_train(head, backbone, base_data, n_way, k_shot, n_query, schedule,
               relation_params=None):
    """Episodic optimization of the embedding (and the relation module)."""
    if head.kind not in ("matching", "proto", "relation", "subspace"):
        raise ConfigError(f"head kind {head.kind!r} is not meta-trainable")
    rng = np.random.default_rng(schedule.seed)
    if head.kind == "relation" and relation_params is None:
        relation_params = init_relation_params(
            backbone.embedding_dim, head.relation_hidden, seed=schedule.seed
        )
    log = TrainLog()
    t0 = time.perf_counter()
    for step in range(schedule.episodes):
        ep = sample_episode(base_data, n_way, k_shot, n_query, rng)
        sup = augment_batch(ep.support_inputs, schedule.augment, rng)
        qry = augment_batch(ep.query_inputs, schedule.augment, rng)
        feats = embed(backbone, Tensor(np.concatenate([sup, qry])))
        ns = len(sup)
        sf = T.take(feats, np.arange(ns))
        qf = T.take(feats, np.arange(ns, ns + len(qry)))
        loss = episode_loss(head, sf, ep.support_labels, qf, ep.query_labels,
                            n_way, k_shot, relation_params=relation_params)
        _check_finite(loss.item(), step)
        log.losses.append(loss.item())
        if relation_params is not None and len(backbone.params):
            bg, rg = _backward_multi(loss, backbone.params, relation_params)
            optimizer_step(backbone.params, bg, schedule.optimizer)
            optimizer_step(relation_params, rg, schedule.optimizer)
        elif relation_params is not None:
            (rg,) = _backward_multi(loss, relation_params)
            optimizer_step(relation_params, rg, schedule.optimizer)
        elif len(backbone.params):
            (bg,) = _backward_multi(loss, backbone.params)
            optimizer_step(backbone.params, bg, schedule.optimizer)
        if step % schedule.checkpoint_interval == 0:
            support = SupportSet(sf.data, ep.support_labels, n_way, k_shot)
            state = fit_head(head, support, relation_params)
            scores = score_queries(state, support, qf.data, head)
            acc = float(np.mean(np.argmax(scores, axis=1) == ep.query_labels))
            log.accuracies.append((step, acc))
            log.seconds.append((step, time.perf_counter() - t0))
    return backbone, relation_params, log


def fine_tune(backbone, head, support_inputs, support_labels, n_way, schedule=None):
    """Train a fresh classifier on the support embeddings; the backbone is
    read-only (features are detached before optimization)."""
    if head.kind not in ("baseline", "baseline_pp"):
        raise ConfigError("fine_tune expects head kind baseline or baseline_pp")
    seed = schedule.seed if schedule is not None else 0
    iters = head.fine_tune_iters
    opt = OptimizerConfig(kind="adam", learning_rate=head.fine_tune_lr)
    feats_data = embed(backbone, Tensor(np.asarray(support_inputs, dtype=np.float64))).data
    labels = np.asarray(support_labels, dtype=np.int64)
    cls = _init_classifier(head, n_way, feats_data.shape[1], seed)
    for step in range(iters):
        feats = Tensor(feats_data)
        logits = _classifier_logits(head, cls, feats)
        loss = _batch_ce(logits, labels)
        _check_finite(loss.item(), step)
        (cg,) = _backward_multi(loss, cls)
        optimizer_step(cls, cg, opt)
    return _classifier_state(head, cls)
