import numpy as np
import pytest

from fewshot.backbones import BackboneConfig, build_backbone, embed
from fewshot.episodes import DatasetTable, ShiftConfig, synth_task_domain
from fewshot.errors import ConfigError
from fewshot.heads import HeadKind, score_queries
from fewshot.optim import OptimizerConfig
from fewshot.training import TrainSchedule, fine_tune, meta_train, pretrain_baseline


def separable_table(n_classes=2, per_class=20, dim=2, seed=0, sep=6.0):
    rng = np.random.default_rng(seed)
    centers = sep * rng.standard_normal((n_classes, dim))
    inputs, labels = [], []
    for c in range(n_classes):
        for _ in range(per_class):
            inputs.append(centers[c] + 0.2 * rng.standard_normal(dim))
            labels.append(c)
    return DatasetTable(inputs, np.array(labels), ["d"] * len(inputs),
                        [f"c{i}" for i in range(n_classes)])


def identity_backbone(dim=2):
    return build_backbone(BackboneConfig(kind="identity", input_shape=(dim,)), 0)


def test_pretrain_reaches_high_accuracy_on_separable_data():
    table = separable_table()
    head = HeadKind(kind="baseline")
    schedule = TrainSchedule(phase="pretrain", epochs=100, batch_size=8, seed=0,
                             optimizer=OptimizerConfig(kind="radam", learning_rate=1e-2))
    backbone, state, log = pretrain_baseline(identity_backbone(), head, table, schedule)
    feats = np.asarray(table.inputs)
    logits = feats @ state.weights.T + state.bias
    acc = np.mean(np.argmax(logits, axis=1) == table.labels)
    assert acc >= 0.99


def test_pretrain_zero_learning_rate_is_noop():
    table = separable_table()
    head = HeadKind(kind="baseline")
    bb = build_backbone(BackboneConfig(kind="mlp", input_shape=(2,), hidden=(4,),
                                       embedding_dim=3), 1)
    before = bb.params.checksum()
    # full-batch so the loss sequence is exactly constant
    schedule = TrainSchedule(phase="pretrain", epochs=3, batch_size=len(table), seed=0,
                             optimizer=OptimizerConfig(kind="sgd", learning_rate=0.0))
    _, _, log = pretrain_baseline(bb, head, table, schedule)
    assert bb.params.checksum() == before
    assert np.allclose(log.losses, log.losses[0])


def test_pretrain_descends_on_fixed_seed():
    table = separable_table(n_classes=3, seed=2)
    head = HeadKind(kind="baseline_pp")
    schedule = TrainSchedule(phase="pretrain", epochs=20, batch_size=8, seed=3)
    _, _, log = pretrain_baseline(identity_backbone(), head, table, schedule)
    assert log.losses[-1] < log.losses[0]


def test_pretrain_rejects_metric_heads():
    with pytest.raises(ConfigError):
        pretrain_baseline(identity_backbone(), HeadKind(kind="proto"),
                          separable_table(), TrainSchedule(phase="pretrain"))


def test_meta_train_improves_protonet():
    src = synth_task_domain(ShiftConfig(class_count=10, samples_per_class=15, dim=4,
                                        separation=10.0, noise=0.1, seed=1))
    bb = build_backbone(BackboneConfig(kind="mlp", input_shape=(4,), hidden=(16,),
                                       embedding_dim=8), 0)
    schedule = TrainSchedule(phase="meta_train", episodes=200, seed=2,
                             checkpoint_interval=50)
    _, _, log = meta_train(HeadKind(kind="proto"), bb, src, 5, 5, 8, schedule)
    assert len(log.losses) == 200
    assert all(np.isfinite(l) and l >= 0 for l in log.losses)
    assert log.accuracies[-1][1] >= log.accuracies[0][1] - 0.1


def test_meta_train_identity_backbone_is_noop_on_accuracy():
    src = synth_task_domain(ShiftConfig(class_count=10, samples_per_class=15, dim=4,
                                        separation=5.0, noise=0.5, seed=3))
    from fewshot.evaluation import meta_test

    bb = identity_backbone(dim=4)
    head = HeadKind(kind="proto")
    before = meta_test(bb, head, src, 5, 5, 8, 100, 7)
    schedule = TrainSchedule(phase="meta_train", episodes=50, seed=1)
    meta_train(head, bb, src, 5, 5, 8, schedule)
    after = meta_test(bb, head, src, 5, 5, 8, 100, 7)
    assert before.mean_accuracy == after.mean_accuracy


def test_meta_train_relation_head_learns_parameters():
    src = synth_task_domain(ShiftConfig(class_count=8, samples_per_class=10, dim=3,
                                        separation=8.0, noise=0.2, seed=4))
    bb = identity_backbone(dim=3)
    schedule = TrainSchedule(phase="meta_train", episodes=30, seed=5)
    _, rel, log = meta_train(HeadKind(kind="relation"), bb, src, 3, 2, 4, schedule)
    assert rel is not None and rel.t == 30
    assert all(np.isfinite(l) for l in log.losses)


def test_meta_train_reproducible():
    src = synth_task_domain(ShiftConfig(class_count=8, samples_per_class=10, dim=3, seed=6))
    cfg = BackboneConfig(kind="mlp", input_shape=(3,), hidden=(8,), embedding_dim=4)
    runs = []
    for _ in range(2):
        bb = build_backbone(cfg, 11)
        schedule = TrainSchedule(phase="meta_train", episodes=40, seed=12)
        _, _, log = meta_train(HeadKind(kind="proto"), bb, src, 3, 2, 4, schedule)
        runs.append((bb.params.checksum(), tuple(log.losses)))
    assert runs[0] == runs[1]


def test_meta_train_rejects_baseline_heads():
    src = synth_task_domain(ShiftConfig(class_count=8, samples_per_class=10, dim=3, seed=6))
    with pytest.raises(ConfigError):
        meta_train(HeadKind(kind="baseline"), identity_backbone(dim=3), src, 3, 2, 4,
                   TrainSchedule(phase="meta_train", episodes=1))


def make_separable_support(rng, n=5, k=5, d=2, sep=10.0):
    centers = sep * rng.standard_normal((n, d))
    feats = np.concatenate([c + 0.1 * rng.standard_normal((k, d)) for c in centers])
    labels = np.repeat(np.arange(n), k)
    return feats, labels


def test_fine_tune_fits_separable_support():
    rng = np.random.default_rng(0)
    feats, labels = make_separable_support(rng)
    bb = identity_backbone(dim=2)
    head = HeadKind(kind="baseline")
    state = fine_tune(bb, head, feats, labels, 5)
    logits = feats @ state.weights.T + state.bias
    assert np.mean(np.argmax(logits, axis=1) == labels) == 1.0


def test_fine_tune_leaves_backbone_untouched():
    rng = np.random.default_rng(1)
    feats, labels = make_separable_support(rng)
    bb = build_backbone(BackboneConfig(kind="mlp", input_shape=(2,), hidden=(4,),
                                       embedding_dim=3), 5)
    before = bb.params.checksum()
    fine_tune(bb, HeadKind(kind="baseline_pp"), feats, labels, 5)
    assert bb.params.checksum() == before


def test_fine_tune_zero_iterations_returns_initialization():
    rng = np.random.default_rng(2)
    feats, labels = make_separable_support(rng)
    bb = identity_backbone(dim=2)
    head0 = HeadKind(kind="baseline", fine_tune_iters=0)
    a = fine_tune(bb, head0, feats, labels, 5)
    b = fine_tune(bb, head0, feats, labels, 5)
    assert np.array_equal(a.weights, b.weights)
    trained = fine_tune(bb, HeadKind(kind="baseline"), feats, labels, 5)
    assert not np.array_equal(a.weights, trained.weights)
