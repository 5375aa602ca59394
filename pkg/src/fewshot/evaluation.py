"""Meta-testing: many novel-class episodes aggregated into an EvalReport."""

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .backbones import embed
from .episodes import sample_episode
from .errors import ConfigError
from .heads import FINETUNE_HEADS, SupportSet, fit_head, score_queries
from .tensor import Tensor


def confidence_half_width(accuracies):
    """95% normal-approximation half width: 1.96 * s / sqrt(n)."""
    accs = np.asarray(accuracies, dtype=np.float64)
    if accs.size < 2:
        raise ConfigError("confidence interval needs at least 2 values")
    return float(1.96 * accs.std(ddof=1) / np.sqrt(accs.size))


def confusion_and_precision(predictions, true_labels, n_classes):
    """Counts matrix[t][p] plus per-class precision (0 with a flag when a
    predicted column is empty)."""
    preds = np.asarray(predictions, dtype=np.int64)
    truth = np.asarray(true_labels, dtype=np.int64)
    if preds.shape != truth.shape:
        raise ConfigError("predictions and labels must have equal length")
    if np.any((preds < 0) | (preds >= n_classes)) or np.any((truth < 0) | (truth >= n_classes)):
        raise IndexError("label outside [0, N)")
    matrix = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(matrix, (truth, preds), 1)
    col_sums = matrix.sum(axis=0)
    precision = np.zeros(n_classes)
    flags = []
    for c in range(n_classes):
        if col_sums[c] == 0:
            flags.append(f"precision undefined for class {c} (no predictions)")
        else:
            precision[c] = matrix[c, c] / col_sums[c]
    return matrix, precision, flags


@dataclass
class EvalReport:
    n_episodes: int
    mean_accuracy: float
    ci95_half_width: float
    per_episode_accuracy: list
    confusion: np.ndarray
    precision: np.ndarray
    flags: list = field(default_factory=list)
    config: dict = field(default_factory=dict)
    fingerprint: str = ""

    def to_doc(self):
        return {
            "config": self.config,
            "fingerprint": self.fingerprint,
            "n_episodes": self.n_episodes,
            "mean_accuracy": self.mean_accuracy,
            "ci95_half_width": self.ci95_half_width,
            "per_episode_accuracy": list(self.per_episode_accuracy),
            "confusion": [[int(v) for v in row] for row in self.confusion],
            "precision": [float(v) for v in self.precision],
            "flags": list(self.flags),
        }

    def to_json(self):
        return json.dumps(self.to_doc(), sort_keys=True, indent=2)

    @staticmethod
    def from_doc(doc):
        return EvalReport(
            n_episodes=doc["n_episodes"],
            mean_accuracy=doc["mean_accuracy"],
            ci95_half_width=doc["ci95_half_width"],
            per_episode_accuracy=doc["per_episode_accuracy"],
            confusion=np.array(doc["confusion"], dtype=np.int64),
            precision=np.array(doc["precision"]),
            flags=doc.get("flags", []),
            config=doc.get("config", {}),
            fingerprint=doc.get("fingerprint", ""),
        )

    def confusion_csv(self, path):
        n = self.confusion.shape[0]
        with open(path, "w", newline="") as f:
            import csv

            w = csv.writer(f)
            w.writerow(["true\\pred"] + [str(c) for c in range(n)])
            for t in range(n):
                w.writerow([t] + [int(v) for v in self.confusion[t]])


def format_cell(mean, half_width):
    """'xx.xx% ± y.yy%' cell as printed in results tables."""
    return f"{mean * 100:.2f}% ± {half_width * 100:.2f}%"


def meta_test(backbone, head, novel_data, n_way, k_shot, n_query, episode_count,
              master_seed, relation_params=None, threads=1, config=None,
              fingerprint=""):
    """Run episode_count independent novel-class episodes and aggregate.

    Per-episode RNG streams are spawned from the master seed, so the report
    is identical for any thread count.
    """
    if episode_count < 2:
        raise ConfigError("episode_count must be at least 2 (CI undefined)")
    seeds = np.random.SeedSequence(master_seed).spawn(episode_count)

    def run_episode(i):
        seq = seeds[i]
        rng = np.random.default_rng(seq)
        ep = sample_episode(novel_data, n_way, k_shot, n_query, rng)
        sup_feats = embed(backbone, Tensor(ep.support_inputs)).data
        qry_feats = embed(backbone, Tensor(ep.query_inputs)).data
        support = SupportSet(sup_feats, ep.support_labels, n_way, k_shot)
        if head.kind in FINETUNE_HEADS:
            ep_seed = int(seq.generate_state(1)[0])
            state = _fine_tune_on_features(head, sup_feats, ep.support_labels,
                                           n_way, ep_seed)
        else:
            state = fit_head(head, support, relation_params)
        scores = score_queries(state, support, qry_feats, head)
        preds = np.argmax(scores, axis=1)
        acc = float(np.mean(preds == ep.query_labels))
        matrix, _, _ = confusion_and_precision(preds, ep.query_labels, n_way)
        return acc, matrix

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(run_episode, range(episode_count)))
    else:
        results = [run_episode(i) for i in range(episode_count)]

    accs = [acc for acc, _ in results]
    confusion = np.sum([m for _, m in results], axis=0)
    col_sums = confusion.sum(axis=0)
    precision = np.zeros(n_way)
    flags = []
    for c in range(n_way):
        if col_sums[c] == 0:
            flags.append(f"precision undefined for class {c} (no predictions)")
        else:
            precision[c] = confusion[c, c] / col_sums[c]
    return EvalReport(
        n_episodes=episode_count,
        mean_accuracy=float(np.mean(accs)),
        ci95_half_width=confidence_half_width(accs),
        per_episode_accuracy=accs,
        confusion=confusion,
        precision=precision,
        flags=flags,
        config=config or {},
        fingerprint=fingerprint,
    )


def _fine_tune_on_features(head, feats, labels, n_way, seed):
    """Per-episode classifier training on already-embedded support features."""
    from .optim import OptimizerConfig, optimizer_step
    from .training import _backward_multi, _batch_ce, _classifier_logits, \
        _classifier_state, _init_classifier

    cls = _init_classifier(head, n_way, feats.shape[1], seed)
    opt = OptimizerConfig(kind="adam", learning_rate=head.fine_tune_lr)
    labels = np.asarray(labels, dtype=np.int64)
    for _ in range(head.fine_tune_iters):
        logits = _classifier_logits(head, cls, Tensor(feats))
        loss = _batch_ce(logits, labels)
        (cg,) = _backward_multi(loss, cls)
        optimizer_step(cls, cg, opt)
    return _classifier_state(head, cls)
