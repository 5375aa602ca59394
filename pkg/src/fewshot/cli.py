"""Command-line entry point.

Commands: synth, pretrain, metatrain, evaluate, report. A flat JSON config
file may supply any flag value; explicit flags win (with a warning).

Exit codes: 0 success, 2 usage error, 3 data error, 4 numerical divergence.
"""

import argparse
import hashlib
import json
import os
import sys

import numpy as np

from .backbones import BackboneConfig, build_backbone
from .checkpoint import load_backbone, save_backbone
from .episodes import (
    AugmentConfig,
    ShiftConfig,
    load_csv,
    load_image_dataset,
    save_csv,
    synth_task_domain,
)
from .errors import (
    CapacityError,
    ConfigError,
    DivergenceError,
    FewshotError,
    IngestionError,
)
from .evaluation import EvalReport, format_cell, meta_test
from .heads import HEAD_KINDS, HeadKind
from .optim import OptimizerConfig
from .training import TrainSchedule, meta_train, pretrain_baseline

USAGE_ERROR, DATA_ERROR, DIVERGENCE_ERROR = 2, 3, 4


def fingerprint(config):
    """Short stable hash of a resolved config mapping."""
    blob = json.dumps(config, sort_keys=True, default=str)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def _resolve(args, parser):
    """Merge --config file values under explicit flags; flags win."""
    ns = vars(args).copy()
    path = ns.pop("config", None)
    if not path:
        return ns
    try:
        with open(path) as f:
            file_cfg = json.load(f)
    except (OSError, json.JSONDecodeError) as e:
        parser.error(f"cannot read config file {path}: {e}")
    for key, value in file_cfg.items():
        key = key.replace("-", "_")
        if key not in ns:
            parser.error(f"unknown config key {key!r}")
        if ns[key] is None or ns[key] == parser.get_default(key):
            ns[key] = value
        elif ns[key] != value:
            print(f"warning: flag --{key.replace('_', '-')}={ns[key]} overrides "
                  f"config value {value}", file=sys.stderr)
    return ns


def _load_dataset(path, image_size=None):
    if path is None:
        raise ConfigError("a dataset path is required (--source/--target)")
    if os.path.isdir(path):
        return load_image_dataset(path, image_size=image_size)
    if not os.path.exists(path):
        raise IngestionError(f"dataset not found: {path}")
    return load_csv(path)


def _backbone_config(ns, data):
    kind = ns.get("backbone") or "identity"
    sample = np.asarray(data.inputs[0])
    if sample.ndim == 3:
        input_shape = sample.shape
    else:
        input_shape = (sample.ravel().shape[0],)
    hidden = ns.get("hidden") or "32"
    if isinstance(hidden, str):
        hidden = tuple(int(v) for v in hidden.split(",") if v)
    embed_dim = ns.get("embed_dim") or 64
    if kind == "identity":
        embed_dim = input_shape[0]
    return BackboneConfig(kind=kind, input_shape=input_shape, hidden=hidden,
                          embedding_dim=int(embed_dim))


def _out_path(ns, command, fp, ext):
    out = ns.get("out") or "."
    os.makedirs(out, exist_ok=True)
    return os.path.join(out, f"{command}-{fp}.{ext}")


def _public_config(ns):
    return {k: v for k, v in sorted(ns.items()) if k not in ("out", "threads", "func")}


# ------------------------------------------------------------- commands

def cmd_synth(ns):
    cfg = ShiftConfig(
        class_count=ns["classes"],
        samples_per_class=ns["per_class"],
        dim=ns["dim"],
        separation=ns["separation"],
        shift=ns["shift"],
        noise=ns["noise"],
        seed=ns["seed"],
    )
    table = synth_task_domain(cfg)
    out = ns.get("out") or "."
    if out.endswith(".csv"):
        path = out
    else:
        path = _out_path(ns, "synth", fingerprint(_public_config(ns)), "csv")
    save_csv(table, path)
    print(path)
    return 0


def _optimizer_from(ns, default_kind):
    return OptimizerConfig(kind=ns.get("optimizer") or default_kind,
                           learning_rate=ns.get("lr") or 1e-3)


def cmd_pretrain(ns):
    data = _load_dataset(ns["source"], ns.get("image_size"))
    head = HeadKind(kind=ns["head"] or "baseline")
    bb_cfg = _backbone_config(ns, data)
    backbone = build_backbone(bb_cfg, ns["seed"])
    schedule = TrainSchedule(
        phase="pretrain",
        epochs=ns["epochs"],
        batch_size=ns["batch_size"],
        optimizer=_optimizer_from(ns, "radam"),
        seed=ns["seed"],
        augment=AugmentConfig(horizontal_flip=ns["flip"], color_jitter=ns["jitter"]),
    )
    backbone, state, log = pretrain_baseline(backbone, head, data, schedule)
    fp = fingerprint(_public_config(ns))
    ckpt = _out_path(ns, "pretrain", fp, "json")
    save_backbone(backbone, ckpt, meta={"command": "pretrain", "fingerprint": fp,
                                        "head": head.kind})
    log.to_csv(_out_path(ns, "pretrain-log", fp, "csv"))
    print(ckpt)
    return 0


def cmd_metatrain(ns):
    data = _load_dataset(ns["source"], ns.get("image_size"))
    head = HeadKind(kind=ns["head"] or "proto")
    bb_cfg = _backbone_config(ns, data)
    backbone = build_backbone(bb_cfg, ns["seed"])
    schedule = TrainSchedule(
        phase="meta_train",
        episodes=ns["episodes"],
        optimizer=_optimizer_from(ns, "adam"),
        seed=ns["seed"],
        augment=AugmentConfig(horizontal_flip=ns["flip"], color_jitter=ns["jitter"]),
    )
    backbone, rel, log = meta_train(head, backbone, data, ns["n_way"], ns["k_shot"],
                                    ns["n_query"], schedule)
    fp = fingerprint(_public_config(ns))
    ckpt = _out_path(ns, "metatrain", fp, "json")
    save_backbone(backbone, ckpt, extra_params=rel,
                  meta={"command": "metatrain", "fingerprint": fp, "head": head.kind})
    log.to_csv(_out_path(ns, "metatrain-log", fp, "csv"))
    print(ckpt)
    return 0


def cmd_evaluate(ns):
    data = _load_dataset(ns["target"], ns.get("image_size"))
    head = HeadKind(kind=ns["head"] or "proto")
    rel = None
    if ns.get("checkpoint"):
        backbone, rel, _ = load_backbone(ns["checkpoint"])
    else:
        backbone = build_backbone(_backbone_config(ns, data), ns["seed"])
    fp = fingerprint(_public_config(ns))
    report = meta_test(
        backbone, head, data, ns["n_way"], ns["k_shot"], ns["n_query"],
        ns["episodes"], ns["seed"], relation_params=rel,
        threads=ns.get("threads") or 1,
        config=_public_config(ns), fingerprint=fp,
    )
    path = _out_path(ns, "evaluate", fp, "json")
    with open(path, "w") as f:
        f.write(report.to_json())
    report.confusion_csv(_out_path(ns, "evaluate-confusion", fp, "csv"))
    print(f"{head.kind} {ns['n_way']}-way {ns['k_shot']}-shot: "
          f"{format_cell(report.mean_accuracy, report.ci95_half_width)}")
    print(path)
    return 0


def render_table(reports):
    """Rows per head kind, columns per shot count; cells 'xx.xx% ± y.yy%'.

    Returns (text, csv_text).
    """
    shots = sorted({r.config.get("k_shot", 0) for r in reports})
    rows = {}
    for r in reports:
        head = r.config.get("head", "?")
        rows.setdefault(head, {})[r.config.get("k_shot", 0)] = format_cell(
            r.mean_accuracy, r.ci95_half_width
        )
    header = ["Method"] + [f"{k}-shot" for k in shots]
    widths = [max(len(header[0]), *(len(h) for h in rows))] + [16] * len(shots)
    lines = ["  ".join(h.ljust(w) for h, w in zip(header, widths))]
    csv_lines = [",".join(header)]
    for head in sorted(rows):
        cells = [rows[head].get(k, "-") for k in shots]
        lines.append("  ".join(c.ljust(w) for c, w in zip([head] + cells, widths)))
        csv_lines.append(",".join([head] + cells))
    return "\n".join(lines) + "\n", "\n".join(csv_lines) + "\n"


def cmd_report(ns):
    reports = []
    for path in ns["inputs"]:
        with open(path) as f:
            reports.append(EvalReport.from_doc(json.load(f)))
    if not reports:
        raise ConfigError("report requires at least one EvalReport JSON")
    text, csv_text = render_table(reports)
    fp = fingerprint({"inputs": [r.fingerprint for r in reports]})
    with open(_out_path(ns, "report", fp, "txt"), "w") as f:
        f.write(text)
    with open(_out_path(ns, "report", fp, "csv"), "w") as f:
        f.write(csv_text)
    print(text, end="")
    return 0


# ---------------------------------------------------------------- parser

def build_parser():
    parser = argparse.ArgumentParser(prog="fewshot",
                                     description="Episodic few-shot classification engine")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="flat JSON config file; flags override")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--out", help="output directory")

    p = sub.add_parser("synth", help="generate a synthetic vector dataset (CSV)")
    common(p)
    p.add_argument("--classes", type=int, default=10)
    p.add_argument("--per-class", type=int, default=30)
    p.add_argument("--dim", type=int, default=8)
    p.add_argument("--separation", type=float, default=10.0)
    p.add_argument("--shift", type=float, default=0.0)
    p.add_argument("--noise", type=float, default=0.1)
    p.set_defaults(func=cmd_synth)

    def train_common(p):
        common(p)
        p.add_argument("--head", choices=HEAD_KINDS)
        p.add_argument("--backbone", choices=("identity", "mlp", "conv"), default="identity")
        p.add_argument("--hidden", default="32", help="mlp widths, comma separated")
        p.add_argument("--embed-dim", type=int, default=64)
        p.add_argument("--image-size", type=int)
        p.add_argument("--lr", type=float, default=1e-3)
        p.add_argument("--optimizer", choices=("adam", "radam", "sgd"))
        p.add_argument("--flip", action="store_true", help="horizontal flip augmentation")
        p.add_argument("--jitter", type=float, default=0.0, help="color jitter strength")

    p = sub.add_parser("pretrain", help="supervised pre-training of a backbone")
    train_common(p)
    p.add_argument("--source")
    p.add_argument("--epochs", type=int, default=10)
    p.add_argument("--batch-size", type=int, default=8)
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("metatrain", help="episodic meta-training")
    train_common(p)
    p.add_argument("--source")
    p.add_argument("--n-way", type=int, default=5)
    p.add_argument("--k-shot", type=int, default=5)
    p.add_argument("--n-query", type=int, default=8)
    p.add_argument("--episodes", type=int, default=2000)
    p.set_defaults(func=cmd_metatrain)

    p = sub.add_parser("evaluate", help="meta-test on a target dataset")
    train_common(p)
    p.add_argument("--target")
    p.add_argument("--checkpoint", help="backbone checkpoint from pretrain/metatrain")
    p.add_argument("--n-way", type=int, default=5)
    p.add_argument("--k-shot", type=int, default=1)
    p.add_argument("--n-query", type=int, default=8)
    p.add_argument("--episodes", type=int, default=600)
    p.add_argument("--threads", type=int, default=1)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("report", help="render EvalReport JSONs as a table")
    common(p)
    p.add_argument("inputs", nargs="+", help="EvalReport JSON files")
    p.set_defaults(func=cmd_report)

    return parser


REQUIRED_KEYS = {"pretrain": ("source",), "metatrain": ("source",), "evaluate": ("target",)}


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    ns = _resolve(args, parser)
    for key in REQUIRED_KEYS.get(ns.get("command"), ()):
        if not ns.get(key):
            parser.error(f"the following arguments are required: --{key}")
    try:
        return ns["func"](ns)
    except (CapacityError, ConfigError, IngestionError, FileNotFoundError) as e:
        print(f"error: {e}", file=sys.stderr)
        return DATA_ERROR
    except DivergenceError as e:
        print(f"error: {e}", file=sys.stderr)
        return DIVERGENCE_ERROR
    except FewshotError as e:
        print(f"error: {e}", file=sys.stderr)
        return DATA_ERROR


if __name__ == "__main__":
    sys.exit(main())
