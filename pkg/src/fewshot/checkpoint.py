"""Versioned JSON checkpoints for backbones and head parameters.

Values are stored as Python floats; float repr round-trips 64-bit doubles
exactly, so write/read is lossless.
"""

import json
from dataclasses import asdict

import numpy as np

from .backbones import Backbone, BackboneConfig
from .errors import ConfigError
from .optim import ParamSet

FORMAT_VERSION = 1


def _params_to_doc(params):
    return {
        name: {"shape": list(p.data.shape), "values": p.data.ravel().tolist()}
        for name, p in params.params.items()
    }


def _params_from_doc(doc):
    params = ParamSet()
    for name, entry in doc.items():
        arr = np.array(entry["values"], dtype=np.float64).reshape(entry["shape"])
        params.add(name, arr)
    return params


def save_backbone(backbone, path, extra_params=None, meta=None):
    doc = {
        "version": FORMAT_VERSION,
        "backbone_config": asdict(backbone.config),
        "params": _params_to_doc(backbone.params),
    }
    if extra_params is not None:
        doc["extra_params"] = _params_to_doc(extra_params)
    if meta:
        doc["meta"] = meta
    with open(path, "w") as f:
        json.dump(doc, f)


def load_backbone(path):
    """Returns (backbone, extra ParamSet or None, meta dict)."""
    with open(path) as f:
        doc = json.load(f)
    if doc.get("version") != FORMAT_VERSION:
        raise ConfigError(f"unsupported checkpoint version {doc.get('version')!r}")
    cfg_doc = doc["backbone_config"]
    cfg = BackboneConfig(
        kind=cfg_doc["kind"],
        input_shape=tuple(cfg_doc["input_shape"]),
        hidden=tuple(cfg_doc["hidden"]),
        channels=tuple(cfg_doc["channels"]),
        embedding_dim=cfg_doc["embedding_dim"],
    )
    backbone = Backbone(cfg, _params_from_doc(doc["params"]))
    extra = _params_from_doc(doc["extra_params"]) if "extra_params" in doc else None
    return backbone, extra, doc.get("meta", {})
