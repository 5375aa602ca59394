"""Episodic few-shot classification engine with cross-domain evaluation."""

from .backbones import Backbone, BackboneConfig, build_backbone, embed
from .episodes import (
    DatasetTable,
    Episode,
    ShiftConfig,
    sample_episode,
    split_base_novel,
    synth_task_domain,
)
from .evaluation import EvalReport, confidence_half_width, confusion_and_precision, meta_test
from .heads import HeadKind, HeadState, SupportSet
from .optim import OptimizerConfig, ParamSet
from .tensor import Tensor
from .training import TrainSchedule, fine_tune, meta_train, pretrain_baseline

__version__ = "0.1.0"
