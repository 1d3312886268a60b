"""Deterministic float64 network pieces: params, encoder, losses, optimizers."""

from .gradcheck import GradCheckReport, finite_diff_check
from .losses import (
    InfeasibleTargetError,
    ce_loss,
    contrastive_loss,
    ctc_greedy_decode,
    ctc_loss,
    log_softmax,
    log_softmax_backward,
    masked_recon_loss,
    min_ctc_frames,
)
from .model import EncoderModel, ModelConfig, layer_groups
from .optim import OPTIMIZERS, AdamState, LRSchedule, SGDState, adam_step, lr_at, sgd_step
from .params import ConfigurationError, NumericalError, Param, ParamStore

__all__ = [
    "AdamState", "ConfigurationError", "EncoderModel", "GradCheckReport", "InfeasibleTargetError",
    "LRSchedule", "ModelConfig", "NumericalError", "OPTIMIZERS", "Param", "ParamStore", "SGDState",
    "adam_step", "ce_loss", "contrastive_loss", "ctc_greedy_decode", "ctc_loss", "finite_diff_check",
    "layer_groups", "log_softmax", "log_softmax_backward", "lr_at", "masked_recon_loss",
    "min_ctc_frames", "sgd_step",
]
