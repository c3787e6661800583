"""Attention-based encoder-decoder with Past and Future recurrent layers."""

from .cells import FutureCellKind
from .decoder import PRESETS, ModelConfig, preset
from .model import ModelParams, init_params

__all__ = ["FutureCellKind", "ModelConfig", "ModelParams", "PRESETS", "init_params", "preset"]
