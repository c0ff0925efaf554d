"""Prediction network: hourglass encoder, RoI pooling, interaction networks, decoders."""

from .encoder import Encoder, EncoderConfig, Hourglass, ResBlock
from .interaction import InteractionNetwork, ObjectFeatureSet, cin_step, in_step
from .roi import roi_align, roi_feature, roi_points
from .rpin import (MASK_SIZE, RPIN, MLPHead, ModelConfig, TrajectoryPrediction, decode_box, decode_mask,
                   rollout_model)

__all__ = [
    "Encoder", "EncoderConfig", "Hourglass", "ResBlock", "InteractionNetwork", "ObjectFeatureSet", "cin_step",
    "in_step", "roi_align", "roi_feature", "roi_points", "RPIN", "ModelConfig", "MLPHead",
    "TrajectoryPrediction", "decode_box", "decode_mask", "rollout_model", "MASK_SIZE",
]
