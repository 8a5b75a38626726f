"""Interactive video object segmentation with round-based memory aggregation."""

from .core import (
    FrameSequence, LabelMask, ScalarMap, ScribbleSet, ScribbleStroke,
)
from .embedding import EmbeddingField, FeatureEncoder, FileEmbeddingProvider, pixel_distance
from .evaluation import VideoSample, auc, generate_synthetic_video, j_at_budget, jaccard
from .matching import MatchConfig, PixelSet, augmented_map, global_map, local_map
from .memory import ForgettingConfig, GlobalMapMemory, LocalMapMemory
from .session import Pipeline, RoundResult, Session, SessionConfig, apply_rough_roi

__version__ = "0.1.0"

__all__ = [
    "EmbeddingField", "FeatureEncoder", "FileEmbeddingProvider", "ForgettingConfig",
    "FrameSequence", "GlobalMapMemory", "LabelMask", "LocalMapMemory", "MatchConfig",
    "Pipeline", "PixelSet", "RoundResult", "ScalarMap", "ScribbleSet",
    "ScribbleStroke", "Session", "SessionConfig", "VideoSample", "apply_rough_roi",
    "auc", "augmented_map", "generate_synthetic_video", "global_map", "j_at_budget",
    "jaccard", "local_map", "pixel_distance",
]
