"""Multimodal attention point generation."""
from .attention import FUSION, POS_EMB, AttentionLayer, PointGenerator, sinusoid_embedding
from .sequence import (
    COORD_SCALE,
    Frame,
    MaskedSample,
    PointSequence,
    build_sequence,
    collate,
    decode_targets,
    mask_and_recover_loss,
    mask_sample,
    sample_targets,
    subsample_rows,
)
