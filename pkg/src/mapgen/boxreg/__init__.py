"""3D box regression on enriched clouds."""
from .regressor import (
    BOX_FRAMES,
    CAR_PRIORS,
    BoxRegressor,
    EnrichedCloud,
    box_loss,
    cloud_frame,
    collate_clouds,
    enrich_cloud,
    params_to_box,
    regress_box,
    regressor_inputs,
)
