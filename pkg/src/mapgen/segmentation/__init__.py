"""Point-set and image foreground segmentation."""
from .loss import crop_pixels, foreground_filter, foreground_probability, pixel_labels, seg_loss
from .nets import (
    ImageSegNet,
    PointSegNet,
    adaptive_avg_pool,
    frustum_angle,
    point_inputs,
    rotate_z,
    segment_image,
    segment_points,
)
