from .boxes import Box2D, Box3D, box_corners, points_in_box, wrap_angle, yaw_rotation
from .calib import Calibration, backproject, project_points
from .diou import bev_corners, diou_loss, iou3d_tensor, overlap_area
from .frustum import (
    FrustumCloud,
    crop_to_image,
    extract_frustum,
    image_to_crop,
    nearest_pixel,
    sample_rgb,
    to_crop,
)
from .iou import bev_intersection_area, bev_iou, bev_iou_many, iou3d, iou3d_many, z_overlap
