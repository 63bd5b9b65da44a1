"""Pseudo 3D box labels from 2D boxes, images and LiDAR."""

__version__ = "0.1.0"
