"""Target assignment, losses, decoding and evaluation for hotspot-based anchor-free LiDAR detection."""
from .assignment import (AssignmentMap, Encoding, GroundTruth, build_assignment, find_spots,
                         max_hotspots, select_hotspots, spatial_relation_label)
from .codec import (BoxTargets, HeadOutput, SoftArgminSpec, decode_box, encode_box, softargmin,
                    softargmin_grad)
from .evaluator import EvalConfig, ap40, match, recall_by_points
from .geometry import Box3D, box_corners_bev, local_frame, point_in_box_bev, point_in_box_3d, rotated_iou_bev
from .inference import Detection, InferenceConfig, extract_candidates, rotated_nms
from .loss import (FocalParams, LossWeights, classification_loss, focal_loss, quadrant_loss,
                   regression_loss, smooth_l1, total_loss)
from .voxelizer import GridConfig, OccupancyGrid, VoxelGrid, bev_occupancy, cell_center, voxelize

__version__ = "0.1.0"

__all__ = [
    "AssignmentMap",
    "Box3D",
    "BoxTargets",
    "Detection",
    "Encoding",
    "EvalConfig",
    "FocalParams",
    "GridConfig",
    "GroundTruth",
    "HeadOutput",
    "InferenceConfig",
    "LossWeights",
    "OccupancyGrid",
    "SoftArgminSpec",
    "VoxelGrid",
    "ap40",
    "bev_occupancy",
    "box_corners_bev",
    "build_assignment",
    "cell_center",
    "classification_loss",
    "decode_box",
    "encode_box",
    "extract_candidates",
    "find_spots",
    "focal_loss",
    "local_frame",
    "match",
    "max_hotspots",
    "point_in_box_3d",
    "point_in_box_bev",
    "quadrant_loss",
    "recall_by_points",
    "regression_loss",
    "rotated_iou_bev",
    "rotated_nms",
    "select_hotspots",
    "smooth_l1",
    "softargmin",
    "softargmin_grad",
    "spatial_relation_label",
    "total_loss",
    "voxelize",
]
