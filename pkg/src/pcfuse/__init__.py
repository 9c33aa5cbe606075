"""pcfuse: point-cloud geometry and LiDAR/pseudo-cloud fusion toolkit."""

from .boxes import (
    OrientedBox3D,
    RoiGrid,
    RoiGridFeatures,
    bev_intersection_area,
    bev_overlaps,
    build_roi_grid,
    points_in_box,
    pool_roi_features,
)
from .geometry import (
    Calibration,
    cloud_to_sparse_depth,
    depth_to_pseudo_cloud,
    image_to_lidar,
    lidar_to_image,
)
from .kernels import NUMBA_ENABLED, active_backend
from .neighbors import PixelBucketIndex, build_pixel_index, neighbor_search, neighbor_search_batch
from .pointconv import (
    CpconvParams,
    cpconv_forward,
    cpconv_stack,
    initial_point_features,
    position_residuals,
)
from .fusion import FusedRoiFeatures, GafParams, gaf_fuse, grid_concat_fuse, roi_concat_fuse

__version__ = "0.1.0"
