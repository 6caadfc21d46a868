"""
Copyright (c) tsarmvs contributors.

This source code is licensed under the MIT license found in the
LICENSE file in the root directory of this source tree.
"""

__version__ = "0.1.0"
__license__ = "MIT"

from .evaluate import (
    Metrics,
    cloud_metrics,
    depth_error_stats,
    relative_depth_accuracy,
)
from .fusion import FusionParams, PointCloud, check_consistency, fuse
from .geom import (
    CameraIntrinsics,
    CameraPose,
    CameraView,
    PlaneHypothesis,
    plane_homography,
    project,
    unproject,
)
from .icrefine import (
    RefineConfig,
    RegionLabelMap,
    ransac_plane,
    refine,
    superpixels,
)
from .jhfilter import FilterConfig, ScoreMap, joint_filter
from .pipeline import PipelineConfig, parse_config, run_pipeline
from .pmstereo import (
    HypothesisMap,
    PatchMatchConfig,
    PixelState,
    bilateral_ncc_cost,
    checkerboard_iterate,
    multiview_cost,
    random_init,
    run_patchmatch,
)
from .texseg import (
    SegConfig,
    hough_lines,
    planarize_textureless,
    roberts_edges,
    segment_textureless,
)
