"""viewfuse: clutter removal from posed RGB-D sequences with view-consistent
inpainting and fusion."""

from .consistency import (
    ConsistencyConfig,
    RegionLabeling,
    label_regions,
    prune_cross_frame,
    prune_single_pixel,
    prune_single_region,
    run_consistency,
    vote_cross_frame,
)
from .geometry import (
    CameraModel,
    DepthMap,
    WarpResult,
    look_at_pose,
    project,
    unproject,
    warp_all_pairs,
    warp_depth,
)
from .inpaint import BackendSpec, InpaintRequest, complete_depth, inpaint_color, synth_training_masks
from .loss import LossConfig, PredictionSet, area_sensitive_ce, combined_loss, instance_weight
from .masks import ProjectionConfig, dilate_mask, mask_frame, project_masks
from .metrics import chamfer, image_metrics, mask_metrics, sample_mesh_points
from .refine import FusedCloud, RefineConfig, RefineOutput, fuse, refine, tsdf_fuse
from .scene import (
    Frame,
    InpaintState,
    LabeledMesh,
    SceneBundle,
    instance_stats,
    load_bundle,
    save_bundle,
)
from .synth import CorruptionSpec, SceneSpec, carve_holes, corrupting_depth_backend, generate

__version__ = "0.1.0"
