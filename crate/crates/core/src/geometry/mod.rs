//! Cameras, BEV rasters and the warps between them.

pub mod bev;
pub mod camera;
pub mod warp;

pub use bev::BevConfig;
pub use camera::{
    ipm_pixel_to_ground, parse_rig, project_ego_to_pixel, rig_to_json, surround_rig, CameraModel, PixelProjection,
    RigCamera,
};
pub use warp::{
    camera_frame_to_bev, fuse_cameras, ipm_plan, ipm_warp_grid, planar_plan, GroundPose, Interp, MaskedGrid,
    SamplePlan,
};
