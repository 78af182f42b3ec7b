//! Named configurations shared by the command line, the tests and `configs/`.

use crate::bevnet::ModelConfig;
use crate::geometry::{surround_rig, BevConfig, RigCamera};
use crate::synth::SceneSpec;

/// Full-size BEV: 60 m × 30 m at 0.15 m.
pub fn full_bev() -> BevConfig {
    BevConfig::default()
}

/// Six 96×64 cameras for [`full_bev`].
pub fn full_rig() -> Vec<RigCamera> {
    surround_rig(6, 96, 64, 1.4, 1.6, 0.5, 0.25)
}

/// Desk-scale BEV used for training: 24 m × 12 m at 0.5 m (48×24 cells).
pub fn toy_bev() -> BevConfig {
    BevConfig {
        x_min: -12.0,
        x_max: 12.0,
        y_min: -6.0,
        y_max: 6.0,
        pitch: 0.5,
    }
}

/// Four 48×32 cameras matching [`toy_bev`].
pub fn toy_rig() -> Vec<RigCamera> {
    surround_rig(4, 48, 32, 1.8, 1.6, 0.5, 0.35)
}

pub fn toy_spec() -> SceneSpec {
    SceneSpec::default()
}

pub fn toy_model() -> ModelConfig {
    ModelConfig::default()
}
