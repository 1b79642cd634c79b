//! Sequence ingestion, image formats and the synthetic scene oracle.

mod images;
mod manifest;
mod synthetic;
mod tum;

pub use images::{
    depth_from_raw, depth_to_raw, load_depth_png, load_mask_png, load_rgb, read_f32_grid, save_depth_png,
    save_mask_png, save_probability_png, save_rgb, write_f32_grid, Depth16, DEFAULT_DEPTH_SCALE,
};
pub use manifest::{ManifestFrame, SequenceManifest, TumPose};
pub use synthetic::{
    parse_scene, read_scene, render_synthetic_sequence, scene_to_text, CameraPath, Face, MovingBox, Room, SceneBox,
    ShadowDecal, SyntheticScene, SyntheticSequence,
};
pub use tum::{
    load_tum_sequence, parse_index, read_index, AssociationReport, IndexEntry, TumOptions, DEFAULT_MAX_TIME_GAP,
};
