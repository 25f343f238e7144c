//! Domain types and signature construction.

mod dataset;
mod keypoints;
mod raster;
mod signature;

pub use dataset::{
    load_dataset, save_dataset, validate_dataset_dir, DatasetMeta, FrameRecord, SequenceDataset,
    SplitCounts, SplitTag,
};
pub use keypoints::{body, Keypoint, KeypointSet};
pub use raster::{rasterize_keypoints, RasterStyle};
pub use signature::{
    backward_motion_signature, backward_signature_from_track, build_motion_signature, build_pose_signature,
    frozen_motion_signature, motion_signature_from_track, motion_window, BoundaryPolicy, DenseUVMap,
    MotionSignature, PoseSignature, window_preset, DEFAULT_OFFSETS, POSE_CHANNELS, WINDOW_PRESETS,
};
