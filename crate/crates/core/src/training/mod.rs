//! Split protocol, optimization loop and sequence synthesis.

mod ablation;
mod config;
mod split;
mod synthesize;
mod trainer;

pub use ablation::{ablate_windows, predict_split, WindowResult};
pub use config::TrainConfig;
pub use split::{split_counts, split_dataset, MIN_SPLIT_FRAMES};
pub use synthesize::{synthesize_frames, synthesize_sequence, MotionMode};
pub use trainer::{mean_l1, train, write_log, LogRow, TrainData, TrainReport, Trainer};
