//! Procedural articulated dancer with a spring-driven skirt.
//!
//! Frames come with exact keypoints and a body-only dense-UV map. The skirt
//! is not part of the pose input, so its shape can only be inferred from the
//! recent motion; this is what makes motion conditioning measurable.

mod corrupt;
mod figure;
mod garment;
mod render;
mod script;

pub use corrupt::{corrupt_pose_inputs, corrupt_poses, CorruptionConfig};
pub use figure::{FigureSpec, GarmentSpec, JointSpec, Texture};
pub use garment::{polygon_centroid, simulate_garment, GarmentState};
pub use render::{render_annotated, render_body_uv, render_sequence, RenderedSequence};
pub use script::{FramePose, MotionScript, ScriptParams};
