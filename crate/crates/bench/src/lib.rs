//! Shared fixtures for the benchmarks.

use dynamo_core::synthetic::{render_sequence, FigureSpec, MotionScript, ScriptParams};
use dynamo_core::SequenceDataset;

/// Rendered synthetic dancer of `frames` frames at `side` x `side` pixels.
pub fn dancer(frames: usize, side: usize) -> SequenceDataset {
    let figure = FigureSpec::default();
    let script = MotionScript::generate(&figure, &ScriptParams { frames, ..ScriptParams::default() })
        .expect("default script parameters are valid");
    render_sequence(&figure, &script, side, side).expect("positive render size")
}
