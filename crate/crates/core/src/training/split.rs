use crate::data::{SequenceDataset, SplitCounts};
use crate::error::{Error, Result};

/// Shortest sequence the split protocol accepts.
pub const MIN_SPLIT_FRAMES: usize = 40;

/// Train / gap / test counts: the first 85% (floored), the next 5%
/// (floored), and the remainder.
pub fn split_counts(n: usize) -> Result<SplitCounts> {
    if n < MIN_SPLIT_FRAMES {
        return Err(Error::config(format!(
            "sequence of {n} frames is too short to split (need {MIN_SPLIT_FRAMES})"
        )));
    }
    let train = n * 85 / 100;
    let gap = n * 5 / 100;
    Ok(SplitCounts {
        train,
        gap,
        test: n - train - gap,
    })
}

/// Tags frames train, gap and test in temporal order.
pub fn split_dataset(seq: &SequenceDataset) -> Result<SequenceDataset> {
    seq.clone().with_split(split_counts(seq.len())?)
}
