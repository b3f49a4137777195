//! Skeleton sequences, fixed-length sampling, file formats and the
//! synthetic action generator.

mod container;
mod ntu;
mod sequence;
mod synth;

pub use container::Dataset;
pub use ntu::{parse_ntu_skeleton, parse_ntu_text, write_ntu_text, NtuBody, NtuFileName, NtuRecording, NTU_JOINTS};
pub use sequence::{sample_fixed_length, SampleMode, SkeletonSequence};
pub use synth::{
    generate_synthetic, portable_cos, portable_sin, ClassMotion, JointMotion, SyntheticActionSpec,
};
