use rand::Rng;

use crate::error::{Error, Result};

/// One labeled skeleton clip: `T` frames of `N` joints in camera space.
#[derive(Debug, Clone, PartialEq)]
pub struct SkeletonSequence {
    pub frames: Vec<Vec<[f64; 3]>>,
    pub label: usize,
    pub subject: u32,
    pub camera: u32,
    pub source: String,
}

impl SkeletonSequence {
    pub fn new(frames: Vec<Vec<[f64; 3]>>, label: usize) -> Result<Self> {
        let seq = SkeletonSequence {
            frames,
            label,
            subject: 0,
            camera: 0,
            source: String::new(),
        };
        seq.validate(None)?;
        Ok(seq)
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn joints(&self) -> usize {
        self.frames.first().map_or(0, Vec::len)
    }

    /// Checks `T >= 1`, a uniform joint count (equal to `joints` when
    /// given) and finite coordinates.
    pub fn validate(&self, joints: Option<usize>) -> Result<()> {
        if self.frames.is_empty() {
            return Err(Error::Data("sequence has no frames".into()));
        }
        let n = joints.unwrap_or_else(|| self.joints());
        for (t, f) in self.frames.iter().enumerate() {
            if f.len() != n {
                return Err(Error::Data(format!(
                    "frame {t} has {} joints, expected {n}",
                    f.len()
                )));
            }
            if f.iter().flatten().any(|v| !v.is_finite()) {
                return Err(Error::Data(format!("frame {t} has a non-finite coordinate")));
            }
        }
        Ok(())
    }

    /// Translates every frame so `root` of the first frame is the origin.
    pub fn center_on(&mut self, root: usize) {
        let Some(origin) = self.frames.first().map(|f| f[root]) else {
            return;
        };
        for joint in self.frames.iter_mut().flatten() {
            for (c, o) in joint.iter_mut().zip(origin) {
                *c -= o;
            }
        }
    }

    /// Sum over joints and consecutive frames of the Euclidean displacement.
    pub fn total_displacement(&self) -> f64 {
        self.frames
            .windows(2)
            .map(|w| {
                w[0].iter()
                    .zip(&w[1])
                    .map(|(a, b)| {
                        let d: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
                        d.sqrt()
                    })
                    .sum::<f64>()
            })
            .sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SampleMode {
    Train,
    Eval,
}

/// Resamples `seq` to exactly `target` frames.
///
/// Frames are taken at a uniform stride `floor(T / target)`. Training draws
/// a random start offset within the slack; evaluation starts at frame 0.
/// Sequences shorter than `target` are extended by repeating the last frame.
pub fn sample_fixed_length<R: Rng>(
    seq: &SkeletonSequence,
    target: usize,
    mode: SampleMode,
    rng: &mut R,
) -> Result<SkeletonSequence> {
    if target == 0 {
        return Err(Error::config("T", "target length must be at least 1"));
    }
    let len = seq.frames.len();
    if len == 0 {
        return Err(Error::Data("cannot sample an empty sequence".into()));
    }
    let frames = if len <= target {
        let mut f = seq.frames.clone();
        let last = f[len - 1].clone();
        f.resize(target, last);
        f
    } else {
        let stride = len / target;
        let span = (target - 1) * stride + 1;
        let slack = len - span;
        let start = match mode {
            SampleMode::Train if slack > 0 => rng.gen_range(0..=slack),
            _ => 0,
        };
        (0..target)
            .map(|i| seq.frames[start + i * stride].clone())
            .collect()
    };
    Ok(SkeletonSequence {
        frames,
        ..seq.clone()
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn indexed(len: usize) -> SkeletonSequence {
        let frames = (0..len).map(|t| vec![[t as f64, 0.0, 0.0]]).collect();
        SkeletonSequence::new(frames, 0).unwrap()
    }

    fn picked(s: &SkeletonSequence) -> Vec<usize> {
        s.frames.iter().map(|f| f[0][0] as usize).collect()
    }

    #[test]
    fn eval_sampling() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let s = indexed(10);
        let same = sample_fixed_length(&s, 10, SampleMode::Eval, &mut rng).unwrap();
        assert_eq!(same, s);
        let half = sample_fixed_length(&s, 5, SampleMode::Eval, &mut rng).unwrap();
        assert_eq!(picked(&half), vec![0, 2, 4, 6, 8]);
    }

    #[test]
    fn short_sequences_repeat_last_frame() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let s = sample_fixed_length(&indexed(3), 6, SampleMode::Train, &mut rng).unwrap();
        assert_eq!(picked(&s), vec![0, 1, 2, 2, 2, 2]);
    }

    #[test]
    fn zero_target_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(sample_fixed_length(&indexed(3), 0, SampleMode::Eval, &mut rng).is_err());
    }

    #[test]
    fn train_offsets_stay_in_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let s = sample_fixed_length(&indexed(11), 5, SampleMode::Train, &mut rng).unwrap();
            let p = picked(&s);
            assert_eq!(p.len(), 5);
            assert!(p.windows(2).all(|w| w[1] - w[0] == 2));
            assert!(p[4] <= 10);
        }
    }

    proptest::proptest! {
        #[test]
        fn always_exact_length(len in 1usize..60, target in 1usize..60, train: bool, seed: u64) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mode = if train { SampleMode::Train } else { SampleMode::Eval };
            let s = sample_fixed_length(&indexed(len), target, mode, &mut rng).unwrap();
            proptest::prop_assert_eq!(s.len(), target);
        }
    }

    #[test]
    fn centering() {
        let mut s = SkeletonSequence::new(
            vec![vec![[1.0, 2.0, 3.0], [2.0, 2.0, 2.0]], vec![[1.5, 2.0, 3.0], [0.0; 3]]],
            0,
        )
        .unwrap();
        s.center_on(0);
        assert_eq!(s.frames[0][0], [0.0; 3]);
        assert_eq!(s.frames[1][0], [0.5, 0.0, 0.0]);
    }
}
