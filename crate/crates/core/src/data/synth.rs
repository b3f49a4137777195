//! Seeded generator of oscillating-limb actions on the 15-joint body.
//!
//! The generator only uses IEEE basic arithmetic (its sine is a fixed
//! polynomial), so a seed yields the same coordinates bit for bit on every
//! platform.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Dataset, SkeletonSequence};
use crate::graph::Layout;

/// One joint held at an offset from the rest pose and oscillating along an
/// axis.
#[derive(Debug, Clone, PartialEq)]
pub struct JointMotion {
    pub joint: usize,
    /// Static displacement from the rest pose, meters.
    pub offset: [f64; 3],
    pub axis: [f64; 3],
    /// Peak displacement in meters.
    pub amplitude: f64,
    /// Full cycles over the clip.
    pub frequency: f64,
    /// Phase offset in radians, relative to the sample's random phase.
    pub phase: f64,
}

/// An action and the ways it can be performed. Each sample picks one
/// performer uniformly, e.g. the same wave with the left or the right arm.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassMotion {
    pub name: String,
    pub performers: Vec<Vec<JointMotion>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticActionSpec {
    pub classes: Vec<ClassMotion>,
    /// Standard deviation of per-coordinate Gaussian noise, meters.
    pub noise_std: f64,
    /// Inclusive range of clip lengths.
    pub frames: (usize, usize),
    /// Amplitudes are scaled by a factor drawn from this range per sample.
    pub amplitude_range: (f64, f64),
    /// Body size factor range.
    pub scale_range: (f64, f64),
    /// Maximum rotation about the vertical axis, radians.
    pub max_yaw: f64,
    /// Amplitude of one random distractor oscillation per sample.
    pub distractor_amplitude: f64,
}

fn rest_pose() -> [[f64; 3]; 15] {
    [
        [0.0, 0.0, 0.0],     // torso
        [0.0, 0.45, 0.0],    // neck
        [0.0, 0.65, 0.0],    // head
        [-0.2, 0.42, 0.0],   // left shoulder
        [-0.24, 0.14, 0.0],  // left elbow
        [-0.26, -0.12, 0.0], // left hand
        [0.2, 0.42, 0.0],    // right shoulder
        [0.24, 0.14, 0.0],   // right elbow
        [0.26, -0.12, 0.0],  // right hand
        [-0.1, -0.12, 0.0],  // left hip
        [-0.11, -0.52, 0.0], // left knee
        [-0.11, -0.92, 0.0], // left foot
        [0.1, -0.12, 0.0],   // right hip
        [0.11, -0.52, 0.0],  // right knee
        [0.11, -0.92, 0.0],  // right foot
    ]
}

const X: [f64; 3] = [1.0, 0.0, 0.0];
const Y: [f64; 3] = [0.0, 1.0, 0.0];
const Z: [f64; 3] = [0.0, 0.0, 1.0];

fn limb(joints: &[usize], offset: [f64; 3], axis: [f64; 3], amplitude: f64, frequency: f64) -> Vec<JointMotion> {
    joints
        .iter()
        .enumerate()
        .map(|(k, &joint)| {
            // Distal joints move further.
            let reach = (k + 1) as f64 / joints.len() as f64;
            JointMotion {
                joint,
                offset: offset.map(|o| o * reach),
                axis,
                amplitude: amplitude * reach,
                frequency,
                phase: 0.0,
            }
        })
        .collect()
}

fn catalog() -> Vec<ClassMotion> {
    let class = |name: &str, performers: Vec<Vec<JointMotion>>| ClassMotion {
        name: name.to_string(),
        performers,
    };
    let arms = [[4, 5], [7, 8]];
    let legs = [[10, 11], [13, 14]];
    let either = |limbs: &[[usize; 2]; 2], offset, axis, amplitude, frequency| {
        limbs
            .iter()
            .map(|l| limb(l, offset, axis, amplitude, frequency))
            .collect::<Vec<_>>()
    };
    let raise = [0.0, 0.45, 0.0];
    let forward = [0.0, 0.0, -0.3];
    let anti_phase = |mut m: Vec<JointMotion>| {
        m.iter_mut().for_each(|j| j.phase = std::f64::consts::PI);
        m
    };
    vec![
        class("wave", either(&arms, raise, X, 0.12, 2.0)),
        // Same joints, amplitude and tempo as a wave: the arm is held lower
        // and further forward and swings front to back.
        class("swing", either(&arms, [0.0, 0.3, -0.2], Z, 0.12, 2.0)),
        class(
            "clap",
            vec![[limb(&arms[0], forward, X, 0.1, 3.0), limb(&arms[1], forward, X, -0.1, 3.0)].concat()],
        ),
        class("kick", either(&legs, forward, Z, 0.15, 1.5)),
        class("nod", vec![limb(&[2], [0.0; 3], Z, 0.05, 3.0)]),
        class(
            "march",
            vec![[limb(&legs[0], [0.0; 3], Y, 0.1, 2.0), anti_phase(limb(&legs[1], [0.0; 3], Y, 0.1, 2.0))].concat()],
        ),
        class("lift", either(&arms, [0.0, 0.2, -0.1], Y, 0.1, 1.5)),
        class("stomp", either(&legs, [0.0, 0.15, 0.0], Y, 0.08, 2.5)),
    ]
}

impl SyntheticActionSpec {
    /// The first `classes` actions of the built-in catalog (at most 8).
    pub fn standard(classes: usize) -> Self {
        let mut all = catalog();
        all.truncate(classes.clamp(1, 8));
        SyntheticActionSpec {
            classes: all,
            noise_std: 0.01,
            frames: (40, 60),
            amplitude_range: (0.6, 1.4),
            scale_range: (0.85, 1.15),
            max_yaw: 0.5,
            distractor_amplitude: 0.05,
        }
    }

    pub fn class_names(&self) -> Vec<String> {
        self.classes.iter().map(|c| c.name.clone()).collect()
    }
}

const TAU: f64 = 2.0 * std::f64::consts::PI;
const HALF_PI: f64 = std::f64::consts::FRAC_PI_2;

/// Sine from basic arithmetic only: reduction to `[-π/2, π/2]` followed by
/// a degree-19 Taylor polynomial (error below 1e-13).
pub fn portable_sin(x: f64) -> f64 {
    let k = (x / TAU).round();
    let mut r = x - k * TAU;
    if r > HALF_PI {
        r = std::f64::consts::PI - r;
    } else if r < -HALF_PI {
        r = -std::f64::consts::PI - r;
    }
    let r2 = r * r;
    let mut term = r;
    let mut sum = r;
    for n in 1..10 {
        let d = (2 * n) as f64 * (2 * n + 1) as f64;
        term = -term * r2 / d;
        sum += term;
    }
    sum
}

pub fn portable_cos(x: f64) -> f64 {
    portable_sin(x + HALF_PI)
}

/// Approximately standard normal: the Irwin-Hall sum of twelve uniforms.
fn normal(rng: &mut ChaCha8Rng) -> f64 {
    (0..12).map(|_| rng.gen::<f64>()).sum::<f64>() - 6.0
}

fn uniform(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    lo + (hi - lo) * rng.gen::<f64>()
}

/// `count` labeled sequences, classes assigned round-robin.
pub fn generate_synthetic(spec: &SyntheticActionSpec, count: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rest = rest_pose();
    let joints = rest.len();
    let samples = (0..count)
        .map(|i| {
            let label = i % spec.classes.len();
            let len = rng.gen_range(spec.frames.0..=spec.frames.1.max(spec.frames.0));
            let phase = uniform(&mut rng, (0.0, TAU));
            let gain = uniform(&mut rng, spec.amplitude_range);
            let scale = uniform(&mut rng, spec.scale_range);
            let yaw = uniform(&mut rng, (-spec.max_yaw, spec.max_yaw));
            let (cy, sy) = (portable_cos(yaw), portable_sin(yaw));
            let offset = [
                uniform(&mut rng, (-0.5, 0.5)),
                uniform(&mut rng, (-0.1, 0.1)),
                uniform(&mut rng, (2.5, 3.5)),
            ];
            let distractor = JointMotion {
                joint: rng.gen_range(0..joints),
                offset: [0.0; 3],
                axis: [X, Y, Z][rng.gen_range(0..3)],
                amplitude: spec.distractor_amplitude * rng.gen::<f64>(),
                frequency: uniform(&mut rng, (1.0, 3.0)),
                phase: uniform(&mut rng, (0.0, TAU)),
            };
            let performers = &spec.classes[label].performers;
            let performer = rng.gen_range(0..performers.len().max(1));
            let motions: Vec<JointMotion> = performers
                .get(performer)
                .into_iter()
                .flatten()
                .map(|m| JointMotion {
                    offset: m.offset.map(|o| o * gain),
                    amplitude: m.amplitude * gain,
                    ..m.clone()
                })
                .chain(std::iter::once(distractor))
                .collect();

            let frames = (0..len)
                .map(|t| {
                    let progress = t as f64 / len as f64;
                    let mut pose = rest;
                    for m in &motions {
                        let s = m.amplitude * portable_sin(TAU * m.frequency * progress + m.phase + phase);
                        for ((c, a), o) in pose[m.joint].iter_mut().zip(m.axis).zip(m.offset) {
                            *c += o + s * a;
                        }
                    }
                    pose.iter()
                        .map(|p| {
                            let [x, y, z] = p.map(|v| v * scale);
                            let rotated = [cy * x + sy * z, y, -sy * x + cy * z];
                            let mut out = [0.0; 3];
                            for c in 0..3 {
                                out[c] = rotated[c] + offset[c] + spec.noise_std * normal(&mut rng);
                            }
                            out
                        })
                        .collect()
                })
                .collect();
            SkeletonSequence {
                frames,
                label,
                subject: (i % 10) as u32,
                camera: 0,
                source: format!("synthetic seed {seed} #{i}"),
            }
        })
        .collect();
    Dataset {
        joints,
        edges: Layout::Body15.edges(),
        class_names: spec.class_names(),
        samples,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn portable_sine_is_accurate() {
        for i in -400..400 {
            let x = i as f64 * 0.0731;
            assert!((portable_sin(x) - x.sin()).abs() < 1e-12, "x = {x}");
            assert!((portable_cos(x) - x.cos()).abs() < 1e-12, "x = {x}");
        }
    }

    #[test]
    fn same_seed_same_data() {
        let mut spec = SyntheticActionSpec::standard(3);
        spec.noise_std = 0.0;
        assert_eq!(generate_synthetic(&spec, 12, 5), generate_synthetic(&spec, 12, 5));
        assert_ne!(generate_synthetic(&spec, 12, 5), generate_synthetic(&spec, 12, 6));
    }

    #[test]
    fn zero_amplitude_is_static() {
        let mut spec = SyntheticActionSpec::standard(2);
        for c in &mut spec.classes {
            c.performers.iter_mut().flatten().for_each(|m| m.amplitude = 0.0);
        }
        spec.noise_std = 0.0;
        spec.distractor_amplitude = 0.0;
        let d = generate_synthetic(&spec, 4, 1);
        for s in &d.samples {
            assert!(s.frames.iter().all(|f| f == &s.frames[0]));
        }
    }

    #[test]
    fn confusable_classes_share_joints() {
        let spec = SyntheticActionSpec::standard(3);
        let joints = |c: usize, p: usize| {
            let mut j: Vec<usize> = spec.classes[c].performers[p].iter().map(|m| m.joint).collect();
            j.sort();
            j
        };
        for p in 0..2 {
            assert_eq!(joints(0, p), joints(1, p));
            for (a, b) in spec.classes[0].performers[p].iter().zip(&spec.classes[1].performers[p]) {
                assert_eq!((a.amplitude, a.frequency), (b.amplitude, b.frequency));
            }
        }
        assert_ne!(joints(0, 0), joints(0, 1));
    }

    #[test]
    fn performers_are_drawn_per_sample() {
        let mut spec = SyntheticActionSpec::standard(1);
        spec.noise_std = 0.0;
        spec.distractor_amplitude = 0.0;
        spec.max_yaw = 0.0;
        let d = generate_synthetic(&spec, 40, 3);
        // Which hand moves: compare the spread of joint 5 and joint 8.
        let spread = |s: &SkeletonSequence, j: usize| {
            let xs: Vec<f64> = s.frames.iter().map(|f| f[j][0]).collect();
            xs.iter().cloned().fold(f64::MIN, f64::max) - xs.iter().cloned().fold(f64::MAX, f64::min)
        };
        let left = d.samples.iter().filter(|s| spread(s, 5) > spread(s, 8)).count();
        assert!(left > 5 && left < 35, "{left} of 40 used the left arm");
    }

    #[test]
    fn balanced_labels_and_lengths() {
        let spec = SyntheticActionSpec::standard(3);
        let d = generate_synthetic(&spec, 30, 2);
        assert_eq!(d.class_counts(), vec![10, 10, 10]);
        for s in &d.samples {
            assert!((40..=60).contains(&s.len()));
            assert_eq!(s.joints(), 15);
        }
    }
}
