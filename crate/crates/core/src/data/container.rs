//! Line-oriented dataset container.
//!
//! ```text
//! agc-dataset 1
//! joints 15
//! edges 0-1 1-2 ...
//! classes wave_left wave_right ...
//! samples 2
//! sample <label> <frames> <subject> <camera> <source...>
//! <x y z of joint 0> <x y z of joint 1> ...      (one line per frame)
//! ...
//! ```
//!
//! Coordinates are written with 17 significant digits, which reproduces
//! every `f64` exactly on reading.

use std::fmt::Write as _;

use super::SkeletonSequence;
use crate::error::{Error, Result};

const MAGIC: &str = "agc-dataset";
const VERSION: u32 = 1;

/// A split of labeled sequences on one skeleton topology.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub joints: usize,
    pub edges: Vec<(usize, usize)>,
    pub class_names: Vec<String>,
    pub samples: Vec<SkeletonSequence>,
}

impl Dataset {
    pub fn classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Number of samples of each class.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.classes()];
        for s in &self.samples {
            counts[s.label] += 1;
        }
        counts
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{MAGIC} {VERSION}");
        let _ = writeln!(out, "joints {}", self.joints);
        let edges: Vec<String> = self.edges.iter().map(|(a, b)| format!("{a}-{b}")).collect();
        let _ = writeln!(out, "edges {}", edges.join(" "));
        let _ = writeln!(out, "classes {}", self.class_names.join(" "));
        let _ = writeln!(out, "samples {}", self.samples.len());
        for s in &self.samples {
            let _ = writeln!(
                out,
                "sample {} {} {} {} {}",
                s.label,
                s.frames.len(),
                s.subject,
                s.camera,
                s.source
            );
            for frame in &s.frames {
                let mut first = true;
                for v in frame.iter().flatten() {
                    if !first {
                        out.push(' ');
                    }
                    first = false;
                    let _ = write!(out, "{v:.16e}");
                }
                out.push('\n');
            }
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
        let mut next = |what: &str| {
            lines
                .next()
                .ok_or_else(|| Error::parse(0, format!("unexpected end of file, expected {what}")))
        };

        let (ln, header) = next("header")?;
        let mut it = header.split_whitespace();
        if it.next() != Some(MAGIC) {
            return Err(Error::parse(ln, format!("missing `{MAGIC}` header")));
        }
        let version: u32 = parse_field(it.next(), ln, "version")?;
        if version != VERSION {
            return Err(Error::parse(ln, format!("unsupported version {version}")));
        }

        let (ln, line) = next("joints")?;
        let joints: usize = parse_field(keyed(line, "joints", ln)?.first().copied(), ln, "joint count")?;
        if joints == 0 {
            return Err(Error::parse(ln, "joint count must be positive"));
        }

        let (ln, line) = next("edges")?;
        let edges = keyed(line, "edges", ln)?
            .into_iter()
            .map(|tok| {
                let (a, b) = tok
                    .split_once('-')
                    .ok_or_else(|| Error::parse(ln, format!("bad edge `{tok}`")))?;
                Ok((parse_field(Some(a), ln, "edge")?, parse_field(Some(b), ln, "edge")?))
            })
            .collect::<Result<Vec<(usize, usize)>>>()?;

        let (ln, line) = next("classes")?;
        let class_names: Vec<String> = keyed(line, "classes", ln)?.into_iter().map(String::from).collect();
        if class_names.is_empty() {
            return Err(Error::parse(ln, "no classes listed"));
        }

        let (ln, line) = next("samples")?;
        let count: usize = parse_field(keyed(line, "samples", ln)?.first().copied(), ln, "sample count")?;

        let mut samples = Vec::with_capacity(count);
        for _ in 0..count {
            let (ln, line) = next("sample header")?;
            let rest = line
                .strip_prefix("sample ")
                .ok_or_else(|| Error::parse(ln, "expected `sample` header"))?;
            let mut parts = rest.splitn(5, ' ');
            let label: usize = parse_field(parts.next(), ln, "label")?;
            let frames: usize = parse_field(parts.next(), ln, "frame count")?;
            let subject: u32 = parse_field(parts.next(), ln, "subject")?;
            let camera: u32 = parse_field(parts.next(), ln, "camera")?;
            let source = parts.next().unwrap_or("").to_string();
            if label >= class_names.len() {
                return Err(Error::parse(ln, format!("label {label} outside {} classes", class_names.len())));
            }
            if frames == 0 {
                return Err(Error::parse(ln, "sample has zero frames"));
            }
            let mut data = Vec::with_capacity(frames);
            for _ in 0..frames {
                let (ln, line) = next("frame")?;
                let values = line
                    .split_whitespace()
                    .map(|v| parse_field(Some(v), ln, "coordinate"))
                    .collect::<Result<Vec<f64>>>()?;
                if values.len() != joints * 3 {
                    return Err(Error::parse(
                        ln,
                        format!("frame has {} values, expected {}", values.len(), joints * 3),
                    ));
                }
                if values.iter().any(|v| !v.is_finite()) {
                    return Err(Error::parse(ln, "non-finite coordinate"));
                }
                data.push(values.chunks(3).map(|c| [c[0], c[1], c[2]]).collect());
            }
            samples.push(SkeletonSequence {
                frames: data,
                label,
                subject,
                camera,
                source,
            });
        }
        Ok(Dataset {
            joints,
            edges,
            class_names,
            samples,
        })
    }
}

fn keyed<'a>(line: &'a str, key: &str, ln: usize) -> Result<Vec<&'a str>> {
    let mut it = line.split_whitespace();
    if it.next() != Some(key) {
        return Err(Error::parse(ln, format!("expected `{key}` line")));
    }
    Ok(it.collect())
}

fn parse_field<T: std::str::FromStr>(tok: Option<&str>, ln: usize, what: &str) -> Result<T> {
    let tok = tok.ok_or_else(|| Error::parse(ln, format!("missing {what}")))?;
    tok.parse()
        .map_err(|_| Error::parse(ln, format!("invalid {what} `{tok}`")))
}
