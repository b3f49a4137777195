//! Reader and writer for the NTU RGB+D `.skeleton` text layout.
//!
//! ```text
//! <frame count>
//! <body count>                        per frame
//! <body id> <9 more body fields>      per body
//! <joint count>
//! <x> <y> <z> <9 more joint fields>   per joint
//! ```

use std::fmt::Write as _;

use super::SkeletonSequence;
use crate::error::{Error, Result};

pub const NTU_JOINTS: usize = 25;

#[derive(Debug, Clone, PartialEq)]
pub struct NtuBody {
    pub id: u64,
    pub joints: Vec<[f64; 3]>,
}

/// Every body of every frame, as stored in the file.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct NtuRecording {
    pub frames: Vec<Vec<NtuBody>>,
}

struct Lines<'a> {
    inner: std::iter::Enumerate<std::str::Lines<'a>>,
    last: usize,
}

impl<'a> Lines<'a> {
    fn next(&mut self, what: &str) -> Result<(usize, Vec<&'a str>)> {
        loop {
            match self.inner.next() {
                Some((i, l)) => {
                    self.last = i + 1;
                    let fields: Vec<&str> = l.split_whitespace().collect();
                    if !fields.is_empty() {
                        return Ok((i + 1, fields));
                    }
                }
                None => {
                    return Err(Error::parse(
                        self.last + 1,
                        format!("unexpected end of file, expected {what}"),
                    ))
                }
            }
        }
    }

    fn count(&mut self, what: &str) -> Result<(usize, usize)> {
        let (ln, f) = self.next(what)?;
        let v = f[0]
            .parse()
            .map_err(|_| Error::parse(ln, format!("invalid {what} `{}`", f[0])))?;
        Ok((ln, v))
    }
}

pub fn parse_ntu_text(text: &str) -> Result<NtuRecording> {
    let mut lines = Lines {
        inner: text.lines().enumerate(),
        last: 0,
    };
    let (ln, frame_count) = lines.count("frame count")?;
    if frame_count == 0 {
        return Err(Error::parse(ln, "frame count is zero"));
    }
    let mut frames = Vec::with_capacity(frame_count);
    for _ in 0..frame_count {
        let (_, bodies) = lines.count("body count")?;
        let mut frame = Vec::with_capacity(bodies);
        for _ in 0..bodies {
            let (ln, info) = lines.next("body record")?;
            if info.len() < 10 {
                return Err(Error::parse(ln, format!("body record has {} fields, expected 10", info.len())));
            }
            let id = info[0]
                .parse()
                .map_err(|_| Error::parse(ln, format!("invalid body id `{}`", info[0])))?;
            let (ln, joint_count) = lines.count("joint count")?;
            if joint_count != NTU_JOINTS {
                return Err(Error::parse(ln, format!("joint count {joint_count}, expected {NTU_JOINTS}")));
            }
            let mut joints = Vec::with_capacity(NTU_JOINTS);
            for _ in 0..NTU_JOINTS {
                let (ln, f) = lines.next("joint record")?;
                if f.len() < 3 {
                    return Err(Error::parse(ln, format!("joint record has {} fields", f.len())));
                }
                let mut xyz = [0.0f64; 3];
                for (dst, tok) in xyz.iter_mut().zip(&f[..3]) {
                    *dst = tok
                        .parse()
                        .map_err(|_| Error::parse(ln, format!("invalid coordinate `{tok}`")))?;
                    if !dst.is_finite() {
                        return Err(Error::parse(ln, "non-finite coordinate"));
                    }
                }
                joints.push(xyz);
            }
            frame.push(NtuBody { id, joints });
        }
        frames.push(frame);
    }
    Ok(NtuRecording { frames })
}

/// Writes the layout back; fields other than the body id and joint
/// coordinates are zero.
pub fn write_ntu_text(rec: &NtuRecording) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{}", rec.frames.len());
    for frame in &rec.frames {
        let _ = writeln!(out, "{}", frame.len());
        for body in frame {
            let _ = writeln!(out, "{} 0 0 0 0 0 0 0 0 2", body.id);
            let _ = writeln!(out, "{}", body.joints.len());
            for [x, y, z] in &body.joints {
                let _ = writeln!(out, "{x:?} {y:?} {z:?} 0 0 0 0 0 0 0 0 2");
            }
        }
    }
    out
}

impl NtuRecording {
    /// Body ids in order of first appearance.
    pub fn body_ids(&self) -> Vec<u64> {
        let mut ids = Vec::new();
        for b in self.frames.iter().flatten() {
            if !ids.contains(&b.id) {
                ids.push(b.id);
            }
        }
        ids
    }

    /// Frames of one body, skipping frames where it is absent.
    pub fn track(&self, id: u64) -> Vec<Vec<[f64; 3]>> {
        self.frames
            .iter()
            .filter_map(|f| f.iter().find(|b| b.id == id).map(|b| b.joints.clone()))
            .collect()
    }

    /// The body with the largest total joint displacement; ties go to the
    /// body seen first.
    pub fn primary_actor(&self) -> Result<u64> {
        let mut best: Option<(u64, f64)> = None;
        for id in self.body_ids() {
            let seq = SkeletonSequence {
                frames: self.track(id),
                label: 0,
                subject: 0,
                camera: 0,
                source: String::new(),
            };
            let d = seq.total_displacement();
            if best.map_or(true, |(_, bd)| d > bd) {
                best = Some((id, d));
            }
        }
        best.map(|(id, _)| id)
            .ok_or_else(|| Error::Data("recording contains no bodies".into()))
    }
}

/// Setup, camera, subject, replication and action codes of a file name
/// such as `S001C002P003R002A013.skeleton`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NtuFileName {
    pub setup: u32,
    pub camera: u32,
    pub subject: u32,
    pub replication: u32,
    pub action: u32,
}

impl NtuFileName {
    pub fn parse(name: &str) -> Result<Self> {
        let stem = name.rsplit(['/', '\\']).next().unwrap_or(name);
        let stem = stem.split('.').next().unwrap_or(stem);
        let mut codes = [0u32; 5];
        let mut rest = stem;
        for (slot, key) in codes.iter_mut().zip(['S', 'C', 'P', 'R', 'A']) {
            rest = rest
                .strip_prefix(key)
                .ok_or_else(|| Error::Data(format!("file name `{name}` lacks the `{key}` code")))?;
            let digits = rest.chars().take_while(char::is_ascii_digit).count();
            *slot = rest[..digits]
                .parse()
                .map_err(|_| Error::Data(format!("file name `{name}` has a bad `{key}` code")))?;
            rest = &rest[digits..];
        }
        let [setup, camera, subject, replication, action] = codes;
        if action == 0 {
            return Err(Error::Data(format!("file name `{name}` has action code 0")));
        }
        Ok(NtuFileName {
            setup,
            camera,
            subject,
            replication,
            action,
        })
    }
}

/// Parses a `.skeleton` file into the primary actor's sequence, labeled by
/// the action code of `file_name` (`A001` is class 0).
pub fn parse_ntu_skeleton(text: &str, file_name: &str) -> Result<SkeletonSequence> {
    let meta = NtuFileName::parse(file_name)?;
    let rec = parse_ntu_text(text)?;
    let actor = rec.primary_actor()?;
    Ok(SkeletonSequence {
        frames: rec.track(actor),
        label: (meta.action - 1) as usize,
        subject: meta.subject,
        camera: meta.camera,
        source: file_name.to_string(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn body(id: u64, offset: f64) -> NtuBody {
        NtuBody {
            id,
            joints: (0..NTU_JOINTS)
                .map(|j| [j as f64 * 0.1 + offset, 0.25 - offset, 3.1 + 1e-7 * j as f64])
                .collect(),
        }
    }

    #[test]
    fn write_then_parse_is_exact() {
        let rec = NtuRecording {
            frames: vec![vec![body(7, 0.0)], vec![body(7, 0.013_579)]],
        };
        let text = write_ntu_text(&rec);
        let back = parse_ntu_text(&text).unwrap();
        assert_eq!(back, rec);
        assert_eq!(write_ntu_text(&back), text);
    }

    #[test]
    fn zero_frames_rejected() {
        assert!(matches!(parse_ntu_text("0\n"), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn short_joint_record_has_line_number() {
        let rec = NtuRecording {
            frames: vec![vec![body(1, 0.0)]],
        };
        let text = write_ntu_text(&rec);
        let mut lines: Vec<String> = text.lines().map(String::from).collect();
        lines[6] = "0.5 0.5".into();
        match parse_ntu_text(&lines.join("\n")) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 7),
            other => panic!("{other:?}"),
        }
        lines.truncate(10);
        assert!(parse_ntu_text(&lines.join("\n")).is_err());
    }

    #[test]
    fn moving_body_is_primary() {
        let frames = (0..4)
            .map(|t| vec![body(100, 0.0), body(200, 0.05 * t as f64)])
            .collect();
        let rec = NtuRecording { frames };
        assert_eq!(rec.primary_actor().unwrap(), 200);
        let seq = parse_ntu_skeleton(&write_ntu_text(&rec), "S001C002P003R002A013.skeleton").unwrap();
        assert_eq!(seq.label, 12);
        assert_eq!((seq.camera, seq.subject), (2, 3));
        assert_eq!(seq.frames[3][0][0], 0.05 * 3.0);
    }

    #[test]
    fn file_name_codes() {
        let f = NtuFileName::parse("data/S017C003P020R002A060.skeleton").unwrap();
        assert_eq!((f.setup, f.camera, f.subject, f.replication, f.action), (17, 3, 20, 2, 60));
        assert!(NtuFileName::parse("clip.skeleton").is_err());
    }
}
