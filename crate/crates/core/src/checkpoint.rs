//! Text checkpoint: network shape followed by a named-parameter manifest.
//!
//! ```text
//! agc-checkpoint 1
//! graph 15 0                (joint count, root)
//! edges 0-1 1-2 ...
//! stream joint              (or: stream part, then `parts name=0,1 ...`)
//! variant agc-lstm
//! classes 3
//! ...                      (remaining shape keys)
//! class_names a b c
//! frames 100
//! center true
//! params 57
//! param layer1.gate_i.W_xi.W0 16 16
//! <256 values>
//! ...
//! ```

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::graph::{PartMap, SkeletonGraph};
use crate::model::{AgcLstmNetwork, NetworkConfig, Stream};
use crate::numerics::Tensor;

const MAGIC: &str = "agc-checkpoint";
const VERSION: u32 = 1;

/// A trained network with what is needed to rebuild it.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub class_names: Vec<String>,
    /// Frames sampled from each sequence.
    pub frames: usize,
    /// Whether sequences are root-centered before sampling.
    pub center: bool,
    pub network: AgcLstmNetwork,
}

fn parse_pair(ln: usize, s: &str, sep: char, what: &str) -> Result<(usize, usize)> {
    let bad = || Error::parse(ln, format!("invalid {what} `{s}`"));
    let (a, b) = s.split_once(sep).ok_or_else(bad)?;
    Ok((a.parse().map_err(|_| bad())?, b.parse().map_err(|_| bad())?))
}

impl Checkpoint {
    pub fn to_text(&self) -> String {
        let c = self.network.config();
        let mut out = String::new();
        let _ = writeln!(out, "{MAGIC} {VERSION}");
        let g = self.network.skeleton();
        let _ = writeln!(out, "graph {} {}", g.joint_count(), g.root());
        let edges: Vec<String> = g.edges().iter().map(|(a, b)| format!("{a}-{b}")).collect();
        let _ = writeln!(out, "edges {}", edges.join(" "));
        match self.network.stream() {
            Stream::Joints => {
                let _ = writeln!(out, "stream joint");
            }
            Stream::Parts(parts) => {
                let _ = writeln!(out, "stream part");
                let list: Vec<String> = parts
                    .parts()
                    .iter()
                    .map(|(name, joints)| {
                        let j: Vec<String> = joints.iter().map(|j| j.to_string()).collect();
                        format!("{name}={}", j.join(","))
                    })
                    .collect();
                let _ = writeln!(out, "parts {}", list.join(" "));
            }
        }
        let _ = writeln!(out, "variant {}", c.variant);
        for (k, v) in [
            ("classes", c.classes),
            ("encoder_width", c.encoder_width),
            ("augment_width", c.augment_width),
            ("hidden_width", c.hidden_width),
            ("attention_width", c.attention_width),
            ("layers", c.layers),
            ("pool_window", c.pooling.0),
            ("pool_stride", c.pooling.1),
        ] {
            let _ = writeln!(out, "{k} {v}");
        }
        let _ = writeln!(out, "dropout {:?}", c.dropout);
        let _ = writeln!(out, "forget_bias {:?}", c.forget_bias);
        let _ = writeln!(out, "class_names {}", self.class_names.join(" "));
        let _ = writeln!(out, "frames {}", self.frames);
        let _ = writeln!(out, "center {}", self.center);
        let params = self.network.params();
        let _ = writeln!(out, "params {}", params.len());
        for (_, p) in params.iter() {
            let _ = writeln!(out, "param {} {} {}", p.name, p.value.rows(), p.value.cols());
            let vals: Vec<String> = p.value.data().iter().map(|v| format!("{v:.16e}")).collect();
            let _ = writeln!(out, "{}", vals.join(" "));
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
        let mut last = 0;
        let mut next = |key: &str| -> Result<(usize, Vec<&str>)> {
            let (ln, l) = lines
                .next()
                .ok_or_else(|| Error::parse(last + 1, format!("unexpected end of file, expected `{key}`")))?;
            last = ln;
            let mut f: Vec<&str> = l.split_whitespace().collect();
            if key.is_empty() {
                return Ok((ln, f));
            }
            if f.first() != Some(&key) {
                return Err(Error::parse(ln, format!("expected `{key}`")));
            }
            f.remove(0);
            Ok((ln, f))
        };
        fn one<T: std::str::FromStr>(ln: usize, f: &[&str], what: &str) -> Result<T> {
            match f {
                [v] => v.parse().map_err(|_| Error::parse(ln, format!("invalid {what} `{v}`"))),
                _ => Err(Error::parse(ln, format!("expected one value for {what}"))),
            }
        }

        let (ln, f) = next(MAGIC)?;
        let version: u32 = one(ln, &f, "version")?;
        if version != VERSION {
            return Err(Error::parse(ln, format!("unsupported checkpoint version {version}")));
        }
        let (ln, f) = next("graph")?;
        let [joints, root] = f[..] else {
            return Err(Error::parse(ln, "expected `graph <joints> <root>`"));
        };
        let joints: usize = one(ln, &[joints], "joint count")?;
        let root: usize = one(ln, &[root], "root")?;
        let (ln, f) = next("edges")?;
        let edges = f
            .iter()
            .map(|e| parse_pair(ln, e, '-', "edge"))
            .collect::<Result<Vec<_>>>()?;
        let skeleton =
            SkeletonGraph::new(joints, &edges, root, 3, 1).map_err(|e| Error::parse(ln, e.to_string()))?;
        let (ln, f) = next("stream")?;
        let stream = match one::<String>(ln, &f, "stream")?.as_str() {
            "joint" => Stream::Joints,
            "part" => {
                let (ln, f) = next("parts")?;
                let parts = f
                    .iter()
                    .map(|p| {
                        let bad = || Error::parse(ln, format!("invalid part `{p}`"));
                        let (name, list) = p.split_once('=').ok_or_else(bad)?;
                        let joints = list
                            .split(',')
                            .map(|j| j.parse::<usize>().map_err(|_| bad()))
                            .collect::<Result<Vec<_>>>()?;
                        Ok((name.to_string(), joints))
                    })
                    .collect::<Result<Vec<_>>>()?;
                Stream::Parts(PartMap::new(parts).map_err(|e| Error::parse(ln, e.to_string()))?)
            }
            other => return Err(Error::parse(ln, format!("unknown stream `{other}`"))),
        };
        let (ln, f) = next("variant")?;
        let variant = one::<String>(ln, &f, "variant")?
            .parse()
            .map_err(|e| Error::parse(ln, format!("{e}")))?;
        let mut sizes = [0usize; 8];
        let keys = [
            "classes",
            "encoder_width",
            "augment_width",
            "hidden_width",
            "attention_width",
            "layers",
            "pool_window",
            "pool_stride",
        ];
        for (slot, key) in sizes.iter_mut().zip(keys) {
            let (ln, f) = next(key)?;
            *slot = one(ln, &f, key)?;
        }
        let (ln, f) = next("dropout")?;
        let dropout = one(ln, &f, "dropout")?;
        let (ln, f) = next("forget_bias")?;
        let forget_bias = one(ln, &f, "forget_bias")?;
        let (ln, f) = next("class_names")?;
        let class_names: Vec<String> = f.iter().map(|s| s.to_string()).collect();
        let (ln2, f2) = next("frames")?;
        let frames: usize = one(ln2, &f2, "frames")?;
        let (ln2, f2) = next("center")?;
        let center: bool = one(ln2, &f2, "center")?;
        let [classes, encoder_width, augment_width, hidden_width, attention_width, layers, pool_window, pool_stride] =
            sizes;
        if class_names.len() != classes {
            return Err(Error::parse(ln, format!("{} class names for {classes} classes", class_names.len())));
        }
        let config = NetworkConfig {
            classes,
            encoder_width,
            augment_width,
            hidden_width,
            attention_width,
            layers,
            pooling: (pool_window, pool_stride),
            dropout,
            forget_bias,
            variant,
        };
        let mut network = AgcLstmNetwork::new(config, &skeleton, stream, 0)?;

        let (ln, f) = next("params")?;
        let count: usize = one(ln, &f, "parameter count")?;
        if count != network.params().len() {
            return Err(Error::parse(
                ln,
                format!("{count} parameters, the network has {}", network.params().len()),
            ));
        }
        let mut seen = vec![false; count];
        for _ in 0..count {
            let (ln, f) = next("param")?;
            let [name, rows, cols] = f[..] else {
                return Err(Error::parse(ln, "expected `param <name> <rows> <cols>`"));
            };
            let rows: usize = one(ln, &[rows], "rows")?;
            let cols: usize = one(ln, &[cols], "cols")?;
            let id = network
                .params()
                .find(name)
                .ok_or_else(|| Error::parse(ln, format!("unknown parameter `{name}`")))?;
            let expected = network.params().value(id).shape().to_vec();
            if expected != [rows, cols] {
                return Err(Error::parse(
                    ln,
                    format!("parameter `{name}` is {rows}x{cols}, expected {}x{}", expected[0], expected[1]),
                ));
            }
            let (ln, f) = next("")?;
            let values = f
                .iter()
                .map(|v| v.parse::<f64>().map_err(|_| Error::parse(ln, format!("invalid value `{v}`"))))
                .collect::<Result<Vec<_>>>()?;
            if values.len() != rows * cols {
                return Err(Error::parse(ln, format!("{} values, expected {}", values.len(), rows * cols)));
            }
            if values.iter().any(|v| !v.is_finite()) {
                return Err(Error::parse(ln, format!("non-finite value in `{name}`")));
            }
            network.params_mut().get_mut(id).value = Tensor::matrix(rows, cols, values)?;
            seen[id.index()] = true;
        }
        debug_assert!(seen.iter().all(|&s| s));
        Ok(Checkpoint {
            class_names,
            frames,
            center,
            network,
        })
    }
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    std::fs::write(path, ckpt.to_text())?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    Checkpoint::from_text(&std::fs::read_to_string(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Layout;

    fn sample(variant: &str, stream: Stream) -> Checkpoint {
        let mut cfg = NetworkConfig::toy(3, 4);
        cfg.variant = variant.parse().unwrap();
        let network = AgcLstmNetwork::new(cfg, &Layout::Body15.graph(), stream, 11).unwrap();
        Checkpoint {
            class_names: vec!["a".into(), "b".into(), "c".into()],
            frames: 12,
            center: true,
            network,
        }
    }

    #[test]
    fn round_trip_restores_every_value() {
        for (v, s) in [
            ("agc-lstm", Stream::Joints),
            ("lstm", Stream::Joints),
            ("gc-lstm+th", Stream::Parts(Layout::Body15.parts())),
        ] {
            let c = sample(v, s);
            let text = c.to_text();
            let back = Checkpoint::from_text(&text).unwrap();
            assert_eq!(back.network.config(), c.network.config());
            assert_eq!(back.network.stream(), c.network.stream());
            for ((_, a), (_, b)) in c.network.params().iter().zip(back.network.params().iter()) {
                assert_eq!(a.name, b.name);
                assert_eq!(a.value, b.value);
            }
            assert_eq!(back.to_text(), text);
        }
    }

    #[test]
    fn damaged_files_are_rejected() {
        let text = sample("agc-lstm", Stream::Joints).to_text();
        assert!(matches!(
            Checkpoint::from_text(&text.replacen("agc-checkpoint 1", "agc-checkpoint 9", 1)),
            Err(Error::Parse { line: 1, .. })
        ));
        assert!(matches!(
            Checkpoint::from_text(&text.replacen("hidden_width 4", "hidden_width 5", 1)),
            Err(Error::Parse { .. })
        ));
        let truncated: String = text.lines().take(20).collect::<Vec<_>>().join("\n");
        assert!(Checkpoint::from_text(&truncated).is_err());
    }
}
