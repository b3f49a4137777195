//! One function per subcommand. Each writes its outputs under a run
//! directory and returns what it computed.

mod eval;
mod gradcheck;
mod synth;
mod train;

use std::collections::BTreeMap;

use agc_core::config::StreamKind;
use agc_core::{AgcLstmNetwork, SkeletonSequence, TrainConfig};

use crate::error::CliResult;
use crate::rundir::{Manifest, RunDir};

pub use eval::{eval, export_attention};
pub use gradcheck::{gradcheck, GradcheckRun};
pub use synth::gen_synth;
pub use train::{train, StreamRun, TrainRun, METRICS_HEADER};

fn stream_name(s: StreamKind) -> &'static str {
    match s {
        StreamKind::Joint => "joint",
        StreamKind::Part => "part",
        StreamKind::Hybrid => "hybrid",
    }
}

fn manifest(cfg: &TrainConfig, command: &str, results: BTreeMap<String, toml::Value>) -> Manifest {
    Manifest {
        command: command.into(),
        version: env!("CARGO_PKG_VERSION").into(),
        config_hash: cfg.hash(),
        seed: cfg.seed,
        variant: cfg.variant.clone(),
        stream: stream_name(cfg.stream).into(),
        files: Vec::new(),
        results,
    }
}

/// `confusion[true][predicted]` with class names on both axes.
fn write_confusion(run: &mut RunDir, name: &str, classes: &[String], confusion: &[Vec<usize>]) -> CliResult<()> {
    let mut w = csv::Writer::from_path(run.file(name))?;
    let mut header = vec!["true\\predicted".to_string()];
    header.extend(classes.iter().cloned());
    w.write_record(&header)?;
    for (c, row) in classes.iter().zip(confusion) {
        let mut rec = vec![c.clone()];
        rec.extend(row.iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// One `T_j x N` CSV per layer; returns the file names written.
fn write_attention(run: &mut RunDir, prefix: &str, net: &AgcLstmNetwork, seq: &SkeletonSequence) -> CliResult<Vec<String>> {
    let maps = net.attention_maps(seq)?;
    let mut names = Vec::new();
    for (j, m) in maps.iter().enumerate() {
        let name = format!("{prefix}attention-layer{}.csv", j + 1);
        let mut w = csv::Writer::from_path(run.file(&name))?;
        let mut header = vec!["step".to_string()];
        header.extend((0..m.cols()).map(|n| format!("node{n}")));
        w.write_record(&header)?;
        for t in 0..m.rows() {
            let mut rec = vec![t.to_string()];
            rec.extend(m.row(t).iter().map(|v| v.to_string()));
            w.write_record(&rec)?;
        }
        w.flush()?;
        names.push(name);
    }
    Ok(names)
}
