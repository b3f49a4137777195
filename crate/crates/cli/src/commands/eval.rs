use std::collections::BTreeMap;
use std::path::Path;

use agc_core::config::read_dataset;
use agc_core::train::{evaluate, evaluate_hybrid, prepare_eval};
use agc_core::{load_checkpoint, Checkpoint, Dataset, Evaluation, SkeletonSequence, TrainConfig};

use super::{manifest, write_attention, write_confusion};
use crate::args::ModelSource;
use crate::error::{CliError, CliResult};
use crate::rundir::RunDir;

struct Loaded {
    joint: Checkpoint,
    part: Option<Checkpoint>,
    data: Dataset,
    prepared: Vec<SkeletonSequence>,
}

fn load(cfg: &TrainConfig, src: &ModelSource) -> CliResult<Loaded> {
    let joint = load_checkpoint(&src.checkpoint)?;
    let part = src.part_checkpoint.as_deref().map(load_checkpoint).transpose()?;
    let data = match &src.data {
        Some(path) => read_dataset(path)?,
        None => cfg.datasets()?.1,
    };
    for c in std::iter::once(&joint).chain(part.as_ref()) {
        if c.class_names.len() != data.classes() {
            return Err(CliError::data(format!(
                "class count mismatch: the model has {} classes, the dataset {}",
                c.class_names.len(),
                data.classes()
            )));
        }
    }
    let prepared = prepare_eval(&data.samples, joint.network.graph_root(), joint.frames, joint.center)?;
    Ok(Loaded {
        joint,
        part,
        data,
        prepared,
    })
}

fn attention_for(run: &mut RunDir, l: &Loaded, sample: usize) -> CliResult<Vec<String>> {
    let seq = l.prepared.get(sample).ok_or_else(|| {
        CliError::data(format!("sample {sample} out of range ({} samples)", l.prepared.len()))
    })?;
    let mut names = Vec::new();
    if l.joint.network.config().variant.attention {
        let prefix = if l.part.is_some() { "joint-" } else { "" };
        names.extend(write_attention(run, prefix, &l.joint.network, seq)?);
    }
    if let Some(p) = &l.part {
        if p.network.config().variant.attention {
            names.extend(write_attention(run, "part-", &p.network, seq)?);
        }
    }
    Ok(names)
}

/// Accuracy, confusion matrix, per-sample predictions and the attention
/// matrices of one sample.
pub fn eval(cfg: &TrainConfig, src: &ModelSource, sample: usize, out: &Path) -> CliResult<Evaluation> {
    let l = load(cfg, src)?;
    let e = match &l.part {
        Some(p) => evaluate_hybrid(&l.joint.network, &p.network, &l.prepared)?,
        None => evaluate(&l.joint.network, &l.prepared)?,
    };
    let mut run = RunDir::create(out)?;
    write_confusion(&mut run, "confusion.csv", &l.data.class_names, &e.confusion)?;
    let mut w = csv::Writer::from_path(run.file("predictions.csv"))?;
    let mut header = vec!["sample".to_string(), "label".into(), "predicted".into()];
    header.extend(l.data.class_names.iter().map(|c| format!("p_{c}")));
    w.write_record(&header)?;
    for (i, (p, s)) in e.predictions.iter().zip(&l.prepared).enumerate() {
        let mut rec = vec![i.to_string(), s.label.to_string(), p.class.to_string()];
        rec.extend(p.probabilities.iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    if !l.prepared.is_empty() {
        attention_for(&mut run, &l, sample)?;
    }
    let mut results = BTreeMap::new();
    results.insert("accuracy".into(), toml::Value::Float(e.accuracy));
    results.insert("samples".into(), toml::Value::Integer(l.prepared.len() as i64));
    run.write_manifest(manifest(cfg, "eval", results))?;
    Ok(e)
}

/// Per-layer `T_j x N` attention matrices of one sample.
pub fn export_attention(cfg: &TrainConfig, src: &ModelSource, sample: usize, out: &Path) -> CliResult<Vec<String>> {
    let l = load(cfg, src)?;
    let mut run = RunDir::create(out)?;
    let names = attention_for(&mut run, &l, sample)?;
    if names.is_empty() {
        return Err(CliError::usage("the model variants have no attention to export"));
    }
    let mut results = BTreeMap::new();
    results.insert("sample".into(), toml::Value::Integer(sample as i64));
    run.write_manifest(manifest(cfg, "export-attention", results))?;
    Ok(names)
}
