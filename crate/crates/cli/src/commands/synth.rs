use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use agc_core::TrainConfig;

use super::manifest;
use crate::error::CliResult;
use crate::rundir::RunDir;

/// Writes `train.agcd` and `test.agcd`; returns their paths.
pub fn gen_synth(cfg: &TrainConfig, out: &Path) -> CliResult<(PathBuf, PathBuf)> {
    let mut synthetic = cfg.clone();
    synthetic.data.train = None;
    synthetic.data.test = None;
    let (train, test) = synthetic.datasets()?;
    let mut run = RunDir::create(out)?;
    let a = run.write("train.agcd", &train.to_text())?;
    let b = run.write("test.agcd", &test.to_text())?;
    let mut results = BTreeMap::new();
    results.insert("train_samples".into(), toml::Value::Integer(train.len() as i64));
    results.insert("test_samples".into(), toml::Value::Integer(test.len() as i64));
    run.write_manifest(manifest(cfg, "gen-synth", results))?;
    Ok((a, b))
}
