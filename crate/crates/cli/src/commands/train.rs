use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use agc_core::config::StreamKind;
use agc_core::model::Stream;
use agc_core::train::{evaluate, evaluate_hybrid, prepare_eval, train as fit, TrainOptions};
use agc_core::{save_checkpoint, AgcLstmNetwork, Checkpoint, EpochMetrics, Error, Evaluation, TrainConfig};

use super::{manifest, write_confusion};
use crate::error::{CliError, CliResult};
use crate::rundir::RunDir;

pub const METRICS_HEADER: [&str; 11] = [
    "epoch",
    "learning_rate",
    "train_loss",
    "global_xent",
    "local_xent",
    "balance",
    "sparsity",
    "running_accuracy",
    "train_accuracy",
    "eval_accuracy",
    "attention_mass",
];

fn metrics_row(m: &EpochMetrics) -> Vec<String> {
    vec![
        m.epoch.to_string(),
        m.learning_rate.to_string(),
        m.loss.total.to_string(),
        m.loss.global_xent.to_string(),
        m.loss.local_xent.to_string(),
        m.loss.balance.to_string(),
        m.loss.sparsity.to_string(),
        m.running_accuracy.to_string(),
        m.train_accuracy.to_string(),
        m.eval_accuracy.map_or_else(String::new, |a| a.to_string()),
        m.attention_mass.to_string(),
    ]
}

#[derive(Debug)]
pub struct StreamRun {
    pub name: &'static str,
    pub history: Vec<EpochMetrics>,
    pub test: Evaluation,
    pub metrics: PathBuf,
    pub checkpoint: PathBuf,
    pub network: AgcLstmNetwork,
}

#[derive(Debug)]
pub struct TrainRun {
    pub streams: Vec<StreamRun>,
    /// Test evaluation of the configured stream (fused for hybrid).
    pub test: Evaluation,
    pub run_dir: PathBuf,
}

pub fn train(cfg: &TrainConfig, out: &Path) -> CliResult<TrainRun> {
    let mut run = RunDir::create(out)?;
    run.write("config.toml", &cfg.to_toml())?;
    let (train_set, test_set) = cfg.datasets()?;
    let skeleton = cfg.skeleton()?;
    let classes = train_set.class_names.clone();
    let net_cfg = cfg.network(classes.len())?;
    let hybrid = cfg.stream == StreamKind::Hybrid;
    let mut streams = Vec::new();
    if cfg.stream != StreamKind::Part {
        streams.push(("joint", Stream::Joints));
    }
    if cfg.stream != StreamKind::Joint {
        streams.push(("part", Stream::Parts(cfg.parts()?)));
    }
    let t = &cfg.train;
    let opts = TrainOptions {
        frames: t.frames,
        learning_rate: t.learning_rate,
        lr_decay: t.lr_decay,
        lr_decay_every: t.lr_decay_every,
        batch_size: t.batch_size,
        epochs: t.epochs,
        loss: cfg.loss_weights(),
        center: t.center,
        stop_at_train_accuracy: t.stop_at_train_accuracy,
        seed: cfg.seed,
    };
    let test_prepared = prepare_eval(&test_set.samples, skeleton.root(), t.frames, t.center)?;

    let mut results = BTreeMap::new();
    let mut runs = Vec::new();
    for (i, (name, stream)) in streams.into_iter().enumerate() {
        let mut net = AgcLstmNetwork::new(net_cfg.clone(), &skeleton, stream, cfg.seed.wrapping_add(i as u64))?;
        let suffix = if hybrid { format!("-{name}") } else { String::new() };
        let metrics = run.file(&format!("metrics{suffix}.csv"));
        let mut w = csv::Writer::from_path(&metrics)?;
        w.write_record(METRICS_HEADER)?;
        w.flush()?;
        let mut write_err = None;
        let fitted = fit(&mut net, &train_set.samples, Some(&test_set.samples), &opts, |m| {
            eprintln!(
                "[{name}] epoch {:>3}  loss {:.4}  train {:.3}  eval {:.3}",
                m.epoch,
                m.loss.total,
                m.train_accuracy,
                m.eval_accuracy.unwrap_or(f64::NAN)
            );
            if let Err(e) = w.write_record(metrics_row(m)).and_then(|_| w.flush().map_err(csv::Error::from)) {
                write_err.get_or_insert(e);
            }
        });
        if let Some(e) = write_err {
            return Err(e.into());
        }
        let history = match fitted {
            Ok(h) => h,
            Err(e @ Error::Numeric(_)) => {
                run.write("failure.txt", &format!("{name} stream: {e}\n"))?;
                return Err(CliError::numeric(format!("{name} stream: {e}")));
            }
            Err(e) => return Err(e.into()),
        };
        let checkpoint = run.file(&format!("model{suffix}.ckpt"));
        save_checkpoint(
            &checkpoint,
            &Checkpoint {
                class_names: classes.clone(),
                frames: t.frames,
                center: t.center,
                network: net.clone(),
            },
        )?;
        let test = evaluate(&net, &test_prepared)?;
        if hybrid {
            write_confusion(&mut run, &format!("confusion{suffix}.csv"), &classes, &test.confusion)?;
        }
        let last = history.last().expect("at least one epoch");
        results.insert(format!("{name}.epochs"), toml::Value::Integer(last.epoch as i64));
        results.insert(format!("{name}.train_accuracy"), toml::Value::Float(last.train_accuracy));
        results.insert(format!("{name}.test_accuracy"), toml::Value::Float(test.accuracy));
        results.insert(format!("{name}.attention_mass"), toml::Value::Float(last.attention_mass));
        runs.push(StreamRun {
            name,
            history,
            test,
            metrics,
            checkpoint,
            network: net,
        });
    }

    let test = if hybrid {
        let fused = evaluate_hybrid(&runs[0].network, &runs[1].network, &test_prepared)?;
        results.insert("hybrid.test_accuracy".into(), toml::Value::Float(fused.accuracy));
        fused
    } else {
        runs[0].test.clone()
    };
    write_confusion(&mut run, "confusion.csv", &classes, &test.confusion)?;
    results.insert("test_accuracy".into(), toml::Value::Float(test.accuracy));
    run.write_manifest(manifest(cfg, "train", results))?;
    Ok(TrainRun {
        streams: runs,
        test,
        run_dir: run.root().to_path_buf(),
    })
}
