use std::collections::BTreeMap;
use std::path::Path;

use agc_core::config::StreamKind;
use agc_core::model::Stream;
use agc_core::numerics::{group_of, GradCheckReport, Tensor};
use agc_core::reference::{analytic_gradient, check_gradient};
use agc_core::{AgcLstmNetwork, SkeletonSequence, TrainConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::manifest;
use crate::args::GradcheckArgs;
use crate::error::{CliError, CliResult};
use crate::rundir::RunDir;

/// Largest graph and clip the check accepts.
pub const MAX_JOINTS: usize = 8;
pub const MAX_FRAMES: usize = 10;

#[derive(Debug)]
pub struct GradcheckRun {
    /// Worst error per `(stream, group)`.
    pub groups: Vec<(String, f64)>,
    pub reports: Vec<(&'static str, GradCheckReport)>,
    pub worst: f64,
    pub passed: bool,
}

fn random_sequence(joints: usize, frames: usize, classes: usize, seed: u64) -> CliResult<SkeletonSequence> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let frames = (0..frames)
        .map(|_| (0..joints).map(|_| [(); 3].map(|_| rng.gen_range(-1.0..1.0))).collect())
        .collect();
    Ok(SkeletonSequence::new(frames, (seed % classes as u64) as usize)?)
}

pub fn gradcheck(cfg: &TrainConfig, a: &GradcheckArgs, out: &Path) -> CliResult<GradcheckRun> {
    if cfg.model.dropout != 0.0 {
        return Err(CliError::usage(
            "gradcheck needs model.dropout = 0 (dropout makes the loss non-deterministic)",
        ));
    }
    let skeleton = cfg.skeleton()?;
    if skeleton.joint_count() > MAX_JOINTS {
        return Err(CliError::usage(format!(
            "gradcheck is limited to {MAX_JOINTS} joints, the graph has {}",
            skeleton.joint_count()
        )));
    }
    if cfg.train.frames > MAX_FRAMES {
        return Err(CliError::usage(format!(
            "gradcheck is limited to {MAX_FRAMES} frames, train.frames is {}",
            cfg.train.frames
        )));
    }
    let classes = cfg.data.synthetic.classes;
    let mut streams = Vec::new();
    if cfg.stream != StreamKind::Part {
        streams.push(("joint", Stream::Joints));
    }
    if cfg.stream != StreamKind::Joint {
        streams.push(("part", Stream::Parts(cfg.parts()?)));
    }
    let seq = random_sequence(skeleton.joint_count(), cfg.train.frames, classes, cfg.seed)?;
    let w = cfg.loss_weights();

    let mut run = RunDir::create(out)?;
    let mut csv = csv::Writer::from_path(run.file("gradcheck.csv"))?;
    csv.write_record(["stream", "group", "parameter", "probes", "max_rel_error"])?;
    let mut groups = Vec::new();
    let mut reports = Vec::new();
    for (name, stream) in streams {
        let mut net = AgcLstmNetwork::new(cfg.network(classes)?, &skeleton, stream, cfg.seed)?;
        if a.zero_params {
            net.params_mut().zero_values();
        }
        let mut grads = analytic_gradient(&net, &seq, seq.label, w)?;
        if let Some(p) = &a.corrupt_gradient {
            let id = net
                .params()
                .find(p)
                .ok_or_else(|| CliError::usage(format!("no parameter named `{p}`")))?;
            grads.add(id, &Tensor::full(net.params().value(id).shape(), 1.0));
        }
        let report = check_gradient(&net, &seq, seq.label, w, &grads, a.probes, a.step, cfg.seed)?;
        for p in &report.params {
            csv.write_record([
                name.to_string(),
                group_of(&p.name),
                p.name.clone(),
                p.probes.to_string(),
                format!("{:e}", p.max_rel_error),
            ])?;
        }
        for (g, e) in report.by_group() {
            let verdict = if e < a.tolerance { "ok" } else { "FAIL" };
            println!("{name:<6} {g:<22} {e:>10.3e}  {verdict}");
            groups.push((format!("{name}/{g}"), e));
        }
        reports.push((name, report));
    }
    csv.flush()?;
    let worst = groups.iter().map(|g| g.1).fold(0.0, f64::max);
    let passed = groups.iter().all(|g| g.1 < a.tolerance);
    let mut results = BTreeMap::new();
    results.insert("max_rel_error".into(), toml::Value::Float(worst));
    results.insert("tolerance".into(), toml::Value::Float(a.tolerance));
    results.insert("passed".into(), toml::Value::Boolean(passed));
    run.write_manifest(manifest(cfg, "gradcheck", results))?;
    Ok(GradcheckRun {
        groups,
        reports,
        worst,
        passed,
    })
}
