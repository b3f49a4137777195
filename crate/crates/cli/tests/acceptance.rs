//! Acceptance suite: one PASS/FAIL line per criterion on stderr, then a
//! single assertion over all of them.
//!
//! Lines go straight to the stderr handle so they show up even when the
//! test harness captures output.

use std::collections::HashMap;
use std::io::Write;
use std::path::Path;
use std::time::{Duration, Instant};

use agc_cli::args::{GradcheckArgs, ModelSource};
use agc_cli::commands::{self, TrainRun};
use agc_core::cell::{layer_forward, AgcLstmState};
use agc_core::data::{parse_ntu_text, write_ntu_text, NtuBody, NtuRecording, NTU_JOINTS};
use agc_core::graph_conv::{graph_conv, GraphConvWeights};
use agc_core::model::{loss, LossWeights};
use agc_core::numerics::{ParamStore, Tape, Tensor, Var};
use agc_core::{
    AgcLstmCellParams, AgcLstmNetwork, CellKind, CellShape, Dataset, Error, NetworkConfig, SkeletonGraph,
    SkeletonSequence, StreamKind, TrainConfig,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const TOY: &str = include_str!("../../../configs/gradcheck-toy.toml");
const SYNTHETIC: &str = include_str!("../../../configs/synthetic-small.toml");

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        pass,
        detail: detail.into(),
    }
}

fn report(n: usize, name: &str, v: &Verdict) {
    let status = if v.pass { "PASS" } else { "FAIL" };
    let mut err = std::io::stderr().lock();
    let _ = writeln!(err, "acceptance {n:>2} {status}  {name}: {}", v.detail);
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn random(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::matrix(rows, cols, (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

fn random_graph(rng: &mut ChaCha8Rng, max_n: usize) -> SkeletonGraph {
    let n = rng.gen_range(1..=max_n);
    let mut edges: Vec<(usize, usize)> = (1..n).map(|i| (rng.gen_range(0..i), i)).collect();
    for _ in 0..rng.gen_range(0..=n / 2) {
        let (a, b) = (rng.gen_range(0..n), rng.gen_range(0..n));
        if a != b {
            edges.push((a, b));
        }
    }
    let root = rng.gen_range(0..n);
    SkeletonGraph::new(n, &edges, root, 3, 1).unwrap()
}

// 1 --------------------------------------------------------------------

fn gradient_integrity(dir: &Path) -> Verdict {
    let cfg = TrainConfig::from_toml(TOY).unwrap();
    let shape_ok = cfg.train.frames == 8
        && cfg.data.synthetic.classes == 3
        && cfg.model.hidden_width == 16
        && cfg.model.dropout == 0.0
        && cfg.loss.lambda == 0.01
        && cfg.loss.beta == 0.001;
    let args = GradcheckArgs {
        probes: 3,
        step: 1e-5,
        tolerance: 1e-4,
        zero_params: false,
        corrupt_gradient: None,
    };
    let start = Instant::now();
    let run = commands::gradcheck(&cfg, &args, &dir.join("gradcheck")).unwrap();
    let elapsed = start.elapsed();
    let n = cfg.skeleton().unwrap().joint_count();
    let (group, worst) = run
        .groups
        .iter()
        .cloned()
        .max_by(|a, b| a.1.total_cmp(&b.1))
        .unwrap_or_default();
    verdict(
        shape_ok && n == 5 && run.passed && run.worst < 1e-4 && elapsed < Duration::from_secs(300),
        format!(
            "{} groups, worst relative error {worst:.2e} ({group}) < 1e-4, {:.1}s < 300s",
            run.groups.len(),
            elapsed.as_secs_f64()
        ),
    )
}

// 2 --------------------------------------------------------------------

fn node_loop(g: &SkeletonGraph, x: &Tensor, w: &[Tensor]) -> Tensor {
    let labels = g.label_partition().unwrap();
    let mut row_deg: HashMap<(usize, usize), f64> = HashMap::new();
    let mut col_deg: HashMap<(usize, usize), f64> = HashMap::new();
    for (i, ns) in labels.iter().enumerate() {
        for &(j, k) in ns {
            *row_deg.entry((i, k)).or_default() += 1.0;
            *col_deg.entry((j, k)).or_default() += 1.0;
        }
    }
    let d_out = w[0].cols();
    let mut y = Tensor::zeros(&[g.joint_count(), d_out]);
    for (i, ns) in labels.iter().enumerate() {
        for &(j, k) in ns {
            let z = (row_deg[&(i, k)] * col_deg[&(j, k)]).sqrt();
            for c in 0..d_out {
                let xw: f64 = (0..x.cols()).map(|r| x.get(j, r) * w[k - 1].get(r, c)).sum();
                y.set(i, c, y.get(i, c) + xw / z);
            }
        }
    }
    y
}

fn graph_conv_oracle() -> Verdict {
    let mut r = rng(2);
    let mut worst: f64 = 0.0;
    let mut partition_ok = true;
    for _ in 0..100 {
        let g = random_graph(&mut r, 10);
        let n = g.joint_count();
        let stack = g.adjacency_stack().unwrap();
        let neighbors = g.neighbor_sets();
        for i in 0..n {
            for j in 0..n {
                let hits = (0..3).filter(|&k| stack.raw(k).get(i, j) == 1.0).count();
                let others = (0..3).all(|k| matches!(stack.raw(k).get(i, j), 0.0 | 1.0));
                let want = usize::from(neighbors[i].contains(&j));
                partition_ok &= hits == want && others;
            }
        }
        let mut store = ParamStore::new();
        let (d_in, d_out) = (r.gen_range(1..5), r.gen_range(1..5));
        let w = GraphConvWeights::new(&mut store, "gc", 3, d_in, d_out, &mut r);
        let x = random(n, d_in, &mut r);
        let mut tape = Tape::new(&store);
        let xv = tape.constant(x.clone());
        let y = graph_conv(&mut tape, xv, &w, &stack).unwrap();
        let ws: Vec<Tensor> = w.weights().iter().map(|&id| store.value(id).clone()).collect();
        let want = node_loop(&g, &x, &ws);
        for (a, b) in tape.value(y).data().iter().zip(want.data()) {
            worst = worst.max((a - b).abs());
        }
    }
    verdict(
        worst <= 1e-12 && partition_ok,
        format!("100 graphs, max |matrix - node loop| = {worst:.1e} <= 1e-12, partition holds: {partition_ok}"),
    )
}

// 3 --------------------------------------------------------------------

fn cell(store: &mut ParamStore, d_att: Option<usize>, r: &mut ChaCha8Rng) -> AgcLstmCellParams {
    let shape = CellShape {
        kind: CellKind::Graph,
        nodes: 6,
        d_in: 3,
        d_hidden: 4,
        d_att,
        subsets: 3,
        forget_bias: 1.0,
    };
    AgcLstmCellParams::new(store, "cell", shape, r)
}

fn run_cell(store: &ParamStore, p: &AgcLstmCellParams, g: &SkeletonGraph, xs: &[Tensor]) -> Vec<AgcLstmState> {
    let adj = g.adjacency_stack().unwrap();
    let mut tape = Tape::new(store);
    let vars: Vec<Var> = xs.iter().map(|x| tape.constant(x.clone())).collect();
    let out = layer_forward(&mut tape, &vars, p, &adj).unwrap();
    out.states.iter().map(|s| AgcLstmState::capture(&tape, s)).collect()
}

fn attention_identities() -> Verdict {
    let g = SkeletonGraph::new(6, &[(0, 1), (1, 2), (2, 3), (1, 4), (4, 5)], 1, 3, 1).unwrap();
    let mut r = rng(3);
    let (mut steps, mut in_range, mut worst_h): (usize, bool, f64) = (0, true, 0.0);
    while steps < 1000 {
        let mut store = ParamStore::new();
        let p = cell(&mut store, Some(3), &mut r);
        let scale = r.gen_range(0.1..4.0);
        let xs: Vec<Tensor> = (0..25).map(|_| random(6, 3, &mut r).scale(scale)).collect();
        for s in run_cell(&store, &p, &g, &xs) {
            let alpha = s.alpha.unwrap();
            in_range &= alpha.data().iter().all(|&a| a > 0.0 && a < 1.0);
            for n in 0..6 {
                for c in 0..4 {
                    let want = (1.0 + alpha.get(n, 0)) * s.hidden_pre.get(n, c);
                    worst_h = worst_h.max((s.hidden.get(n, c) - want).abs());
                }
            }
            steps += 1;
        }
    }
    // Zero attention parameters against the attention-free cell.
    let mut worst_zero: f64 = 0.0;
    for seed in 0..20 {
        let mut with_store = ParamStore::new();
        let with = cell(&mut with_store, Some(3), &mut rng(seed));
        for id in with.attention().unwrap().ids() {
            with_store.get_mut(id).value.fill(0.0);
        }
        let mut plain_store = ParamStore::new();
        let plain = cell(&mut plain_store, None, &mut rng(seed));
        let x = vec![random(6, 3, &mut rng(100 + seed))];
        let a = &run_cell(&with_store, &with, &g, &x)[0];
        let b = &run_cell(&plain_store, &plain, &g, &x)[0];
        for (u, v) in a.hidden.data().iter().zip(b.hidden.data()) {
            worst_zero = worst_zero.max((u - 1.5 * v).abs());
        }
    }
    verdict(
        in_range && worst_h <= 1e-12 && worst_zero <= 1e-12,
        format!(
            "{steps} fuzz steps with alpha in (0,1): {in_range}, max |H - (1+alpha)H^| = {worst_h:.1e}, \
             max |H_att0 - 1.5 H_gc| = {worst_zero:.1e}"
        ),
    )
}

// 4 --------------------------------------------------------------------

fn ten_joint_sequence(frames: usize, seed: u64) -> (SkeletonGraph, SkeletonSequence) {
    let g = SkeletonGraph::new(5, &[(0, 1), (1, 2), (1, 3), (0, 4)], 0, 3, 1).unwrap();
    let mut r = rng(seed);
    let frames = (0..frames)
        .map(|_| (0..5).map(|_| [(); 3].map(|_| r.gen_range(-1.0..1.0))).collect())
        .collect();
    (g, SkeletonSequence::new(frames, 1).unwrap())
}

fn temporal_hierarchy() -> Verdict {
    let full = NetworkConfig::full(3);
    let lengths = full.layer_lengths(100).unwrap();
    // Same schedule at a small width so the forward pass is quick.
    let mut cfg = NetworkConfig::toy(3, 4);
    cfg.layers = full.layers;
    cfg.pooling = full.pooling;
    let (g, seq) = ten_joint_sequence(100, 4);
    let mut net = AgcLstmNetwork::new(cfg, &g, agc_core::Stream::Joints, 1).unwrap();
    net.params_mut().zero_values();
    let mut tape = Tape::new(net.params());
    let out = net.forward(&mut tape, &seq, None).unwrap();
    let alpha_steps: Vec<usize> = out.alphas.iter().map(Vec::len).collect();
    let terms = (out.global_logits.len(), out.local_logits.len());
    let w = LossWeights { lambda: 0.0, beta: 0.0 };
    let l = loss(&mut tape, &out, seq.label, w).unwrap().values(&tape);
    // Uniform heads: each summed term contributes exactly log 3.
    let counted = l.global_xent / 3f64.ln();
    let pass = lengths == [100, 50, 25]
        && out.layer_lengths == [100, 50, 25]
        && alpha_steps == [100, 50, 25]
        && terms == (25, 25)
        && (counted - 25.0).abs() < 1e-9;
    verdict(
        pass,
        format!(
            "layer lengths {:?}, loss terms per head {terms:?}, global xent / log C = {counted:.6}",
            out.layer_lengths
        ),
    )
}

// 5 --------------------------------------------------------------------

fn loss_formula() -> Verdict {
    let (g, seq) = ten_joint_sequence(8, 5);
    let classes = 3;
    let mut net = AgcLstmNetwork::new(NetworkConfig::toy(classes, 16), &g, agc_core::Stream::Joints, 2).unwrap();
    net.params_mut().zero_values();
    // sigma(40) rounds to exactly 1, so every score is 1.
    let b_u: Vec<_> = net.layers().iter().map(|l| l.attention().unwrap().bias_u).collect();
    for id in b_u {
        net.params_mut().get_mut(id).value.fill(40.0);
    }
    let w = LossWeights { lambda: 0.01, beta: 0.001 };
    let mut tape = Tape::new(net.params());
    let out = net.forward(&mut tape, &seq, None).unwrap();
    let all_one = out.alphas.iter().flatten().all(|&a| tape.value(a).data().iter().all(|&v| v == 1.0));
    let l = loss(&mut tape, &out, seq.label, w).unwrap().values(&tape);

    let t3 = *out.layer_lengths.last().unwrap() as f64;
    let (n, layers) = (5.0, out.layer_lengths.len() as f64);
    let xent = 2.0 * t3 * (classes as f64).ln();
    // Balance: (1 - mean alpha)^2 = 0. Sparsity: (sum_n alpha)^2 = N^2 per step.
    let hand = xent + w.lambda * 0.0 + w.beta * layers * n * n;
    let err = (l.total - hand).abs();
    let xent_err = (l.global_xent + l.local_xent - xent).abs();
    verdict(
        all_one && err <= 1e-10 && xent_err <= 1e-10,
        format!(
            "L = {:.12} vs hand {hand:.12} (|diff| {err:.1e}), cross entropy vs 2 T3 log C = {xent:.12} (|diff| {xent_err:.1e})",
            l.total
        ),
    )
}

// 6, 7, 8, 9 -------------------------------------------------------------

fn synthetic_config(variant: &str, seed: u64) -> TrainConfig {
    let mut cfg = TrainConfig::from_toml(SYNTHETIC).unwrap();
    cfg.variant = variant.into();
    cfg.seed = seed;
    cfg
}

fn final_eval(run: &TrainRun) -> f64 {
    run.streams[0].history.last().unwrap().eval_accuracy.unwrap()
}

struct Ablation {
    runs: Vec<(&'static str, TrainRun)>,
    elapsed: Duration,
}

fn train_ablation(dir: &Path, tag: &str) -> Ablation {
    let start = Instant::now();
    let runs = ["agc-lstm", "gc-lstm+th", "lstm+th"]
        .into_iter()
        .map(|v| {
            let cfg = synthetic_config(v, 0);
            (v, commands::train(&cfg, &dir.join(format!("{tag}-{v}"))).unwrap())
        })
        .collect();
    Ablation {
        runs,
        elapsed: start.elapsed(),
    }
}

fn learning_capability(a: &Ablation) -> Verdict {
    let cfg = synthetic_config("agc-lstm", 0);
    let setup_ok = cfg.data.synthetic.classes == 3
        && cfg.data.synthetic.train_samples == 300
        && cfg.data.synthetic.test_samples == 90
        && cfg.train.frames == 48
        && cfg.train.epochs <= 60
        && cfg.stream == StreamKind::Joint
        && cfg.skeleton().unwrap().joint_count() == 15;
    let acc: Vec<f64> = a.runs.iter().map(|(_, r)| final_eval(r)).collect();
    let (agc, gc, lstm) = (acc[0], acc[1], acc[2]);
    let agc_train = a.runs[0].1.streams[0].history.iter().map(|m| m.train_accuracy).fold(0.0, f64::max);
    let epochs = a.runs[0].1.streams[0].history.len();
    let pass = setup_ok
        && agc_train >= 0.99
        && agc > lstm
        && agc >= gc
        && gc > lstm
        && a.elapsed < Duration::from_secs(30 * 60);
    verdict(
        pass,
        format!(
            "AGC max train {agc_train:.3} (>= 0.99) over {epochs} epochs; held-out AGC {agc:.3}, GC {gc:.3}, \
             LSTM {lstm:.3} (need AGC >= GC > LSTM and AGC > LSTM); {:.0}s (< 1800s)",
            a.elapsed.as_secs_f64()
        ),
    )
}

fn hybrid_fusion(dir: &Path, a: &Ablation) -> Verdict {
    let mut cfg = synthetic_config("agc-lstm", 0);
    cfg.stream = StreamKind::Part;
    let part = commands::train(&cfg, &dir.join("c7-part")).unwrap();
    let joint = &a.runs[0].1;
    let source = ModelSource {
        checkpoint: joint.streams[0].checkpoint.clone(),
        part_checkpoint: Some(part.streams[0].checkpoint.clone()),
        data: None,
    };
    let fused = commands::eval(&cfg, &source, 0, &dir.join("c7-hybrid")).unwrap();
    let (j, p) = (joint.test.accuracy, part.test.accuracy);
    let floor = j.max(p) - 0.02;
    let exercised = fused.predictions.len() == 90
        && dir.join("c7-hybrid/joint-attention-layer1.csv").exists()
        && dir.join("c7-hybrid/part-attention-layer1.csv").exists();
    verdict(
        fused.accuracy >= floor && exercised,
        format!(
            "hybrid {:.3} >= max(joint {j:.3}, part {p:.3}) - 0.02 = {floor:.3}; fused path over {} samples",
            fused.accuracy,
            fused.predictions.len()
        ),
    )
}

fn regularizer_direction(dir: &Path) -> Verdict {
    let mass = |beta: f64, tag: &str| {
        let mut cfg = synthetic_config("agc-lstm", 0);
        cfg.loss.beta = beta;
        cfg.train.epochs = 5;
        cfg.train.stop_at_train_accuracy = None;
        let run = commands::train(&cfg, &dir.join(tag)).unwrap();
        run.streams[0].history.last().unwrap().attention_mass
    };
    let base = mass(0.001, "c8-base");
    let heavy = mass(0.1, "c8-heavy");
    verdict(
        heavy < base,
        format!("final mean sum_n alpha: beta 0.1 gives {heavy:.4} < beta 0.001 gives {base:.4} (5 epochs, seed 0)"),
    )
}

fn determinism(a: &Ablation, b: &Ablation) -> Verdict {
    let mut same = 0;
    for ((v, x), (_, y)) in a.runs.iter().zip(&b.runs) {
        let read = |r: &TrainRun| std::fs::read(&r.streams[0].metrics).unwrap();
        if read(x) == read(y) {
            same += 1;
        } else {
            let _ = writeln!(std::io::stderr(), "metrics of {v} differ between runs");
        }
    }
    verdict(
        same == a.runs.len(),
        format!("{same}/{} metrics CSVs byte-identical across two seeded runs", a.runs.len()),
    )
}

// 10 -------------------------------------------------------------------

fn parse_line(e: &Error) -> Option<usize> {
    match e {
        Error::Parse { line, .. } => Some(*line),
        _ => None,
    }
}

fn data_round_trip() -> Verdict {
    let mut r = rng(10);
    let mut exact = true;
    for _ in 0..20 {
        let joints = r.gen_range(1..6);
        let samples = (0..r.gen_range(1..5))
            .map(|i| SkeletonSequence {
                frames: (0..r.gen_range(1..6))
                    .map(|_| {
                        (0..joints)
                            .map(|_| [(); 3].map(|_| f64::from_bits(r.gen::<u64>() >> 2) * if r.gen() { 1.0 } else { -1.0 }))
                            .collect()
                    })
                    .collect(),
                label: i % 2,
                subject: i as u32,
                camera: 0,
                source: format!("fixture {i}"),
            })
            .collect();
        let d = Dataset {
            joints,
            edges: (1..joints).map(|j| (0, j)).collect(),
            class_names: vec!["a".into(), "b".into()],
            samples,
        };
        let back = Dataset::from_text(&d.to_text()).unwrap();
        exact &= back == d && back.to_text() == d.to_text();

        let rec = NtuRecording {
            frames: (0..r.gen_range(1..4))
                .map(|_| {
                    (0..r.gen_range(1..3))
                        .map(|b| NtuBody {
                            id: 100 + b,
                            joints: (0..NTU_JOINTS).map(|_| [(); 3].map(|_| r.gen_range(-3.0..3.0))).collect(),
                        })
                        .collect()
                })
                .collect(),
        };
        let text = write_ntu_text(&rec);
        let back = parse_ntu_text(&text).unwrap();
        exact &= back == rec && write_ntu_text(&back) == text;
    }

    let good = "agc-dataset 1\njoints 1\nedges\nclasses a b\nsamples 1\nsample 0 2 0 0 src\n1 2 3\n4 5 6\n";
    let ntu = write_ntu_text(&NtuRecording {
        frames: vec![vec![NtuBody {
            id: 1,
            joints: vec![[0.5; 3]; NTU_JOINTS],
        }]],
    });
    let ntu_lines: Vec<&str> = ntu.lines().collect();
    let mut short_joint = ntu_lines.clone();
    short_joint[6] = "0.5 0.5";
    let cases: Vec<(Result<(), Error>, usize)> = vec![
        (Dataset::from_text(&good.replace("joints 1", "joints one")).map(drop), 2),
        (Dataset::from_text(&good.replace("4 5 6", "4 5")).map(drop), 8),
        (Dataset::from_text(&good.replace("sample 0 2", "sample 5 2")).map(drop), 6),
        (parse_ntu_text("0\n").map(drop), 1),
        (parse_ntu_text(&short_joint.join("\n")).map(drop), 7),
        (parse_ntu_text(&ntu_lines[..3].join("\n")).map(drop), 4),
    ];
    let total = cases.len();
    let located = cases
        .into_iter()
        .filter(|(res, line)| res.as_ref().err().and_then(parse_line) == Some(*line))
        .count();
    verdict(
        exact && located == total,
        format!("20 container and 20 NTU fixtures bit-exact: {exact}; {located}/{total} malformed fixtures report the right line"),
    )
}

#[test]
fn acceptance() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let _ = writeln!(std::io::stderr());
    let mut results: Vec<(usize, &str, Verdict)> = Vec::new();
    let mut record = |n: usize, name: &'static str, v: Verdict| {
        report(n, name, &v);
        results.push((n, name, v));
    };
    record(1, "gradient integrity", gradient_integrity(d));
    record(2, "graph-conv oracle equivalence", graph_conv_oracle());
    record(3, "attention identities", attention_identities());
    record(4, "temporal hierarchy arithmetic", temporal_hierarchy());
    record(5, "loss formula", loss_formula());
    let first = train_ablation(d, "c6");
    record(6, "learning capability", learning_capability(&first));
    record(7, "hybrid fusion", hybrid_fusion(d, &first));
    record(8, "regularizer behavior", regularizer_direction(d));
    let second = train_ablation(d, "c9");
    record(9, "determinism", determinism(&first, &second));
    record(10, "data round-trip", data_round_trip());

    let failed: Vec<String> = results
        .iter()
        .filter(|r| !r.2.pass)
        .map(|r| format!("{} ({})", r.0, r.1))
        .collect();
    assert!(failed.is_empty(), "failed criteria: {}", failed.join(", "));
}
