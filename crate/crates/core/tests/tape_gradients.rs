//! Every differentiable tape operation checked against central differences.

use std::sync::Arc;

use agc_core::numerics::{finite_difference_check, GradBuffer, ParamId, ParamStore, Tape, Tensor, Var};
use agc_core::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Tensor {
    let data = (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect();
    Tensor::matrix(rows, cols, data).unwrap()
}

/// Projects `y` onto a fixed random tensor so the loss has no symmetry.
fn project(tape: &mut Tape, y: Var, seed: u64) -> Var {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shape = tape.value(y).shape().to_vec();
    let r = random(shape[0], shape[1], &mut rng);
    let w = tape.mul_const(y, r).unwrap();
    tape.sum_all(w)
}

fn check<F>(shapes: &[(usize, usize)], build: F)
where
    F: Fn(&mut Tape, &[Var]) -> Var,
{
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut store = ParamStore::new();
    let ids: Vec<ParamId> = shapes
        .iter()
        .enumerate()
        .map(|(i, &(r, c))| store.add(format!("p{i}"), random(r, c, &mut rng)))
        .collect();

    let eval = |store: &ParamStore, grads: Option<&mut GradBuffer>| -> Result<f64> {
        let mut tape = Tape::new(store);
        let vars: Vec<Var> = ids.iter().map(|&id| tape.param(id)).collect();
        let y = build(&mut tape, &vars);
        let loss = project(&mut tape, y, 5);
        if let Some(g) = grads {
            tape.backward(loss, g)?;
        }
        Ok(tape.scalar(loss))
    };

    let mut grads = GradBuffer::new(&store);
    eval(&store, Some(&mut grads)).unwrap();
    let report =
        finite_difference_check(&mut store, &grads, |s| eval(s, None), 64, 1e-5, 1).unwrap();
    assert!(
        report.max_rel_error() < 1e-4,
        "max relative error {}",
        report.max_rel_error()
    );
}

#[test]
fn matmul_grad() {
    check(&[(3, 4), (4, 2)], |t, v| t.matmul(v[0], v[1]).unwrap());
}

#[test]
fn left_const_grad() {
    let m = Arc::new(Tensor::from_rows(&[vec![0.5, 0.0, 0.2], vec![0.0, 1.0, 0.0]]).unwrap());
    check(&[(3, 4)], move |t, v| t.left_const(&m, v[0]).unwrap());
}

#[test]
fn pointwise_grads() {
    check(&[(3, 3)], |t, v| t.sigmoid(v[0]));
    check(&[(3, 3)], |t, v| t.tanh(v[0]));
    check(&[(3, 3)], |t, v| t.relu(v[0]));
    check(&[(3, 3)], |t, v| t.square(v[0]));
    check(&[(3, 3)], |t, v| t.scale(v[0], -2.5));
    check(&[(3, 3)], |t, v| t.add_scalar(v[0], 1.0));
}

#[test]
fn binary_grads() {
    check(&[(2, 3), (2, 3)], |t, v| t.add(v[0], v[1]).unwrap());
    check(&[(2, 3), (2, 3)], |t, v| t.sub(v[0], v[1]).unwrap());
    check(&[(2, 3), (2, 3)], |t, v| t.mul(v[0], v[1]).unwrap());
}

#[test]
fn broadcast_grads() {
    check(&[(4, 3), (1, 3)], |t, v| t.add_row(v[0], v[1]).unwrap());
    check(&[(4, 3), (4, 1)], |t, v| t.mul_col(v[0], v[1]).unwrap());
}

#[test]
fn reduction_and_layout_grads() {
    check(&[(4, 3)], |t, v| t.sum_rows(v[0]));
    check(&[(4, 3)], |t, v| t.sum_all(v[0]));
    check(&[(2, 3), (2, 2)], |t, v| t.concat_cols(v[0], v[1]).unwrap());
    check(&[(2, 6)], |t, v| t.reshape(v[0], &[3, 4]).unwrap());
}

#[test]
fn softmax_xent_grad() {
    check(&[(1, 5)], |t, v| t.softmax_xent(v[0], 2).unwrap());
}

#[test]
fn gradient_is_linear_in_the_loss() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut store = ParamStore::new();
    let a = store.add("a", random(3, 3, &mut rng));
    let b = store.add("b", random(3, 3, &mut rng));

    let run = |which: u8| {
        let mut tape = Tape::new(&store);
        let (va, vb) = (tape.param(a), tape.param(b));
        let prod = tape.matmul(va, vb).unwrap();
        let l1 = {
            let s = tape.tanh(prod);
            tape.sum_all(s)
        };
        let l2 = {
            let s = tape.mul(va, vb).unwrap();
            let s = tape.square(s);
            tape.sum_all(s)
        };
        let out = match which {
            1 => l1,
            2 => l2,
            _ => tape.add(l1, l2).unwrap(),
        };
        let mut g = GradBuffer::new(&store);
        tape.backward(out, &mut g).unwrap();
        g
    };
    let mut separate = run(1);
    separate.merge(&run(2));
    let joint = run(0);
    for id in [a, b] {
        let (s, j) = (separate.get(id).unwrap(), joint.get(id).unwrap());
        for (x, y) in s.data().iter().zip(j.data()) {
            assert!((x - y).abs() < 1e-12);
        }
    }
}
