//! Central-difference verification of analytic gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::param::{GradBuffer, ParamId, ParamStore};
use crate::error::{Error, Result};

/// Worst relative error observed for one parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamCheck {
    pub name: String,
    pub probes: usize,
    pub max_rel_error: f64,
}

#[derive(Debug, Clone, Default)]
pub struct GradCheckReport {
    pub params: Vec<ParamCheck>,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.params.iter().map(|p| p.max_rel_error).fold(0.0, f64::max)
    }

    /// Worst error per group, where a group is the first two dotted
    /// components of the name (`layer2.gate_f`, `head.local`, ...).
    pub fn by_group(&self) -> Vec<(String, f64)> {
        let mut groups: Vec<(String, f64)> = Vec::new();
        for p in &self.params {
            let g = group_of(&p.name);
            match groups.iter_mut().find(|(n, _)| *n == g) {
                Some((_, e)) => *e = e.max(p.max_rel_error),
                None => groups.push((g, p.max_rel_error)),
            }
        }
        groups
    }
}

pub fn group_of(name: &str) -> String {
    name.splitn(3, '.').take(2).collect::<Vec<_>>().join(".")
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Compares `analytic` against `(L(θ+h) - L(θ-h)) / 2h` on up to
/// `probes_per_param` randomly chosen entries of every parameter.
///
/// `loss_fn` must be deterministic; this is checked by evaluating it twice
/// at the unperturbed point. Parameter values are restored on return.
pub fn finite_difference_check<F>(
    store: &mut ParamStore,
    analytic: &GradBuffer,
    mut loss_fn: F,
    probes_per_param: usize,
    h: f64,
    seed: u64,
) -> Result<GradCheckReport>
where
    F: FnMut(&ParamStore) -> Result<f64>,
{
    if probes_per_param == 0 || store.is_empty() {
        return Ok(GradCheckReport::default());
    }
    let first = loss_fn(store)?;
    let second = loss_fn(store)?;
    if first.to_bits() != second.to_bits() {
        return Err(Error::Numeric(format!(
            "loss is not deterministic ({first} vs {second}); disable dropout"
        )));
    }

    probe_entries(store, analytic, probes_per_param, seed, |store, id, e| {
        let orig = store.value(id).data()[e];
        store.get_mut(id).value.data_mut()[e] = orig + h;
        let plus = loss_fn(store);
        store.get_mut(id).value.data_mut()[e] = orig - h;
        let minus = loss_fn(store);
        store.get_mut(id).value.data_mut()[e] = orig;
        Ok((plus? - minus?) / (2.0 * h))
    })
}

/// Compares `analytic` against `numeric(store, id, entry)` on up to
/// `probes_per_param` randomly chosen entries of every parameter. The
/// callback must leave the store as it found it.
pub fn probe_entries<F>(
    store: &mut ParamStore,
    analytic: &GradBuffer,
    probes_per_param: usize,
    seed: u64,
    mut numeric: F,
) -> Result<GradCheckReport>
where
    F: FnMut(&mut ParamStore, ParamId, usize) -> Result<f64>,
{
    let mut report = GradCheckReport::default();
    if probes_per_param == 0 {
        return Ok(report);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ids: Vec<ParamId> = store.iter().map(|(id, _)| id).collect();
    for id in ids {
        let len = store.value(id).len();
        let n = probes_per_param.min(len);
        let entries = sample(&mut rng, len, n).into_vec();
        let mut worst = 0.0f64;
        for e in entries {
            let a = analytic.get(id).map_or(0.0, |g| g.data()[e]);
            worst = worst.max(relative_error(a, numeric(store, id, e)?));
        }
        report.params.push(ParamCheck {
            name: store.get(id).name.clone(),
            probes: n,
            max_rel_error: worst,
        });
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{Tape, Tensor};

    fn quadratic(store: &ParamStore) -> Result<f64> {
        let v = store.iter().next().unwrap().1.value.data()[0];
        Ok(v * v)
    }

    #[test]
    fn quadratic_exact() {
        let mut store = ParamStore::new();
        let id = store.add("theta", Tensor::scalar(3.0));
        let mut tape = Tape::new(&store);
        let x = tape.param(id);
        let y = tape.square(x);
        let mut grads = GradBuffer::new(&store);
        tape.backward(y, &mut grads).unwrap();
        assert_eq!(grads.get(id).unwrap().data(), &[6.0]);
        let report = finite_difference_check(&mut store, &grads, quadratic, 1, 1e-5, 0).unwrap();
        assert!(report.max_rel_error() < 1e-9);
        assert_eq!(store.value(id).data(), &[3.0]);
    }

    #[test]
    fn empty_probe_set_is_zero() {
        let mut store = ParamStore::new();
        let grads = GradBuffer::new(&store);
        let r = finite_difference_check(&mut store, &grads, |_| Ok(1.0), 4, 1e-5, 0).unwrap();
        assert_eq!(r.max_rel_error(), 0.0);
        store.add("w", Tensor::scalar(1.0));
        let grads = GradBuffer::new(&store);
        let r = finite_difference_check(&mut store, &grads, |_| Ok(1.0), 0, 1e-5, 0).unwrap();
        assert_eq!(r.max_rel_error(), 0.0);
    }

    #[test]
    fn nondeterministic_loss_is_rejected() {
        let mut store = ParamStore::new();
        store.add("w", Tensor::scalar(1.0));
        let grads = GradBuffer::new(&store);
        let mut calls = 0.0;
        let res = finite_difference_check(
            &mut store,
            &grads,
            |_| {
                calls += 1.0;
                Ok(calls)
            },
            1,
            1e-5,
            0,
        );
        assert!(matches!(res, Err(Error::Numeric(_))));
    }

    #[test]
    fn corrupted_gradient_is_caught() {
        let mut store = ParamStore::new();
        let id = store.add("theta", Tensor::scalar(3.0));
        let mut grads = GradBuffer::new(&store);
        grads.add(id, &Tensor::scalar(6.5));
        let r = finite_difference_check(&mut store, &grads, quadratic, 1, 1e-5, 0).unwrap();
        assert!(r.max_rel_error() > 1e-2);
    }
}
