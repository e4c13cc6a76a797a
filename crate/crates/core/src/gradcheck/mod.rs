//! Central finite-difference verification of autodiff gradients.

mod suite;

pub use suite::{family, run_suite, Family, FamilyKind, FamilyReport, SuiteOptions, FAMILIES};

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::params::ParameterStore;

#[derive(Clone, Copy, Debug)]
pub struct GradCheckOptions {
    pub eps: f64,
    /// Check at most this many randomly chosen entries per parameter.
    pub max_entries_per_param: Option<usize>,
    pub seed: u64,
    /// Denominator floor of the relative error; differences below it count
    /// as noise.
    pub floor: f64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            eps: 1e-5,
            max_entries_per_param: None,
            seed: 0,
            floor: 1e-8,
        }
    }
}

/// Largest disagreement found by [`grad_check`].
#[derive(Clone, Debug, Default, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// `(parameter, flat index, analytic, numeric)` of the worst entry.
    pub worst: Option<(String, usize, f64, f64)>,
    pub entries_checked: usize,
}

/// `|a − n| / max(floor, |a| + |n|)`.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(floor)
}

fn evaluate<F>(program: &F, params: &ParameterStore<f64>) -> Result<f64>
where
    F: Fn(&mut Graph<f64>, &ParameterStore<f64>) -> Result<Var>,
{
    let mut g = Graph::new();
    let out = program(&mut g, params)?;
    let v = g.value(out);
    if v.numel() != 1 {
        return Err(Error::NonScalarOutput(v.shape().to_vec()));
    }
    Ok(v.data()[0])
}

/// Compares autodiff gradients of a scalar program against central
/// differences `(f(x+ε) − f(x−ε)) / 2ε` for every trainable parameter.
///
/// `program` must place parameters on the graph with [`Graph::param`] under
/// their store names.
pub fn grad_check<F>(program: F, params: &ParameterStore<f64>, opts: GradCheckOptions) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<f64>, &ParameterStore<f64>) -> Result<Var>,
{
    let mut g = Graph::new();
    let out = program(&mut g, params)?;
    let grads = g.backward(out)?;
    let analytic = grads.params();
    drop(g);

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut report = GradCheckReport::default();
    let mut work = params.clone();
    for (name, tensor) in params.trainable() {
        let grad = analytic
            .get(name)
            .map(|t| t.data().to_vec())
            .unwrap_or_else(|| vec![0.0; tensor.numel()]);
        let picks: Vec<usize> = match opts.max_entries_per_param {
            Some(k) if k < tensor.numel() => sample(&mut rng, tensor.numel(), k).into_vec(),
            _ => (0..tensor.numel()).collect(),
        };
        for i in picks {
            let base = tensor.data()[i];
            let mut plus = tensor.clone();
            plus.data_mut()[i] = base + opts.eps;
            work.set(name, plus)?;
            let f_plus = evaluate(&program, &work)?;
            let mut minus = tensor.clone();
            minus.data_mut()[i] = base - opts.eps;
            work.set(name, minus)?;
            let f_minus = evaluate(&program, &work)?;
            work.set(name, tensor.clone())?;

            let numeric = (f_plus - f_minus) / (2.0 * opts.eps);
            let err = relative_error(grad[i], numeric, opts.floor);
            report.entries_checked += 1;
            if err > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = report.max_rel_error.max(err);
                report.worst = Some((name.to_string(), i, grad[i], numeric));
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    #[test]
    fn constant_program_has_zero_gradients() {
        let mut store = ParameterStore::new();
        store.insert("w", Tensor::from_fn(&[3], |i| i as f64).unwrap(), true).unwrap();
        let report = grad_check(
            |g, _| Ok(g.constant(Tensor::scalar(4.0))),
            &store,
            GradCheckOptions::default(),
        )
        .unwrap();
        assert_eq!(report.max_rel_error, 0.0);
        assert_eq!(report.entries_checked, 3);
        let (_, _, a, n) = report.worst.unwrap();
        assert_eq!((a, n), (0.0, 0.0));
    }

    #[test]
    fn non_scalar_output_is_an_error() {
        let mut store = ParameterStore::new();
        store.insert("w", Tensor::<f64>::zeros(&[2]).unwrap(), true).unwrap();
        let res = grad_check(
            |g, p| Ok(g.param("w", p.get("w")?.clone())),
            &store,
            GradCheckOptions::default(),
        );
        assert!(matches!(res, Err(Error::NonScalarOutput(_))));
    }
}
