//! Central finite-difference oracle for unit tests.

use super::{Graph, Shape, Tensor};
use crate::error::Result;

pub(crate) const FD_EPS: f64 = 1e-5;

/// Relative error with a small denominator floor so entries that are zero
/// in both routes do not divide by zero.
pub(crate) fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

/// Builds the loss from fresh leaves holding `inputs`, then compares the
/// analytic gradient of every input entry with central differences.
/// Returns the worst relative error.
pub(crate) fn max_grad_error<F>(inputs: &[(Shape, Vec<f64>)], f: F) -> f64
where
    F: Fn(&mut Graph, &[Tensor]) -> Result<Tensor>,
{
    let eval = |vals: &[(Shape, Vec<f64>)]| -> (f64, Vec<Vec<f64>>) {
        let mut g = Graph::new();
        let ts: Vec<Tensor> = vals
            .iter()
            .map(|(s, d)| g.input(*s, d.clone()).unwrap())
            .collect();
        let loss = f(&mut g, &ts).unwrap();
        g.backward(loss).unwrap();
        let grads = ts.iter().map(|t| g.grad(*t).to_vec()).collect();
        (g.scalar(loss), grads)
    };
    let (_, analytic) = eval(inputs);
    let mut worst: f64 = 0.0;
    for (ti, (_, data)) in inputs.iter().enumerate() {
        for i in 0..data.len() {
            let mut plus = inputs.to_vec();
            plus[ti].1[i] += FD_EPS;
            let mut minus = inputs.to_vec();
            minus[ti].1[i] -= FD_EPS;
            let numeric = (eval(&plus).0 - eval(&minus).0) / (2.0 * FD_EPS);
            worst = worst.max(rel_err(analytic[ti][i], numeric));
        }
    }
    worst
}

pub(crate) fn random_values(seed: u64, n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 2.0 * super::math::counter_uniform(seed, 99, i as u64) - 1.0)
        .collect()
}

/// Finite-difference check over parameters held in `store`. At most
/// `per_param` entries of each parameter are probed, spread evenly.
pub(crate) fn max_param_grad_error<F>(store: &super::ParamStore, per_param: usize, f: F) -> f64
where
    F: Fn(&mut Graph) -> Result<Tensor>,
{
    let eval = |s: &super::ParamStore, want_grads: bool| -> (f64, Vec<Vec<f64>>) {
        let mut g = Graph::with_params(s);
        let loss = f(&mut g).unwrap();
        let value = g.scalar(loss);
        if !want_grads {
            return (value, Vec::new());
        }
        g.backward(loss).unwrap();
        let grads = s
            .ids()
            .map(|id| match g.param_grad(id) {
                Some(gr) => gr.to_vec(),
                None => vec![0.0; s.get(id).data.len()],
            })
            .collect();
        (value, grads)
    };
    let (_, analytic) = eval(store, true);
    let mut worst: f64 = 0.0;
    for (pi, id) in store.ids().enumerate() {
        let n = store.get(id).data.len();
        let stride = (n / per_param).max(1);
        for i in (0..n).step_by(stride).take(per_param) {
            let mut plus = store.clone();
            plus.get_mut(id).data[i] += FD_EPS;
            let mut minus = store.clone();
            minus.get_mut(id).data[i] -= FD_EPS;
            let numeric = (eval(&plus, false).0 - eval(&minus, false).0) / (2.0 * FD_EPS);
            worst = worst.max(rel_err(analytic[pi][i], numeric));
        }
    }
    worst
}
