//! Finite-difference verification of reverse-mode gradients.

use crate::error::{Error, Result};
use crate::nnx::graph::{Graph, Var};
use crate::nnx::tensor::Tensor;

/// Central-difference step.
pub const FD_STEP: f64 = 1e-5;

/// Denominator floor for the relative error of near-zero components.
pub const REL_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// `(parameter index, element index)` of the worst component.
    pub worst: (usize, usize),
    pub analytic: f64,
    pub numeric: f64,
    pub checked: usize,
    pub tolerance: f64,
    pub passed: bool,
}

/// Central-difference estimate of `∂loss/∂params`, element by element.
/// `loss_fn` gets a fresh graph with `params` bound as leaves (same order).
pub fn numeric_gradients<F>(params: &[Tensor], mut loss_fn: F) -> Result<Vec<Tensor>>
where
    F: FnMut(&mut Graph, &[Var]) -> Result<Var>,
{
    let mut work: Vec<Tensor> = params.to_vec();
    let mut out = Vec::with_capacity(params.len());
    for pi in 0..params.len() {
        let mut grad = Tensor::zeros(params[pi].shape());
        for ei in 0..params[pi].len() {
            let orig = params[pi].data()[ei];
            work[pi].data_mut()[ei] = orig + FD_STEP;
            let up = eval_loss(&work, &mut loss_fn)?;
            work[pi].data_mut()[ei] = orig - FD_STEP;
            let down = eval_loss(&work, &mut loss_fn)?;
            work[pi].data_mut()[ei] = orig;
            grad.data_mut()[ei] = (up - down) / (2.0 * FD_STEP);
        }
        out.push(grad);
    }
    Ok(out)
}

/// Reverse-mode gradient of `loss_fn` at `params`; leaves the loss does not
/// reach get zeros.
pub fn analytic_gradients<F>(params: &[Tensor], mut loss_fn: F) -> Result<Vec<Tensor>>
where
    F: FnMut(&mut Graph, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = params.iter().map(|t| g.param(t.clone())).collect();
    let loss = loss_fn(&mut g, &vars)?;
    let grads = g.backward(loss)?;
    Ok(vars
        .iter()
        .zip(params)
        .map(|(v, t)| grads.wrt(*v).cloned().unwrap_or_else(|| Tensor::zeros(t.shape())))
        .collect())
}

fn eval_loss<F>(ps: &[Tensor], f: &mut F) -> Result<f64>
where
    F: FnMut(&mut Graph, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = ps.iter().map(|t| g.param(t.clone())).collect();
    let l = f(&mut g, &vars)?;
    Ok(g.value(l).item())
}

/// Worst relative error between two gradient sets of equal layout.
///
/// Relative error per component is `|a − n| / max(|a|, |n|, REL_FLOOR)`.
pub fn compare_gradients(analytic: &[Tensor], numeric: &[Tensor], tolerance: f64) -> Result<GradCheckReport> {
    if analytic.len() != numeric.len() {
        return Err(Error::Dimension("gradient sets differ in length".into()));
    }
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: (0, 0),
        analytic: 0.0,
        numeric: 0.0,
        checked: 0,
        tolerance,
        passed: true,
    };
    for (pi, (a, n)) in analytic.iter().zip(numeric).enumerate() {
        a.check_same_shape(n)?;
        for (ei, (&a, &n)) in a.data().iter().zip(n.data()).enumerate() {
            let rel = (a - n).abs() / a.abs().max(n.abs()).max(REL_FLOOR);
            report.checked += 1;
            if rel > report.max_rel_error || rel.is_nan() {
                report.max_rel_error = if rel.is_nan() { f64::INFINITY } else { rel };
                report.worst = (pi, ei);
                report.analytic = a;
                report.numeric = n;
            }
        }
    }
    report.passed = report.max_rel_error < tolerance;
    Ok(report)
}

/// Compares `backward` against central differences for every element of
/// every tensor in `params`. `loss_fn` receives a graph with `params` bound
/// as differentiable leaves (same order) and must return a scalar node.
pub fn grad_check<F>(params: &[Tensor], tolerance: f64, mut loss_fn: F) -> Result<GradCheckReport>
where
    F: FnMut(&mut Graph, &[Var]) -> Result<Var>,
{
    let base = eval_loss(params, &mut loss_fn)?;
    let again = eval_loss(params, &mut loss_fn)?;
    if again.to_bits() != base.to_bits() {
        return Err(Error::GradCheck(format!(
            "loss is not deterministic: {base} then {again}"
        )));
    }
    let analytic = analytic_gradients(params, &mut loss_fn)?;
    let numeric = numeric_gradients(params, &mut loss_fn)?;
    compare_gradients(&analytic, &numeric, tolerance)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_at_three() {
        let r = grad_check(&[Tensor::scalar(3.0)], 1e-6, |g, v| g.mul(v[0], v[0])).unwrap();
        assert!(r.passed);
        assert!((r.analytic - 6.0).abs() < 1e-12);
        assert!((r.numeric - 6.0).abs() < 1e-7);
    }

    #[test]
    fn detects_nondeterminism() {
        let mut calls = 0.0;
        let r = grad_check(&[Tensor::scalar(1.0)], 1e-4, |g, v| {
            calls += 1.0;
            Ok(g.mul_scalar(v[0], calls))
        });
        assert!(matches!(r, Err(Error::GradCheck(_))));
    }

    #[test]
    fn elementwise_ops_pass() {
        let a = Tensor::new(&[1, 2, 2, 2], vec![0.3, -0.7, 1.1, 0.2, -0.4, 0.9, 0.5, -1.3]).unwrap();
        let b = a.map(|v| v * 0.5 + 2.0);
        let r = grad_check(&[a, b], 1e-6, |g, v| {
            let d = g.div(v[0], v[1])?;
            let m = g.mul(d, v[0])?;
            let s = g.sigmoid(m);
            let sd = g.channel_std(s)?;
            let mu = g.channel_mean(v[1])?;
            let t = g.add(sd, mu)?;
            let w = g.broadcast_hw(t, 2, 2)?;
            let w = g.sub(w, v[0])?;
            let w = g.gather_rows(w, &[0, 0])?;
            Ok(g.weighted_sum(w, Tensor::new(&[2, 2, 2, 2], (0..16).map(|i| i as f64 * 0.1 - 0.4).collect())?)?)
        })
        .unwrap();
        assert!(r.passed, "{r:?}");
    }
}
