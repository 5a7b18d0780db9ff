use alloc::vec::Vec;

use super::graph::{Graph, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Outcome of comparing reverse-mode gradients against central differences.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_index: usize,
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
    pub tol: f64,
    pub passed: bool,
}

/// Denominator floor for [`rel_error`]; below it differences are effectively absolute.
pub const REL_FLOOR: f64 = 1e-6;

/// `|a − b| / max(|a|, |b|, REL_FLOOR)`.
pub fn rel_error(a: f64, b: f64) -> f64 {
    libm::fabs(a - b) / libm::fabs(a).max(libm::fabs(b)).max(REL_FLOOR)
}

/// Checks `f` at `x`. `f` builds its graph from the given input leaf and returns a
/// one-element output node.
pub fn grad_check<F>(f: F, x: &Tensor, h: f64, tol: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, Var) -> Result<Var>,
{
    let eval = |t: &Tensor| -> Result<(Graph, Var, Var)> {
        let mut g = Graph::new();
        let input = g.param(t.clone());
        let out = f(&mut g, input)?;
        if g.value(out).len() != 1 {
            return Err(Error::Contract(alloc::format!(
                "grad_check needs a scalar function, got shape {:?}",
                g.value(out).shape()
            )));
        }
        Ok((g, input, out))
    };
    let (g, input, out) = eval(x)?;
    let analytic = g.backward(out)?.get_or_zeros(&g, input).into_data();
    let mut numeric = Vec::with_capacity(x.len());
    let mut probe = x.clone();
    for i in 0..x.len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + h;
        let (gp, _, op) = eval(&probe)?;
        probe.data_mut()[i] = orig - h;
        let (gm, _, om) = eval(&probe)?;
        probe.data_mut()[i] = orig;
        numeric.push((gp.value(op).item() - gm.value(om).item()) / (2.0 * h));
    }
    let (worst_index, max_rel_error) = analytic
        .iter()
        .zip(&numeric)
        .map(|(a, n)| rel_error(*a, *n))
        .enumerate()
        .fold((0, 0.0), |best, (i, e)| if e > best.1 { (i, e) } else { best });
    Ok(GradCheckReport {
        max_rel_error,
        worst_index,
        analytic,
        numeric,
        tol,
        passed: max_rel_error <= tol,
    })
}
