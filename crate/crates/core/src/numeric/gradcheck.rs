use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, serde::Serialize)]
pub struct GradCheckReport {
    /// max over entries of |analytic − numeric| / max(1, |numeric|)
    pub max_rel_error: f64,
    /// (parameter index, flat entry index) of the worst entry
    pub worst: Option<(usize, usize)>,
    pub entries_checked: usize,
}

/// Compares tape gradients of `objective` with central finite differences.
///
/// `objective` receives a fresh tape and one leaf per parameter and must
/// return a scalar handle. It is rebuilt twice per parameter entry.
pub fn grad_check<F>(objective: F, params: &[Tensor], epsilon: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(Error::validation(format!("grad_check: epsilon must be > 0, got {epsilon}")));
    }
    let eval = |ps: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = ps.iter().map(|p| tape.leaf(p.clone())).collect();
        let out = objective(&mut tape, &vars)?;
        tape.value(out).to_scalar()
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.leaf(p.clone())).collect();
    let out = objective(&mut tape, &vars)?;
    let grads = tape.backward(out)?;
    let analytic: Vec<Tensor> = vars.iter().map(|&v| grads.wrt(v)).collect();

    let mut work = params.to_vec();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        entries_checked: 0,
    };
    for (pi, p) in params.iter().enumerate() {
        for e in 0..p.data().len() {
            let (r, c) = (e / p.cols(), e % p.cols());
            let orig = p.data()[e];
            work[pi].set(r, c, orig + epsilon)?;
            let plus = eval(&work)?;
            work[pi].set(r, c, orig - epsilon)?;
            let minus = eval(&work)?;
            work[pi].set(r, c, orig)?;
            let numeric = (plus - minus) / (2.0 * epsilon);
            if !numeric.is_finite() {
                return Err(Error::NonFinite { op: "grad_check" });
            }
            let err = (analytic[pi].data()[e] - numeric).abs() / numeric.abs().max(1.0);
            report.entries_checked += 1;
            if err > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = err;
                report.worst = Some((pi, e));
            }
        }
    }
    Ok(report)
}
