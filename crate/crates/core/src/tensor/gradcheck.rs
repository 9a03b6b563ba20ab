//! Central finite-difference checks for tape-built functions (64-bit).

use super::{Result, Tape, Tensor, Var};

/// Outcome of a finite-difference comparison.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct GradCheck {
    /// max over checked coordinates of `|analytic − numeric| / max(1, |analytic|)`
    pub max_rel_error: f64,
    pub checked: usize,
    /// coordinates skipped because a kink lies within one step
    pub excluded: usize,
}

impl GradCheck {
    pub fn merge(&mut self, other: &GradCheck) {
        self.max_rel_error = self.max_rel_error.max(other.max_rel_error);
        self.checked += other.checked;
        self.excluded += other.excluded;
    }

    pub fn passes(&self, tol: f64) -> bool {
        self.checked > 0 && self.max_rel_error < tol
    }
}

/// One-sided slopes disagreeing by more than this (relative) mark a kink.
const KINK_TOL: f64 = 1e-4;
/// Central differences at `h` and `h/2` agreeing to this mean no kink.
const CONSISTENCY_TOL: f64 = 1e-7;

fn eval_scalar<F>(f: &F, inputs: &[Tensor<f64>]) -> Result<f64>
where
    F: for<'t> Fn(&'t Tape<f64>, &[Var<'t, f64>]) -> Result<Var<'t, f64>>,
{
    let tape = Tape::new();
    let vars: Vec<_> = inputs.iter().map(|x| tape.constant(x.clone())).collect();
    let out = f(&tape, &vars)?;
    Ok(out.value().data().iter().sum())
}

/// Checks the gradient of scalar `f` w.r.t. every coordinate of every input.
pub fn finite_difference_check_many<F>(f: F, inputs: &[Tensor<f64>], step: f64) -> Result<Vec<GradCheck>>
where
    F: for<'t> Fn(&'t Tape<f64>, &[Var<'t, f64>]) -> Result<Var<'t, f64>>,
{
    let tape = Tape::new();
    let vars: Vec<_> = inputs.iter().map(|x| tape.param(x)).collect();
    let out = f(&tape, &vars)?;
    let grads = tape.backward(&out)?;
    let f0 = out.item();

    let mut reports = Vec::with_capacity(inputs.len());
    for (i, x) in inputs.iter().enumerate() {
        let analytic = grads.raw(&vars[i]).map(|g| g.to_vec()).unwrap_or_else(|| vec![0.0; x.len()]);
        let mut report = GradCheck::default();
        let mut probe: Vec<Tensor<f64>> = inputs.to_vec();
        for j in 0..x.len() {
            let orig = x.data()[j];
            probe[i].data_mut()[j] = orig + step;
            let fp = eval_scalar(&f, &probe)?;
            probe[i].data_mut()[j] = orig - step;
            let fm = eval_scalar(&f, &probe)?;
            probe[i].data_mut()[j] = orig;
            let central = (fp - fm) / (2.0 * step);
            let fwd = (fp - f0) / step;
            let bwd = (f0 - fm) / step;
            if !central.is_finite() {
                report.excluded += 1;
                continue;
            }
            let gap = (fwd - bwd).abs();
            if gap > KINK_TOL * central.abs().max(1.0) {
                // smooth curvature leaves the central difference unchanged
                // at half the step and halves the one-sided gap, a kink does
                // neither
                probe[i].data_mut()[j] = orig + step / 2.0;
                let fp2 = eval_scalar(&f, &probe)?;
                probe[i].data_mut()[j] = orig - step / 2.0;
                let fm2 = eval_scalar(&f, &probe)?;
                probe[i].data_mut()[j] = orig;
                let central_half = (fp2 - fm2) / step;
                let gap_half = (2.0 * (fp2 - f0) / step - 2.0 * (f0 - fm2) / step).abs();
                let drifts = !((central - central_half).abs() <= CONSISTENCY_TOL * central.abs().max(1.0));
                if drifts || gap_half > 0.75 * gap {
                    report.excluded += 1;
                    continue;
                }
            }
            let a = analytic[j];
            let err = (a - central).abs() / a.abs().max(1.0);
            report.max_rel_error = report.max_rel_error.max(err);
            report.checked += 1;
        }
        reports.push(report);
    }
    Ok(reports)
}

/// Single-input form: returns the merged report over all coordinates of `x`.
pub fn finite_difference_check<F>(f: F, x: &Tensor<f64>, step: f64) -> Result<GradCheck>
where
    F: for<'t> Fn(&'t Tape<f64>, Var<'t, f64>) -> Result<Var<'t, f64>>,
{
    let reports = finite_difference_check_many(|t, v| f(t, v[0]), std::slice::from_ref(x), step)?;
    Ok(reports.into_iter().next().unwrap_or_default())
}
