//! Central finite differences against the reverse sweep.

use super::{Real, Result, Tape, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheck {
    /// Perturbation size `h`.
    pub step: f64,
    /// Denominator floor for the relative error, so that coordinates with
    /// vanishing gradient are compared absolutely.
    pub floor: f64,
    /// A coordinate whose one-sided slopes differ by more than this fraction
    /// straddles a kink (e.g. ReLU at 0) and is excluded.
    pub kink_tol: f64,
}

impl Default for GradCheck {
    fn default() -> Self {
        Self {
            step: 1e-4,
            floor: 1e-6,
            kink_tol: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub checked: usize,
    pub excluded: usize,
    /// `(input, coordinate)` of the worst error.
    pub worst: Option<(usize, usize)>,
}

impl GradCheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_error < tol && self.checked > 0
    }
}

/// Checks `f`'s gradient with respect to a single input.
pub fn finite_diff_check<T, F>(f: F, x: &Tensor<T>, cfg: &GradCheck) -> Result<GradCheckReport>
where
    T: Real,
    F: Fn(&mut Tape<T>, Var) -> Result<Var>,
{
    finite_diff_check_many(|tape, vars| f(tape, vars[0]), std::slice::from_ref(x), cfg)
}

/// Checks `f`'s gradient with respect to every input tensor.
pub fn finite_diff_check_many<T, F>(
    f: F,
    inputs: &[Tensor<T>],
    cfg: &GradCheck,
) -> Result<GradCheckReport>
where
    T: Real,
    F: Fn(&mut Tape<T>, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|x| tape.leaf(x.clone(), true)).collect();
    let loss = f(&mut tape, &vars)?;
    let grads = tape.backward(loss)?;
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .zip(inputs)
        .map(|(&v, x)| {
            grads
                .get(v)
                .map_or_else(|| vec![0.0; x.numel()], Tensor::to_f64)
        })
        .collect();

    let eval = |xs: &[Tensor<T>]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = xs.iter().map(|x| tape.leaf(x.clone(), false)).collect();
        let out = f(&mut tape, &vars)?;
        Ok(tape.value(out).data()[0].as_f64())
    };

    let f0 = eval(inputs)?;
    let h = cfg.step;
    let mut work = inputs.to_vec();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        checked: 0,
        excluded: 0,
        worst: None,
    };
    for i in 0..inputs.len() {
        for (j, &a) in analytic[i].iter().enumerate() {
            let x0 = inputs[i].data()[j];
            work[i].data_mut()[j] = T::of(x0.as_f64() + h);
            let fp = eval(&work)?;
            work[i].data_mut()[j] = T::of(x0.as_f64() - h);
            let fm = eval(&work)?;
            work[i].data_mut()[j] = x0;

            let (fwd, bwd) = ((fp - f0) / h, (f0 - fm) / h);
            if (fwd - bwd).abs() > cfg.kink_tol * fwd.abs().max(bwd.abs()).max(cfg.floor) {
                report.excluded += 1;
                continue;
            }
            let numeric = (fp - fm) / (2.0 * h);
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(cfg.floor);
            report.checked += 1;
            if rel > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = report.max_rel_error.max(rel);
                report.worst = Some((i, j));
            }
        }
    }
    Ok(report)
}
