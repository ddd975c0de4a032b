//! Central-difference verification of tape gradients.

use crate::error::{Error, Result};

use super::array::Tensor;
use super::tape::{Tape, Var};

/// Outcome of a gradient check over several inputs.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// `(input, flat index)` of the worst coordinate.
    pub worst: (usize, usize),
    pub analytic: f64,
    pub numeric: f64,
    pub coordinates: usize,
    /// Coordinates re-probed with a smaller step after the first probe
    /// crossed a leaky ReLU kink.
    pub refined: usize,
    /// Coordinates left out because every step tried crossed a kink.
    pub skipped: usize,
}

fn rel_error(a: f64, n: f64) -> f64 {
    (a - n).abs() / f64::max(1e-8, a.abs() + n.abs())
}

fn eval_scalar<F>(f: &F, inputs: &[Tensor<f64>]) -> Result<(f64, Vec<bool>)>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let out = f(&mut tape, &vars)?;
    let v = tape.value(out);
    if v.numel() != 1 {
        return Err(Error::NonScalar(v.shape().to_vec()));
    }
    Ok((v.item(), tape.kink_signature()))
}

/// Compares tape gradients of the scalar function `f` against central
/// differences `(f(x+eps) - f(x-eps)) / 2eps`, coordinate by coordinate,
/// over every input tensor.
///
/// A probe that changes the sign of any leaky ReLU input straddles a kink,
/// where the difference quotient does not estimate the derivative. Such
/// coordinates are retried with `eps / 10` and `eps / 100`, and skipped if
/// those cross a kink too.
pub fn grad_check_many<F>(f: F, inputs: &[Tensor<f64>], eps: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let out = f(&mut tape, &vars)?;
    if tape.value(out).numel() != 1 {
        return Err(Error::NonScalar(tape.value(out).shape().to_vec()));
    }
    let grads = tape.backward(out)?;
    let base = tape.kink_signature();

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: (0, 0),
        analytic: 0.0,
        numeric: 0.0,
        coordinates: 0,
        refined: 0,
        skipped: 0,
    };
    let mut probe: Vec<Tensor<f64>> = inputs.to_vec();
    for (i, var) in vars.iter().enumerate() {
        let analytic = grads.get(*var);
        for j in 0..inputs[i].numel() {
            let x0 = inputs[i].data()[j];
            let mut numeric = None;
            for (attempt, h) in [eps, eps / 10.0, eps / 100.0].into_iter().enumerate() {
                probe[i].data_mut()[j] = x0 + h;
                let (up, sig_up) = eval_scalar(&f, &probe)?;
                probe[i].data_mut()[j] = x0 - h;
                let (down, sig_down) = eval_scalar(&f, &probe)?;
                probe[i].data_mut()[j] = x0;
                if sig_up == base && sig_down == base {
                    report.refined += usize::from(attempt > 0);
                    numeric = Some((up - down) / (2.0 * h));
                    break;
                }
            }
            let Some(numeric) = numeric else {
                report.skipped += 1;
                continue;
            };
            let a = analytic.map_or(0.0, |g| g.data()[j]);
            let err = rel_error(a, numeric);
            report.coordinates += 1;
            if err > report.max_rel_error || report.coordinates == 1 {
                report.max_rel_error = err;
                report.worst = (i, j);
                report.analytic = a;
                report.numeric = numeric;
            }
        }
    }
    Ok(report)
}

/// Single-input form; returns the maximum relative error.
pub fn grad_check<F>(f: F, x: &Tensor<f64>, eps: f64) -> Result<f64>
where
    F: Fn(&mut Tape<f64>, Var) -> Result<Var>,
{
    grad_check_many(|t, v| f(t, v[0]), std::slice::from_ref(x), eps).map(|r| r.max_rel_error)
}
