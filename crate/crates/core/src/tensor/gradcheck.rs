//! Finite-difference verification of tape gradients.

use rand::seq::index::sample;

use super::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, Copy)]
pub struct GradCheckOptions {
    pub eps: f64,
    /// Elements probed per input; all of them when `None`.
    pub max_per_input: Option<usize>,
    pub seed: u64,
    /// Denominator floor of the relative error.
    pub floor: f64,
    /// A probe whose forward and backward one-sided slopes differ by more
    /// than this (relative, floor 1) straddles a kink and is skipped.
    pub kink_tolerance: f64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            eps: 1e-5,
            max_per_input: Some(24),
            seed: 0,
            floor: 1e-6,
            kink_tolerance: 1e-3,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub checked: usize,
    pub rejected: usize,
    /// `(input, element, analytic, numeric)` of the worst probe.
    pub worst: Option<(usize, usize, f64, f64)>,
}

impl GradCheckReport {
    pub fn passes(&self, tolerance: f64) -> bool {
        self.checked > 0 && self.max_rel_error < tolerance
    }
}

pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Compares the tape gradient of the scalar `f(inputs)` against central
/// differences for a sample of elements of every input.
pub fn check_gradients<F>(inputs: &[Tensor<f64>], f: F, opts: &GradCheckOptions) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone(), true)).collect();
    let out = f(&mut tape, &vars)?;
    if tape.value(out).len() != 1 {
        return Err(Error::Usage("gradient check needs a scalar function".into()));
    }
    let grads = tape.backward(out)?;

    let eval = |values: &[Tensor<f64>]| -> Result<f64> {
        let mut t = Tape::new();
        let vs: Vec<Var> = values.iter().map(|v| t.leaf(v.clone(), false)).collect();
        let o = f(&mut t, &vs)?;
        Ok(t.value(o).item())
    };
    // (forward slope, backward slope, central difference)
    let center = eval(inputs)?;
    let slopes = |values: &mut Vec<Tensor<f64>>, i: usize, j: usize, h: f64| -> Result<(f64, f64, f64)> {
        let orig = values[i].data()[j];
        values[i].data_mut()[j] = orig + h;
        let plus = eval(values)?;
        values[i].data_mut()[j] = orig - h;
        let minus = eval(values)?;
        values[i].data_mut()[j] = orig;
        Ok(((plus - center) / h, (center - minus) / h, (plus - minus) / (2.0 * h)))
    };

    let mut rng = rng::stream(opts.seed, 0);
    let mut values = inputs.to_vec();
    let mut report = GradCheckReport::default();
    for (i, var) in vars.iter().enumerate() {
        let len = inputs[i].len();
        let picks: Vec<usize> = match opts.max_per_input {
            Some(m) if m < len => {
                let mut v = sample(&mut rng, len, m).into_vec();
                v.sort_unstable();
                v
            }
            _ => (0..len).collect(),
        };
        let zero = Tensor::zeros(inputs[i].shape());
        let analytic = grads.get(*var).unwrap_or(&zero);
        for j in picks {
            let (fwd, bwd, n1) = slopes(&mut values, i, j, opts.eps)?;
            if relative_error(fwd, bwd, 1.0) > opts.kink_tolerance {
                report.rejected += 1;
                continue;
            }
            let a = analytic.data()[j];
            let rel = relative_error(a, n1, opts.floor);
            report.checked += 1;
            if rel > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = report.max_rel_error.max(rel);
                report.worst = Some((i, j, a, n1));
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn product_gradient_passes() {
        let a = Tensor::new([3], vec![0.5, -1.5, 2.0]).unwrap();
        let b = Tensor::new([3], vec![1.25, 0.75, -0.5]).unwrap();
        let r = check_gradients(
            &[a, b],
            |t, v| {
                let m = t.mul(v[0], v[1])?;
                let sq = t.mul(m, m)?;
                Ok(t.sum(sq))
            },
            &GradCheckOptions::default(),
        )
        .unwrap();
        assert_eq!(r.checked, 6);
        assert!(r.passes(1e-6), "{r:?}");
    }

    #[test]
    fn relu_kink_is_rejected() {
        let x = Tensor::new([2], vec![0.0, 1.0]).unwrap();
        let r = check_gradients(
            &[x],
            |t, v| {
                let h = t.relu(v[0]);
                Ok(t.sum(h))
            },
            &GradCheckOptions::default(),
        )
        .unwrap();
        assert_eq!((r.checked, r.rejected), (1, 1));
    }

    #[test]
    fn wrong_gradient_is_caught() {
        // a constant reports no gradient although the function depends on it
        let x = Tensor::new([1], vec![2.0]).unwrap();
        let r = check_gradients(
            &[x.clone()],
            |t, v| {
                let c = t.leaf(t.value(v[0]).clone(), false);
                let sq = t.mul(c, c)?;
                Ok(t.sum(sq))
            },
            &GradCheckOptions::default(),
        )
        .unwrap();
        assert!(!r.passes(1e-4));
    }
}
