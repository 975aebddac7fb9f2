//! Central finite-difference verification of analytic gradients.

use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::ParameterStore;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckOptions {
    pub step: f64,
    pub tolerance: f64,
    /// Lower bound on the relative-error denominator, so entries whose true
    /// gradient is zero are judged by absolute error instead.
    pub denominator_floor: f64,
    /// Check at most this many evenly spaced entries per parameter.
    pub max_entries_per_param: Option<usize>,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            step: 1e-5,
            tolerance: 1e-4,
            denominator_floor: 1e-6,
            max_entries_per_param: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ParamCheck {
    pub name: String,
    pub entries_checked: usize,
    pub max_rel_err: f64,
    pub max_abs_err: f64,
    pub max_abs_grad: f64,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct GradCheckReport {
    pub params: Vec<ParamCheck>,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn max_rel_err(&self) -> f64 {
        self.params.iter().map(|p| p.max_rel_err).fold(0.0, f64::max)
    }

    pub fn entries_checked(&self) -> usize {
        self.params.iter().map(|p| p.entries_checked).sum()
    }

    pub fn passed(&self) -> bool {
        self.max_rel_err() < self.tolerance
    }

    /// Parameters that exceeded the tolerance.
    pub fn failures(&self) -> impl Iterator<Item = &ParamCheck> {
        self.params.iter().filter(|p| p.max_rel_err >= self.tolerance)
    }
}

pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(floor);
    (analytic - numeric).abs() / denom
}

fn entry_indices(len: usize, limit: Option<usize>) -> Vec<usize> {
    match limit {
        Some(k) if k < len => {
            if k == 0 {
                return Vec::new();
            }
            (0..k).map(|i| i * len / k).collect()
        }
        _ => (0..len).collect(),
    }
}

/// Compares the gradients `f` produces through the tape with central
/// differences `(f(x + h) - f(x - h)) / 2h`, for every trainable parameter.
pub fn finite_difference_check<F>(
    f: F,
    params: &ParameterStore,
    opts: GradCheckOptions,
) -> Result<GradCheckReport>
where
    F: for<'t> Fn(&'t Tape, &ParameterStore) -> Result<Var<'t>>,
{
    if !(opts.step > 0.0) {
        return Err(Error::input("finite-difference step must be positive"));
    }
    let mut analytic = params.clone();
    analytic.zero_grads();
    {
        let tape = Tape::new();
        let loss = f(&tape, &analytic)?;
        tape.backward_into(loss, &mut analytic)?;
    }

    let eval = |store: &ParameterStore| -> Result<f64> {
        let tape = Tape::new();
        Ok(f(&tape, store)?.item())
    };

    let mut work = params.clone();
    let names: Vec<String> = params
        .iter()
        .filter(|(_, t)| t.requires_grad())
        .map(|(n, _)| n.to_string())
        .collect();
    let mut report = Vec::with_capacity(names.len());
    for name in names {
        let len = work.get(&name)?.numel();
        let grad = analytic.get(&name)?.grad().map(<[f64]>::to_vec);
        let mut check = ParamCheck {
            name: name.clone(),
            entries_checked: 0,
            max_rel_err: 0.0,
            max_abs_err: 0.0,
            max_abs_grad: 0.0,
        };
        for i in entry_indices(len, opts.max_entries_per_param) {
            let original = work.get(&name)?.data()[i];
            work.get_mut(&name)?.data_mut()[i] = original + opts.step;
            let plus = eval(&work)?;
            work.get_mut(&name)?.data_mut()[i] = original - opts.step;
            let minus = eval(&work)?;
            work.get_mut(&name)?.data_mut()[i] = original;

            let numeric = (plus - minus) / (2.0 * opts.step);
            let a = grad.as_ref().map_or(0.0, |g| g[i]);
            check.entries_checked += 1;
            check.max_abs_grad = check.max_abs_grad.max(a.abs());
            check.max_abs_err = check.max_abs_err.max((a - numeric).abs());
            check.max_rel_err = check
                .max_rel_err
                .max(relative_error(a, numeric, opts.denominator_floor));
        }
        report.push(check);
    }
    Ok(GradCheckReport {
        params: report,
        tolerance: opts.tolerance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;
    use alloc::vec;

    #[test]
    fn quadratic_is_checked_to_high_precision() {
        let mut store = ParameterStore::new();
        store.insert("x", Tensor::vector(vec![0.3, -1.2, 2.5]));
        let coeff = Tensor::vector(vec![1.0, 2.0, 0.5]);
        let report = finite_difference_check(
            |tape, s| {
                let x = tape.param(s, "x")?;
                let c = tape.constant(&coeff);
                Ok(x.mul(x)?.mul(c)?.sum())
            },
            &store,
            GradCheckOptions::default(),
        )
        .unwrap();
        assert_eq!(report.entries_checked(), 3);
        assert!(report.max_rel_err() < 1e-7, "{report:?}");
    }

    #[test]
    fn constant_function_has_zero_gradients() {
        let mut store = ParameterStore::new();
        store.insert("x", Tensor::vector(vec![1.0, 2.0]));
        let report = finite_difference_check(
            |tape, _| Ok(tape.constant(&Tensor::scalar(4.0))),
            &store,
            GradCheckOptions::default(),
        )
        .unwrap();
        assert_eq!(report.params[0].max_abs_grad, 0.0);
        assert!(report.passed());
    }

    #[test]
    fn rejects_non_positive_step() {
        let store = ParameterStore::new();
        let opts = GradCheckOptions {
            step: 0.0,
            ..GradCheckOptions::default()
        };
        assert!(finite_difference_check(|t, _| Ok(t.constant(&Tensor::scalar(0.0))), &store, opts).is_err());
    }

    #[test]
    fn entry_sampling_is_even() {
        assert_eq!(entry_indices(10, Some(5)), vec![0, 2, 4, 6, 8]);
        assert_eq!(entry_indices(3, Some(5)), vec![0, 1, 2]);
    }
}
