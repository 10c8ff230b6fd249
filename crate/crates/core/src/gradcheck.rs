//! Central finite-difference check of tape gradients.

use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::tensor::{ParamId, ParamStore, Tape, TensorError, Var};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckConfig {
    pub step: f64,
    pub tolerance: f64,
    /// Check at most this many evenly spaced coordinates per parameter.
    pub max_coords_per_param: Option<usize>,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            step: 1e-5,
            tolerance: 1e-4,
            max_coords_per_param: None,
        }
    }
}

impl GradCheckConfig {
    /// Step `1e-5`, tolerance `1e-6`; used for individual primitives.
    pub fn tight() -> Self {
        Self {
            tolerance: 1e-6,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_param: String,
    pub worst_index: usize,
    pub coords_checked: usize,
    pub failures: usize,
    pub tolerance: f64,
    pub passed: bool,
}

/// `|a - n| / max(|a|, |n|, 1e-8)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Compares the tape gradient of `f` against central differences for every
/// parameter coordinate in `store`. `f` must be deterministic.
///
/// `store` is restored to its original values; its gradients are overwritten
/// by the analytic pass.
pub fn finite_diff_check<F>(f: &F, store: &mut ParamStore, cfg: &GradCheckConfig) -> Result<GradCheckReport, TensorError>
where
    F: Fn(&ParamStore, &mut Tape) -> Result<Var, TensorError>,
{
    store.zero_grads();
    let mut tape = Tape::new();
    let loss = f(store, &mut tape)?;
    tape.backward(loss, store)?;

    let eval = |store: &ParamStore| -> Result<f64, TensorError> {
        let mut tape = Tape::new();
        let l = f(store, &mut tape)?;
        Ok(tape.value(l).get(0, 0))
    };

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_param: String::new(),
        worst_index: 0,
        coords_checked: 0,
        failures: 0,
        tolerance: cfg.tolerance,
        passed: true,
    };
    let ids: Vec<ParamId> = store.ids().collect();
    for id in ids {
        let n = store.value(id).len();
        let coords: Vec<usize> = match cfg.max_coords_per_param {
            Some(k) if k < n => (0..k).map(|i| i * n / k).collect(),
            _ => (0..n).collect(),
        };
        for k in coords {
            let analytic = store.grad(id).map_or(0.0, |g| g.as_slice()[k]);
            let orig = store.value(id).as_slice()[k];
            store.value_mut(id).as_mut_slice()[k] = orig + cfg.step;
            let plus = eval(store);
            store.value_mut(id).as_mut_slice()[k] = orig - cfg.step;
            let minus = eval(store);
            store.value_mut(id).as_mut_slice()[k] = orig;
            let numeric = (plus? - minus?) / (2.0 * cfg.step);
            let err = relative_error(analytic, numeric);
            report.coords_checked += 1;
            if err > cfg.tolerance {
                report.failures += 1;
            }
            if err > report.max_rel_error || report.worst_param.is_empty() {
                report.max_rel_error = err.max(report.max_rel_error);
                report.worst_param = String::from(store.name(id));
                report.worst_index = k;
            }
        }
    }
    report.passed = report.failures == 0;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::Matrix;
    use crate::tensor::CustomOp;
    use alloc::boxed::Box;
    use alloc::vec;

    #[test]
    fn quadratic() {
        let mut store = ParamStore::new();
        let id = store.insert("theta", Matrix::filled(1, 1, 3.0));
        let f = |s: &ParamStore, t: &mut Tape| {
            let th = t.param(s, id);
            let sq = t.signed_pow(th, 2.0)?;
            t.sum(sq)
        };
        let r = finite_diff_check(&f, &mut store, &GradCheckConfig::tight()).unwrap();
        assert!((store.grad(id).unwrap().get(0, 0) - 6.0).abs() < 1e-12);
        assert!(r.passed && r.max_rel_error < 1e-6, "{r:?}");
    }

    /// Square with a deliberately wrong backward rule (returns x instead of 2x).
    struct BrokenSquare;

    impl CustomOp for BrokenSquare {
        fn name(&self) -> &'static str {
            "broken_square"
        }

        fn backward(&self, inputs: &[&Matrix], _output: &Matrix, g: &Matrix) -> Vec<Option<Matrix>> {
            let x = inputs[0];
            vec![Some(Matrix::from_fn(x.rows(), x.cols(), |i, j| x.get(i, j) * g.get(i, j)))]
        }
    }

    #[test]
    fn wrong_backward_rule_is_reported() {
        let mut store = ParamStore::new();
        let id = store.insert("theta", Matrix::filled(1, 1, 3.0));
        let f = |s: &ParamStore, t: &mut Tape| {
            let th = t.param(s, id);
            let out = t.value(th).map(|v| v * v);
            let y = t.custom(&[th], out, Box::new(BrokenSquare))?;
            t.sum(y)
        };
        let r = finite_diff_check(&f, &mut store, &GradCheckConfig::default()).unwrap();
        assert!(!r.passed);
        assert_eq!(r.failures, 1);
    }
}
