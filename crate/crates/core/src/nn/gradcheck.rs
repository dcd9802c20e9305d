//! Finite-difference verification of reverse-mode gradients (64-bit only).

use crate::error::{Error, Result};
use crate::nn::graph::{Graph, Var};
use crate::nn::param::ParamStore;
use crate::rng::{stream, uniform01, Stream};

/// Denominator floor of the relative error, so coordinates whose true
/// gradient is ~0 are judged by absolute error instead.
pub const REL_ERROR_FLOOR: f64 = 1e-5;

#[derive(Debug, Clone, Copy)]
pub struct GradCheckOptions {
    /// Central-difference step.
    pub step: f64,
    /// Check at most this many coordinates per parameter, sampled without
    /// replacement; `None` checks every coordinate.
    pub max_coords_per_param: Option<usize>,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions { step: 1e-6, max_coords_per_param: None, seed: 0 }
    }
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Parameter name and flat index of the worst coordinate.
    pub worst: Option<(String, usize)>,
    pub coords_checked: usize,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERROR_FLOOR)
}

/// Compares the analytic gradient of the scalar built by `f` against central
/// differences `(f(x + h) − f(x − h)) / 2h` for every parameter in `store`.
///
/// `f` must be deterministic (dropout disabled).
pub fn grad_check<F>(store: &mut ParamStore<f64>, opts: GradCheckOptions, f: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<f64>) -> Result<Var>,
{
    let analytic = {
        let mut g = Graph::new(store);
        let loss = f(&mut g)?;
        g.backward(loss)?
    };
    let eval = |store: &ParamStore<f64>| -> Result<f64> {
        let mut g = Graph::new(store);
        let loss = f(&mut g)?;
        let v = g.value(loss);
        if v.len() != 1 {
            return Err(Error::Shape("grad_check objective must be scalar".into()));
        }
        Ok(v.data()[0])
    };
    let h = opts.step;
    let mut rng = stream(opts.seed, Stream::Init);
    let mut report = GradCheckReport { max_rel_error: 0.0, worst: None, coords_checked: 0 };
    let ids: Vec<_> = store.iter().map(|(id, _)| id).collect();
    for id in ids {
        let n = store.value(id).len();
        let coords: Vec<usize> = match opts.max_coords_per_param {
            Some(k) if k < n => {
                let mut all: Vec<usize> = (0..n).collect();
                for i in 0..k {
                    let j = i + ((uniform01(&mut rng) * (n - i) as f64) as usize).min(n - i - 1);
                    all.swap(i, j);
                }
                all.truncate(k);
                all
            }
            _ => (0..n).collect(),
        };
        for c in coords {
            let original = store.value(id).data()[c];
            store.get_mut(id).value.data_mut()[c] = original + h;
            let plus = eval(store)?;
            store.get_mut(id).value.data_mut()[c] = original - h;
            let minus = eval(store)?;
            store.get_mut(id).value.data_mut()[c] = original;
            let numeric = (plus - minus) / (2.0 * h);
            let a = analytic.get(id).map_or(0.0, |g| g.data()[c]);
            let err = relative_error(a, numeric);
            report.coords_checked += 1;
            if err > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = err;
                report.worst = Some((store.get(id).name.clone(), c));
            }
        }
    }
    Ok(report)
}
