//! Central-difference gradient checking.

use super::graph::{Graph, Var};
use super::params::{ParamId, ParamStore};

#[derive(Debug, Clone)]
pub struct GradMismatch {
    pub param: String,
    pub index: (usize, usize),
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Debug, Clone, Default)]
pub struct GradCheckReport {
    pub checked: usize,
    pub worst_rel: f64,
    pub mismatches: Vec<GradMismatch>,
}

impl GradCheckReport {
    /// True when every entry satisfies `|a - n| <= tol * max(|a|, |n|, 1e-3)`.
    pub fn passed(&self, tol: f64) -> bool {
        self.checked > 0 && self.worst_rel <= tol
    }
}

/// Compares analytic gradients of `build` (which must return a scalar)
/// against central differences for every entry of `params`. The graph runs
/// in training mode with a fixed seed so dropout masks repeat.
pub fn check_gradients<F>(store: &mut ParamStore, params: &[ParamId], eps: f64, build: F) -> GradCheckReport
where
    F: Fn(&mut Graph<'_>) -> Var,
{
    const SEED: u64 = 0x5eed;
    let analytic = {
        let mut g = Graph::new(store, true, SEED);
        let loss = build(&mut g);
        g.backward(loss)
    };
    let eval = |store: &ParamStore| {
        let mut g = Graph::new(store, true, SEED);
        let loss = build(&mut g);
        g.value(loss)[[0, 0]]
    };

    let mut report = GradCheckReport::default();
    for &id in params {
        let (rows, cols) = store.get(id).dim();
        for i in 0..rows {
            for j in 0..cols {
                let orig = store.get(id)[[i, j]];
                store.get_mut(id)[[i, j]] = orig + eps;
                let plus = eval(store);
                store.get_mut(id)[[i, j]] = orig - eps;
                let minus = eval(store);
                store.get_mut(id)[[i, j]] = orig;

                let numeric = (plus - minus) / (2.0 * eps);
                let a = analytic.get(id).map_or(0.0, |g| g[[i, j]]);
                let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-3);
                report.checked += 1;
                if rel > report.worst_rel {
                    report.worst_rel = rel;
                }
                if rel > 1e-4 {
                    report.mismatches.push(GradMismatch {
                        param: store.name(id).to_string(),
                        index: (i, j),
                        analytic: a,
                        numeric,
                    });
                }
            }
        }
    }
    report
}
