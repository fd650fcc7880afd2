use super::graph::{Graph, ParamGrads, Var};
use super::params::{ParamId, ParamStore};
use super::KernelError;

/// Step used for central differences at 64-bit.
pub const FD_STEP: f64 = 1e-4;

/// Gradients smaller than this are compared in absolute rather than relative terms.
pub const RELATIVE_FLOOR: f64 = 1e-3;

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Parameter name and flat index of the worst entry.
    pub worst: Option<(String, usize)>,
    pub analytic: f64,
    pub numeric: f64,
    pub n_checked: usize,
}

/// `|a - n| / max(|a|, |n|, RELATIVE_FLOOR)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(RELATIVE_FLOOR)
}

/// Compares reverse-mode gradients of the scalar `f` against central finite
/// differences for every entry of the listed parameters. The five-point stencil
/// keeps truncation error at O(step^4), which matters for sharp Gaussian masks.
pub fn grad_check<F>(
    store: &ParamStore,
    ids: &[ParamId],
    step: f64,
    f: F,
) -> Result<GradCheckReport, KernelError>
where
    F: Fn(&mut Graph, &ParamStore) -> Result<Var, KernelError>,
{
    let mut g = Graph::new();
    let root = f(&mut g, store)?;
    let grads = g.backward(root)?;
    let mut acc = ParamGrads::new();
    g.accumulate_param_grads(&grads, &mut acc);

    let eval = |s: &ParamStore| -> Result<f64, KernelError> {
        let mut g = Graph::new();
        let root = f(&mut g, s)?;
        g.check_finite()?;
        Ok(g.scalar(root))
    };

    let mut work = store.clone();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        analytic: 0.0,
        numeric: 0.0,
        n_checked: 0,
    };
    for &id in ids {
        let (rows, cols) = store.value(id).dim();
        for k in 0..rows * cols {
            let at = [k / cols, k % cols];
            let analytic = acc.get(id).map_or(0.0, |a| a[at]);
            let orig = store.value(id)[at];
            let mut at_offset = |k: f64| -> Result<f64, KernelError> {
                work.value_mut(id)[at] = orig + k * step;
                eval(&work)
            };
            let (p1, m1, p2, m2) = (at_offset(1.0)?, at_offset(-1.0)?, at_offset(2.0)?, at_offset(-2.0)?);
            work.value_mut(id)[at] = orig;
            let numeric = (8.0 * (p1 - m1) - (p2 - m2)) / (12.0 * step);
            let err = relative_error(analytic, numeric);
            report.n_checked += 1;
            if err > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = err;
                report.worst = Some((store.name(id).to_string(), k));
                report.analytic = analytic;
                report.numeric = numeric;
            }
        }
    }
    Ok(report)
}
