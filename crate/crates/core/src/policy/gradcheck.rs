//! Central finite-difference verification of analytic gradients.

#[derive(Debug, Clone)]
pub struct FiniteDiffOptions {
    pub h: f64,
    /// Maximum allowed relative error per coordinate.
    pub tolerance: f64,
    /// Denominator floor: the relative error of a coordinate is
    /// `|analytic - numeric| / max(|analytic|, |numeric|, floor)`.
    pub floor: f64,
    /// Coordinates skipped by the check (e.g. those touching an example
    /// sitting on a loss kink).
    pub exclude: Vec<bool>,
}

impl Default for FiniteDiffOptions {
    fn default() -> Self {
        Self {
            h: 1e-5,
            tolerance: 1e-5,
            floor: 1e-4,
            exclude: Vec::new(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct FiniteDiffReport {
    pub max_rel_error: f64,
    /// Coordinates whose relative error exceeds the tolerance.
    pub offending: Vec<usize>,
    pub checked: usize,
    pub excluded: usize,
    pub numeric: Vec<f64>,
}

impl FiniteDiffReport {
    pub fn passed(&self) -> bool {
        self.offending.is_empty()
    }
}

pub fn finite_diff_check<F>(
    mut loss: F,
    params: &[f64],
    analytic: &[f64],
    opts: &FiniteDiffOptions,
) -> FiniteDiffReport
where
    F: FnMut(&[f64]) -> f64,
{
    assert_eq!(params.len(), analytic.len(), "gradient length mismatch");
    let mut theta = params.to_vec();
    let mut report = FiniteDiffReport {
        max_rel_error: 0.0,
        offending: Vec::new(),
        checked: 0,
        excluded: 0,
        numeric: vec![0.0; params.len()],
    };
    for i in 0..params.len() {
        if opts.exclude.get(i).copied().unwrap_or(false) {
            report.excluded += 1;
            continue;
        }
        let orig = theta[i];
        theta[i] = orig + opts.h;
        let plus = loss(&theta);
        theta[i] = orig - opts.h;
        let minus = loss(&theta);
        theta[i] = orig;
        let numeric = (plus - minus) / (2.0 * opts.h);
        report.numeric[i] = numeric;
        let denom = analytic[i].abs().max(numeric.abs()).max(opts.floor);
        let rel = (analytic[i] - numeric).abs() / denom;
        report.checked += 1;
        report.max_rel_error = report.max_rel_error.max(rel);
        if !(rel <= opts.tolerance) {
            report.offending.push(i);
        }
    }
    report
}
