//! Point-treatment weighted estimators: IPCW (competing events treated as
//! censoring) and the separable-direct-effect estimator, with a logistic
//! nuisance model for `Pr(D=1 | A, L)`.

mod logistic;

pub use logistic::{
    fit_logistic_grouped, fit_logistic_mle, LogisticFit, NuisanceForm, NuisanceSpec, Term,
    SEPARATION_BOUND,
};

use std::io::Write;

use serde::Serialize;

use crate::dgp::{logit, ObservedView};
use crate::error::{Error, Result};
use crate::oracle::DEFAULT_POSITIVITY_EPS;
use crate::stats::quantile_sorted;
use crate::Estimand;

/// Fitted survival probabilities `1 - pi~(a, l)` below this are a hard error.
pub const POSITIVITY_HARD_FLOOR: f64 = 1e-8;

/// Fitted nuisance model, reduced to its four cell probabilities.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NuisanceFit {
    pub form: NuisanceForm,
    /// `pi_hat[a][l]`; `NaN` for a saturated cell with no records.
    pub pi_hat: [[f64; 2]; 2],
    /// Logit-scale coefficients in design order (intercept first). A
    /// saturated cell with empirical frequency 0 or 1 gives an infinite entry.
    pub coefficients: Vec<f64>,
    /// Newton iterations; 0 for the closed-form saturated fit.
    pub iterations: usize,
}

impl NuisanceFit {
    pub fn pi(&self, a: u8, l: u8) -> f64 {
        self.pi_hat[a as usize][l as usize]
    }
}

/// Per-cell counts of `(A, L)`: records, competing events, events of interest.
#[derive(Debug, Clone, Copy, Default)]
struct CellCounts {
    n: [[u64; 2]; 2],
    d: [[u64; 2]; 2],
    y: [[u64; 2]; 2],
}

fn cell_counts(data: &ObservedView) -> CellCounts {
    let mut c = CellCounts::default();
    for r in data.records() {
        let (a, l) = (r.a as usize, r.l as usize);
        c.n[a][l] += 1;
        c.d[a][l] += r.d as u64;
        c.y[a][l] += r.y as u64;
    }
    c
}

/// Fit `Pr(D=1 | A, L)`. The saturated form is the extended MLE given by the
/// empirical cell frequencies (which may be exactly 0 or 1); other forms go
/// through [`fit_logistic_mle`] on grouped cells.
pub fn fit_nuisance(data: &ObservedView, spec: &NuisanceSpec) -> Result<NuisanceFit> {
    let c = cell_counts(data);
    if data.is_empty() {
        return Err(Error::InsufficientData("empty dataset".into()));
    }
    match spec.form {
        NuisanceForm::Saturated => {
            let mut pi_hat = [[f64::NAN; 2]; 2];
            for a in 0..2 {
                for l in 0..2 {
                    if c.n[a][l] > 0 {
                        pi_hat[a][l] = c.d[a][l] as f64 / c.n[a][l] as f64;
                    }
                }
            }
            let lg = |a: usize, l: usize| logit(pi_hat[a][l]);
            let coefficients = vec![
                lg(0, 0),
                lg(1, 0) - lg(0, 0),
                lg(0, 1) - lg(0, 0),
                lg(1, 1) - lg(1, 0) - lg(0, 1) + lg(0, 0),
            ];
            Ok(NuisanceFit {
                form: spec.form.clone(),
                pi_hat,
                coefficients,
                iterations: 0,
            })
        }
        _ => {
            let mut rows = Vec::new();
            let mut trials = Vec::new();
            let mut successes = Vec::new();
            for a in 0..2u8 {
                for l in 0..2u8 {
                    let (ai, li) = (a as usize, l as usize);
                    if c.n[ai][li] > 0 {
                        rows.push(spec.form.design_row(a, l));
                        trials.push(c.n[ai][li] as f64);
                        successes.push(c.d[ai][li] as f64);
                    }
                }
            }
            let fit = fit_logistic_grouped(&rows, &trials, &successes, spec)?;
            let mut pi_hat = [[0.0; 2]; 2];
            for a in 0..2u8 {
                for l in 0..2u8 {
                    pi_hat[a as usize][l as usize] = fit.predict(&spec.form.design_row(a, l));
                }
            }
            Ok(NuisanceFit {
                form: spec.form.clone(),
                pi_hat,
                coefficients: fit.coefficients,
                iterations: fit.iterations,
            })
        }
    }
}

/// Max, 99th percentile and mean of the realized weights in one arm.
/// All zero when the arm has no contributing records.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct WeightSummary {
    pub count: usize,
    pub max: f64,
    pub p99: f64,
    pub mean: f64,
}

impl WeightSummary {
    pub fn from_weights(weights: &[f64]) -> Self {
        if weights.is_empty() {
            return Self {
                count: 0,
                max: 0.0,
                p99: 0.0,
                mean: 0.0,
            };
        }
        let mut sorted = weights.to_vec();
        sorted.sort_by(f64::total_cmp);
        Self {
            count: sorted.len(),
            max: sorted[sorted.len() - 1],
            p99: quantile_sorted(&sorted, 0.99),
            mean: sorted.iter().sum::<f64>() / sorted.len() as f64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EstimateResult {
    pub estimand: Estimand,
    pub value: f64,
    pub arm_means: [f64; 2],
    pub weight_summary: [WeightSummary; 2],
    pub nuisance_coef: Vec<f64>,
    pub warnings: Vec<String>,
}

/// Weight of a contributing (`D = 0`) record in stratum `(a, l)`:
/// `1 / (1 - pi(a, l))` for the CDE and `(1 - pi(a_d, l)) / (1 - pi(a, l))`
/// for the SDE. The SDE weight is exactly 1 when `a = a_d`.
pub fn record_weight(fit: &NuisanceFit, estimand: Estimand, a: u8, l: u8) -> f64 {
    match estimand {
        Estimand::Cde => 1.0 / (1.0 - fit.pi(a, l)),
        Estimand::Sde { a_d } if a_d == a => 1.0,
        Estimand::Sde { a_d } => (1.0 - fit.pi(a_d, l)) / (1.0 - fit.pi(a, l)),
    }
}

fn check_arms(c: &CellCounts) -> Result<()> {
    for a in 0..2 {
        if c.n[a][0] + c.n[a][1] == 0 {
            return Err(Error::InsufficientData(format!("no records with A={a}")));
        }
    }
    Ok(())
}

/// Positivity checks for the strata contributing to arm `a`, returning the
/// warnings. A stratum is checked only if it has records in arm `a`; for the
/// SDE it is exempt when the reference survival `1 - pi(a_d, l)` is itself
/// below `eps`.
fn check_positivity(
    c: &CellCounts,
    fit: &NuisanceFit,
    estimand: Estimand,
    a: u8,
    eps: f64,
) -> Result<Vec<String>> {
    let mut warnings = Vec::new();
    for l in 0..2u8 {
        if c.n[a as usize][l as usize] == 0 {
            continue;
        }
        if let Estimand::Sde { a_d } = estimand {
            if a_d == a {
                continue;
            }
            let reference = 1.0 - fit.pi(a_d, l);
            if reference.is_nan() {
                return Err(Error::InsufficientData(format!(
                    "no records with (A={a_d}, L={l}) to estimate the reference arm"
                )));
            }
            if reference < eps {
                continue;
            }
        }
        let survival = 1.0 - fit.pi(a, l);
        if survival < POSITIVITY_HARD_FLOOR {
            return Err(Error::Positivity(format!(
                "fitted Pr(D=0 | A={a}, L={l}) = {survival:e} is below {POSITIVITY_HARD_FLOOR:e}"
            )));
        }
        if survival < eps {
            warnings.push(format!(
                "near positivity violation: fitted Pr(D=0 | A={a}, L={l}) = {survival:e}"
            ));
        }
    }
    Ok(warnings)
}

fn estimate(
    data: &ObservedView,
    fit: &NuisanceFit,
    estimand: Estimand,
    eps: f64,
) -> Result<EstimateResult> {
    let c = cell_counts(data);
    check_arms(&c)?;
    let mut warnings = Vec::new();
    for a in 0..2u8 {
        warnings.extend(check_positivity(&c, fit, estimand, a, eps)?);
    }
    let mut w = [[0.0; 2]; 2];
    for a in 0..2u8 {
        for l in 0..2u8 {
            w[a as usize][l as usize] = record_weight(fit, estimand, a, l);
        }
    }
    let mut sums = [0.0; 2];
    for r in data.records() {
        if r.y == 1 {
            sums[r.a as usize] += w[r.a as usize][r.l as usize];
        }
    }
    let mut arm_means = [0.0; 2];
    for a in 0..2 {
        arm_means[a] = sums[a] / (c.n[a][0] + c.n[a][1]) as f64;
    }
    Ok(EstimateResult {
        estimand,
        value: arm_means[1] - arm_means[0],
        arm_means,
        weight_summary: weight_summaries(data, fit, estimand),
        nuisance_coef: fit.coefficients.clone(),
        warnings,
    })
}

fn weight_summaries(
    data: &ObservedView,
    fit: &NuisanceFit,
    estimand: Estimand,
) -> [WeightSummary; 2] {
    let weights = record_weights(data, fit, estimand);
    [
        WeightSummary::from_weights(&weights[0]),
        WeightSummary::from_weights(&weights[1]),
    ]
}

/// Weights of contributing records (`D = 0`), split by arm, in data order.
pub fn record_weights(data: &ObservedView, fit: &NuisanceFit, estimand: Estimand) -> [Vec<f64>; 2] {
    let mut out = [Vec::new(), Vec::new()];
    for r in data.records() {
        if r.d == 0 {
            out[r.a as usize].push(record_weight(fit, estimand, r.a, r.l));
        }
    }
    out
}

/// IPCW estimate with a nuisance model already fitted.
pub fn ipcw_with_fit(data: &ObservedView, fit: &NuisanceFit, eps: f64) -> Result<EstimateResult> {
    estimate(data, fit, Estimand::Cde, eps)
}

/// Separable-direct-effect estimate with a nuisance model already fitted.
pub fn sde_with_fit(
    data: &ObservedView,
    fit: &NuisanceFit,
    a_d: u8,
    eps: f64,
) -> Result<EstimateResult> {
    if a_d > 1 {
        return Err(Error::InvalidParams(format!(
            "a_d must be 0 or 1, got {a_d}"
        )));
    }
    estimate(data, fit, Estimand::Sde { a_d }, eps)
}

/// Arm `a` mean: average over `{A = a}` of `Y 1(D=0) / (1 - pi(a, L))`.
pub fn ipcw_point_estimate(data: &ObservedView, spec: &NuisanceSpec) -> Result<EstimateResult> {
    let fit = fit_nuisance(data, spec)?;
    ipcw_with_fit(data, &fit, DEFAULT_POSITIVITY_EPS)
}

/// Arm `a_y` mean: average over `{A = a_y}` of `Y (1 - pi(a_d, L)) / (1 - pi(a_y, L))`.
pub fn sde_point_estimate(
    data: &ObservedView,
    spec: &NuisanceSpec,
    a_d: u8,
) -> Result<EstimateResult> {
    let fit = fit_nuisance(data, spec)?;
    sde_with_fit(data, &fit, a_d, DEFAULT_POSITIVITY_EPS)
}

/// Weight summaries per arm without computing the effect.
pub fn weight_diagnostics(
    data: &ObservedView,
    spec: &NuisanceSpec,
    estimand: Estimand,
) -> Result<[WeightSummary; 2]> {
    let fit = fit_nuisance(data, spec)?;
    Ok(weight_summaries(data, &fit, estimand))
}

/// CSV `arm,weight`, one row per contributing record.
pub fn write_weight_profile<W: Write>(
    writer: W,
    data: &ObservedView,
    fit: &NuisanceFit,
    estimand: Estimand,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["arm", "weight"])?;
    for r in data.records() {
        if r.d == 0 {
            let weight = record_weight(fit, estimand, r.a, r.l);
            w.write_record([r.a.to_string(), weight.to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dgp::{ObservedRecord, PointDataset};

    fn rec(l: u8, a: u8, d: u8, y: u8) -> ObservedRecord {
        ObservedRecord { l, a, d, y }
    }

    #[test]
    fn empty_saturated_cell_is_nan() {
        let ds = PointDataset::from_records(vec![rec(0, 0, 0, 1), rec(0, 1, 1, 0)], None).unwrap();
        let fit = fit_nuisance(&ds.observed(), &NuisanceSpec::default()).unwrap();
        assert!(fit.pi(0, 1).is_nan());
        assert_eq!(fit.pi(1, 0), 1.0);
    }

    #[test]
    fn all_dead_stratum_is_hard_error() {
        let ds = PointDataset::from_records(
            vec![
                rec(0, 0, 0, 1),
                rec(0, 0, 0, 0),
                rec(0, 1, 1, 0),
                rec(0, 1, 1, 0),
            ],
            None,
        )
        .unwrap();
        let err = ipcw_point_estimate(&ds.observed(), &NuisanceSpec::default()).unwrap_err();
        assert!(matches!(err, Error::Positivity(_)));
        // The SDE at a_d = 1 exempts the stratum: its reference arm dies too.
        let r = sde_point_estimate(&ds.observed(), &NuisanceSpec::default(), 1).unwrap();
        assert_eq!(r.arm_means, [0.0, 0.0]);
    }

    #[test]
    fn one_arm_only_is_rejected() {
        let ds = PointDataset::from_records(vec![rec(0, 1, 0, 1), rec(1, 1, 0, 0)], None).unwrap();
        let err = ipcw_point_estimate(&ds.observed(), &NuisanceSpec::default()).unwrap_err();
        assert!(matches!(err, Error::InsufficientData(_)));
    }

    #[test]
    fn weight_profile_has_one_row_per_survivor() {
        let ds = PointDataset::from_records(
            vec![rec(0, 0, 0, 1), rec(0, 0, 1, 0), rec(1, 1, 0, 0)],
            None,
        )
        .unwrap();
        let fit = fit_nuisance(&ds.observed(), &NuisanceSpec::default()).unwrap();
        let mut buf = Vec::new();
        write_weight_profile(&mut buf, &ds.observed(), &fit, Estimand::Cde).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text, "arm,weight\n0,2\n1,1\n");
    }
}
