use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::rng::{stream_rng, with_pool};
use crate::stats::quantile_sorted;
use crate::Estimand;

use super::curves::{flat_index, run_analysis, AnalysisPlan, ArmOrContrast};
use super::SubjectRecord;

/// Largest tolerated share of failed replicates.
const MAX_FAILURE_SHARE: f64 = 0.10;

/// Percentile intervals for every month, estimand, arm and contrast.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BootstrapResult {
    pub replicates: usize,
    pub failed: usize,
    pub horizon: u32,
    lo: Vec<f64>,
    hi: Vec<f64>,
}

impl BootstrapResult {
    /// `(2.5th, 97.5th)` percentile bounds.
    pub fn interval(&self, estimand: Estimand, slot: ArmOrContrast, month: u32) -> (f64, f64) {
        let i = flat_index(self.horizon, estimand, slot, month);
        (self.lo[i], self.hi[i])
    }
}

fn is_replicate_failure(e: &Error) -> bool {
    e.is_numerical() || matches!(e, Error::InsufficientData(_))
}

/// Resample subjects with replacement `b` times, rerunning the full
/// analysis (hazard refit included) on each replicate. Replicate `r` draws
/// from RNG stream `(seed, r)`, so results do not depend on `jobs`.
pub fn bootstrap_percentile_ci(
    subjects: &[SubjectRecord],
    plan: &AnalysisPlan,
    b: usize,
    seed: u64,
    jobs: usize,
) -> Result<BootstrapResult> {
    if b < 2 {
        return Err(Error::InvalidParams(format!(
            "bootstrap needs at least 2 replicates, got {b}"
        )));
    }
    if subjects.is_empty() {
        return Err(Error::InsufficientData("no subjects to resample".into()));
    }
    let n = subjects.len();
    let results: Vec<Result<Option<Vec<f64>>>> = with_pool(jobs, || {
        (0..b)
            .into_par_iter()
            .map(|rep| {
                let mut rng = stream_rng(seed, rep as u64);
                let sample: Vec<SubjectRecord> = (0..n)
                    .map(|_| subjects[rng.random_range(0..n)].clone())
                    .collect();
                match run_analysis(&sample, plan) {
                    Ok(curves) => Ok(Some(curves.flat_values())),
                    Err(e) if is_replicate_failure(&e) => Ok(None),
                    Err(e) => Err(e),
                }
            })
            .collect()
    })?;
    let mut ok = Vec::with_capacity(b);
    let mut failed = 0;
    for r in results {
        match r? {
            Some(v) => ok.push(v),
            None => failed += 1,
        }
    }
    if failed as f64 > MAX_FAILURE_SHARE * b as f64 || ok.is_empty() {
        return Err(Error::BootstrapFailures { failed, total: b });
    }
    let width = ok[0].len();
    let mut lo = Vec::with_capacity(width);
    let mut hi = Vec::with_capacity(width);
    let mut column = vec![0.0; ok.len()];
    for j in 0..width {
        for (slot, rep) in column.iter_mut().zip(&ok) {
            *slot = rep[j];
        }
        column.sort_by(f64::total_cmp);
        lo.push(quantile_sorted(&column, 0.025));
        hi.push(quantile_sorted(&column, 0.975));
    }
    Ok(BootstrapResult {
        replicates: b,
        failed,
        horizon: plan.horizon,
        lo,
        hi,
    })
}
